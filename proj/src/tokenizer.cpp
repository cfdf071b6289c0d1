#include "utr/tokenizer.hpp"

#include <stdexcept>

namespace utr {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLnEps = 1e-5;

void check_sequence_inputs(const Tensor& rtg, const Tensor& states, const Tensor& actions,
                           const std::vector<int64_t>& timesteps, int64_t t_max) {
  const int64_t len = rtg.dim(0);
  if (rtg.rank() != 2 || rtg.dim(1) != 1) {
    throw std::invalid_argument("encode: rtg must be [L,1], got " + shape_str(rtg.shape()));
  }
  if (states.dim(0) != len || actions.dim(0) != len ||
      static_cast<int64_t>(timesteps.size()) != len) {
    throw std::invalid_argument("encode: sequence lengths differ: rtg " + shape_str(rtg.shape()) +
                                ", states " + shape_str(states.shape()) + ", actions " +
                                shape_str(actions.shape()) + ", timesteps " +
                                std::to_string(timesteps.size()));
  }
  for (int64_t t : timesteps) {
    if (t < 0 || t >= t_max) {
      throw std::invalid_argument("encode: timestep " + std::to_string(t) +
                                  " outside embedding table [0," + std::to_string(t_max) + ")");
    }
  }
}

}  // namespace

UnifiedEncoderParams UnifiedEncoderParams::init(int64_t d_r, int64_t d_s, int64_t d_a,
                                                int64_t d_model, int64_t t_max, Rng& rng) {
  if (d_r < 1 || d_s < 1 || d_a < 1 || d_model < 1 || t_max < 1) {
    throw std::invalid_argument("UnifiedEncoderParams: all dims must be >= 1");
  }
  UnifiedEncoderParams p;
  p.w_r = Tensor::randn({1, d_r}, rng, kInitStd, true);
  p.b_r = Tensor::zeros({d_r}, true);
  p.w_f = Tensor::randn({d_r + d_s + d_a, d_model}, rng, kInitStd, true);
  p.b_f = Tensor::zeros({d_model}, true);
  p.timestep_embed = Tensor::randn({t_max, d_model}, rng, kInitStd, true);
  p.ln_gain = Tensor::full({d_model}, 1.0, true);
  p.ln_bias = Tensor::zeros({d_model}, true);
  return p;
}

void UnifiedEncoderParams::collect_params(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".w_r", w_r});
  out.push_back({prefix + ".b_r", b_r});
  out.push_back({prefix + ".w_f", w_f});
  out.push_back({prefix + ".b_f", b_f});
  out.push_back({prefix + ".timestep_embed", timestep_embed});
  out.push_back({prefix + ".ln_gain", ln_gain});
  out.push_back({prefix + ".ln_bias", ln_bias});
}

SeparatedEncoderParams SeparatedEncoderParams::init(int64_t d_s, int64_t d_a, int64_t d_model,
                                                    int64_t t_max, Rng& rng) {
  if (d_s < 1 || d_a < 1 || d_model < 1 || t_max < 1) {
    throw std::invalid_argument("SeparatedEncoderParams: all dims must be >= 1");
  }
  SeparatedEncoderParams p;
  p.w_r = Tensor::randn({1, d_model}, rng, kInitStd, true);
  p.b_r = Tensor::zeros({d_model}, true);
  p.w_s = Tensor::randn({d_s, d_model}, rng, kInitStd, true);
  p.b_s = Tensor::zeros({d_model}, true);
  p.w_a = Tensor::randn({d_a, d_model}, rng, kInitStd, true);
  p.b_a = Tensor::zeros({d_model}, true);
  p.timestep_embed = Tensor::randn({t_max, d_model}, rng, kInitStd, true);
  p.ln_gain = Tensor::full({d_model}, 1.0, true);
  p.ln_bias = Tensor::zeros({d_model}, true);
  return p;
}

void SeparatedEncoderParams::collect_params(const std::string& prefix,
                                            std::vector<NamedParam>& out) {
  out.push_back({prefix + ".w_r", w_r});
  out.push_back({prefix + ".b_r", b_r});
  out.push_back({prefix + ".w_s", w_s});
  out.push_back({prefix + ".b_s", b_s});
  out.push_back({prefix + ".w_a", w_a});
  out.push_back({prefix + ".b_a", b_a});
  out.push_back({prefix + ".timestep_embed", timestep_embed});
  out.push_back({prefix + ".ln_gain", ln_gain});
  out.push_back({prefix + ".ln_bias", ln_bias});
}

Tensor shift_actions(Tape& tape, const Tensor& actions) {
  return shift_rows_down1(tape, actions);
}

Tensor gated_return_embedding(Tape& tape, const Tensor& rtg, const Tensor& w_r,
                              const Tensor& b_r) {
  return sigmoid(tape, add(tape, matmul(tape, rtg, w_r), b_r));
}

TokenSequence encode_unified(Tape& tape, const Tensor& rtg, const Tensor& states,
                             const Tensor& actions, const std::vector<int64_t>& timesteps,
                             const UnifiedEncoderParams& params) {
  check_sequence_inputs(rtg, states, actions, timesteps, params.t_max());
  const int64_t len = rtg.dim(0);

  Tensor ret_embed = gated_return_embedding(tape, rtg, params.w_r, params.b_r);
  Tensor shifted = shift_actions(tape, actions);
  const Tensor parts[3] = {ret_embed, states, shifted};
  Tensor fused = concat_cols(tape, parts);
  Tensor z = add(tape, matmul(tape, fused, params.w_f), params.b_f);
  Tensor pos = gather_rows(tape, params.timestep_embed, timesteps);
  Tensor h = add(tape, z, pos);
  Tensor tokens = layer_norm(tape, h, params.ln_gain, params.ln_bias, kLnEps);

  TokenSequence seq;
  seq.tokens = tokens;
  seq.action_positions.resize(static_cast<size_t>(len));
  for (int64_t t = 0; t < len; ++t) seq.action_positions[static_cast<size_t>(t)] = t;
  return seq;
}

TokenSequence encode_separated(Tape& tape, const Tensor& rtg, const Tensor& states,
                               const Tensor& actions, const std::vector<int64_t>& timesteps,
                               const SeparatedEncoderParams& params) {
  check_sequence_inputs(rtg, states, actions, timesteps, params.t_max());
  const int64_t len = rtg.dim(0);

  Tensor pos = gather_rows(tape, params.timestep_embed, timesteps);
  Tensor tok_r = add(tape, add(tape, matmul(tape, rtg, params.w_r), params.b_r), pos);
  Tensor tok_s = add(tape, add(tape, matmul(tape, states, params.w_s), params.b_s), pos);
  Tensor tok_a = add(tape, add(tape, matmul(tape, actions, params.w_a), params.b_a), pos);
  Tensor seq3 = interleave_rows3(tape, tok_r, tok_s, tok_a);
  Tensor tokens = layer_norm(tape, seq3, params.ln_gain, params.ln_bias, kLnEps);

  TokenSequence seq;
  seq.tokens = tokens;
  // Predictions are read from the state-token slots: a_t is predicted given
  // (R_t, s_t) but not a_t itself, which sits one position later.
  seq.action_positions.resize(static_cast<size_t>(len));
  for (int64_t t = 0; t < len; ++t) seq.action_positions[static_cast<size_t>(t)] = 3 * t + 1;
  return seq;
}

}  // namespace utr
