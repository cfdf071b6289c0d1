#pragma once

#include <vector>

#include "utr/optim.hpp"
#include "utr/tensor.hpp"

namespace utr {

// Parameters of the single-token-per-step encoder:
// token_t = LayerNorm(Linear_F([sigmoid(Linear_R(R_t)); s_t; a_{t-1}]) + timestep_embed[t]).
struct UnifiedEncoderParams {
  Tensor w_r;  // [1, d_r]
  Tensor b_r;  // [d_r]
  Tensor w_f;  // [d_r + d_s + d_a, d_model]
  Tensor b_f;  // [d_model]
  Tensor timestep_embed;  // [t_max, d_model]
  Tensor ln_gain;         // [d_model]
  Tensor ln_bias;         // [d_model]

  static UnifiedEncoderParams init(int64_t d_r, int64_t d_s, int64_t d_a, int64_t d_model,
                                   int64_t t_max, Rng& rng);
  void collect_params(const std::string& prefix, std::vector<NamedParam>& out);

  int64_t d_r() const { return w_r.dim(1); }
  int64_t d_model() const { return w_f.dim(1); }
  int64_t t_max() const { return timestep_embed.dim(0); }
};

// Baseline three-tokens-per-step encoder: each modality embedded to d_model,
// timestep embedding added, tokens interleaved (R_t, s_t, a_t).
struct SeparatedEncoderParams {
  Tensor w_r, b_r;  // [1, d_model], [d_model]
  Tensor w_s, b_s;  // [d_s, d_model], [d_model]
  Tensor w_a, b_a;  // [d_a, d_model], [d_model]
  Tensor timestep_embed;  // [t_max, d_model]
  Tensor ln_gain, ln_bias;

  static SeparatedEncoderParams init(int64_t d_s, int64_t d_a, int64_t d_model, int64_t t_max,
                                     Rng& rng);
  void collect_params(const std::string& prefix, std::vector<NamedParam>& out);

  int64_t d_model() const { return w_r.dim(1); }
  int64_t t_max() const { return timestep_embed.dim(0); }
};

struct TokenSequence {
  Tensor tokens;  // [L, d_model] unified, [3L, d_model] separated
  std::vector<int64_t> action_positions;  // rows the action head reads
};

// out[0] = 0-vector, out[t] = actions[t-1]: the model at step t sees the
// previous action, never the one it is predicting.
Tensor shift_actions(Tape& tape, const Tensor& actions);

// sigmoid(R . w_r + b_r); every output lies strictly in (0,1).
Tensor gated_return_embedding(Tape& tape, const Tensor& rtg, const Tensor& w_r, const Tensor& b_r);

TokenSequence encode_unified(Tape& tape, const Tensor& rtg, const Tensor& states,
                             const Tensor& actions, const std::vector<int64_t>& timesteps,
                             const UnifiedEncoderParams& params);

TokenSequence encode_separated(Tape& tape, const Tensor& rtg, const Tensor& states,
                               const Tensor& actions, const std::vector<int64_t>& timesteps,
                               const SeparatedEncoderParams& params);

}  // namespace utr
