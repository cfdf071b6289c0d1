#include "utr/blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace utr {

namespace {
constexpr double kInitStd = 0.02;
constexpr double kLnEps = 1e-5;
}  // namespace

AttentionBlockParams AttentionBlockParams::init(int64_t d_model, int64_t n_heads, Rng& rng) {
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
    throw std::invalid_argument("AttentionBlockParams: d_model must be divisible by n_heads (" +
                                std::to_string(d_model) + " / " + std::to_string(n_heads) + ")");
  }
  AttentionBlockParams p;
  p.ln1_gain = Tensor::full({d_model}, 1.0, true);
  p.ln1_bias = Tensor::zeros({d_model}, true);
  p.w_q = Tensor::randn({d_model, d_model}, rng, kInitStd, true);
  p.b_q = Tensor::zeros({d_model}, true);
  p.w_k = Tensor::randn({d_model, d_model}, rng, kInitStd, true);
  p.b_k = Tensor::zeros({d_model}, true);
  p.w_v = Tensor::randn({d_model, d_model}, rng, kInitStd, true);
  p.b_v = Tensor::zeros({d_model}, true);
  p.w_o = Tensor::randn({d_model, d_model}, rng, kInitStd, true);
  p.b_o = Tensor::zeros({d_model}, true);
  p.ln2_gain = Tensor::full({d_model}, 1.0, true);
  p.ln2_bias = Tensor::zeros({d_model}, true);
  p.w_ff1 = Tensor::randn({d_model, 4 * d_model}, rng, kInitStd, true);
  p.b_ff1 = Tensor::zeros({4 * d_model}, true);
  p.w_ff2 = Tensor::randn({4 * d_model, d_model}, rng, kInitStd, true);
  p.b_ff2 = Tensor::zeros({d_model}, true);
  p.n_heads = n_heads;
  return p;
}

void AttentionBlockParams::collect_params(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".ln1_gain", ln1_gain});
  out.push_back({prefix + ".ln1_bias", ln1_bias});
  out.push_back({prefix + ".w_q", w_q});
  out.push_back({prefix + ".b_q", b_q});
  out.push_back({prefix + ".w_k", w_k});
  out.push_back({prefix + ".b_k", b_k});
  out.push_back({prefix + ".w_v", w_v});
  out.push_back({prefix + ".b_v", b_v});
  out.push_back({prefix + ".w_o", w_o});
  out.push_back({prefix + ".b_o", b_o});
  out.push_back({prefix + ".ln2_gain", ln2_gain});
  out.push_back({prefix + ".ln2_bias", ln2_bias});
  out.push_back({prefix + ".w_ff1", w_ff1});
  out.push_back({prefix + ".b_ff1", b_ff1});
  out.push_back({prefix + ".w_ff2", w_ff2});
  out.push_back({prefix + ".b_ff2", b_ff2});
}

GatedConvBlockParams GatedConvBlockParams::init(int64_t d_model, int64_t d_e, int64_t kernel_size,
                                                Rng& rng) {
  if (d_model < 1 || d_e < 1) {
    throw std::invalid_argument("GatedConvBlockParams: dims must be >= 1");
  }
  if (kernel_size < 1) {
    throw std::invalid_argument("GatedConvBlockParams: kernel size must be >= 1, got " +
                                std::to_string(kernel_size));
  }
  GatedConvBlockParams p;
  p.ln_gain = Tensor::full({d_model}, 1.0, true);
  p.ln_bias = Tensor::zeros({d_model}, true);
  p.w_in = Tensor::randn({d_model, 2 * d_e}, rng, kInitStd, true);
  p.b_in = Tensor::zeros({2 * d_e}, true);
  p.kernels = Tensor::randn({kernel_size, d_e}, rng, kInitStd, true);
  p.conv_bias = Tensor::zeros({d_e}, true);
  p.w_o = Tensor::randn({d_e, d_model}, rng, kInitStd, true);
  p.b_o = Tensor::zeros({d_model}, true);
  return p;
}

void GatedConvBlockParams::collect_params(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".ln_gain", ln_gain});
  out.push_back({prefix + ".ln_bias", ln_bias});
  out.push_back({prefix + ".w_in", w_in});
  out.push_back({prefix + ".b_in", b_in});
  out.push_back({prefix + ".kernels", kernels});
  out.push_back({prefix + ".conv_bias", conv_bias});
  out.push_back({prefix + ".w_o", w_o});
  out.push_back({prefix + ".b_o", b_o});
}

Tensor attention_block(Tape& tape, const Tensor& x, const AttentionBlockParams& params) {
  const int64_t d = params.d_model();
  const int64_t heads = params.n_heads;
  const int64_t head_dim = d / heads;
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Tensor h = layer_norm(tape, x, params.ln1_gain, params.ln1_bias, kLnEps);
  Tensor q = add(tape, matmul(tape, h, params.w_q), params.b_q);
  Tensor k = add(tape, matmul(tape, h, params.w_k), params.b_k);
  Tensor v = add(tape, matmul(tape, h, params.w_v), params.b_v);

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(static_cast<size_t>(heads));
  for (int64_t hd = 0; hd < heads; ++hd) {
    Tensor qh = slice_cols(tape, q, hd * head_dim, head_dim);
    Tensor kh = slice_cols(tape, k, hd * head_dim, head_dim);
    Tensor vh = slice_cols(tape, v, hd * head_dim, head_dim);
    Tensor scores = scale(tape, matmul_nt(tape, qh, kh), score_scale);
    Tensor att = causal_softmax(tape, scores);
    head_outputs.push_back(matmul(tape, att, vh));
  }
  Tensor attn_out = heads == 1 ? head_outputs[0] : concat_cols(tape, head_outputs);
  attn_out = add(tape, matmul(tape, attn_out, params.w_o), params.b_o);
  Tensor x1 = add(tape, x, attn_out);

  Tensor h2 = layer_norm(tape, x1, params.ln2_gain, params.ln2_bias, kLnEps);
  Tensor f = relu(tape, add(tape, matmul(tape, h2, params.w_ff1), params.b_ff1));
  f = add(tape, matmul(tape, f, params.w_ff2), params.b_ff2);
  return add(tape, x1, f);
}

Tensor gated_conv_block(Tape& tape, const Tensor& x, const GatedConvBlockParams& params) {
  const int64_t d_e = params.d_e();
  Tensor x_hat = layer_norm(tape, x, params.ln_gain, params.ln_bias, kLnEps);
  Tensor proj = add(tape, matmul(tape, x_hat, params.w_in), params.b_in);
  Tensor conv_in = slice_cols(tape, proj, 0, d_e);
  Tensor gate_in = slice_cols(tape, proj, d_e, d_e);
  Tensor mixed = causal_depthwise_conv1d(tape, conv_in, params.kernels, params.conv_bias);
  Tensor gate = silu(tape, gate_in);
  Tensor y = add(tape, matmul(tape, mul(tape, mixed, gate), params.w_o), params.b_o);
  return add(tape, x, y);
}

Tensor run_block(Tape& tape, const Tensor& x, const BlockParams& block) {
  if (const auto* attn = std::get_if<AttentionBlockParams>(&block)) {
    return attention_block(tape, x, *attn);
  }
  return gated_conv_block(tape, x, std::get<GatedConvBlockParams>(block));
}

Tensor run_stack(Tape& tape, const Tensor& x, const std::vector<BlockParams>& blocks) {
  Tensor out = x;
  for (const BlockParams& b : blocks) out = run_block(tape, out, b);
  return out;
}

}  // namespace utr
