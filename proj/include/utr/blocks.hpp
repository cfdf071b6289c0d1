#pragma once

#include <variant>
#include <vector>

#include "utr/optim.hpp"
#include "utr/tensor.hpp"

namespace utr {

// Pre-LN causal self-attention block: x + Attn(LN(x)), then x + FFN(LN(x)).
struct AttentionBlockParams {
  Tensor ln1_gain, ln1_bias;
  Tensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;  // all [D,D] / [D]
  Tensor ln2_gain, ln2_bias;
  Tensor w_ff1, b_ff1;  // [D, 4D], [4D]
  Tensor w_ff2, b_ff2;  // [4D, D], [D]
  int64_t n_heads = 1;

  static AttentionBlockParams init(int64_t d_model, int64_t n_heads, Rng& rng);
  void collect_params(const std::string& prefix, std::vector<NamedParam>& out);
  int64_t d_model() const { return w_q.dim(0); }
};

// Gated causal depthwise-convolution block:
//   x_hat = LN(x); [c, g] = split(x_hat . w_in + b_in);
//   y = (CausalDWConv(c) * SiLU(g)) . w_o + b_o + x
// No separate FFN; the expansion width d_e inside w_in carries the capacity.
struct GatedConvBlockParams {
  Tensor ln_gain, ln_bias;
  Tensor w_in, b_in;          // [D, 2*d_e], [2*d_e]
  Tensor kernels, conv_bias;  // [K, d_e], [d_e]
  Tensor w_o, b_o;            // [d_e, D], [D]

  static GatedConvBlockParams init(int64_t d_model, int64_t d_e, int64_t kernel_size, Rng& rng);
  void collect_params(const std::string& prefix, std::vector<NamedParam>& out);
  int64_t d_model() const { return w_in.dim(0); }
  int64_t d_e() const { return w_o.dim(0); }
  int64_t kernel_size() const { return kernels.dim(0); }
};

Tensor attention_block(Tape& tape, const Tensor& x, const AttentionBlockParams& params);
Tensor gated_conv_block(Tape& tape, const Tensor& x, const GatedConvBlockParams& params);

using BlockParams = std::variant<AttentionBlockParams, GatedConvBlockParams>;

Tensor run_block(Tape& tape, const Tensor& x, const BlockParams& block);
Tensor run_stack(Tape& tape, const Tensor& x, const std::vector<BlockParams>& blocks);

}  // namespace utr
