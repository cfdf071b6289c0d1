#include <doctest.h>

#include <cmath>

#include "testing.hpp"
#include "utr/blocks.hpp"

using namespace utr;

namespace {

Tensor random_tokens(Rng& rng, int64_t len, int64_t d) {
  return Tensor::randn({len, d}, rng, 1.0);
}

std::vector<double> vec(const Tensor& t) {
  return std::vector<double>(t.data(), t.data() + t.numel());
}

}  // namespace

TEST_CASE("single-token attention passes the value through") {
  // softmax over one visible logit is 1, so att . V == V
  Rng rng(3);
  Tape tape;
  Tensor v = random_tokens(rng, 1, 4);
  Tensor score = Tensor::leaf({1, 1}, {0.37});
  Tensor out = matmul(tape, causal_softmax(tape, score), v);
  for (int64_t j = 0; j < 4; ++j) CHECK(out.at(0, j) == v.at(0, j));
}

TEST_CASE("attention block is strictly causal") {
  Rng rng(5);
  auto params = AttentionBlockParams::init(8, 2, rng);
  Tensor x = random_tokens(rng, 6, 8);
  Tape tape;
  Tensor base = attention_block(tape, x, params).detached_copy();
  const int64_t cut = 2;
  for (int64_t t = cut + 1; t < 6; ++t)
    for (int64_t j = 0; j < 8; ++j) x.data()[t * 8 + j] += rng.normal();
  Tensor perturbed = attention_block(tape, x, params);
  for (int64_t t = 0; t <= cut; ++t)
    for (int64_t j = 0; j < 8; ++j) CHECK(perturbed.at(t, j) == base.at(t, j));
}

TEST_CASE("attention block gradients match finite differences") {
  Rng rng(7);
  auto params = AttentionBlockParams::init(4, 2, rng);
  Tensor x = testing::random_leaf({3, 4}, rng);
  auto loss_fn = [&](Tape& t) {
    Tensor y = attention_block(t, x, params);
    return sum(t, mul(t, y, y));
  };
  std::vector<NamedParam> named;
  params.collect_params("b", named);
  std::vector<Tensor> leaves{x};
  for (auto& p : named) leaves.push_back(p.value);
  CHECK(testing::finite_diff_check(loss_fn, leaves).max_rel_err < 1e-4);
}

TEST_CASE("attention block requires head-divisible width") {
  Rng rng(11);
  CHECK_THROWS_AS(AttentionBlockParams::init(6, 4, rng), std::invalid_argument);
}

TEST_CASE("gated conv block reduces to the residual when the output projection is zero") {
  Rng rng(13);
  auto params = GatedConvBlockParams::init(6, 12, 3, rng);
  std::fill(params.w_o.data(), params.w_o.data() + params.w_o.numel(), 0.0);
  std::fill(params.b_o.data(), params.b_o.data() + params.b_o.numel(), 0.0);
  Tensor x = random_tokens(rng, 5, 6);
  Tape tape;
  Tensor y = gated_conv_block(tape, x, params);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("gated conv block with an annihilated gate is the residual") {
  Rng rng(17);
  auto params = GatedConvBlockParams::init(6, 8, 2, rng);
  // zero the gate half of the input projection: SiLU(0) = 0 kills the branch
  const int64_t d = 6, d_e = 8;
  for (int64_t r = 0; r < d; ++r)
    for (int64_t j = 0; j < d_e; ++j) params.w_in.data()[r * 2 * d_e + d_e + j] = 0.0;
  for (int64_t j = 0; j < d_e; ++j) params.b_in.data()[d_e + j] = 0.0;
  Tensor x = random_tokens(rng, 4, 6);
  Tape tape;
  Tensor y = gated_conv_block(tape, x, params);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("gated conv block matches the straight-line reference exactly") {
  Rng rng(19);
  const int64_t len = 5, d = 6, d_e = 10, k = 3;
  auto params = GatedConvBlockParams::init(d, d_e, k, rng);
  // non-trivial biases so every term participates
  for (Tensor t : {params.b_in, params.conv_bias, params.b_o, params.ln_bias}) {
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal() * 0.3;
  }
  Tensor x = random_tokens(rng, len, d);
  Tape tape;
  Tensor y = gated_conv_block(tape, x, params);

  const std::vector<double> expected = testing::ref_gated_conv_block(
      vec(x), vec(params.ln_gain), vec(params.ln_bias), vec(params.w_in), vec(params.b_in),
      vec(params.kernels), vec(params.conv_bias), vec(params.w_o), vec(params.b_o), len, d, d_e,
      k);
  REQUIRE(static_cast<int64_t>(expected.size()) == y.numel());
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == expected[static_cast<size_t>(i)]);
}

TEST_CASE("gated conv block is strictly causal") {
  Rng rng(23);
  auto params = GatedConvBlockParams::init(6, 12, 4, rng);
  Tensor x = random_tokens(rng, 7, 6);
  Tape tape;
  Tensor base = gated_conv_block(tape, x, params).detached_copy();
  const int64_t cut = 3;
  for (int64_t t = cut + 1; t < 7; ++t)
    for (int64_t j = 0; j < 6; ++j) x.data()[t * 6 + j] += rng.normal();
  Tensor perturbed = gated_conv_block(tape, x, params);
  for (int64_t t = 0; t <= cut; ++t)
    for (int64_t j = 0; j < 6; ++j) CHECK(perturbed.at(t, j) == base.at(t, j));
}

TEST_CASE("gated conv block with K=1 equals a gated pointwise layer") {
  Rng rng(29);
  const int64_t len = 4, d = 5, d_e = 7;
  auto params = GatedConvBlockParams::init(d, d_e, 1, rng);
  Tensor x = random_tokens(rng, len, d);
  Tape tape;
  Tensor y = gated_conv_block(tape, x, params);

  // direct pointwise computation: no temporal mixing at all
  Tensor kernel_row =
      Tensor::leaf({d_e}, std::vector<double>(params.kernels.data(), params.kernels.data() + d_e));
  Tensor x_hat = layer_norm(tape, x, params.ln_gain, params.ln_bias);
  Tensor proj = add(tape, matmul(tape, x_hat, params.w_in), params.b_in);
  Tensor c = slice_cols(tape, proj, 0, d_e);
  Tensor g = slice_cols(tape, proj, d_e, d_e);
  Tensor mixed = add(tape, mul(tape, c, kernel_row), params.conv_bias);
  Tensor pointwise = mul(tape, mixed, silu(tape, g));
  Tensor expected = add(tape, x, add(tape, matmul(tape, pointwise, params.w_o), params.b_o));
  for (int64_t i = 0; i < y.numel(); ++i) {
    CHECK(y.data()[i] == doctest::Approx(expected.data()[i]).epsilon(1e-13));
  }
}

TEST_CASE("gated conv block gradients match finite differences") {
  Rng rng(31);
  auto params = GatedConvBlockParams::init(4, 6, 2, rng);
  Tensor x = testing::random_leaf({4, 4}, rng);
  auto loss_fn = [&](Tape& t) {
    Tensor y = gated_conv_block(t, x, params);
    return sum(t, mul(t, y, y));
  };
  std::vector<NamedParam> named;
  params.collect_params("b", named);
  std::vector<Tensor> leaves{x};
  for (auto& p : named) leaves.push_back(p.value);
  CHECK(testing::finite_diff_check(loss_fn, leaves).max_rel_err < 1e-4);
}

TEST_CASE("kernel size must be positive") {
  Rng rng(37);
  CHECK_THROWS_AS(GatedConvBlockParams::init(4, 8, 0, rng), std::invalid_argument);
  CHECK_THROWS_AS(GatedConvBlockParams::init(4, 8, -2, rng), std::invalid_argument);
}

TEST_CASE("empty stack is the identity") {
  Rng rng(41);
  Tape tape;
  Tensor x = random_tokens(rng, 3, 4);
  std::vector<BlockParams> blocks;
  Tensor y = run_stack(tape, x, blocks);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("stack of two equals manual composition") {
  Rng rng(43);
  Tape tape;
  Tensor x = random_tokens(rng, 4, 6);
  std::vector<BlockParams> blocks;
  blocks.push_back(GatedConvBlockParams::init(6, 12, 3, rng));
  blocks.push_back(GatedConvBlockParams::init(6, 12, 3, rng));
  Tensor stacked = run_stack(tape, x, blocks);
  Tensor manual = gated_conv_block(tape, gated_conv_block(tape, x, std::get<GatedConvBlockParams>(blocks[0])),
                                   std::get<GatedConvBlockParams>(blocks[1]));
  for (int64_t i = 0; i < stacked.numel(); ++i) CHECK(stacked.data()[i] == manual.data()[i]);
}

TEST_CASE("causality survives a depth-3 stack of either kind") {
  Rng rng(47);
  for (int mode = 0; mode < 2; ++mode) {
    std::vector<BlockParams> blocks;
    for (int i = 0; i < 3; ++i) {
      if (mode == 0) {
        blocks.push_back(AttentionBlockParams::init(8, 2, rng));
      } else {
        blocks.push_back(GatedConvBlockParams::init(8, 16, 4, rng));
      }
    }
    Tensor x = random_tokens(rng, 6, 8);
    Tape tape;
    Tensor base = run_stack(tape, x, blocks).detached_copy();
    const int64_t cut = 2;
    for (int64_t t = cut + 1; t < 6; ++t)
      for (int64_t j = 0; j < 8; ++j) x.data()[t * 8 + j] += rng.normal();
    Tensor perturbed = run_stack(tape, x, blocks);
    for (int64_t t = 0; t <= cut; ++t)
      for (int64_t j = 0; j < 8; ++j) CHECK(perturbed.at(t, j) == base.at(t, j));
  }
}
