#include <doctest.h>

#include <cmath>

#include "testing.hpp"
#include "utr/tokenizer.hpp"

using namespace utr;

namespace {

UnifiedEncoderParams make_unified(Rng& rng, int64_t d_r = 4, int64_t d_s = 3, int64_t d_a = 2,
                                  int64_t d_model = 8, int64_t t_max = 16) {
  return UnifiedEncoderParams::init(d_r, d_s, d_a, d_model, t_max, rng);
}

}  // namespace

TEST_CASE("shift_actions base case and composition") {
  Tape tape;
  Tensor single = Tensor::leaf({1, 3}, {7, 8, 9});
  Tensor out1 = shift_actions(tape, single);
  for (int j = 0; j < 3; ++j) CHECK(out1.at(0, j) == 0.0);

  Tensor a = Tensor::leaf({3, 1}, {1, 2, 3});
  Tensor shifted = shift_actions(tape, a);
  CHECK(shifted.at(0, 0) == 0.0);
  CHECK(shifted.at(1, 0) == 1.0);
  CHECK(shifted.at(2, 0) == 2.0);

  Tensor twice = shift_actions(tape, shifted);
  CHECK(twice.at(0, 0) == 0.0);
  CHECK(twice.at(1, 0) == 0.0);
  CHECK(twice.at(2, 0) == 1.0);
}

TEST_CASE("gated return embedding saturation behavior") {
  Tape tape;
  // zero weights: sigma(0) = 0.5 everywhere, for any return value
  Tensor rtg = Tensor::leaf({2, 1}, {0.0, 123.0});
  Tensor w0 = Tensor::zeros({1, 4});
  Tensor b0 = Tensor::zeros({4});
  Tensor mid = gated_return_embedding(tape, rtg, w0, b0);
  for (int64_t i = 0; i < mid.numel(); ++i) CHECK(mid.data()[i] == 0.5);

  // mixed-magnitude weights: large-weight dims saturate, small-weight ones stay sensitive
  Tensor w = Tensor::leaf({1, 2}, {10.0, 0.01});
  Tensor b = Tensor::zeros({2});
  Tensor r100 = Tensor::leaf({1, 1}, {100.0});
  Tensor e = gated_return_embedding(tape, r100, w, b);
  CHECK(std::fabs(e.at(0, 0) - 1.0) < 1e-12);
  CHECK(e.at(0, 1) == doctest::Approx(0.7310585786300049).epsilon(1e-12));

  // everything strictly inside (0,1)
  Rng rng(41);
  Tensor wr = Tensor::randn({1, 6}, rng, 2.0);
  Tensor br = Tensor::randn({6}, rng, 1.0);
  Tensor rs = Tensor::randn({5, 1}, rng, 10.0);
  Tensor emb = gated_return_embedding(tape, rs, wr, br);
  for (int64_t i = 0; i < emb.numel(); ++i) {
    CHECK(emb.data()[i] > 0.0);
    CHECK(emb.data()[i] < 1.0);
  }
}

TEST_CASE("gated return embedding is monotone in the return") {
  Rng rng(43);
  Tape tape;
  Tensor w = Tensor::randn({1, 5}, rng, 1.0);
  Tensor b = Tensor::randn({5}, rng, 1.0);
  Tensor lo = Tensor::leaf({1, 1}, {-2.0});
  Tensor hi = Tensor::leaf({1, 1}, {3.5});
  Tensor e_lo = gated_return_embedding(tape, lo, w, b);
  Tensor e_hi = gated_return_embedding(tape, hi, w, b);
  for (int64_t j = 0; j < 5; ++j) {
    const double diff = e_hi.at(0, j) - e_lo.at(0, j);
    if (w.at(0, j) > 0) CHECK(diff > 0.0);
    if (w.at(0, j) < 0) CHECK(diff < 0.0);
  }
}

TEST_CASE("encode_unified output length and the layer-norm contract") {
  Rng rng(47);
  Tape tape;
  auto params = make_unified(rng);
  for (int64_t len : {1, 4, 7}) {
    Tensor rtg = Tensor::randn({len, 1}, rng, 30.0);
    Tensor states = Tensor::randn({len, 3}, rng, 30.0);
    Tensor actions = Tensor::randn({len, 2}, rng, 30.0);
    std::vector<int64_t> ts(static_cast<size_t>(len));
    for (int64_t t = 0; t < len; ++t) ts[static_cast<size_t>(t)] = t;
    TokenSequence seq = encode_unified(tape, rtg, states, actions, ts, params);
    CHECK(seq.tokens.dim(0) == len);
    CHECK(static_cast<int64_t>(seq.action_positions.size()) == len);
    for (int64_t t = 0; t < len; ++t) CHECK(seq.action_positions[static_cast<size_t>(t)] == t);
    const int64_t d = seq.tokens.dim(1);
    for (int64_t t = 0; t < len; ++t) {
      double mean = 0.0, var = 0.0;
      for (int64_t j = 0; j < d; ++j) mean += seq.tokens.at(t, j);
      mean /= static_cast<double>(d);
      for (int64_t j = 0; j < d; ++j) {
        const double c = seq.tokens.at(t, j) - mean;
        var += c * c;
      }
      var /= static_cast<double>(d);
      CHECK(std::fabs(mean) < 1e-10);
      CHECK(std::fabs(var - 1.0) < 1e-4);
    }
  }
}

TEST_CASE("encode_unified matches the straight-line reference exactly") {
  Rng rng(53);
  Tape tape;
  const int64_t len = 4, d_r = 4, d_s = 3, d_a = 2, d_model = 8;
  auto params = make_unified(rng, d_r, d_s, d_a, d_model, 16);
  Tensor rtg = Tensor::randn({len, 1}, rng, 1.0);
  Tensor states = Tensor::randn({len, d_s}, rng, 1.0);
  Tensor actions = Tensor::randn({len, d_a}, rng, 1.0);
  std::vector<int64_t> ts{3, 5, 6, 9};

  TokenSequence seq = encode_unified(tape, rtg, states, actions, ts, params);

  auto vec = [](const Tensor& t) {
    return std::vector<double>(t.data(), t.data() + t.numel());
  };
  const std::vector<double> expected = testing::ref_encode_unified(
      vec(rtg), vec(states), vec(actions), ts, vec(params.w_r), vec(params.b_r), vec(params.w_f),
      vec(params.b_f), vec(params.timestep_embed), vec(params.ln_gain), vec(params.ln_bias), len,
      d_r, d_s, d_a, d_model);
  REQUIRE(static_cast<int64_t>(expected.size()) == seq.tokens.numel());
  for (int64_t i = 0; i < seq.tokens.numel(); ++i) {
    CHECK(seq.tokens.data()[i] == expected[static_cast<size_t>(i)]);
  }
}

TEST_CASE("encode_unified token t depends only on (R_t, s_t, a_{t-1}, t)") {
  Rng rng(59);
  Tape tape;
  auto params = make_unified(rng);
  const int64_t len = 6;
  Tensor rtg = Tensor::randn({len, 1}, rng, 1.0);
  Tensor states = Tensor::randn({len, 3}, rng, 1.0);
  Tensor actions = Tensor::randn({len, 2}, rng, 1.0);
  std::vector<int64_t> ts{0, 1, 2, 3, 4, 5};
  Tensor base = encode_unified(tape, rtg, states, actions, ts, params).tokens.detached_copy();

  const int64_t probe = 3;
  // perturb every other step's inputs (and the action at t itself, which only
  // enters token t+1 after the shift)
  for (int64_t t = 0; t < len; ++t) {
    if (t != probe) {
      rtg.data()[t] += rng.normal();
      for (int64_t j = 0; j < 3; ++j) states.data()[t * 3 + j] += rng.normal();
    }
    if (t != probe - 1) {
      for (int64_t j = 0; j < 2; ++j) actions.data()[t * 2 + j] += rng.normal();
    }
  }
  Tensor perturbed = encode_unified(tape, rtg, states, actions, ts, params).tokens;
  for (int64_t j = 0; j < 8; ++j) CHECK(perturbed.at(probe, j) == base.at(probe, j));
}

TEST_CASE("encode_unified gradients match finite differences") {
  Rng rng(61);
  auto params = make_unified(rng, 3, 2, 2, 4, 8);
  Tensor rtg = testing::random_leaf({3, 1}, rng);
  Tensor states = testing::random_leaf({3, 2}, rng);
  Tensor actions = testing::random_leaf({3, 2}, rng);
  std::vector<int64_t> ts{0, 2, 5};
  Rng probe_rng(62);
  Tensor probe = Tensor::randn({3, 4}, probe_rng, 1.0);
  auto loss_fn = [&](Tape& t) {
    TokenSequence seq = encode_unified(t, rtg, states, actions, ts, params);
    return sum(t, mul(t, seq.tokens, probe));
  };
  std::vector<Tensor> leaves{params.w_r,  params.b_r,     params.w_f,
                             params.b_f,  params.timestep_embed, params.ln_gain,
                             params.ln_bias, rtg,         states,
                             actions};
  CHECK(testing::finite_diff_check(loss_fn, leaves).max_rel_err < 1e-4);
}

TEST_CASE("encode_unified rejects timestep overflow") {
  Rng rng(67);
  Tape tape;
  auto params = make_unified(rng, 4, 3, 2, 8, 4);  // t_max = 4
  Tensor rtg = Tensor::zeros({2, 1});
  Tensor states = Tensor::zeros({2, 3});
  Tensor actions = Tensor::zeros({2, 2});
  CHECK_THROWS_AS(encode_unified(tape, rtg, states, actions, {0, 4}, params),
                  std::invalid_argument);
}

TEST_CASE("encode_separated produces 3L interleaved tokens") {
  Rng rng(71);
  Tape tape;
  auto params = SeparatedEncoderParams::init(3, 2, 8, 16, rng);
  for (int64_t len : {1, 2, 4, 16}) {
    Tensor rtg = Tensor::randn({len, 1}, rng, 1.0);
    Tensor states = Tensor::randn({len, 3}, rng, 1.0);
    Tensor actions = Tensor::randn({len, 2}, rng, 1.0);
    std::vector<int64_t> ts(static_cast<size_t>(len));
    for (int64_t t = 0; t < len; ++t) ts[static_cast<size_t>(t)] = t;
    TokenSequence seq = encode_separated(tape, rtg, states, actions, ts, params);
    CHECK(seq.tokens.dim(0) == 3 * len);
  }
}

TEST_CASE("encode_separated action positions are the state-token slots") {
  Rng rng(73);
  Tape tape;
  auto params = SeparatedEncoderParams::init(3, 2, 8, 16, rng);
  Tensor rtg = Tensor::randn({3, 1}, rng, 1.0);
  Tensor states = Tensor::randn({3, 3}, rng, 1.0);
  Tensor actions = Tensor::randn({3, 2}, rng, 1.0);
  TokenSequence seq = encode_separated(tape, rtg, states, actions, {0, 1, 2}, params);
  REQUIRE(seq.action_positions.size() == 3);
  CHECK(seq.action_positions[0] == 1);
  CHECK(seq.action_positions[1] == 4);
  CHECK(seq.action_positions[2] == 7);
}

TEST_CASE("encode_separated with zero modality embeddings leaves timestep tokens") {
  Rng rng(79);
  Tape tape;
  auto params = SeparatedEncoderParams::init(3, 2, 8, 16, rng);
  // zero every modality projection; tokens become LN(timestep embedding)
  for (Tensor t : {params.w_r, params.b_r, params.w_s, params.b_s, params.w_a, params.b_a}) {
    std::fill(t.data(), t.data() + t.numel(), 0.0);
  }
  Tensor rtg = Tensor::randn({2, 1}, rng, 1.0);
  Tensor states = Tensor::randn({2, 3}, rng, 1.0);
  Tensor actions = Tensor::randn({2, 2}, rng, 1.0);
  TokenSequence seq = encode_separated(tape, rtg, states, actions, {4, 9}, params);

  Tensor pos = gather_rows(tape, params.timestep_embed, {4, 9});
  Tensor expected = layer_norm(tape, pos, params.ln_gain, params.ln_bias);
  for (int64_t t = 0; t < 2; ++t) {
    for (int64_t slot = 0; slot < 3; ++slot) {
      for (int64_t j = 0; j < 8; ++j) {
        CHECK(seq.tokens.at(3 * t + slot, j) == expected.at(t, j));
      }
    }
  }
}

TEST_CASE("encode_separated gradients match finite differences") {
  Rng rng(83);
  auto params = SeparatedEncoderParams::init(2, 2, 4, 8, rng);
  Tensor rtg = testing::random_leaf({2, 1}, rng);
  Tensor states = testing::random_leaf({2, 2}, rng);
  Tensor actions = testing::random_leaf({2, 2}, rng);
  Rng probe_rng(84);
  Tensor probe = Tensor::randn({6, 4}, probe_rng, 1.0);
  auto loss_fn = [&](Tape& t) {
    TokenSequence seq = encode_separated(t, rtg, states, actions, {1, 3}, params);
    return sum(t, mul(t, seq.tokens, probe));
  };
  std::vector<Tensor> leaves{params.w_r, params.b_r, params.w_s,           params.b_s,
                             params.w_a, params.b_a, params.timestep_embed, params.ln_gain,
                             params.ln_bias};
  CHECK(testing::finite_diff_check(loss_fn, leaves).max_rel_err < 1e-4);
}
