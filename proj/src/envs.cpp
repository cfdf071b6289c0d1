#include "utr/envs.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace utr {

namespace {

// Solves X = M^{-1} for a small symmetric positive-definite matrix via
// Gauss-Jordan. Sizes here are tiny (d_a x d_a).
std::vector<double> invert(std::vector<double> m, int64_t n) {
  std::vector<double> inv(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i) inv[i * n + i] = 1.0;
  for (int64_t col = 0; col < n; ++col) {
    int64_t pivot = col;
    for (int64_t r = col + 1; r < n; ++r) {
      if (std::fabs(m[r * n + col]) > std::fabs(m[pivot * n + col])) pivot = r;
    }
    if (std::fabs(m[pivot * n + col]) < 1e-12) {
      throw std::runtime_error("lqr: singular matrix in Riccati step");
    }
    if (pivot != col) {
      for (int64_t j = 0; j < n; ++j) {
        std::swap(m[col * n + j], m[pivot * n + j]);
        std::swap(inv[col * n + j], inv[pivot * n + j]);
      }
    }
    const double d = m[col * n + col];
    for (int64_t j = 0; j < n; ++j) {
      m[col * n + j] /= d;
      inv[col * n + j] /= d;
    }
    for (int64_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = m[r * n + col];
      if (f == 0.0) continue;
      for (int64_t j = 0; j < n; ++j) {
        m[r * n + j] -= f * m[col * n + j];
        inv[r * n + j] -= f * inv[col * n + j];
      }
    }
  }
  return inv;
}

// out[m,n] = a[m,k] . b[k,n]
std::vector<double> matmul_raw(const std::vector<double>& a, const std::vector<double>& b,
                               int64_t m, int64_t k, int64_t n) {
  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      for (int64_t j = 0; j < n; ++j) out[i * n + j] += av * b[p * n + j];
    }
  return out;
}

std::vector<double> transpose_raw(const std::vector<double>& a, int64_t m, int64_t n) {
  std::vector<double> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

}  // namespace

// --- ChainMdp ---------------------------------------------------------------

ChainMdp::ChainMdp(int64_t n_states, int64_t horizon) : n_states_(n_states), horizon_(horizon) {
  if (n_states < 2) throw std::invalid_argument("ChainMdp: need at least 2 states");
  if (horizon < 1) throw std::invalid_argument("ChainMdp: horizon must be >= 1");
}

std::vector<double> ChainMdp::one_hot(int64_t s) const {
  std::vector<double> v(static_cast<size_t>(n_states_), 0.0);
  v[static_cast<size_t>(s)] = 1.0;
  return v;
}

std::vector<double> ChainMdp::reset(Rng&) {
  state_ = 0;
  steps_ = 0;
  return one_hot(state_);
}

StepResult ChainMdp::step(const std::vector<double>& action) {
  if (static_cast<int64_t>(action.size()) != 2) {
    throw std::invalid_argument("ChainMdp: action must be a 2-dim one-hot, got size " +
                                std::to_string(action.size()));
  }
  const bool right = action[1] >= action[0];
  const int64_t goal = n_states_ - 1;
  state_ = right ? std::min(state_ + 1, goal) : std::max<int64_t>(state_ - 1, 0);
  ++steps_;
  StepResult out;
  out.reward = state_ == goal ? 1.0 : 0.0;
  out.done = state_ == goal || steps_ >= horizon_;
  out.state = one_hot(state_);
  return out;
}

// --- LinearControl ----------------------------------------------------------

LinearControl::LinearControl(std::vector<double> a_mat, std::vector<double> b_mat,
                             std::vector<double> q_diag, std::vector<double> r_diag, int64_t d_s,
                             int64_t d_a, int64_t horizon)
    : a_(std::move(a_mat)),
      b_(std::move(b_mat)),
      q_(std::move(q_diag)),
      r_(std::move(r_diag)),
      d_s_(d_s),
      d_a_(d_a),
      horizon_(horizon) {
  if (d_s < 1 || d_a < 1 || horizon < 1) {
    throw std::invalid_argument("LinearControl: dims and horizon must be positive");
  }
  if (static_cast<int64_t>(a_.size()) != d_s * d_s ||
      static_cast<int64_t>(b_.size()) != d_s * d_a ||
      static_cast<int64_t>(q_.size()) != d_s || static_cast<int64_t>(r_.size()) != d_a) {
    throw std::invalid_argument("LinearControl: matrix sizes inconsistent with dims");
  }
}

LinearControl LinearControl::double_integrator(int64_t horizon) {
  const double dt = 0.1;
  std::vector<double> a = {1.0, dt, 0.0, 1.0};
  std::vector<double> b = {0.5 * dt * dt, dt};
  std::vector<double> q = {1.0, 0.1};
  std::vector<double> r = {0.1};
  return LinearControl(std::move(a), std::move(b), std::move(q), std::move(r), 2, 1, horizon);
}

std::vector<double> LinearControl::reset(Rng& rng) {
  state_.resize(static_cast<size_t>(d_s_));
  for (auto& s : state_) s = rng.normal();
  steps_ = 0;
  return state_;
}

StepResult LinearControl::step(const std::vector<double>& action) {
  if (static_cast<int64_t>(action.size()) != d_a_) {
    throw std::invalid_argument("LinearControl: action size " + std::to_string(action.size()) +
                                " != d_a " + std::to_string(d_a_));
  }
  double cost = 0.0;
  for (int64_t i = 0; i < d_s_; ++i) cost += q_[i] * state_[i] * state_[i];
  for (int64_t j = 0; j < d_a_; ++j) cost += r_[j] * action[j] * action[j];
  std::vector<double> next(static_cast<size_t>(d_s_), 0.0);
  for (int64_t i = 0; i < d_s_; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < d_s_; ++j) acc += a_[i * d_s_ + j] * state_[j];
    for (int64_t j = 0; j < d_a_; ++j) acc += b_[i * d_a_ + j] * action[j];
    next[static_cast<size_t>(i)] = acc;
  }
  state_ = std::move(next);
  ++steps_;
  StepResult out;
  out.reward = -cost;
  out.done = steps_ >= horizon_;
  out.state = state_;
  return out;
}

std::vector<std::vector<double>> LinearControl::lqr_gains() const {
  // P_T = Q; K_t = (R + B'PB)^{-1} B'PA; P_t = Q + A'P(A - BK_t)
  std::vector<double> q_full(static_cast<size_t>(d_s_ * d_s_), 0.0);
  for (int64_t i = 0; i < d_s_; ++i) q_full[i * d_s_ + i] = q_[i];
  std::vector<double> r_full(static_cast<size_t>(d_a_ * d_a_), 0.0);
  for (int64_t i = 0; i < d_a_; ++i) r_full[i * d_a_ + i] = r_[i];

  const std::vector<double> at = transpose_raw(a_, d_s_, d_s_);
  const std::vector<double> bt = transpose_raw(b_, d_s_, d_a_);

  std::vector<std::vector<double>> gains(static_cast<size_t>(horizon_));
  std::vector<double> p = q_full;
  for (int64_t t = horizon_ - 1; t >= 0; --t) {
    const auto pb = matmul_raw(p, b_, d_s_, d_s_, d_a_);
    const auto btpb = matmul_raw(bt, pb, d_a_, d_s_, d_a_);
    std::vector<double> gram = r_full;
    for (size_t i = 0; i < gram.size(); ++i) gram[i] += btpb[i];
    const auto inv = invert(gram, d_a_);
    const auto pa = matmul_raw(p, a_, d_s_, d_s_, d_s_);
    const auto btpa = matmul_raw(bt, pa, d_a_, d_s_, d_s_);
    const auto k = matmul_raw(inv, btpa, d_a_, d_a_, d_s_);
    gains[static_cast<size_t>(t)] = k;
    // P_t = Q + A'P(A - B K)
    auto bk = matmul_raw(b_, k, d_s_, d_a_, d_s_);
    std::vector<double> a_cl = a_;
    for (size_t i = 0; i < a_cl.size(); ++i) a_cl[i] -= bk[i];
    const auto p_acl = matmul_raw(p, a_cl, d_s_, d_s_, d_s_);
    const auto atp_acl = matmul_raw(at, p_acl, d_s_, d_s_, d_s_);
    p = q_full;
    for (size_t i = 0; i < p.size(); ++i) p[i] += atp_acl[i];
  }
  return gains;
}

// --- EnvSpec ----------------------------------------------------------------

std::unique_ptr<Environment> EnvSpec::make() const {
  if (kind == "chain") return std::make_unique<ChainMdp>(n_states, horizon);
  if (kind == "linear") {
    if (d_s == 2 && d_a == 1) {
      return std::make_unique<LinearControl>(LinearControl::double_integrator(horizon));
    }
    throw std::invalid_argument("EnvSpec: only the (d_s=2, d_a=1) double integrator is built in");
  }
  throw std::invalid_argument("EnvSpec: unknown env kind '" + kind + "'");
}

// --- policies ---------------------------------------------------------------

Policy make_tier_policy(const EnvSpec& spec, const std::string& tier) {
  if (spec.kind == "chain") {
    double eps = 0.0;
    if (tier == "expert") eps = 0.0;
    else if (tier == "medium") eps = 0.3;
    else if (tier == "random") eps = 0.7;
    else throw std::invalid_argument("unknown behavior tier '" + tier + "'");
    return [eps](const std::vector<double>&, int64_t, Rng& rng) {
      std::vector<double> a(2, 0.0);
      if (rng.uniform() < eps) {
        a[static_cast<size_t>(rng.uniform_int(2))] = 1.0;
      } else {
        a[1] = 1.0;  // optimal: walk right
      }
      return a;
    };
  }
  if (spec.kind == "linear") {
    double noise = 0.0;
    if (tier == "expert") noise = 0.0;
    else if (tier == "medium") noise = 0.3;
    else if (tier == "random") noise = 1.0;
    else throw std::invalid_argument("unknown behavior tier '" + tier + "'");
    auto env = spec.make();
    auto* lin = dynamic_cast<LinearControl*>(env.get());
    auto gains = std::make_shared<std::vector<std::vector<double>>>(lin->lqr_gains());
    const int64_t d_s = spec.d_s, d_a = spec.d_a;
    return [gains, noise, d_s, d_a](const std::vector<double>& state, int64_t t, Rng& rng) {
      std::vector<double> a(static_cast<size_t>(d_a), 0.0);
      const auto& k = (*gains)[static_cast<size_t>(std::min<int64_t>(
          t, static_cast<int64_t>(gains->size()) - 1))];
      for (int64_t i = 0; i < d_a; ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < d_s; ++j) acc -= k[i * d_s + j] * state[j];
        a[static_cast<size_t>(i)] = acc + noise * rng.normal();
      }
      return a;
    };
  }
  throw std::invalid_argument("make_tier_policy: unknown env kind '" + spec.kind + "'");
}

// --- chain oracles ----------------------------------------------------------

namespace {

// Shared DP over (state, steps elapsed). `optimal` picks max over actions,
// otherwise actions average with probability 1/2 each (uniform policy).
double chain_dp(int64_t n, int64_t horizon, bool optimal) {
  const int64_t goal = n - 1;
  // V[t][s]: expected remaining return at state s with t steps already taken
  std::vector<std::vector<double>> v(static_cast<size_t>(horizon + 1),
                                     std::vector<double>(static_cast<size_t>(n), 0.0));
  for (int64_t t = horizon - 1; t >= 0; --t) {
    for (int64_t s = 0; s < goal; ++s) {  // goal is absorbing
      const int64_t s_right = std::min(s + 1, goal);
      const int64_t s_left = std::max<int64_t>(s - 1, 0);
      const double val_right =
          (s_right == goal ? 1.0 : 0.0) + (s_right == goal ? 0.0 : v[t + 1][s_right]);
      const double val_left = v[t + 1][s_left];
      v[t][s] = optimal ? std::max(val_right, val_left) : 0.5 * (val_right + val_left);
    }
  }
  return v[0][0];
}

}  // namespace

double chain_optimal_return(int64_t n_states, int64_t horizon) {
  return chain_dp(n_states, horizon, true);
}

double chain_random_return(int64_t n_states, int64_t horizon) {
  return chain_dp(n_states, horizon, false);
}

ReferenceReturns reference_returns(const EnvSpec& spec, uint64_t seed, int64_t n_rollouts) {
  ReferenceReturns ref;
  if (spec.kind == "chain") {
    ref.expert = chain_optimal_return(spec.n_states, spec.horizon);
    ref.random = chain_random_return(spec.n_states, spec.horizon);
    return ref;
  }
  auto run_tier = [&](const std::string& tier, uint64_t salt) {
    Policy policy = make_tier_policy(spec, tier);
    double total = 0.0;
    for (int64_t e = 0; e < n_rollouts; ++e) {
      Rng rng(seed * 0x9e3779b97f4a7c15ULL + salt * 1000003ULL + static_cast<uint64_t>(e));
      auto env = spec.make();
      std::vector<double> state = env->reset(rng);
      double ep_ret = 0.0;
      for (int64_t t = 0;; ++t) {
        const StepResult r = env->step(policy(state, t, rng));
        ep_ret += r.reward;
        state = r.state;
        if (r.done) break;
      }
      total += ep_ret;
    }
    return total / static_cast<double>(n_rollouts);
  };
  ref.expert = run_tier("expert", 1);
  ref.random = run_tier("random", 2);
  return ref;
}

double normalized_score(double ret, const ReferenceReturns& ref) {
  const double denom = ref.expert - ref.random;
  if (std::fabs(denom) < 1e-12) return 0.0;
  return 100.0 * (ret - ref.random) / denom;
}

}  // namespace utr
