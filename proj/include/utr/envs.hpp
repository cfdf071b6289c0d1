#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "utr/rng.hpp"

namespace utr {

struct StepResult {
  std::vector<double> state;
  double reward = 0.0;
  bool done = false;
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual int64_t state_dim() const = 0;
  // width of the action representation fed to models (one-hot for discrete)
  virtual int64_t action_dim() const = 0;
  virtual bool discrete_actions() const = 0;
  virtual int64_t horizon() const = 0;
  virtual std::vector<double> reset(Rng& rng) = 0;
  virtual StepResult step(const std::vector<double>& action) = 0;
};

// 1-D corridor of n_states cells, start at cell 0, goal at cell n-1.
// Actions {left, right}; moving into the goal yields reward 1 and ends the
// episode. States are one-hot vectors.
class ChainMdp : public Environment {
 public:
  ChainMdp(int64_t n_states, int64_t horizon);

  int64_t state_dim() const override { return n_states_; }
  int64_t action_dim() const override { return 2; }
  bool discrete_actions() const override { return true; }
  int64_t horizon() const override { return horizon_; }
  std::vector<double> reset(Rng& rng) override;
  StepResult step(const std::vector<double>& action) override;

  int64_t n_states() const { return n_states_; }

 private:
  std::vector<double> one_hot(int64_t s) const;
  int64_t n_states_;
  int64_t horizon_;
  int64_t state_ = 0;
  int64_t steps_ = 0;
};

// Deterministic linear dynamics s' = A s + B a with quadratic per-step cost
// reward = -(s'Qs + a'Ra). Start states are drawn from N(0, I) per episode.
class LinearControl : public Environment {
 public:
  LinearControl(std::vector<double> a_mat, std::vector<double> b_mat, std::vector<double> q_diag,
                std::vector<double> r_diag, int64_t d_s, int64_t d_a, int64_t horizon);

  static LinearControl double_integrator(int64_t horizon);

  int64_t state_dim() const override { return d_s_; }
  int64_t action_dim() const override { return d_a_; }
  bool discrete_actions() const override { return false; }
  int64_t horizon() const override { return horizon_; }
  std::vector<double> reset(Rng& rng) override;
  StepResult step(const std::vector<double>& action) override;

  const std::vector<double>& a_matrix() const { return a_; }
  const std::vector<double>& b_matrix() const { return b_; }
  const std::vector<double>& q_diag() const { return q_; }
  const std::vector<double>& r_diag() const { return r_; }

  // Finite-horizon LQR feedback gains K_t, each [d_a, d_s], via the Riccati
  // backward recursion. Optimal action at step t is a = -K_t s.
  std::vector<std::vector<double>> lqr_gains() const;

 private:
  std::vector<double> a_, b_, q_, r_;
  int64_t d_s_, d_a_, horizon_;
  std::vector<double> state_;
  int64_t steps_ = 0;
};

// Serializable environment description (stored in dataset manifests).
struct EnvSpec {
  std::string kind = "chain";  // "chain" | "linear"
  int64_t n_states = 8;        // chain
  int64_t horizon = 10;
  // linear
  int64_t d_s = 2;
  int64_t d_a = 1;

  std::unique_ptr<Environment> make() const;
};

// Behavior policy: maps (state, step index) to an action representation.
using Policy = std::function<std::vector<double>(const std::vector<double>& state, int64_t t,
                                                 Rng& rng)>;

// Chain tiers are epsilon-greedy around the optimal walk-right policy with
// epsilon in {0, 0.3, 0.7}; linear tiers are LQR feedback plus Gaussian
// action noise with scale in {0, 0.3, 1.0}.
Policy make_tier_policy(const EnvSpec& spec, const std::string& tier);

// Exact finite-horizon value iteration; equals 1 whenever horizon >= n-1.
double chain_optimal_return(int64_t n_states, int64_t horizon);
// Exact expected return of the uniform-random policy (dynamic program).
double chain_random_return(int64_t n_states, int64_t horizon);

// Oracle reference returns used for score normalization:
// chain uses the exact DPs above; linear uses seeded Monte-Carlo rollouts of
// the LQR expert and the random tier.
struct ReferenceReturns {
  double expert = 0.0;
  double random = 0.0;
};
ReferenceReturns reference_returns(const EnvSpec& spec, uint64_t seed, int64_t n_rollouts = 200);

double normalized_score(double ret, const ReferenceReturns& ref);

}  // namespace utr
