#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "utr/data.hpp"
#include "utr/model.hpp"

namespace utr {

struct TrainConfig {
  int64_t batch_size = 64;
  int64_t steps = 2000;
  double lr = 1e-4;
  int64_t warmup_steps = 100;   // linear warmup, then constant
  double grad_clip = 0.25;      // global grad-norm clip
  int64_t context_len = 16;
  uint64_t seed = 0;
  int64_t eval_interval = 0;    // checkpoint every N steps; 0 = final only
  int64_t threads = 0;          // 0 = hardware concurrency

  void validate() const;
};

struct MetricsRow {
  int64_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

std::string metrics_to_csv(const std::vector<MetricsRow>& rows);

// One training subsequence, left-padded with zeros to the context length.
struct SequenceSample {
  Array rtg;     // [L,1]
  Array states;  // [L,d_s]
  Array actions; // [L,d_a]
  std::vector<int64_t> timesteps;
  std::vector<double> mask;  // 1 for real steps
};

using Batch = std::vector<SequenceSample>;

// Uniform over (episode, end-index) pairs, so an episode is drawn
// proportionally to its number of valid end positions.
Batch sample_batch(const Dataset& ds, int64_t context_len, int64_t batch_size, Rng& rng);

// Data-parallel forward/backward over a batch. The batch is split into a
// fixed number of chunks (independent of the thread count) and chunk grads
// are reduced in chunk order, so results are bitwise reproducible for any
// number of threads.
class ParallelTrainer {
 public:
  ParallelTrainer(PolicyModel& model, int64_t n_chunks, int64_t threads);
  ~ParallelTrainer();

  // Accumulates d(mean loss)/d(params) onto the master params, returns the
  // mean loss over the batch.
  double run_step(const Batch& batch);

  int64_t n_chunks() const { return n_chunks_; }

 private:
  PolicyModel& master_;
  std::vector<NamedParam> master_params_;
  std::vector<PolicyModel> workers_;
  std::vector<std::vector<NamedParam>> worker_params_;
  std::vector<std::unique_ptr<Tape>> tapes_;
  int64_t n_chunks_;
  int64_t threads_;
};

struct TrainResult {
  std::vector<MetricsRow> metrics;
  bool aborted = false;
  std::string abort_reason;
  int64_t completed_steps = 0;
  std::string final_checkpoint;  // empty when no out_dir or aborted pre-save
};

// Offline training loop: subsequence sampling, warmup + clipped Adam,
// per-step metrics, checkpoints at eval intervals and at the end. When
// out_dir is empty nothing is written. Deterministic in cfg.seed.
// resume_from, when given, must be a checkpoint written by this function;
// optimizer state, sampler rng and step counter continue exactly.
TrainResult train(PolicyModel& model, const Dataset& ds, const TrainConfig& cfg,
                  const std::string& out_dir, const std::string& resume_from = "");

// Writes model params + optimizer state + sampler rng, loadable both by
// PolicyModel::load_file (params only) and by train(resume_from=...).
void save_train_checkpoint(const std::string& path, const PolicyModel& model, const Adam& adam,
                           const Rng& rng, int64_t next_step);

struct EvalReport {
  std::vector<double> multipliers;
  std::vector<double> mean_returns;
  std::vector<double> norm_scores;
  double best_score = 0.0;
  size_t best_index = 0;
  ReferenceReturns ref;
  double wall_seconds = 0.0;

  std::string to_csv() const;
};

// Action chosen from the rollout history. Histories are raw (env units);
// `t` is the current step, states has t+1 entries, actions has t.
using ActionFn = std::function<std::vector<double>(
    const std::vector<std::vector<double>>& states,
    const std::vector<std::vector<double>>& actions, const std::vector<double>& rtg_remaining,
    int64_t t)>;

// Multi-target evaluation: each rollout starts from target = multiplier *
// expert oracle return and decrements the fed-back target by each observed
// reward; the best normalized score over targets is reported.
EvalReport evaluate_actions(const ActionFn& fn, const EnvSpec& env_spec,
                            const std::vector<double>& multipliers, int64_t n_eval, uint64_t seed);

EvalReport evaluate(const PolicyModel& model, const EnvSpec& env_spec,
                    const DatasetManifest& manifest, const std::vector<double>& multipliers,
                    int64_t n_eval, uint64_t seed);

// The six default target multipliers of the evaluation protocol.
std::vector<double> default_rtg_multipliers();

// Window builder shared by eval and tests: the model's view of the last
// min(t+1, L) steps, left-padded to L.
ActionFn model_action_fn(const PolicyModel& model, const DatasetManifest& manifest);

std::vector<double> normalize_action_repr(const DatasetManifest& m,
                                          const std::vector<double>& action);

}  // namespace utr
