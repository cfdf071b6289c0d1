#include "utr/train.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace utr {

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b) {
  uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

// shortest representation that round-trips exactly
std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1 || steps < 0 || context_len < 1) {
    throw std::invalid_argument("TrainConfig: batch_size/steps/context_len must be positive");
  }
  if (lr < 0.0 || warmup_steps < 0 || grad_clip <= 0.0) {
    throw std::invalid_argument("TrainConfig: bad lr/warmup/grad_clip");
  }
}

std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << "step,loss,grad_norm,lr,wall_ms\n";
  for (const MetricsRow& r : rows) {
    os << r.step << "," << fmt_double(r.loss) << "," << fmt_double(r.grad_norm) << ","
       << fmt_double(r.lr) << "," << fmt_double(r.wall_ms) << "\n";
  }
  return os.str();
}

Batch sample_batch(const Dataset& ds, int64_t context_len, int64_t batch_size, Rng& rng) {
  if (ds.episodes.empty()) throw std::invalid_argument("sample_batch: empty dataset");
  const int64_t d_s = ds.manifest.state_dim;
  const int64_t d_a = ds.manifest.action_dim;

  std::vector<int64_t> cumulative(ds.episodes.size());
  int64_t total = 0;
  for (size_t e = 0; e < ds.episodes.size(); ++e) {
    total += ds.episodes[e].length();
    cumulative[e] = total;
  }

  Batch batch;
  batch.reserve(static_cast<size_t>(batch_size));
  for (int64_t b = 0; b < batch_size; ++b) {
    const int64_t pick = rng.uniform_int(total);
    const size_t ep_idx = static_cast<size_t>(
        std::distance(cumulative.begin(),
                      std::upper_bound(cumulative.begin(), cumulative.end(), pick)));
    const Trajectory& tr = ds.episodes[ep_idx];
    const int64_t prev = ep_idx == 0 ? 0 : cumulative[ep_idx - 1];
    const int64_t end = pick - prev;  // inclusive end index within the episode
    const int64_t start = std::max<int64_t>(0, end - context_len + 1);
    const int64_t width = end - start + 1;
    const int64_t pad = context_len - width;

    SequenceSample s;
    s.rtg = Array{{context_len, 1}, std::vector<double>(static_cast<size_t>(context_len), 0.0)};
    s.states = Array{{context_len, d_s},
                     std::vector<double>(static_cast<size_t>(context_len * d_s), 0.0)};
    s.actions = Array{{context_len, d_a},
                      std::vector<double>(static_cast<size_t>(context_len * d_a), 0.0)};
    s.timesteps.assign(static_cast<size_t>(context_len), 0);
    s.mask.assign(static_cast<size_t>(context_len), 0.0);
    for (int64_t i = 0; i < width; ++i) {
      const int64_t src = start + i;
      const int64_t dst = pad + i;
      s.rtg.data[static_cast<size_t>(dst)] = tr.rtg[static_cast<size_t>(src)];
      std::copy_n(tr.states.data.begin() + src * d_s, d_s, s.states.data.begin() + dst * d_s);
      std::copy_n(tr.actions.data.begin() + src * d_a, d_a, s.actions.data.begin() + dst * d_a);
      s.timesteps[static_cast<size_t>(dst)] = src;
      s.mask[static_cast<size_t>(dst)] = 1.0;
    }
    batch.push_back(std::move(s));
  }
  return batch;
}

// --- ParallelTrainer ----------------------------------------------------------

ParallelTrainer::ParallelTrainer(PolicyModel& model, int64_t n_chunks, int64_t threads)
    : master_(model), n_chunks_(std::max<int64_t>(1, n_chunks)) {
  const int64_t hw = static_cast<int64_t>(std::thread::hardware_concurrency());
  threads_ = threads > 0 ? threads : std::max<int64_t>(1, hw);
  threads_ = std::min(threads_, n_chunks_);
  master_params_ = master_.params();
  workers_.reserve(static_cast<size_t>(n_chunks_));
  for (int64_t c = 0; c < n_chunks_; ++c) {
    workers_.push_back(master_.grad_isolated_clone());
    worker_params_.push_back(workers_.back().params());
    tapes_.push_back(std::make_unique<Tape>());
  }
}

ParallelTrainer::~ParallelTrainer() = default;

double ParallelTrainer::run_step(const Batch& batch) {
  const int64_t bsz = static_cast<int64_t>(batch.size());
  if (bsz == 0) throw std::invalid_argument("run_step: empty batch");
  const int64_t chunks = std::min(n_chunks_, bsz);
  const double inv_b = 1.0 / static_cast<double>(bsz);

  std::vector<double> chunk_losses(static_cast<size_t>(chunks), 0.0);
  std::vector<std::string> chunk_errors(static_cast<size_t>(chunks));
  std::atomic<int64_t> next_chunk{0};

  auto worker_fn = [&] {
    for (;;) {
      const int64_t c = next_chunk.fetch_add(1);
      if (c >= chunks) return;
      PolicyModel& worker = workers_[static_cast<size_t>(c)];
      Tape& tape = *tapes_[static_cast<size_t>(c)];
      const int64_t lo = c * bsz / chunks;
      const int64_t hi = (c + 1) * bsz / chunks;
      try {
        double local = 0.0;
        for (int64_t i = lo; i < hi; ++i) {
          const SequenceSample& s = batch[static_cast<size_t>(i)];
          tape.reset();
          Tensor preds = worker.forward(tape, s.rtg, s.states, s.actions, s.timesteps);
          Tensor loss = worker.loss(tape, preds, s.actions, s.mask);
          local += loss.value();
          Tensor scaled = scale(tape, loss, inv_b);
          tape.backward(scaled);
        }
        chunk_losses[static_cast<size_t>(c)] = local;
      } catch (const std::exception& e) {
        chunk_errors[static_cast<size_t>(c)] = e.what();
        return;
      }
    }
  };

  const int64_t n_threads = std::min<int64_t>(threads_, chunks);
  if (n_threads <= 1) {
    worker_fn();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(n_threads));
    for (int64_t t = 0; t < n_threads; ++t) pool.emplace_back(worker_fn);
    for (auto& th : pool) th.join();
  }
  for (const std::string& err : chunk_errors) {
    if (!err.empty()) throw std::runtime_error("train step failed: " + err);
  }

  // merge worker grads in fixed chunk order, then clear them
  for (size_t p = 0; p < master_params_.size(); ++p) {
    Tensor& dst = master_params_[p].value;
    for (int64_t c = 0; c < chunks; ++c) {
      Tensor& src = worker_params_[static_cast<size_t>(c)][p].value;
      if (!src.has_grad()) continue;
      dst.ensure_grad();
      const double* g = src.grad();
      double* out = dst.grad();
      for (int64_t i = 0; i < dst.numel(); ++i) out[i] += g[i];
      src.zero_grad();
    }
  }

  double total = 0.0;
  for (int64_t c = 0; c < chunks; ++c) total += chunk_losses[static_cast<size_t>(c)];
  return total * inv_b;
}

// --- train loop -----------------------------------------------------------------

void save_train_checkpoint(const std::string& path, const PolicyModel& model, const Adam& adam,
                           const Rng& rng, int64_t next_step) {
  std::vector<NamedParam> entries = model.params();
  const std::vector<NamedParam> params = model.params();
  // optimizer slots ride along as non-trainable entries
  const auto& slots = const_cast<Adam&>(adam).slots();
  for (size_t p = 0; p < params.size() && p < slots.size(); ++p) {
    if (slots[p].m.empty()) continue;
    entries.push_back({"opt.m." + params[p].name,
                       Tensor::leaf(params[p].value.shape(), slots[p].m)});
    entries.push_back({"opt.v." + params[p].name,
                       Tensor::leaf(params[p].value.shape(), slots[p].v)});
  }
  std::ostringstream extra;
  extra << "train_step=" << next_step << "\n";
  extra << "adam_t=" << adam.steps_taken() << "\n";
  extra << "rng=" << rng.serialize() << "\n";
  save_checkpoint(path, entries, model.config().to_config_text() + extra.str());
}

TrainResult train(PolicyModel& model, const Dataset& ds, const TrainConfig& cfg,
                  const std::string& out_dir, const std::string& resume_from) {
  cfg.validate();
  if (cfg.context_len > ds.manifest.t_max) {
    throw std::invalid_argument("train: context_len " + std::to_string(cfg.context_len) +
                                " exceeds dataset t_max " + std::to_string(ds.manifest.t_max));
  }

  Adam adam(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  Rng rng(cfg.seed);
  int64_t start_step = 0;

  std::vector<NamedParam> params = model.params();
  if (!resume_from.empty()) {
    const Checkpoint ckpt = load_checkpoint(resume_from);
    const auto kv = ckpt.config_map();
    if (!kv.count("train_step") || !kv.count("rng")) {
      throw std::runtime_error("train: checkpoint '" + resume_from + "' has no training state");
    }
    start_step = std::stoll(kv.at("train_step"));
    rng.deserialize(kv.at("rng"));
    std::vector<Adam::Slot> slots(params.size());
    for (size_t p = 0; p < params.size(); ++p) {
      const Array* m = ckpt.find("opt.m." + params[p].name);
      const Array* v = ckpt.find("opt.v." + params[p].name);
      if (m != nullptr && v != nullptr) {
        slots[p].m = m->data;
        slots[p].v = v->data;
      }
    }
    adam.restore(std::move(slots), std::stoll(kv.at("adam_t")));
  }

  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  const std::string ckpt_path =
      out_dir.empty() ? "" : (std::filesystem::path(out_dir) / "model.ckpt").string();

  ParallelTrainer trainer(model, std::min<int64_t>(16, cfg.batch_size), cfg.threads);

  TrainResult result;
  result.completed_steps = start_step;
  std::string last_good;
  for (int64_t step = start_step; step < cfg.steps; ++step) {
    const double t0 = now_ms();
    const double lr_t =
        cfg.warmup_steps > 0
            ? cfg.lr * std::min(1.0, static_cast<double>(step + 1) /
                                         static_cast<double>(cfg.warmup_steps))
            : cfg.lr;
    Batch batch = sample_batch(ds, cfg.context_len, cfg.batch_size, rng);
    double loss = 0.0;
    try {
      loss = trainer.run_step(batch);
    } catch (const std::exception& e) {
      result.aborted = true;
      result.abort_reason = e.what();
      break;
    }
    if (!std::isfinite(loss)) {
      result.aborted = true;
      result.abort_reason = "non-finite loss at step " + std::to_string(step + 1);
      break;
    }
    const double grad_norm = clip_grad_norm(params, cfg.grad_clip);
    try {
      adam.step(params, lr_t);
    } catch (const std::exception& e) {
      result.aborted = true;
      result.abort_reason = e.what();
      break;
    }
    zero_grads(params);
    result.metrics.push_back({step + 1, loss, grad_norm, lr_t, now_ms() - t0});
    result.completed_steps = step + 1;

    if (!ckpt_path.empty() && cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0) {
      save_train_checkpoint(ckpt_path, model, adam, rng, step + 1);
      last_good = ckpt_path;
    }
  }

  if (!ckpt_path.empty() && !result.aborted) {
    save_train_checkpoint(ckpt_path, model, adam, rng, result.completed_steps);
    last_good = ckpt_path;
  }
  result.final_checkpoint = last_good;

  if (!out_dir.empty()) {
    std::ofstream os(std::filesystem::path(out_dir) / "metrics.csv", std::ios::trunc);
    os << metrics_to_csv(result.metrics);
  }
  return result;
}

// --- evaluation -------------------------------------------------------------------

std::vector<double> default_rtg_multipliers() { return {0.5, 0.75, 1.0, 1.25, 1.5, 2.0}; }

std::vector<double> normalize_action_repr(const DatasetManifest& m,
                                          const std::vector<double>& action) {
  if (!m.normalized || m.discrete_actions) return action;
  std::vector<double> out = action;
  for (int64_t j = 0; j < m.action_dim; ++j) {
    if (std::find(m.action_unscaled_dims.begin(), m.action_unscaled_dims.end(), j) !=
        m.action_unscaled_dims.end()) {
      continue;
    }
    out[static_cast<size_t>(j)] =
        (out[static_cast<size_t>(j)] - m.norm_action.mean[static_cast<size_t>(j)]) /
        m.norm_action.std[static_cast<size_t>(j)];
  }
  return out;
}

ActionFn model_action_fn(const PolicyModel& model, const DatasetManifest& manifest) {
  const ModelConfig& cfg = model.config();
  if (cfg.state_dim != manifest.state_dim || cfg.action_dim != manifest.action_dim) {
    throw std::invalid_argument("model/env dimensions disagree: model (d_s=" +
                                std::to_string(cfg.state_dim) + ", d_a=" +
                                std::to_string(cfg.action_dim) + ") vs dataset (d_s=" +
                                std::to_string(manifest.state_dim) + ", d_a=" +
                                std::to_string(manifest.action_dim) + ")");
  }
  return [&model, manifest](const std::vector<std::vector<double>>& states,
                            const std::vector<std::vector<double>>& actions,
                            const std::vector<double>& rtg_remaining, int64_t t) {
    const ModelConfig& mc = model.config();
    const int64_t len = mc.context_len;
    const int64_t d_s = mc.state_dim;
    const int64_t d_a = mc.action_dim;
    const int64_t width = std::min<int64_t>(t + 1, len);
    const int64_t first = t - width + 1;
    const int64_t pad = len - width;

    Array rtg{{len, 1}, std::vector<double>(static_cast<size_t>(len), 0.0)};
    Array st{{len, d_s}, std::vector<double>(static_cast<size_t>(len * d_s), 0.0)};
    Array ac{{len, d_a}, std::vector<double>(static_cast<size_t>(len * d_a), 0.0)};
    std::vector<int64_t> timesteps(static_cast<size_t>(len), 0);

    for (int64_t i = 0; i < width; ++i) {
      const int64_t k = first + i;
      const int64_t dst = pad + i;
      rtg.data[static_cast<size_t>(dst)] = rtg_remaining[static_cast<size_t>(k)];
      const std::vector<double> ns = normalize_state(manifest, states[static_cast<size_t>(k)]);
      std::copy(ns.begin(), ns.end(), st.data.begin() + dst * d_s);
      if (k < static_cast<int64_t>(actions.size())) {
        const std::vector<double> na =
            normalize_action_repr(manifest, actions[static_cast<size_t>(k)]);
        std::copy(na.begin(), na.end(), ac.data.begin() + dst * d_a);
      }
      timesteps[static_cast<size_t>(dst)] = k;
    }

    Tape tape;
    NoGradGuard guard(tape);
    Tensor preds = model.forward(tape, rtg, st, ac, timesteps);
    std::vector<double> out(static_cast<size_t>(mc.head_out_dim()));
    const double* last = preds.data() + (preds.dim(0) - 1) * preds.dim(1);
    std::copy_n(last, out.size(), out.begin());

    if (mc.action_space.discrete) {
      const size_t best = static_cast<size_t>(
          std::distance(out.begin(), std::max_element(out.begin(), out.end())));
      std::vector<double> one_hot(out.size(), 0.0);
      one_hot[best] = 1.0;
      return one_hot;
    }
    return denormalize_action(manifest, out);
  };
}

EvalReport evaluate_actions(const ActionFn& fn, const EnvSpec& env_spec,
                            const std::vector<double>& multipliers, int64_t n_eval,
                            uint64_t seed) {
  if (multipliers.empty()) throw std::invalid_argument("evaluate: no target multipliers");
  if (n_eval < 1) throw std::invalid_argument("evaluate: n_eval must be >= 1");
  const double t_start = now_ms();

  EvalReport report;
  report.ref = reference_returns(env_spec, seed);
  report.multipliers = multipliers;
  report.mean_returns.resize(multipliers.size(), 0.0);
  report.norm_scores.resize(multipliers.size(), 0.0);

  for (size_t ti = 0; ti < multipliers.size(); ++ti) {
    const double target = multipliers[ti] * report.ref.expert;
    double total = 0.0;
    for (int64_t ep = 0; ep < n_eval; ++ep) {
      Rng rng(mix_seed(seed, ti, static_cast<uint64_t>(ep)));
      auto env = env_spec.make();
      std::vector<std::vector<double>> states{env->reset(rng)};
      std::vector<std::vector<double>> actions;
      std::vector<double> rtg_remaining{target};
      double ep_return = 0.0;
      for (int64_t t = 0;; ++t) {
        const std::vector<double> action = fn(states, actions, rtg_remaining, t);
        const StepResult r = env->step(action);
        ep_return += r.reward;
        actions.push_back(action);
        states.push_back(r.state);
        rtg_remaining.push_back(rtg_remaining.back() - r.reward);
        if (r.done) break;
      }
      total += ep_return;
    }
    report.mean_returns[ti] = total / static_cast<double>(n_eval);
    report.norm_scores[ti] = normalized_score(report.mean_returns[ti], report.ref);
  }

  report.best_index = 0;
  for (size_t ti = 1; ti < multipliers.size(); ++ti) {
    if (report.norm_scores[ti] > report.norm_scores[report.best_index]) report.best_index = ti;
  }
  report.best_score = report.norm_scores[report.best_index];
  report.wall_seconds = (now_ms() - t_start) / 1000.0;
  return report;
}

EvalReport evaluate(const PolicyModel& model, const EnvSpec& env_spec,
                    const DatasetManifest& manifest, const std::vector<double>& multipliers,
                    int64_t n_eval, uint64_t seed) {
  return evaluate_actions(model_action_fn(model, manifest), env_spec, multipliers, n_eval, seed);
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "target_multiplier,mean_return,norm_score\n";
  for (size_t i = 0; i < multipliers.size(); ++i) {
    os << fmt_double(multipliers[i]) << "," << fmt_double(mean_returns[i]) << ","
       << fmt_double(norm_scores[i]) << "\n";
  }
  os << "best," << fmt_double(mean_returns[best_index]) << "," << fmt_double(best_score) << "\n";
  return os.str();
}

}  // namespace utr
