#include "utr/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace utr {

namespace {

double linear_flops(double tokens, double din, double dout) {
  return 2.0 * tokens * din * dout + tokens * dout;  // matmul + bias
}

double layer_norm_flops(double tokens, double d) { return 7.0 * tokens * d; }

}  // namespace

FlopsBreakdown count_flops(const ModelConfig& config) {
  config.validate();
  FlopsBreakdown f;
  const double L = static_cast<double>(config.context_len);
  const double Leff = static_cast<double>(config.effective_seq_len());
  const double D = static_cast<double>(config.embed_dim);
  const double depth = static_cast<double>(config.depth);

  if (config.unified()) {
    const double d_r = static_cast<double>(config.return_dim);
    const double fuse_in =
        static_cast<double>(config.return_dim + config.state_dim + config.action_dim);
    f.tokenizer = linear_flops(L, 1, d_r) + 4.0 * L * d_r   // gated return embedding
                  + linear_flops(L, fuse_in, D)             // fusion projection
                  + L * D                                   // + timestep embedding
                  + layer_norm_flops(L, D);
  } else {
    f.tokenizer = linear_flops(L, 1, D) + linear_flops(L, static_cast<double>(config.state_dim), D) +
                  linear_flops(L, static_cast<double>(config.action_dim), D)  // per-modality embeds
                  + 3.0 * L * D                                               // + timestep embedding
                  + layer_norm_flops(3.0 * L, D);
  }

  if (config.attention_backbone()) {
    f.attn_proj = depth * 4.0 * linear_flops(Leff, D, D);
    f.attn_scores = depth * 4.0 * Leff * Leff * D;     // QK^T and att.V matmuls
    f.softmax_scale = depth * 5.0 * Leff * Leff;       // 4 softmax + 1 scaling per cell
    f.ffn = depth * (linear_flops(Leff, D, 4.0 * D) + 4.0 * D * Leff  // relu
                     + linear_flops(Leff, 4.0 * D, D));
    f.norms_residual = depth * (2.0 * layer_norm_flops(Leff, D) + 2.0 * Leff * D);
  } else {
    const double d_e = static_cast<double>(config.d_e());
    const double K = static_cast<double>(config.kernel_size);
    f.conv_mix = depth * (linear_flops(L, D, 2.0 * d_e)      // input projection
                          + 2.0 * L * K * d_e + L * d_e      // depthwise conv + bias
                          + 5.0 * L * d_e                    // SiLU gate
                          + L * d_e                          // gate product
                          + linear_flops(L, d_e, D));        // output projection
    f.norms_residual = depth * (layer_norm_flops(L, D) + L * D);
  }

  f.head = linear_flops(L, D, static_cast<double>(config.head_out_dim()));
  return f;
}

int64_t param_count_formula(const ModelConfig& config) {
  config.validate();
  const int64_t D = config.embed_dim;
  int64_t total = 0;
  if (config.unified()) {
    const int64_t d_r = config.return_dim;
    total += 1 * d_r + d_r;  // return projection
    total += (d_r + config.state_dim + config.action_dim) * D + D;  // fusion
  } else {
    total += 1 * D + D;
    total += config.state_dim * D + D;
    total += config.action_dim * D + D;
  }
  total += config.t_max * D;  // timestep table
  total += 2 * D;             // tokenizer layer norm
  for (int64_t i = 0; i < config.depth; ++i) {
    if (config.attention_backbone()) {
      total += 2 * D;              // ln1
      total += 4 * (D * D + D);    // q,k,v,o
      total += 2 * D;              // ln2
      total += D * 4 * D + 4 * D;  // ffn in
      total += 4 * D * D + D;      // ffn out
    } else {
      const int64_t d_e = config.d_e();
      total += 2 * D;
      total += D * 2 * d_e + 2 * d_e;
      total += config.kernel_size * d_e + d_e;
      total += d_e * D + D;
    }
  }
  total += D * config.head_out_dim() + config.head_out_dim();
  return total;
}

double bench_train_seconds(const ModelConfig& config, const BenchSpec& bench) {
  config.validate();
  if (bench.runs < 1) throw std::invalid_argument("bench: runs must be >= 1");

  // fixed synthetic batch; identical across runs and kinds with equal dims
  Rng data_rng(bench.seed);
  Batch batch;
  batch.reserve(static_cast<size_t>(bench.batch));
  for (int64_t b = 0; b < bench.batch; ++b) {
    SequenceSample s;
    const int64_t L = config.context_len;
    s.rtg = Array{{L, 1}, std::vector<double>(static_cast<size_t>(L))};
    s.states = Array{{L, config.state_dim},
                     std::vector<double>(static_cast<size_t>(L * config.state_dim))};
    s.actions = Array{{L, config.action_dim},
                      std::vector<double>(static_cast<size_t>(L * config.action_dim))};
    for (auto& v : s.rtg.data) v = data_rng.normal();
    for (auto& v : s.states.data) v = data_rng.normal();
    for (auto& v : s.actions.data) v = data_rng.normal();
    s.timesteps.resize(static_cast<size_t>(L));
    for (int64_t t = 0; t < L; ++t) s.timesteps[static_cast<size_t>(t)] = t;
    s.mask.assign(static_cast<size_t>(L), 1.0);
    batch.push_back(std::move(s));
  }

  std::vector<double> times;
  times.reserve(static_cast<size_t>(bench.runs));
  for (int64_t run = 0; run < bench.runs; ++run) {
    PolicyModel model(config, bench.seed + static_cast<uint64_t>(run));
    ParallelTrainer trainer(model, std::min<int64_t>(16, bench.batch), bench.threads);
    Adam adam(AdamConfig{});
    std::vector<NamedParam> params = model.params();
    for (int64_t w = 0; w < bench.warmup; ++w) {
      trainer.run_step(batch);
      adam.step(params);
      zero_grads(params);
    }
    const auto t0 = std::chrono::steady_clock::now();
    for (int64_t s = 0; s < bench.steps; ++s) {
      trainer.run_step(batch);
      adam.step(params);
      zero_grads(params);
    }
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

double ComplexityReport::reduction_pct(size_t entry_index, double ComplexityEntry::*metric) const {
  const double base = entries.front().*metric;
  const double v = entries[entry_index].*metric;
  return (base - v) / base * 100.0;
}

double ComplexityReport::reduction_pct_params(size_t entry_index) const {
  const double base = static_cast<double>(entries.front().params);
  const double v = static_cast<double>(entries[entry_index].params);
  return (base - v) / base * 100.0;
}

std::string ComplexityReport::to_csv() const {
  std::ostringstream os;
  os << "metric";
  for (size_t i = 0; i < entries.size(); ++i) {
    os << "," << model_kind_name(entries[i].kind);
    if (i > 0) os << "," << model_kind_name(entries[i].kind) << "_reduction_pct";
  }
  os << "\n";
  auto row = [&](const std::string& name, auto getter, auto pct) {
    os << name;
    for (size_t i = 0; i < entries.size(); ++i) {
      os << "," << getter(entries[i]);
      if (i > 0) os << "," << std::fixed << std::setprecision(2) << pct(i) << std::defaultfloat;
    }
    os << "\n";
  };
  const bool timed = !std::isnan(entries.front().seconds);
  if (timed) {
    row("time_s", [](const ComplexityEntry& e) { return e.seconds; },
        [&](size_t i) { return reduction_pct(i, &ComplexityEntry::seconds); });
  }
  row("flops_per_batch", [](const ComplexityEntry& e) { return e.flops_per_batch; },
      [&](size_t i) { return reduction_pct(i, &ComplexityEntry::flops_per_batch); });
  row("params", [](const ComplexityEntry& e) { return static_cast<double>(e.params); },
      [&](size_t i) { return reduction_pct_params(i); });
  return os.str();
}

ComplexityReport build_complexity_report(const ModelConfig& base,
                                         const std::vector<ModelKind>& kinds,
                                         const BenchSpec& bench, bool with_time) {
  if (kinds.empty()) throw std::invalid_argument("complexity report: no model kinds");
  ComplexityReport report;
  for (ModelKind kind : kinds) {
    ModelConfig cfg = base;
    cfg.kind = kind;
    cfg.validate();
    ComplexityEntry e;
    e.kind = kind;
    e.flops_per_batch = count_flops(cfg).total() * static_cast<double>(bench.batch);
    e.params = param_count_formula(cfg);
    e.seconds = with_time ? bench_train_seconds(cfg, bench)
                          : std::numeric_limits<double>::quiet_NaN();
    report.entries.push_back(e);
  }
  return report;
}

// --- Rademacher -------------------------------------------------------------

void CovSpec::validate() const {
  if (trace <= 0.0) throw std::invalid_argument("CovSpec: trace must be positive");
  if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("CovSpec: rho must lie in [0,1]");
  const double wsum = weights[0] + weights[1] + weights[2];
  if (std::fabs(wsum - 1.0) > 1e-12) {
    throw std::invalid_argument("CovSpec: weights must sum to 1, got " + std::to_string(wsum));
  }
  const double wsq = weights[0] * weights[0] + weights[1] * weights[1] + weights[2] * weights[2];
  if (std::fabs(wsq - s) > 1e-9) {
    throw std::invalid_argument("CovSpec: stored s disagrees with |w|^2");
  }
}

std::array<double, 3> CovSpec::weights_for_s(double s) {
  if (s < 1.0 / 3.0 - 1e-12 || s > 1.0 + 1e-12) {
    throw std::invalid_argument("weights_for_s: s must lie in [1/3, 1], got " + std::to_string(s));
  }
  s = std::clamp(s, 1.0 / 3.0, 1.0);
  const double a = (1.0 + std::sqrt(6.0 * s - 2.0)) / 3.0;
  const double b = (1.0 - a) / 2.0;
  return {a, b, b};
}

CovSpec CovSpec::from_rho_s(double trace, double rho, double s) {
  CovSpec spec;
  spec.trace = trace;
  spec.rho = rho;
  spec.weights = weights_for_s(s);
  spec.s = s;
  spec.validate();
  return spec;
}

CovSpec CovSpec::from_weights(double trace, double rho, const std::array<double, 3>& weights) {
  CovSpec spec;
  spec.trace = trace;
  spec.rho = rho;
  spec.weights = weights;
  spec.s = weights[0] * weights[0] + weights[1] * weights[1] + weights[2] * weights[2];
  spec.validate();
  return spec;
}

double trace_bound_merged(const CovSpec& spec) {
  spec.validate();
  return spec.trace * (spec.rho + (1.0 - spec.rho) * spec.s);
}

double trace_bound_separated(const CovSpec& spec) {
  spec.validate();
  return 3.0 * spec.trace;
}

double rademacher_ratio_bound(const CovSpec& spec) {
  spec.validate();
  return std::sqrt((spec.rho + (1.0 - spec.rho) * spec.s) / 3.0);
}

RademacherEstimate empirical_rademacher_linear(const Array& data, const RademacherQuery& query,
                                               Rng& rng) {
  if (data.shape.size() != 2) throw std::invalid_argument("rademacher: data must be [n,d]");
  const int64_t n = data.shape[0], d = data.shape[1];
  if (n < 1) throw std::invalid_argument("rademacher: need at least one sample");
  if (query.draws < 1) throw std::invalid_argument("rademacher: draws must be >= 1");
  if (query.norm_budget <= 0.0) throw std::invalid_argument("rademacher: norm budget must be > 0");

  std::vector<double> signed_sum(static_cast<size_t>(d));
  std::vector<double> draws;
  draws.reserve(static_cast<size_t>(query.draws));
  for (int64_t k = 0; k < query.draws; ++k) {
    std::fill(signed_sum.begin(), signed_sum.end(), 0.0);
    for (int64_t i = 0; i < n; ++i) {
      const double sign = (rng.next_u64() & 1ULL) ? 1.0 : -1.0;
      const double* row = data.data.data() + i * d;
      for (int64_t j = 0; j < d; ++j) signed_sum[static_cast<size_t>(j)] += sign * row[j];
    }
    double norm_sq = 0.0;
    for (double v : signed_sum) norm_sq += v * v;
    draws.push_back(query.norm_budget / static_cast<double>(n) * std::sqrt(norm_sq));
  }
  RademacherEstimate est;
  for (double v : draws) est.value += v;
  est.value /= static_cast<double>(draws.size());
  if (draws.size() > 1) {
    double var = 0.0;
    for (double v : draws) var += (v - est.value) * (v - est.value);
    var /= static_cast<double>(draws.size() - 1);
    est.stderr_value = std::sqrt(var / static_cast<double>(draws.size()));
  }
  return est;
}

double empirical_cov_trace(const Array& data) {
  if (data.shape.size() != 2) throw std::invalid_argument("cov trace: data must be [n,d]");
  const int64_t n = data.shape[0], d = data.shape[1];
  if (n < 2) throw std::invalid_argument("cov trace: need at least two samples");
  double trace = 0.0;
  for (int64_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += data.data[i * d + j];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double c = data.data[i * d + j] - mean;
      ss += c * c;
    }
    trace += ss / static_cast<double>(n - 1);
  }
  return trace;
}

BlockSamples sample_correlated_blocks(int64_t n, int64_t d, double rho, Rng& rng) {
  if (n < 1 || d < 1) throw std::invalid_argument("sample_correlated_blocks: bad dims");
  if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("sample_correlated_blocks: bad rho");
  const double shared = std::sqrt(rho), fresh = std::sqrt(1.0 - rho);
  BlockSamples out;
  Array* blocks[3] = {&out.u1, &out.u2, &out.u3};
  for (Array* b : blocks) {
    b->shape = {n, d};
    b->data.resize(static_cast<size_t>(n * d));
  }
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < d; ++j) {
      const double z0 = rng.normal();
      for (Array* b : blocks) {
        b->data[static_cast<size_t>(i * d + j)] = shared * z0 + fresh * rng.normal();
      }
    }
  }
  return out;
}

MergedSeparated build_merged_and_separated_samples(const Array& u1, const Array& u2,
                                                   const Array& u3,
                                                   const std::array<double, 3>& weights) {
  if (u1.shape != u2.shape || u1.shape != u3.shape || u1.shape.size() != 2) {
    throw std::invalid_argument("build_merged_and_separated_samples: blocks must share [n,d]");
  }
  const int64_t n = u1.shape[0], d = u1.shape[1];
  MergedSeparated out;
  out.merged.shape = {n, d};
  out.merged.data.resize(static_cast<size_t>(n * d));
  out.separated.shape = {n, 3 * d};
  out.separated.data.resize(static_cast<size_t>(n * 3 * d));
  const Array* blocks[3] = {&u1, &u2, &u3};
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int b = 0; b < 3; ++b) acc += weights[static_cast<size_t>(b)] * blocks[b]->data[i * d + j];
      out.merged.data[static_cast<size_t>(i * d + j)] = acc;
    }
    for (int b = 0; b < 3; ++b) {
      std::copy_n(blocks[b]->data.begin() + i * d, d,
                  out.separated.data.begin() + i * 3 * d + b * d);
    }
  }
  out.trace_merged = empirical_cov_trace(out.merged);
  out.trace_separated = empirical_cov_trace(out.separated);
  return out;
}

double generalization_bound(double emp_risk, double rademacher_estimate, int64_t n, double delta) {
  if (delta <= 0.0 || delta >= 1.0) {
    throw std::invalid_argument("generalization_bound: delta must lie in (0,1)");
  }
  if (emp_risk < 0.0 || emp_risk > 1.0) {
    throw std::invalid_argument("generalization_bound: empirical risk must lie in [0,1]");
  }
  if (n < 1) throw std::invalid_argument("generalization_bound: n must be >= 1");
  return emp_risk + 2.0 * rademacher_estimate +
         4.0 * std::sqrt(2.0 * std::log(4.0 / delta) / static_cast<double>(n));
}

RademacherRow rademacher_experiment(double rho, double s, int64_t n, int64_t d, double norm_budget,
                                    int64_t draws, uint64_t seed) {
  const CovSpec spec = CovSpec::from_rho_s(static_cast<double>(d), rho, s);
  Rng rng(seed);
  const BlockSamples blocks = sample_correlated_blocks(n, d, rho, rng);
  const MergedSeparated built =
      build_merged_and_separated_samples(blocks.u1, blocks.u2, blocks.u3, spec.weights);
  RademacherQuery query{norm_budget, draws};
  const RademacherEstimate merged = empirical_rademacher_linear(built.merged, query, rng);
  const RademacherEstimate separated = empirical_rademacher_linear(built.separated, query, rng);
  RademacherRow row;
  row.rho = rho;
  row.s = s;
  row.trace_merged = built.trace_merged;
  row.trace_separated = built.trace_separated;
  row.emp_merged = merged.value;
  row.emp_separated = separated.value;
  row.ratio_bound = rademacher_ratio_bound(spec);
  return row;
}

std::string rademacher_rows_to_csv(const std::vector<RademacherRow>& rows) {
  std::ostringstream os;
  os << "rho,s,trace_merged,trace_separated,emp_merged,emp_separated,ratio_bound\n";
  os.precision(12);
  for (const RademacherRow& r : rows) {
    os << r.rho << "," << r.s << "," << r.trace_merged << "," << r.trace_separated << ","
       << r.emp_merged << "," << r.emp_separated << "," << r.ratio_bound << "\n";
  }
  return os.str();
}

}  // namespace utr
