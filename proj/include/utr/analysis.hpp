#pragma once

#include <array>
#include <string>
#include <vector>

#include "utr/model.hpp"
#include "utr/train.hpp"

namespace utr {

// Analytic forward-pass FLOPs for one sequence window, split by component.
// Conventions (documented in the README): one multiply-add = 2 FLOPs, bias
// add = 1 FLOP/element, exp-family evaluations (softmax cell, sigmoid) =
// 4 FLOPs/element, SiLU = 5, ReLU = 1, LayerNorm = 7 FLOPs/element.
// attn_scores holds only the two quadratic score matmuls (QK^T and att.V),
// so its DT:UDT ratio at equal L, D, depth is exactly (3L)^2 / L^2 = 9.
struct FlopsBreakdown {
  double tokenizer = 0.0;
  double attn_proj = 0.0;      // Q,K,V,O projections
  double attn_scores = 0.0;    // quadratic-in-sequence-length matmuls
  double softmax_scale = 0.0;  // softmax + score scaling over the L'xL' grid
  double ffn = 0.0;
  double conv_mix = 0.0;       // w_in, depthwise conv, gate, w_o
  double norms_residual = 0.0;
  double head = 0.0;

  double total() const {
    return tokenizer + attn_proj + attn_scores + softmax_scale + ffn + conv_mix +
           norms_residual + head;
  }
};

FlopsBreakdown count_flops(const ModelConfig& config);

// Closed-form trainable-parameter count; must agree with
// PolicyModel::count_params for the same config.
int64_t param_count_formula(const ModelConfig& config);

struct BenchSpec {
  int64_t steps = 500;
  int64_t batch = 64;
  int64_t runs = 3;
  int64_t warmup = 10;  // excluded iterations before timing
  uint64_t seed = 1;
  int64_t threads = 0;
};

// Median wall-clock seconds over `runs` runs of `steps` training steps on a
// fixed synthetic batch, warmup excluded.
double bench_train_seconds(const ModelConfig& config, const BenchSpec& bench);

struct ComplexityEntry {
  ModelKind kind = ModelKind::DT;
  double flops_per_batch = 0.0;
  int64_t params = 0;
  double seconds = 0.0;  // NaN when timing skipped
};

// Time / FLOPs / params comparison across model kinds, with percentage
// reductions relative to the first (baseline) entry.
struct ComplexityReport {
  std::vector<ComplexityEntry> entries;
  double reduction_pct(size_t entry_index, double ComplexityEntry::*metric) const;
  double reduction_pct_params(size_t entry_index) const;
  std::string to_csv() const;
};

ComplexityReport build_complexity_report(const ModelConfig& base, const std::vector<ModelKind>& kinds,
                                         const BenchSpec& bench, bool with_time);

// --- Rademacher trace-bound analysis ---------------------------------------

// Covariance model for three per-step embedding blocks: each block has
// covariance trace at most `trace` (T), pairwise cross-traces at most
// rho * T, and the merged token is the weighted sum with weights w
// (sum w = 1, s = |w|^2).
struct CovSpec {
  double trace = 1.0;
  double rho = 0.0;
  std::array<double, 3> weights{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  double s = 1.0 / 3.0;  // |w|^2, stored so exact spot values survive

  void validate() const;

  // Nonnegative weight vector on the simplex with the requested |w|^2 = s,
  // s in [1/3, 1]: one coordinate raised, the other two equal.
  static std::array<double, 3> weights_for_s(double s);
  static CovSpec from_rho_s(double trace, double rho, double s);
  static CovSpec from_weights(double trace, double rho, const std::array<double, 3>& weights);
};

double trace_bound_merged(const CovSpec& spec);     // T (rho + (1-rho) s)
double trace_bound_separated(const CovSpec& spec);  // 3 T
double rademacher_ratio_bound(const CovSpec& spec); // sqrt((rho + (1-rho) s)/3)

struct RademacherQuery {
  double norm_budget = 1.0;  // B: predictor weight-norm bound
  int64_t draws = 100;       // m: Monte-Carlo sign vectors
};

struct RademacherEstimate {
  double value = 0.0;
  double stderr_value = 0.0;
};

// Empirical Rademacher complexity of {x -> v.x : |v| <= B} on the rows of
// data[n,d]. The sup is attained in closed form, so each sign draw
// contributes (B/n) |sum_i sigma_i x_i|; the mean and its standard error
// over draws are returned.
RademacherEstimate empirical_rademacher_linear(const Array& data, const RademacherQuery& query,
                                               Rng& rng);

// Unbiased empirical covariance trace of the rows of data[n,d].
double empirical_cov_trace(const Array& data);

struct BlockSamples {
  Array u1, u2, u3;  // [n,d] each
};

// Gaussian blocks with a shared latent factor: u_i = sqrt(rho) z0 +
// sqrt(1-rho) z_i, giving Tr(Cov(u_i)) = d and Tr(Cov(u_i,u_j)) = rho d.
BlockSamples sample_correlated_blocks(int64_t n, int64_t d, double rho, Rng& rng);

struct MergedSeparated {
  Array merged;     // [n, d]  rows sum_i w_i u_i
  Array separated;  // [n, 3d] rows [u1; u2; u3]
  double trace_merged = 0.0;     // empirical covariance traces
  double trace_separated = 0.0;
};

MergedSeparated build_merged_and_separated_samples(const Array& u1, const Array& u2,
                                                   const Array& u3,
                                                   const std::array<double, 3>& weights);

// emp_risk + 2 R_hat + 4 sqrt(2 ln(4/delta) / n), for losses in [0,1].
double generalization_bound(double emp_risk, double rademacher_estimate, int64_t n, double delta);

struct RademacherRow {
  double rho = 0.0;
  double s = 0.0;
  double trace_merged = 0.0;
  double trace_separated = 0.0;
  double emp_merged = 0.0;
  double emp_separated = 0.0;
  double ratio_bound = 0.0;
};

RademacherRow rademacher_experiment(double rho, double s, int64_t n, int64_t d, double norm_budget,
                                    int64_t draws, uint64_t seed);

std::string rademacher_rows_to_csv(const std::vector<RademacherRow>& rows);

}  // namespace utr
