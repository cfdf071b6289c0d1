#include "utr/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace utr {

void Adam::step(std::vector<NamedParam>& params, double lr_override) {
  if (slots_.size() < params.size()) slots_.resize(params.size());
  // Validate every grad before touching any parameter.
  for (const NamedParam& p : params) {
    if (!p.value.has_grad()) continue;
    const double* g = p.value.grad();
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      if (!std::isfinite(g[i])) {
        throw std::runtime_error("adam: non-finite gradient in parameter '" + p.name + "'");
      }
    }
  }
  ++t_;
  const double lr = lr_override >= 0.0 ? lr_override : config_.lr;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi].value;
    const int64_t n = p.numel();
    Slot& slot = slots_[pi];
    if (slot.m.empty()) {
      slot.m.assign(static_cast<size_t>(n), 0.0);
      slot.v.assign(static_cast<size_t>(n), 0.0);
    }
    const double* g = p.has_grad() ? p.grad() : nullptr;
    double* w = p.data();
    for (int64_t i = 0; i < n; ++i) {
      const double gi = g ? g[i] : 0.0;
      slot.m[i] = config_.beta1 * slot.m[i] + (1.0 - config_.beta1) * gi;
      slot.v[i] = config_.beta2 * slot.v[i] + (1.0 - config_.beta2) * gi * gi;
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

double grad_global_norm(const std::vector<NamedParam>& params) {
  double sq = 0.0;
  for (const NamedParam& p : params) {
    if (!p.value.has_grad()) continue;
    const double* g = p.value.grad();
    for (int64_t i = 0; i < p.value.numel(); ++i) sq += g[i] * g[i];
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::vector<NamedParam>& params, double clip_norm) {
  const double norm = grad_global_norm(params);
  if (norm > clip_norm && norm > 0.0) {
    const double s = clip_norm / norm;
    for (NamedParam& p : params) {
      if (!p.value.has_grad()) continue;
      double* g = p.value.grad();
      for (int64_t i = 0; i < p.value.numel(); ++i) g[i] *= s;
    }
  }
  return norm;
}

void zero_grads(std::vector<NamedParam>& params) {
  for (NamedParam& p : params) p.value.zero_grad();
}

}  // namespace utr
