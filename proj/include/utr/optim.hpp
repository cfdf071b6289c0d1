#pragma once

#include <string>
#include <vector>

#include "utr/tensor.hpp"

namespace utr {

struct NamedParam {
  std::string name;
  Tensor value;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction. Moment buffers are addressed by the
// position of each parameter in the list passed to step(), so the caller must
// keep the ordering stable across steps (models do).
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}

  // Applies one update using the grads currently accumulated on the params.
  // A missing grad buffer counts as zero. Throws if any grad is not finite,
  // naming the offending parameter; no parameter is modified in that case.
  void step(std::vector<NamedParam>& params, double lr_override = -1.0);

  int64_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return config_; }

  // State access for checkpoint resume.
  struct Slot {
    std::vector<double> m;
    std::vector<double> v;
  };
  std::vector<Slot>& slots() { return slots_; }
  void restore(std::vector<Slot> slots, int64_t t) {
    slots_ = std::move(slots);
    t_ = t;
  }

 private:
  AdamConfig config_;
  std::vector<Slot> slots_;
  int64_t t_ = 0;
};

// Global L2 norm over all accumulated grads (missing buffers count as zero).
double grad_global_norm(const std::vector<NamedParam>& params);

// Scales all grads by clip_norm/norm when norm exceeds clip_norm.
// Returns the pre-clip norm.
double clip_grad_norm(std::vector<NamedParam>& params, double clip_norm);

void zero_grads(std::vector<NamedParam>& params);

}  // namespace utr
