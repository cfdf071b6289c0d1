#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "utr/rng.hpp"

namespace utr {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

// Value storage. `data` is a shared buffer so that worker clones of a model
// can read the same parameter values while accumulating into private grads.
struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};

// Cheap handle over TensorImpl. Copying a Tensor aliases the same storage;
// use detached_copy() for an independent buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data->size()); }

  double* data() { return impl_->data->data(); }
  const double* data() const { return impl_->data->data(); }
  std::span<const double> values() const { return {impl_->data->data(), impl_->data->size()}; }

  double value() const;  // scalar tensors only
  double at(int64_t i) const { return (*impl_->data)[static_cast<size_t>(i)]; }
  double at(int64_t i, int64_t j) const {
    return (*impl_->data)[static_cast<size_t>(i * dim(1) + j)];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  double* grad();
  const double* grad() const;
  void ensure_grad();
  void zero_grad() { impl_->grad.clear(); }

  // Independent deep copy (no grad, not a graph node).
  Tensor detached_copy() const;
  // Shares the value buffer, owns its grad. Used for per-worker model clones.
  Tensor grad_isolated_alias() const;

  void copy_values_from(const Tensor& src);

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
  friend class Tape;
  friend Tensor make_op_output(Tape& tape, Shape shape, bool requires_grad);
};

// Reverse-mode tape. Ops append one node per call; backward() runs the nodes
// in reverse creation order, which is a reverse topological order because an
// op's inputs always exist before its output.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void backward(const Tensor& loss);
  void reset();

  size_t size() const { return nodes_.size(); }
  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  void push_node(const char* kind, std::function<void()> backward_fn) {
    nodes_.push_back(Node{kind, std::move(backward_fn)});
  }

 private:
  struct Node {
    const char* kind;
    std::function<void()> backward_fn;
  };
  std::vector<Node> nodes_;
  bool recording_ = true;
  bool backward_ran_ = false;
};

// Turns off node recording for the guarded scope (inference paths).
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape& tape) : tape_(tape), prev_(tape.recording()) {
    tape_.set_recording(false);
  }
  ~NoGradGuard() { tape_.set_recording(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape& tape_;
  bool prev_;
};

// --- differentiable ops -----------------------------------------------------

// c[m,n] = a[m,k] . b[k,n]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// c[m,n] = a[m,k] . b[n,k]^T
Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b);

// Elementwise; b may broadcast if its shape is a trailing suffix of a's.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double c);

Tensor sigmoid(Tape& tape, const Tensor& a);
Tensor silu(Tape& tape, const Tensor& a);
Tensor relu(Tape& tape, const Tensor& a);

// Normalizes over the last axis, then applies gain/bias of size D.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// x[L,D], kernels[K,D], bias[D]; out[t,d] = sum_j kernels[j,d] * x[t-K+1+j,d]
// with zero padding for t-K+1+j < 0. Strictly causal per channel.
Tensor causal_depthwise_conv1d(Tape& tape, const Tensor& x, const Tensor& kernels,
                               const Tensor& bias);

// Row-wise softmax over the causal prefix: out[i,j] = 0 for j > i,
// softmax over j <= i otherwise. scores must be square [L,L].
Tensor causal_softmax(Tape& tape, const Tensor& scores);

Tensor concat_cols(Tape& tape, std::span<const Tensor> parts);
Tensor slice_cols(Tape& tape, const Tensor& x, int64_t start, int64_t len);

// out[i,:] = x[indices[i],:]; backward scatter-adds into the gathered rows.
Tensor gather_rows(Tape& tape, const Tensor& x, const std::vector<int64_t>& indices);

// out rows: a0,b0,c0,a1,b1,c1,...  (3L rows)
Tensor interleave_rows3(Tape& tape, const Tensor& a, const Tensor& b, const Tensor& c);

// out[0,:] = 0, out[t,:] = x[t-1,:]
Tensor shift_rows_down1(Tape& tape, const Tensor& x);

Tensor sum(Tape& tape, const Tensor& x);  // full reduction to a scalar [1]

// mean_{t: mask[t]=1} |pred[t,:] - target[t,:]|^2 / d, as a scalar.
Tensor masked_mse(Tape& tape, const Tensor& pred, const Tensor& target,
                  const std::vector<double>& mask);

// Row-wise softmax cross entropy: sum_i row_weights[i] * (-log p_i[targets[i]]).
// Callers pass row_weights = mask / count for a masked mean.
Tensor cross_entropy_rows(Tape& tape, const Tensor& logits, const std::vector<int64_t>& targets,
                          const std::vector<double>& row_weights);

}  // namespace utr
