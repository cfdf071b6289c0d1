#include "utr/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace utr {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

void check_positive_dims(const Shape& shape) {
  for (int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dims must be positive, got " + shape_str(shape));
  }
}

void ensure_grad_buffer(TensorImpl& impl) {
  if (impl.grad.empty()) impl.grad.assign(impl.data->size(), 0.0);
}

// --- raw kernels, all accumulate into out ---

// out[m,n] += a[m,k] . b[k,n]
void mm_nn_acc(const double* a, const double* b, double* out, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* oi = out + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) oi[j] += av * bp[j];
    }
  }
}

// out[m,n] += a[m,k] . b[n,k]^T
void mm_nt_acc(const double* a, const double* b, double* out, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* oi = out + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      oi[j] += acc;
    }
  }
}

// out[k,n] += a[m,k]^T . c[m,n]
void mm_tn_acc(const double* a, const double* c, double* out, int64_t m, int64_t k, int64_t n) {
  for (int64_t p = 0; p < m; ++p) {
    const double* ap = a + p * k;
    const double* cp = c + p * n;
    for (int64_t r = 0; r < k; ++r) {
      const double av = ap[r];
      double* orow = out + r * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * cp[j];
    }
  }
}

void check_2d(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(what) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
  }
}

// b broadcasts against a if shapes match or b's shape is a trailing suffix.
int64_t broadcast_repeat(const Tensor& a, const Tensor& b, const char* what) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size()) {
    throw std::invalid_argument(std::string(what) + ": shapes not broadcastable: " + shape_str(sa) +
                                " vs " + shape_str(sb));
  }
  const size_t off = sa.size() - sb.size();
  for (size_t i = 0; i < sb.size(); ++i) {
    if (sa[off + i] != sb[i]) {
      throw std::invalid_argument(std::string(what) + ": shapes not broadcastable: " + shape_str(sa) +
                                  " vs " + shape_str(sb));
    }
  }
  return a.numel() / b.numel();
}

Tensor make_output(Tape& tape, Shape shape, bool inputs_require_grad) {
  Tensor out = Tensor::zeros(std::move(shape), tape.recording() && inputs_require_grad);
  return out;
}

}  // namespace

// --- Tensor -----------------------------------------------------------------

Tensor Tensor::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  check_positive_dims(shape);
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw std::invalid_argument("leaf: shape " + shape_str(shape) + " needs " +
                                std::to_string(shape_numel(shape)) + " values, got " +
                                std::to_string(values.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::make_shared<std::vector<double>>(std::move(values));
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  check_positive_dims(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->data = std::make_shared<std::vector<double>>(static_cast<size_t>(shape_numel(shape)), 0.0);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : *t.impl_->data) v = value;
  return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : *t.impl_->data) v = rng.normal() * stddev;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return leaf({1}, {value}, requires_grad);
}

double Tensor::value() const {
  if (numel() != 1) {
    throw std::invalid_argument("value(): tensor is not scalar, shape " + shape_str(shape()));
  }
  return (*impl_->data)[0];
}

double* Tensor::grad() {
  ensure_grad();
  return impl_->grad.data();
}

const double* Tensor::grad() const {
  if (impl_->grad.empty()) {
    throw std::runtime_error("grad(): no gradient accumulated on this tensor");
  }
  return impl_->grad.data();
}

void Tensor::ensure_grad() { ensure_grad_buffer(*impl_); }

Tensor Tensor::detached_copy() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = std::make_shared<std::vector<double>>(*impl_->data);
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::grad_isolated_alias() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;  // shared values
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

void Tensor::copy_values_from(const Tensor& src) {
  if (src.numel() != numel()) {
    throw std::invalid_argument("copy_values_from: size mismatch " + shape_str(shape()) + " vs " +
                                shape_str(src.shape()));
  }
  *impl_->data = *src.impl_->data;
}

// --- Tape -------------------------------------------------------------------

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  }
  if (backward_ran_) {
    throw std::runtime_error("backward: called twice on the same tape without reset()");
  }
  backward_ran_ = true;
  loss.impl()->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward_fn();
  }
}

void Tape::reset() {
  nodes_.clear();
  backward_ran_ = false;
}

// --- ops ----------------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: inner dimensions differ: " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = make_output(tape, {m, n}, a.requires_grad() || b.requires_grad());
  mm_nn_acc(a.data(), b.data(), out.data(), m, k, n);
  if (out.requires_grad()) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape.push_node("matmul", [ai, bi, oi, m, k, n] {
      if (oi->grad.empty()) return;
      const double* dc = oi->grad.data();
      if (ai->requires_grad) {
        ensure_grad_buffer(*ai);
        mm_nt_acc(dc, bi->data->data(), ai->grad.data(), m, n, k);
      }
      if (bi->requires_grad) {
        ensure_grad_buffer(*bi);
        mm_tn_acc(ai->data->data(), dc, bi->grad.data(), m, k, n);
      }
    });
  }
  return out;
}

Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul_nt");
  check_2d(b, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw std::invalid_argument("matmul_nt: inner dimensions differ: " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out = make_output(tape, {m, n}, a.requires_grad() || b.requires_grad());
  mm_nt_acc(a.data(), b.data(), out.data(), m, k, n);
  if (out.requires_grad()) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape.push_node("matmul_nt", [ai, bi, oi, m, k, n] {
      if (oi->grad.empty()) return;
      const double* dc = oi->grad.data();
      if (ai->requires_grad) {
        ensure_grad_buffer(*ai);
        mm_nn_acc(dc, bi->data->data(), ai->grad.data(), m, n, k);
      }
      if (bi->requires_grad) {
        ensure_grad_buffer(*bi);
        mm_tn_acc(dc, ai->data->data(), bi->grad.data(), m, n, k);
      }
    });
  }
  return out;
}

namespace {

enum class BinOp { Add, Mul };

Tensor binary_broadcast(Tape& tape, const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  const int64_t repeat = broadcast_repeat(a, b, name);
  const int64_t bn = b.numel();
  Tensor out = make_output(tape, a.shape(), a.requires_grad() || b.requires_grad());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  if (op == BinOp::Add) {
    for (int64_t r = 0; r < repeat; ++r)
      for (int64_t j = 0; j < bn; ++j) po[r * bn + j] = pa[r * bn + j] + pb[j];
  } else {
    for (int64_t r = 0; r < repeat; ++r)
      for (int64_t j = 0; j < bn; ++j) po[r * bn + j] = pa[r * bn + j] * pb[j];
  }
  if (out.requires_grad()) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape.push_node(name, [ai, bi, oi, repeat, bn, op] {
      if (oi->grad.empty()) return;
      const double* dout = oi->grad.data();
      if (ai->requires_grad) {
        ensure_grad_buffer(*ai);
        double* da = ai->grad.data();
        if (op == BinOp::Add) {
          for (int64_t i = 0; i < repeat * bn; ++i) da[i] += dout[i];
        } else {
          const double* pb = bi->data->data();
          for (int64_t r = 0; r < repeat; ++r)
            for (int64_t j = 0; j < bn; ++j) da[r * bn + j] += dout[r * bn + j] * pb[j];
        }
      }
      if (bi->requires_grad) {
        ensure_grad_buffer(*bi);
        double* db = bi->grad.data();
        if (op == BinOp::Add) {
          for (int64_t r = 0; r < repeat; ++r)
            for (int64_t j = 0; j < bn; ++j) db[j] += dout[r * bn + j];
        } else {
          const double* pa = ai->data->data();
          for (int64_t r = 0; r < repeat; ++r)
            for (int64_t j = 0; j < bn; ++j) db[j] += dout[r * bn + j] * pa[r * bn + j];
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_broadcast(tape, a, b, BinOp::Add, "add");
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_broadcast(tape, a, b, BinOp::Mul, "mul");
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("sub: shape mismatch: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  Tensor out = make_output(tape, a.shape(), a.requires_grad() || b.requires_grad());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  if (out.requires_grad()) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    tape.push_node("sub", [ai, bi, oi, n] {
      if (oi->grad.empty()) return;
      const double* dout = oi->grad.data();
      if (ai->requires_grad) {
        ensure_grad_buffer(*ai);
        for (int64_t i = 0; i < n; ++i) ai->grad[i] += dout[i];
      }
      if (bi->requires_grad) {
        ensure_grad_buffer(*bi);
        for (int64_t i = 0; i < n; ++i) bi->grad[i] -= dout[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
  Tensor out = make_output(tape, a.shape(), a.requires_grad());
  const double* pa = a.data();
  double* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = c * pa[i];
  if (out.requires_grad()) {
    auto ai = a.impl(), oi = out.impl();
    tape.push_node("scale", [ai, oi, c, n] {
      if (oi->grad.empty()) return;
      ensure_grad_buffer(*ai);
      for (int64_t i = 0; i < n; ++i) ai->grad[i] += c * oi->grad[i];
    });
  }
  return out;
}

Tensor sigmoid(Tape& tape, const Tensor& a) {
  Tensor out = make_output(tape, a.shape(), a.requires_grad());
  const double* pa = a.data();
  double* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = 1.0 / (1.0 + std::exp(-pa[i]));
  if (out.requires_grad()) {
    auto ai = a.impl(), oi = out.impl();
    tape.push_node("sigmoid", [ai, oi, n] {
      if (oi->grad.empty()) return;
      ensure_grad_buffer(*ai);
      const double* y = oi->data->data();
      for (int64_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * y[i] * (1.0 - y[i]);
    });
  }
  return out;
}

Tensor silu(Tape& tape, const Tensor& a) {
  Tensor out = make_output(tape, a.shape(), a.requires_grad());
  const double* pa = a.data();
  double* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-pa[i]));
    po[i] = pa[i] * s;
  }
  if (out.requires_grad()) {
    auto ai = a.impl(), oi = out.impl();
    tape.push_node("silu", [ai, oi, n] {
      if (oi->grad.empty()) return;
      ensure_grad_buffer(*ai);
      const double* x = ai->data->data();
      for (int64_t i = 0; i < n; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x[i]));
        ai->grad[i] += oi->grad[i] * (s + x[i] * s * (1.0 - s));
      }
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& a) {
  Tensor out = make_output(tape, a.shape(), a.requires_grad());
  const double* pa = a.data();
  double* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] > 0.0 ? pa[i] : 0.0;
  if (out.requires_grad()) {
    auto ai = a.impl(), oi = out.impl();
    tape.push_node("relu", [ai, oi, n] {
      if (oi->grad.empty()) return;
      ensure_grad_buffer(*ai);
      const double* x = ai->data->data();
      for (int64_t i = 0; i < n; ++i) {
        if (x[i] > 0.0) ai->grad[i] += oi->grad[i];
      }
    });
  }
  return out;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw std::invalid_argument("layer_norm: rank-0 input");
  const int64_t d = x.dim(x.rank() - 1);
  if (gain.numel() != d || bias.numel() != d) {
    throw std::invalid_argument("layer_norm: gain/bias size must match last axis " +
                                std::to_string(d) + ", got " + shape_str(gain.shape()) + " and " +
                                shape_str(bias.shape()));
  }
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
  const int64_t rows = x.numel() / d;
  Tensor out =
      make_output(tape, x.shape(), x.requires_grad() || gain.requires_grad() || bias.requires_grad());

  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));

  const double* px = x.data();
  const double* pg = gain.data();
  const double* pb = bias.data();
  double* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = px + r * d;
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(r)] = inv;
    double* hr = xhat->data() + r * d;
    double* orow = po + r * d;
    for (int64_t j = 0; j < d; ++j) {
      hr[j] = (xr[j] - mean) * inv;
      orow[j] = pg[j] * hr[j] + pb[j];
    }
  }

  if (out.requires_grad()) {
    auto xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
    tape.push_node("layer_norm", [xi, gi, bi, oi, xhat, inv_std, rows, d] {
      if (oi->grad.empty()) return;
      const double* dout = oi->grad.data();
      const double* pg = gi->data->data();
      if (gi->requires_grad) ensure_grad_buffer(*gi);
      if (bi->requires_grad) ensure_grad_buffer(*bi);
      if (xi->requires_grad) ensure_grad_buffer(*xi);
      for (int64_t r = 0; r < rows; ++r) {
        const double* dor = dout + r * d;
        const double* hr = xhat->data() + r * d;
        if (gi->requires_grad) {
          for (int64_t j = 0; j < d; ++j) gi->grad[j] += dor[j] * hr[j];
        }
        if (bi->requires_grad) {
          for (int64_t j = 0; j < d; ++j) bi->grad[j] += dor[j];
        }
        if (xi->requires_grad) {
          // dxhat = dout * gain; dx = inv*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
          double mean_dh = 0.0, mean_dhh = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            const double dh = dor[j] * pg[j];
            mean_dh += dh;
            mean_dhh += dh * hr[j];
          }
          mean_dh /= static_cast<double>(d);
          mean_dhh /= static_cast<double>(d);
          const double inv = (*inv_std)[static_cast<size_t>(r)];
          double* dxr = xi->grad.data() + r * d;
          for (int64_t j = 0; j < d; ++j) {
            const double dh = dor[j] * pg[j];
            dxr[j] += inv * (dh - mean_dh - hr[j] * mean_dhh);
          }
        }
      }
    });
  }
  return out;
}

Tensor causal_depthwise_conv1d(Tape& tape, const Tensor& x, const Tensor& kernels,
                               const Tensor& bias) {
  check_2d(x, "causal_depthwise_conv1d");
  check_2d(kernels, "causal_depthwise_conv1d");
  const int64_t len = x.dim(0), d = x.dim(1), k = kernels.dim(0);
  if (k <= 0) throw std::invalid_argument("causal_depthwise_conv1d: kernel size must be >= 1");
  if (kernels.dim(1) != d || bias.numel() != d) {
    throw std::invalid_argument("causal_depthwise_conv1d: channel mismatch: x " +
                                shape_str(x.shape()) + ", kernels " + shape_str(kernels.shape()) +
                                ", bias " + shape_str(bias.shape()));
  }
  Tensor out = make_output(
      tape, x.shape(), x.requires_grad() || kernels.requires_grad() || bias.requires_grad());
  const double* px = x.data();
  const double* pk = kernels.data();
  const double* pb = bias.data();
  double* po = out.data();
  for (int64_t t = 0; t < len; ++t) {
    double* orow = po + t * d;
    for (int64_t c = 0; c < d; ++c) orow[c] = pb[c];
    for (int64_t j = 0; j < k; ++j) {
      const int64_t src = t - k + 1 + j;
      if (src < 0) continue;
      const double* xr = px + src * d;
      const double* kr = pk + j * d;
      for (int64_t c = 0; c < d; ++c) orow[c] += kr[c] * xr[c];
    }
  }
  if (out.requires_grad()) {
    auto xi = x.impl(), ki = kernels.impl(), bi = bias.impl(), oi = out.impl();
    tape.push_node("causal_dwconv", [xi, ki, bi, oi, len, d, k] {
      if (oi->grad.empty()) return;
      const double* dout = oi->grad.data();
      if (bi->requires_grad) {
        ensure_grad_buffer(*bi);
        for (int64_t t = 0; t < len; ++t)
          for (int64_t c = 0; c < d; ++c) bi->grad[c] += dout[t * d + c];
      }
      if (ki->requires_grad) {
        ensure_grad_buffer(*ki);
        const double* px = xi->data->data();
        for (int64_t t = 0; t < len; ++t) {
          for (int64_t j = 0; j < k; ++j) {
            const int64_t src = t - k + 1 + j;
            if (src < 0) continue;
            for (int64_t c = 0; c < d; ++c) {
              ki->grad[j * d + c] += px[src * d + c] * dout[t * d + c];
            }
          }
        }
      }
      if (xi->requires_grad) {
        ensure_grad_buffer(*xi);
        const double* pk = ki->data->data();
        for (int64_t t = 0; t < len; ++t) {
          for (int64_t j = 0; j < k; ++j) {
            const int64_t src = t - k + 1 + j;
            if (src < 0) continue;
            for (int64_t c = 0; c < d; ++c) {
              xi->grad[src * d + c] += pk[j * d + c] * dout[t * d + c];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor causal_softmax(Tape& tape, const Tensor& scores) {
  check_2d(scores, "causal_softmax");
  if (scores.dim(0) != scores.dim(1)) {
    throw std::invalid_argument("causal_softmax: scores must be square, got " +
                                shape_str(scores.shape()));
  }
  const int64_t n = scores.dim(0);
  Tensor out = make_output(tape, scores.shape(), scores.requires_grad());
  const double* ps = scores.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) {
    const double* sr = ps + i * n;
    double* orow = po + i * n;
    double mx = sr[0];
    for (int64_t j = 1; j <= i; ++j) mx = std::max(mx, sr[j]);
    double denom = 0.0;
    for (int64_t j = 0; j <= i; ++j) {
      orow[j] = std::exp(sr[j] - mx);
      denom += orow[j];
    }
    for (int64_t j = 0; j <= i; ++j) orow[j] /= denom;
    // entries j > i stay 0
  }
  if (out.requires_grad()) {
    auto si = scores.impl(), oi = out.impl();
    tape.push_node("causal_softmax", [si, oi, n] {
      if (oi->grad.empty()) return;
      ensure_grad_buffer(*si);
      const double* p = oi->data->data();
      const double* dout = oi->grad.data();
      for (int64_t i = 0; i < n; ++i) {
        const double* pr = p + i * n;
        const double* dr = dout + i * n;
        double dot = 0.0;
        for (int64_t j = 0; j <= i; ++j) dot += dr[j] * pr[j];
        double* ds = si->grad.data() + i * n;
        for (int64_t j = 0; j <= i; ++j) ds[j] += pr[j] * (dr[j] - dot);
      }
    });
  }
  return out;
}

Tensor concat_cols(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const int64_t rows = parts[0].dim(0);
  int64_t total = 0;
  bool any_requires = false;
  for (const Tensor& p : parts) {
    check_2d(p, "concat_cols");
    if (p.dim(0) != rows) {
      throw std::invalid_argument("concat_cols: row mismatch: " + shape_str(parts[0].shape()) +
                                  " vs " + shape_str(p.shape()));
    }
    total += p.dim(1);
    any_requires = any_requires || p.requires_grad();
  }
  Tensor out = make_output(tape, {rows, total}, any_requires);
  double* po = out.data();
  int64_t off = 0;
  for (const Tensor& p : parts) {
    const int64_t w = p.dim(1);
    const double* pp = p.data();
    for (int64_t r = 0; r < rows; ++r) {
      std::memcpy(po + r * total + off, pp + r * w, static_cast<size_t>(w) * sizeof(double));
    }
    off += w;
  }
  if (out.requires_grad()) {
    std::vector<std::shared_ptr<TensorImpl>> impls;
    impls.reserve(parts.size());
    for (const Tensor& p : parts) impls.push_back(p.impl());
    auto oi = out.impl();
    tape.push_node("concat_cols", [impls, oi, rows, total] {
      if (oi->grad.empty()) return;
      const double* dout = oi->grad.data();
      int64_t off = 0;
      for (const auto& pi : impls) {
        const int64_t w = pi->shape[1];
        if (pi->requires_grad) {
          ensure_grad_buffer(*pi);
          for (int64_t r = 0; r < rows; ++r) {
            double* dst = pi->grad.data() + r * w;
            const double* src = dout + r * total + off;
            for (int64_t j = 0; j < w; ++j) dst[j] += src[j];
          }
        }
        off += w;
      }
    });
  }
  return out;
}

Tensor slice_cols(Tape& tape, const Tensor& x, int64_t start, int64_t len) {
  check_2d(x, "slice_cols");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  if (start < 0 || len <= 0 || start + len > cols) {
    throw std::invalid_argument("slice_cols: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") out of bounds for " +
                                shape_str(x.shape()));
  }
  Tensor out = make_output(tape, {rows, len}, x.requires_grad());
  const double* px = x.data();
  double* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    std::memcpy(po + r * len, px + r * cols + start, static_cast<size_t>(len) * sizeof(double));
  }
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    tape.push_node("slice_cols", [xi, oi, rows, cols, start, len] {
      if (oi->grad.empty()) return;
      ensure_grad_buffer(*xi);
      const double* dout = oi->grad.data();
      for (int64_t r = 0; r < rows; ++r) {
        double* dst = xi->grad.data() + r * cols + start;
        const double* src = dout + r * len;
        for (int64_t j = 0; j < len; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor gather_rows(Tape& tape, const Tensor& x, const std::vector<int64_t>& indices) {
  check_2d(x, "gather_rows");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  for (int64_t idx : indices) {
    if (idx < 0 || idx >= rows) {
      throw std::invalid_argument("gather_rows: index " + std::to_string(idx) +
                                  " out of range for " + shape_str(x.shape()));
    }
  }
  const int64_t n = static_cast<int64_t>(indices.size());
  if (n == 0) throw std::invalid_argument("gather_rows: empty index list");
  Tensor out = make_output(tape, {n, cols}, x.requires_grad());
  const double* px = x.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) {
    std::memcpy(po + i * cols, px + indices[static_cast<size_t>(i)] * cols,
                static_cast<size_t>(cols) * sizeof(double));
  }
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    tape.push_node("gather_rows", [xi, oi, indices, cols, n] {
      if (oi->grad.empty()) return;
      ensure_grad_buffer(*xi);
      const double* dout = oi->grad.data();
      for (int64_t i = 0; i < n; ++i) {
        double* dst = xi->grad.data() + indices[static_cast<size_t>(i)] * cols;
        const double* src = dout + i * cols;
        for (int64_t j = 0; j < cols; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor interleave_rows3(Tape& tape, const Tensor& a, const Tensor& b, const Tensor& c) {
  check_2d(a, "interleave_rows3");
  if (a.shape() != b.shape() || a.shape() != c.shape()) {
    throw std::invalid_argument("interleave_rows3: shape mismatch: " + shape_str(a.shape()) + ", " +
                                shape_str(b.shape()) + ", " + shape_str(c.shape()));
  }
  const int64_t rows = a.dim(0), cols = a.dim(1);
  Tensor out = make_output(tape, {3 * rows, cols},
                           a.requires_grad() || b.requires_grad() || c.requires_grad());
  double* po = out.data();
  const size_t row_bytes = static_cast<size_t>(cols) * sizeof(double);
  for (int64_t r = 0; r < rows; ++r) {
    std::memcpy(po + (3 * r + 0) * cols, a.data() + r * cols, row_bytes);
    std::memcpy(po + (3 * r + 1) * cols, b.data() + r * cols, row_bytes);
    std::memcpy(po + (3 * r + 2) * cols, c.data() + r * cols, row_bytes);
  }
  if (out.requires_grad()) {
    auto ai = a.impl(), bi = b.impl(), ci = c.impl(), oi = out.impl();
    tape.push_node("interleave_rows3", [ai, bi, ci, oi, rows, cols] {
      if (oi->grad.empty()) return;
      const double* dout = oi->grad.data();
      const std::shared_ptr<TensorImpl> srcs[3] = {ai, bi, ci};
      for (int s = 0; s < 3; ++s) {
        if (!srcs[s]->requires_grad) continue;
        ensure_grad_buffer(*srcs[s]);
        for (int64_t r = 0; r < rows; ++r) {
          double* dst = srcs[s]->grad.data() + r * cols;
          const double* src = dout + (3 * r + s) * cols;
          for (int64_t j = 0; j < cols; ++j) dst[j] += src[j];
        }
      }
    });
  }
  return out;
}

Tensor shift_rows_down1(Tape& tape, const Tensor& x) {
  check_2d(x, "shift_rows_down1");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  Tensor out = make_output(tape, x.shape(), x.requires_grad());
  double* po = out.data();
  const double* px = x.data();
  for (int64_t r = 1; r < rows; ++r) {
    std::memcpy(po + r * cols, px + (r - 1) * cols, static_cast<size_t>(cols) * sizeof(double));
  }
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    tape.push_node("shift_rows_down1", [xi, oi, rows, cols] {
      if (oi->grad.empty()) return;
      ensure_grad_buffer(*xi);
      const double* dout = oi->grad.data();
      for (int64_t r = 1; r < rows; ++r) {
        double* dst = xi->grad.data() + (r - 1) * cols;
        const double* src = dout + r * cols;
        for (int64_t j = 0; j < cols; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  Tensor out = make_output(tape, {1}, x.requires_grad());
  const double* px = x.data();
  const int64_t n = x.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += px[i];
  out.data()[0] = acc;
  if (out.requires_grad()) {
    auto xi = x.impl(), oi = out.impl();
    tape.push_node("sum", [xi, oi, n] {
      if (oi->grad.empty()) return;
      ensure_grad_buffer(*xi);
      const double d = oi->grad[0];
      for (int64_t i = 0; i < n; ++i) xi->grad[i] += d;
    });
  }
  return out;
}

Tensor masked_mse(Tape& tape, const Tensor& pred, const Tensor& target,
                  const std::vector<double>& mask) {
  check_2d(pred, "masked_mse");
  if (pred.shape() != target.shape()) {
    throw std::invalid_argument("masked_mse: shape mismatch: " + shape_str(pred.shape()) + " vs " +
                                shape_str(target.shape()));
  }
  const int64_t rows = pred.dim(0), cols = pred.dim(1);
  if (static_cast<int64_t>(mask.size()) != rows) {
    throw std::invalid_argument("masked_mse: mask length " + std::to_string(mask.size()) +
                                " != rows " + std::to_string(rows));
  }
  double count = 0.0;
  for (double m : mask) count += m;
  if (count <= 0.0) throw std::invalid_argument("masked_mse: all steps masked out");
  const double denom = count * static_cast<double>(cols);

  Tensor out = make_output(tape, {1}, pred.requires_grad());
  const double* pp = pred.data();
  const double* pt = target.data();
  double acc = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    if (mask[static_cast<size_t>(r)] == 0.0) continue;
    const double m = mask[static_cast<size_t>(r)];
    for (int64_t j = 0; j < cols; ++j) {
      const double diff = pp[r * cols + j] - pt[r * cols + j];
      acc += m * diff * diff;
    }
  }
  out.data()[0] = acc / denom;
  if (out.requires_grad()) {
    auto pi = pred.impl(), ti = target.impl(), oi = out.impl();
    tape.push_node("masked_mse", [pi, ti, oi, mask, rows, cols, denom] {
      if (oi->grad.empty()) return;
      ensure_grad_buffer(*pi);
      const double d = oi->grad[0];
      const double* pp = pi->data->data();
      const double* pt = ti->data->data();
      for (int64_t r = 0; r < rows; ++r) {
        const double m = mask[static_cast<size_t>(r)];
        if (m == 0.0) continue;
        for (int64_t j = 0; j < cols; ++j) {
          pi->grad[r * cols + j] += d * 2.0 * m * (pp[r * cols + j] - pt[r * cols + j]) / denom;
        }
      }
    });
  }
  return out;
}

Tensor cross_entropy_rows(Tape& tape, const Tensor& logits, const std::vector<int64_t>& targets,
                          const std::vector<double>& row_weights) {
  check_2d(logits, "cross_entropy_rows");
  const int64_t rows = logits.dim(0), classes = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != rows ||
      static_cast<int64_t>(row_weights.size()) != rows) {
    throw std::invalid_argument("cross_entropy_rows: targets/weights must have one entry per row");
  }
  for (int64_t t : targets) {
    if (t < 0 || t >= classes) {
      throw std::invalid_argument("cross_entropy_rows: target " + std::to_string(t) +
                                  " out of range [0," + std::to_string(classes) + ")");
    }
  }
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(rows * classes));
  const double* pl = logits.data();
  double acc = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    const double* lr = pl + r * classes;
    double mx = lr[0];
    for (int64_t j = 1; j < classes; ++j) mx = std::max(mx, lr[j]);
    double denom = 0.0;
    double* pr = probs->data() + r * classes;
    for (int64_t j = 0; j < classes; ++j) {
      pr[j] = std::exp(lr[j] - mx);
      denom += pr[j];
    }
    for (int64_t j = 0; j < classes; ++j) pr[j] /= denom;
    const double w = row_weights[static_cast<size_t>(r)];
    if (w != 0.0) {
      acc += w * (std::log(denom) + mx - lr[targets[static_cast<size_t>(r)]]);
    }
  }
  Tensor out = make_output(tape, {1}, logits.requires_grad());
  out.data()[0] = acc;
  if (out.requires_grad()) {
    auto li = logits.impl(), oi = out.impl();
    tape.push_node("cross_entropy_rows", [li, oi, probs, targets, row_weights, rows, classes] {
      if (oi->grad.empty()) return;
      ensure_grad_buffer(*li);
      const double d = oi->grad[0];
      for (int64_t r = 0; r < rows; ++r) {
        const double w = row_weights[static_cast<size_t>(r)];
        if (w == 0.0) continue;
        const double* pr = probs->data() + r * classes;
        double* dl = li->grad.data() + r * classes;
        const int64_t tgt = targets[static_cast<size_t>(r)];
        for (int64_t j = 0; j < classes; ++j) {
          dl[j] += d * w * (pr[j] - (j == tgt ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

}  // namespace utr
