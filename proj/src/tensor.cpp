#include "tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "error.hpp"

namespace canmt {

namespace {

thread_local Tape* g_active_tape = nullptr;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void check_finite(const char* op, std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      fail(ErrorCode::Numeric, std::string(op) + ": non-finite result");
    }
  }
}

std::shared_ptr<detail::TensorImpl> make_impl(Shape shape, std::vector<double> values) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  return impl;
}

// Gradient accumulation target for an op input; allocates zeros lazily.
std::vector<double>& grad_of(detail::TensorImpl* t) {
  if (t->grad.empty()) t->grad.assign(t->values.size(), 0.0);
  return t->grad;
}

}  // namespace

namespace detail {
Tensor wrap(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }
}  // namespace detail

std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out << " x ";
    out << s[i];
  }
  out << "]";
  return out.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (int64_t d : shape) {
    if (d <= 0) fail(ErrorCode::ShapeMismatch, "tensor extents must be positive: " + shape_str(shape));
  }
  int64_t n = shape_numel(shape);
  auto impl = make_impl(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  for (int64_t d : shape) {
    if (d <= 0) fail(ErrorCode::ShapeMismatch, "tensor extents must be positive: " + shape_str(shape));
  }
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    fail(ErrorCode::ShapeMismatch,
         "element count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
  }
  check_finite("from_values", values);
  auto impl = make_impl(std::move(shape), std::move(values));
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({}, {value}, requires_grad);
}

double Tensor::value() const {
  if (size() != 1) fail(ErrorCode::ShapeMismatch, "value() on non-scalar tensor " + shape_str(shape()));
  return impl_->values[0];
}

double Tensor::at(std::span<const int64_t> idx) const {
  if (static_cast<int>(idx.size()) != rank()) {
    fail(ErrorCode::ShapeMismatch, "index rank mismatch for " + shape_str(shape()));
  }
  int64_t off = 0;
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= impl_->shape[i]) fail(ErrorCode::InvalidArgument, "index out of bounds");
    off = off * impl_->shape[i] + idx[i];
  }
  return impl_->values[static_cast<size_t>(off)];
}

std::span<const double> Tensor::grad() const {
  static const std::vector<double> kEmpty;
  return impl_->grad.empty() ? std::span<const double>(kEmpty) : std::span<const double>(impl_->grad);
}

std::span<double> Tensor::grad_mut() { return grad_of(impl_.get()); }

void Tensor::zero_grad() { impl_->grad.clear(); }

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

void backward(Tape& tape, const Tensor& root) {
  if (!root.defined() || root.size() != 1) {
    fail(ErrorCode::InvalidArgument, "backward requires a scalar root");
  }
  if (root.impl()->tape != &tape) {
    fail(ErrorCode::InvalidArgument, "backward root was not recorded on this tape");
  }
  grad_of(root.impl())[0] += 1.0;
  for (auto it = tape.records_.rbegin(); it != tape.records_.rend(); ++it) (*it)();
  tape.reset();
}

namespace {

// Finalizes an op result: finiteness check, grad propagation flag, and the
// backward record when a tape is active and some input needs gradients.
// The record keeps every participating impl alive until the tape is reset,
// and skips itself when no gradient ever reached the output.
Tensor finish(const char* op, Shape shape, std::vector<double> values,
              std::initializer_list<const Tensor*> inputs,
              const std::function<std::function<void()>(detail::TensorImpl*)>& make_backward) {
  check_finite(op, values);
  auto impl = make_impl(std::move(shape), std::move(values));
  bool rg = false;
  for (const Tensor* t : inputs) rg = rg || t->requires_grad();
  impl->requires_grad = rg;
  Tape* tape = Tape::active();
  if (tape != nullptr && rg) {
    impl->tape = tape;
    std::vector<std::shared_ptr<detail::TensorImpl>> held;
    held.reserve(inputs.size() + 1);
    for (const Tensor* t : inputs) held.push_back(t->impl_ptr());
    held.push_back(impl);
    auto fn = make_backward(impl.get());
    auto out = impl;
    tape->record([held = std::move(held), out = std::move(out), fn = std::move(fn)]() {
      if (out->grad.empty()) return;
      fn();
    });
  }
  return detail::wrap(std::move(impl));
}

void require_rank(const char* op, const Tensor& t, int rank) {
  if (t.rank() != rank) {
    fail(ErrorCode::ShapeMismatch,
         std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::ShapeMismatch,
         std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// Iterates the 1-d lanes of `shape` along `axis`: fn(base, stride, len).
template <typename Fn>
void for_each_lane(const Shape& shape, int axis, Fn&& fn) {
  int64_t len = shape[static_cast<size_t>(axis)];
  int64_t stride = 1;
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) stride *= shape[i];
  int64_t outer = 1;
  for (size_t i = 0; i < static_cast<size_t>(axis); ++i) outer *= shape[i];
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t s = 0; s < stride; ++s) {
      fn(o * len * stride + s, stride, len);
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  if (a.dim(1) != b.dim(0)) {
    fail(ErrorCode::ShapeMismatch,
         "matmul: inner dimensions mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n));
  {
    ConstMap ma(a.values().data(), m, k);
    ConstMap mb(b.values().data(), k, n);
    MutMap mo(out.data(), m, n);
    mo.noalias() = ma * mb;
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return finish("matmul", {m, n}, std::move(out), {&a, &b}, [=](detail::TensorImpl* o) {
    return [=]() {
      ConstMap go(o->grad.data(), m, n);
      if (ai->requires_grad) {
        ConstMap mb(bi->values.data(), k, n);
        MutMap ga(grad_of(ai).data(), m, k);
        ga.noalias() += go * mb.transpose();
      }
      if (bi->requires_grad) {
        ConstMap ma(ai->values.data(), m, k);
        MutMap gb(grad_of(bi).data(), k, n);
        gb.noalias() += ma.transpose() * go;
      }
    };
  });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  int64_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(j * m + i)] = a.values()[static_cast<size_t>(i * n + j)];
  }
  auto ai = a.impl();
  return finish("transpose", {n, m}, std::move(out), {&a}, [=](detail::TensorImpl* o) {
    return [=]() {
      if (!ai->requires_grad) return;
      auto& ga = grad_of(ai);
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) ga[static_cast<size_t>(i * n + j)] += o->grad[static_cast<size_t>(j * m + i)];
      }
    };
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.values().begin(), a.values().end());
  for (size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return finish("add", a.shape(), std::move(out), {&a, &b}, [=](detail::TensorImpl* o) {
    return [=]() {
      if (ai->requires_grad) {
        auto& g = grad_of(ai);
        for (size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
      }
      if (bi->requires_grad) {
        auto& g = grad_of(bi);
        for (size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
      }
    };
  });
}

Tensor add_rows(const Tensor& a, const Tensor& row) {
  require_rank("add_rows", a, 2);
  require_rank("add_rows", row, 1);
  if (a.dim(1) != row.dim(0)) {
    fail(ErrorCode::ShapeMismatch,
         "add_rows: width mismatch " + shape_str(a.shape()) + " vs " + shape_str(row.shape()));
  }
  int64_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.values().begin(), a.values().end());
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(i * n + j)] += row.values()[static_cast<size_t>(j)];
  }
  auto ai = a.impl();
  auto ri = row.impl();
  return finish("add_rows", a.shape(), std::move(out), {&a, &row}, [=](detail::TensorImpl* o) {
    return [=]() {
      if (ai->requires_grad) {
        auto& g = grad_of(ai);
        for (size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
      }
      if (ri->requires_grad) {
        auto& g = grad_of(ri);
        for (int64_t i = 0; i < m; ++i) {
          for (int64_t j = 0; j < n; ++j) g[static_cast<size_t>(j)] += o->grad[static_cast<size_t>(i * n + j)];
        }
      }
    };
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.values().begin(), a.values().end());
  for (size_t i = 0; i < out.size(); ++i) out[i] -= b.values()[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return finish("sub", a.shape(), std::move(out), {&a, &b}, [=](detail::TensorImpl* o) {
    return [=]() {
      if (ai->requires_grad) {
        auto& g = grad_of(ai);
        for (size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
      }
      if (bi->requires_grad) {
        auto& g = grad_of(bi);
        for (size_t i = 0; i < g.size(); ++i) g[i] -= o->grad[i];
      }
    };
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.values().begin(), a.values().end());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return finish("mul", a.shape(), std::move(out), {&a, &b}, [=](detail::TensorImpl* o) {
    return [=]() {
      if (ai->requires_grad) {
        auto& g = grad_of(ai);
        for (size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * bi->values[i];
      }
      if (bi->requires_grad) {
        auto& g = grad_of(bi);
        for (size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * ai->values[i];
      }
    };
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& x : out) x *= c;
  auto ai = a.impl();
  return finish("scale", a.shape(), std::move(out), {&a}, [=](detail::TensorImpl* o) {
    return [=]() {
      if (!ai->requires_grad) return;
      auto& g = grad_of(ai);
      for (size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * c;
    };
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& x : out) x = x > 0.0 ? x : 0.0;
  auto ai = a.impl();
  return finish("relu", a.shape(), std::move(out), {&a}, [=](detail::TensorImpl* o) {
    return [=]() {
      if (!ai->requires_grad) return;
      auto& g = grad_of(ai);
      for (size_t i = 0; i < g.size(); ++i) {
        if (ai->values[i] > 0.0) g[i] += o->grad[i];
      }
    };
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double x : a.values()) total += x;
  auto ai = a.impl();
  return finish("sum", {}, {total}, {&a}, [=](detail::TensorImpl* o) {
    return [=]() {
      if (!ai->requires_grad) return;
      auto& g = grad_of(ai);
      for (size_t i = 0; i < g.size(); ++i) g[i] += o->grad[0];
    };
  });
}

namespace {

void require_axis(const char* op, const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.rank()) {
    fail(ErrorCode::ShapeMismatch,
         std::string(op) + ": axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  }
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  require_axis("softmax", x, axis);
  std::vector<double> out(x.values().begin(), x.values().end());
  for_each_lane(x.shape(), axis, [&](int64_t base, int64_t stride, int64_t len) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t i = 0; i < len; ++i) mx = std::max(mx, out[static_cast<size_t>(base + i * stride)]);
    double denom = 0.0;
    for (int64_t i = 0; i < len; ++i) {
      double e = std::exp(out[static_cast<size_t>(base + i * stride)] - mx);
      out[static_cast<size_t>(base + i * stride)] = e;
      denom += e;
    }
    for (int64_t i = 0; i < len; ++i) out[static_cast<size_t>(base + i * stride)] /= denom;
  });
  auto xi = x.impl();
  Shape shape = x.shape();
  return finish("softmax", shape, std::move(out), {&x}, [=](detail::TensorImpl* o) {
    return [=]() {
      if (!xi->requires_grad) return;
      auto& g = grad_of(xi);
      for_each_lane(o->shape, axis, [&](int64_t base, int64_t stride, int64_t len) {
        double dot = 0.0;
        for (int64_t i = 0; i < len; ++i) {
          size_t k = static_cast<size_t>(base + i * stride);
          dot += o->grad[k] * o->values[k];
        }
        for (int64_t i = 0; i < len; ++i) {
          size_t k = static_cast<size_t>(base + i * stride);
          g[k] += o->values[k] * (o->grad[k] - dot);
        }
      });
    };
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  require_axis("log_softmax", x, axis);
  std::vector<double> out(x.values().begin(), x.values().end());
  for_each_lane(x.shape(), axis, [&](int64_t base, int64_t stride, int64_t len) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t i = 0; i < len; ++i) mx = std::max(mx, out[static_cast<size_t>(base + i * stride)]);
    double denom = 0.0;
    for (int64_t i = 0; i < len; ++i) denom += std::exp(out[static_cast<size_t>(base + i * stride)] - mx);
    double lse = mx + std::log(denom);
    for (int64_t i = 0; i < len; ++i) out[static_cast<size_t>(base + i * stride)] -= lse;
  });
  auto xi = x.impl();
  Shape shape = x.shape();
  return finish("log_softmax", shape, std::move(out), {&x}, [=](detail::TensorImpl* o) {
    return [=]() {
      if (!xi->requires_grad) return;
      auto& g = grad_of(xi);
      for_each_lane(o->shape, axis, [&](int64_t base, int64_t stride, int64_t len) {
        double gsum = 0.0;
        for (int64_t i = 0; i < len; ++i) gsum += o->grad[static_cast<size_t>(base + i * stride)];
        for (int64_t i = 0; i < len; ++i) {
          size_t k = static_cast<size_t>(base + i * stride);
          g[k] += o->grad[k] - std::exp(o->values[k]) * gsum;
        }
      });
    };
  });
}

Tensor masked_softmax_rows(const Tensor& scores, const std::vector<uint8_t>& allowed) {
  require_rank("masked_softmax_rows", scores, 2);
  int64_t m = scores.dim(0), n = scores.dim(1);
  if (static_cast<int64_t>(allowed.size()) != m * n) {
    fail(ErrorCode::ShapeMismatch, "masked_softmax_rows: mask size does not match " + shape_str(scores.shape()));
  }
  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  for (int64_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < n; ++j) {
      if (allowed[static_cast<size_t>(i * n + j)]) mx = std::max(mx, scores.values()[static_cast<size_t>(i * n + j)]);
    }
    if (!std::isfinite(mx)) {
      fail(ErrorCode::InvalidArgument, "masked_softmax_rows: row " + std::to_string(i) + " fully masked");
    }
    double denom = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      size_t k = static_cast<size_t>(i * n + j);
      if (allowed[k]) {
        out[k] = std::exp(scores.values()[k] - mx);
        denom += out[k];
      }
    }
    for (int64_t j = 0; j < n; ++j) {
      size_t k = static_cast<size_t>(i * n + j);
      if (allowed[k]) out[k] /= denom;
    }
  }
  auto si = scores.impl();
  return finish("masked_softmax_rows", scores.shape(), std::move(out), {&scores}, [=](detail::TensorImpl* o) {
    return [=]() {
      if (!si->requires_grad) return;
      auto& g = grad_of(si);
      for (int64_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (int64_t j = 0; j < n; ++j) {
          size_t k = static_cast<size_t>(i * n + j);
          dot += o->grad[k] * o->values[k];
        }
        for (int64_t j = 0; j < n; ++j) {
          size_t k = static_cast<size_t>(i * n + j);
          g[k] += o->values[k] * (o->grad[k] - dot);
        }
      }
    };
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) fail(ErrorCode::ShapeMismatch, "layer_norm: rank-0 input");
  require_rank("layer_norm", gain, 1);
  require_rank("layer_norm", bias, 1);
  int64_t d = x.shape().back();
  if (gain.dim(0) != d || bias.dim(0) != d) {
    fail(ErrorCode::ShapeMismatch, "layer_norm: feature width mismatch " + shape_str(x.shape()) + " vs gain " +
                                       shape_str(gain.shape()) + ", bias " + shape_str(bias.shape()));
  }
  int64_t rows = x.size() / d;
  std::vector<double> out(static_cast<size_t>(x.size()));
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.size()));
  auto inv_sd = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x.values().data() + r * d;
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + eps);
    (*inv_sd)[static_cast<size_t>(r)] = inv;
    for (int64_t j = 0; j < d; ++j) {
      double xh = (xr[j] - mean) * inv;
      (*xhat)[static_cast<size_t>(r * d + j)] = xh;
      out[static_cast<size_t>(r * d + j)] = xh * gain.values()[static_cast<size_t>(j)] + bias.values()[static_cast<size_t>(j)];
    }
  }
  auto xi = x.impl();
  auto gi = gain.impl();
  auto bi = bias.impl();
  return finish("layer_norm", x.shape(), std::move(out), {&x, &gain, &bias}, [=](detail::TensorImpl* o) {
    return [=]() {
      for (int64_t r = 0; r < rows; ++r) {
        const double* dy = o->grad.data() + r * d;
        const double* xh = xhat->data() + r * d;
        double inv = (*inv_sd)[static_cast<size_t>(r)];
        if (gi->requires_grad) {
          auto& gg = grad_of(gi);
          for (int64_t j = 0; j < d; ++j) gg[static_cast<size_t>(j)] += dy[j] * xh[j];
        }
        if (bi->requires_grad) {
          auto& gb = grad_of(bi);
          for (int64_t j = 0; j < d; ++j) gb[static_cast<size_t>(j)] += dy[j];
        }
        if (xi->requires_grad) {
          auto& gx = grad_of(xi);
          double mean_dxh = 0.0;
          double mean_dxh_xh = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            double dxh = dy[j] * gi->values[static_cast<size_t>(j)];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
          }
          mean_dxh /= static_cast<double>(d);
          mean_dxh_xh /= static_cast<double>(d);
          for (int64_t j = 0; j < d; ++j) {
            double dxh = dy[j] * gi->values[static_cast<size_t>(j)];
            gx[static_cast<size_t>(r * d + j)] += inv * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
          }
        }
      }
    };
  });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) {
    fail(ErrorCode::InvalidArgument, "dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  auto xi = x.impl();
  if (!training || rate == 0.0) {
    std::vector<double> out(x.values().begin(), x.values().end());
    return finish("dropout", x.shape(), std::move(out), {&x}, [=](detail::TensorImpl* o) {
      return [=]() {
        if (!xi->requires_grad) return;
        auto& g = grad_of(xi);
        for (size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
      };
    });
  }
  double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(static_cast<size_t>(x.size()));
  std::vector<double> out(static_cast<size_t>(x.size()));
  for (size_t i = 0; i < out.size(); ++i) {
    double m = rng.next_double() < rate ? 0.0 : keep_scale;
    (*mask)[i] = m;
    out[i] = x.values()[i] * m;
  }
  return finish("dropout", x.shape(), std::move(out), {&x}, [=](detail::TensorImpl* o) {
    return [=]() {
      if (!xi->requires_grad) return;
      auto& g = grad_of(xi);
      for (size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * (*mask)[i];
    };
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int32_t> ids) {
  require_rank("embedding_lookup", table, 2);
  int64_t v = table.dim(0), d = table.dim(1);
  int64_t t = static_cast<int64_t>(ids.size());
  if (t == 0) fail(ErrorCode::InvalidArgument, "embedding_lookup: empty id sequence");
  std::vector<double> out(static_cast<size_t>(t * d));
  for (int64_t i = 0; i < t; ++i) {
    int32_t id = ids[static_cast<size_t>(i)];
    if (id < 0 || id >= v) {
      fail(ErrorCode::InvalidArgument,
           "embedding_lookup: token id " + std::to_string(id) + " out of range [0, " + std::to_string(v) + ")");
    }
    std::copy_n(table.values().data() + id * d, d, out.data() + i * d);
  }
  auto ti = table.impl();
  auto ids_copy = std::make_shared<std::vector<int32_t>>(ids.begin(), ids.end());
  return finish("embedding_lookup", {t, d}, std::move(out), {&table}, [=](detail::TensorImpl* o) {
    return [=]() {
      if (!ti->requires_grad) return;
      auto& g = grad_of(ti);
      for (int64_t i = 0; i < t; ++i) {
        int64_t id = (*ids_copy)[static_cast<size_t>(i)];
        for (int64_t j = 0; j < d; ++j) g[static_cast<size_t>(id * d + j)] += o->grad[static_cast<size_t>(i * d + j)];
      }
    };
  });
}

Tensor slice_rows(const Tensor& a, int64_t start, int64_t count) {
  require_rank("slice_rows", a, 2);
  int64_t m = a.dim(0), n = a.dim(1);
  if (start < 0 || count <= 0 || start + count > m) {
    fail(ErrorCode::InvalidArgument, "slice_rows: range [" + std::to_string(start) + ", " +
                                         std::to_string(start + count) + ") invalid for " + shape_str(a.shape()));
  }
  std::vector<double> out(a.values().begin() + start * n, a.values().begin() + (start + count) * n);
  auto ai = a.impl();
  return finish("slice_rows", {count, n}, std::move(out), {&a}, [=](detail::TensorImpl* o) {
    return [=]() {
      if (!ai->requires_grad) return;
      auto& g = grad_of(ai);
      for (int64_t i = 0; i < count; ++i) {
        for (int64_t j = 0; j < n; ++j) g[static_cast<size_t>((start + i) * n + j)] += o->grad[static_cast<size_t>(i * n + j)];
      }
    };
  });
}

Tensor slice_cols(const Tensor& a, int64_t start, int64_t count) {
  require_rank("slice_cols", a, 2);
  int64_t m = a.dim(0), n = a.dim(1);
  if (start < 0 || count <= 0 || start + count > n) {
    fail(ErrorCode::InvalidArgument, "slice_cols: range [" + std::to_string(start) + ", " +
                                         std::to_string(start + count) + ") invalid for " + shape_str(a.shape()));
  }
  std::vector<double> out(static_cast<size_t>(m * count));
  for (int64_t i = 0; i < m; ++i) {
    std::copy_n(a.values().data() + i * n + start, count, out.data() + i * count);
  }
  auto ai = a.impl();
  return finish("slice_cols", {m, count}, std::move(out), {&a}, [=](detail::TensorImpl* o) {
    return [=]() {
      if (!ai->requires_grad) return;
      auto& g = grad_of(ai);
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < count; ++j) g[static_cast<size_t>(i * n + start + j)] += o->grad[static_cast<size_t>(i * count + j)];
      }
    };
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail(ErrorCode::InvalidArgument, "concat_cols: no parts");
  int64_t m = parts[0].dim(0);
  int64_t n = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.dim(0) != m) {
      fail(ErrorCode::ShapeMismatch, "concat_cols: row count mismatch at " + shape_str(p.shape()));
    }
    n += p.dim(1);
  }
  std::vector<double> out(static_cast<size_t>(m * n));
  int64_t off = 0;
  for (const Tensor& p : parts) {
    int64_t w = p.dim(1);
    for (int64_t i = 0; i < m; ++i) std::copy_n(p.values().data() + i * w, w, out.data() + i * n + off);
    off += w;
  }
  std::vector<detail::TensorImpl*> impls;
  std::vector<int64_t> widths;
  for (const Tensor& p : parts) {
    impls.push_back(p.impl());
    widths.push_back(p.dim(1));
  }
  bool rg = false;
  for (const Tensor& p : parts) rg = rg || p.requires_grad();
  check_finite("concat_cols", out);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = {m, n};
  impl->values = std::move(out);
  impl->requires_grad = rg;
  Tape* tape = Tape::active();
  if (tape != nullptr && rg) {
    impl->tape = tape;
    std::vector<std::shared_ptr<detail::TensorImpl>> held;
    for (const Tensor& p : parts) held.push_back(p.impl_ptr());
    std::shared_ptr<detail::TensorImpl> o = impl;
    tape->record([held = std::move(held), impls, widths, o, m, n]() {
      if (o->grad.empty()) return;
      int64_t col = 0;
      for (size_t pi = 0; pi < impls.size(); ++pi) {
        int64_t w = widths[pi];
        if (impls[pi]->requires_grad) {
          auto& g = grad_of(impls[pi]);
          for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < w; ++j) g[static_cast<size_t>(i * w + j)] += o->grad[static_cast<size_t>(i * n + col + j)];
          }
        }
        col += w;
      }
    });
  }
  return detail::wrap(std::move(impl));
}

namespace {

Tensor smoothed_ce_impl(const Tensor& logits, std::span<const int32_t> targets, double eps,
                        int32_t pad_id, bool mean, int64_t* nonpad_count) {
  require_rank("label_smoothed_cross_entropy", logits, 2);
  if (eps < 0.0 || eps >= 1.0) {
    fail(ErrorCode::InvalidArgument, "label smoothing must be in [0, 1), got " + std::to_string(eps));
  }
  int64_t t = logits.dim(0), v = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != t) {
    fail(ErrorCode::ShapeMismatch, "targets length " + std::to_string(targets.size()) +
                                       " does not match logits " + shape_str(logits.shape()));
  }
  int64_t n_real = 0;
  for (int32_t id : targets) {
    if (id == pad_id) continue;
    if (id < 0 || id >= v) {
      fail(ErrorCode::InvalidArgument, "target id " + std::to_string(id) + " out of vocabulary of size " + std::to_string(v));
    }
    ++n_real;
  }
  if (n_real == 0) fail(ErrorCode::InvalidArgument, "cross entropy over all-pad targets");
  if (nonpad_count != nullptr) *nonpad_count = n_real;

  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(t * v), 0.0);
  double total = 0.0;
  for (int64_t i = 0; i < t; ++i) {
    if (targets[static_cast<size_t>(i)] == pad_id) continue;
    const double* z = logits.values().data() + i * v;
    double mx = z[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, z[j]);
    double denom = 0.0;
    double zsum = 0.0;
    for (int64_t j = 0; j < v; ++j) {
      denom += std::exp(z[j] - mx);
      zsum += z[j];
    }
    double lse = mx + std::log(denom);
    for (int64_t j = 0; j < v; ++j) (*probs)[static_cast<size_t>(i * v + j)] = std::exp(z[j] - lse);
    double zt = z[targets[static_cast<size_t>(i)]];
    total += lse - (1.0 - eps) * zt - (eps / static_cast<double>(v)) * zsum;
  }
  double denom_scale = mean ? static_cast<double>(n_real) : 1.0;
  double loss = total / denom_scale;

  auto li = logits.impl();
  auto tgt = std::make_shared<std::vector<int32_t>>(targets.begin(), targets.end());
  const char* op = mean ? "label_smoothed_cross_entropy" : "label_smoothed_ce_sum";
  return finish(op, {}, {loss}, {&logits}, [=](detail::TensorImpl* o) {
    return [=]() {
      if (!li->requires_grad) return;
      auto& g = grad_of(li);
      double w = o->grad[0] / denom_scale;
      for (int64_t i = 0; i < t; ++i) {
        int32_t target = (*tgt)[static_cast<size_t>(i)];
        if (target == pad_id) continue;
        for (int64_t j = 0; j < v; ++j) {
          double q = (j == target ? 1.0 - eps : 0.0) + eps / static_cast<double>(v);
          g[static_cast<size_t>(i * v + j)] += w * ((*probs)[static_cast<size_t>(i * v + j)] - q);
        }
      }
    };
  });
}

}  // namespace

Tensor label_smoothed_cross_entropy(const Tensor& logits, std::span<const int32_t> targets,
                                    double eps, int32_t pad_id) {
  return smoothed_ce_impl(logits, targets, eps, pad_id, true, nullptr);
}

Tensor label_smoothed_ce_sum(const Tensor& logits, std::span<const int32_t> targets, double eps,
                             int32_t pad_id, int64_t* nonpad_count) {
  return smoothed_ce_impl(logits, targets, eps, pad_id, false, nonpad_count);
}

}  // namespace canmt
