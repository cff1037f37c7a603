#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rng.hpp"

namespace canmt {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

class Tape;

class Tensor;

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  Tape* tape = nullptr;  // tape that recorded this tensor, if any
};
Tensor wrap(std::shared_ptr<TensorImpl> impl);
}  // namespace detail

/// Dense row-major tensor of doubles with an optional gradient slot.
/// Tensor is a cheap handle; copies share storage. Values are immutable
/// after construction except through mutable_values(), which only the
/// optimizer uses between tapes. Every operation verifies its output is
/// finite and throws ErrorCode::Numeric otherwise.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int axis) const { return impl_->shape[static_cast<size_t>(axis)]; }
  int64_t size() const { return static_cast<int64_t>(impl_->values.size()); }

  std::span<const double> values() const { return impl_->values; }
  /// Raw write access. Detaches nothing; callers own the consequence of
  /// mutating a tensor that a live tape references.
  std::span<double> mutable_values() { return impl_->values; }

  double value() const;                       // rank-0 / single element
  double at(std::span<const int64_t> idx) const;
  double at(std::initializer_list<int64_t> idx) const {
    return at(std::span<const int64_t>(idx.begin(), idx.size()));
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const;
  std::span<double> grad_mut();  // allocates zeros on first use
  void zero_grad();

  /// Stable identity of the underlying storage (for sharing checks).
  const void* storage_id() const { return impl_.get(); }

  detail::TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<detail::TensorImpl> impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor detail::wrap(std::shared_ptr<detail::TensorImpl> impl);
};

/// Ordered record of primitive applications. Ops append records while a
/// TapeScope is active; backward() replays them once, in reverse. The
/// order is topological by construction. Policy: backward() clears the
/// records when it finishes; leaf gradients stay on the tensors until
/// zero_grad().
class Tape {
 public:
  size_t size() const { return records_.size(); }
  void reset() { records_.clear(); }

  void record(std::function<void()> backward_fn) {
    records_.push_back(std::move(backward_fn));
  }

  static Tape* active();

 private:
  std::vector<std::function<void()>> records_;

  friend void backward(Tape& tape, const Tensor& root);
};

/// Activates a tape on this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Reverse-mode sweep from a scalar root. Fills grad slots of every
/// requires_grad tensor reachable on the tape; gradients accumulate
/// additively across fan-out.
void backward(Tape& tape, const Tensor& root);

// ---- primitives (all record their gradient rule when a tape is active) ----

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k]x[k,n] -> [m,n]
Tensor transpose(const Tensor& a);                // 2-d
Tensor add(const Tensor& a, const Tensor& b);     // same shape
Tensor add_rows(const Tensor& a, const Tensor& row);  // [m,n] + [n]
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);     // elementwise
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor sum(const Tensor& a);                      // -> rank-0

/// Max-stabilized softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

/// Row softmax over a 2-d score matrix where only `allowed` entries
/// participate; disallowed outputs are exactly zero. Every row must have
/// at least one allowed entry.
Tensor masked_softmax_rows(const Tensor& scores, const std::vector<uint8_t>& allowed);

/// Per-row normalization to zero mean / unit population variance,
/// then elementwise gain and bias. eps goes under the square root.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

/// Inverted dropout: training=false is the bitwise identity; otherwise
/// elements are zeroed independently with probability `rate` and the
/// survivors scaled by 1/(1-rate).
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);

/// Gather rows of `table` ([V,d]) by token id -> [ids.size(), d].
Tensor embedding_lookup(const Tensor& table, std::span<const int32_t> ids);

Tensor slice_rows(const Tensor& a, int64_t start, int64_t count);
Tensor slice_cols(const Tensor& a, int64_t start, int64_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// Label-smoothed cross entropy of row t of `logits` against targets[t],
/// averaged over non-pad positions. The smoothed target distributes eps
/// uniformly over the full vocabulary, target included.
Tensor label_smoothed_cross_entropy(const Tensor& logits,
                                    std::span<const int32_t> targets, double eps,
                                    int32_t pad_id);

/// Sum (not mean) variant plus the non-pad count, for token-weighted
/// batch aggregation.
Tensor label_smoothed_ce_sum(const Tensor& logits, std::span<const int32_t> targets,
                             double eps, int32_t pad_id, int64_t* nonpad_count);

}  // namespace canmt
