#pragma once

// Minimal dense tensor with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto an immutable node of a dynamic computation
// graph. Operations record graph edges whenever gradient recording is enabled
// and at least one input requires a gradient. Leaves created with
// Tensor::parameter() accumulate gradients across backward() calls until
// zero_grad() is called; intermediate gradients are reset on every backward().
//
// Binary operations broadcast with right-aligned trailing-axis rules: shapes
// are compared from the last axis backwards and each pair of extents must be
// equal or one of them must be 1.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace loopalign {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

/// Storage precision for values produced by operations. Values are held in
/// doubles; in f32 mode every op result is rounded to binary32.
enum class Precision { f32, f64 };

Precision precision();
void set_precision(Precision p);

class PrecisionGuard {
 public:
  explicit PrecisionGuard(Precision p);
  ~PrecisionGuard();
  PrecisionGuard(const PrecisionGuard&) = delete;
  PrecisionGuard& operator=(const PrecisionGuard&) = delete;

 private:
  Precision saved_;
};

bool grad_enabled();

/// Disables graph recording for its lifetime (inference, evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

namespace detail {
struct Node;
}

enum class UnaryOp { neg, tanh, atanh, acosh, exp, log, sqrt, square };
enum class BinaryOp { add, sub, mul, div };

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// Gradient-tracked leaf.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  /// Extent of an axis; negative axes count from the back.
  std::size_t size(int axis) const;
  std::size_t numel() const;
  std::span<const double> values() const;
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  /// Accumulated gradient; empty when none has been computed.
  std::span<const double> grad() const;
  void zero_grad() const;
  /// Writable storage of a leaf. Throws ContractError for non-leaves.
  std::span<double> mutable_values() const;
  void set_requires_grad(bool flag) const;

  /// Same values, no history: an exact gradient barrier.
  Tensor detach() const;
  /// Reverse-mode sweep from a scalar. Throws ContractError otherwise.
  void backward() const;

  Tensor reshape(Shape shape) const;
  Tensor transpose(int axis0, int axis1) const;
  Tensor slice(int axis, std::size_t begin, std::size_t end) const;
  Tensor sum(int axis, bool keepdim = false) const;
  Tensor mean(int axis, bool keepdim = false) const;
  Tensor sum() const;
  Tensor mean() const;
  Tensor softmax(int axis) const;
  /// Euclidean norm over the last axis.
  Tensor norm(bool keepdim = false) const;

  /// Identity of the underlying node (for graph audits in tests).
  const void* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend struct detail::Node;
  friend class OpBuilder;

  std::shared_ptr<detail::Node> node_;
};

Tensor apply(UnaryOp op, const Tensor& x);
Tensor apply(BinaryOp op, const Tensor& a, const Tensor& b);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& x);
Tensor operator+(const Tensor& a, double b);
Tensor operator-(const Tensor& a, double b);
Tensor operator*(const Tensor& a, double b);
Tensor operator/(const Tensor& a, double b);
Tensor operator+(double a, const Tensor& b);
Tensor operator-(double a, const Tensor& b);
Tensor operator*(double a, const Tensor& b);
Tensor operator/(double a, const Tensor& b);

Tensor tanh(const Tensor& x);
/// Requires |x| < 1.
Tensor atanh(const Tensor& x);
/// Requires x >= 1.
Tensor acosh(const Tensor& x);
Tensor exp(const Tensor& x);
/// Requires x >= 0.
Tensor log(const Tensor& x);
/// Requires x >= 0.
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
/// Elementwise clamp; gradient passes only strictly inside (lo, hi).
Tensor clamp(const Tensor& x, double lo, double hi);

/// Batched matrix product over the last two axes; leading axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor concat(const std::vector<Tensor>& parts, int axis);

}  // namespace loopalign
