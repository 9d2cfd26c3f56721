#pragma once

// Dense float64 tensors with a dynamically recorded reverse-mode graph.
//
// A Tensor is a cheap handle onto shared storage. Every differentiable op
// returns a fresh tensor whose node remembers its inputs and a backward
// rule; calling backward() on a scalar walks that graph once in reverse
// topological order and accumulates into the grad buffers of the leaves.
// Ops never mutate their inputs.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace akt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {
struct TensorImpl;
}  // namespace detail

/// Backward rule of a recorded op. `input_grads[i]` is empty when input i
/// does not take part in differentiation; otherwise it is that input's grad
/// buffer and the rule must accumulate (+=) into it.
using BackwardFn = std::function<void(std::span<const double> out_grad, std::span<const double> out_data,
                                      std::span<const std::span<double>> input_grads)>;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view of a leaf's values (optimizers, initializers, checkpoint
  /// loading). Throws if the tensor was produced by a recorded op.
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse-mode sweep from this scalar. Gradients add onto existing ones.
  void backward() const;

  /// Same values, cut from the graph.
  Tensor detach() const;

  /// Identity of the underlying storage (handles share it on copy).
  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor make_result(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                            BackwardFn backward);
};

/// Builds the output of an op. Values are checked for finiteness; a node is
/// recorded only when gradients are enabled and some input requires grad.
Tensor make_result(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   BackwardFn backward);

/// Records the largest tensor created on the current thread while alive.
class AllocationProbe {
 public:
  AllocationProbe();
  ~AllocationProbe();
  AllocationProbe(const AllocationProbe&) = delete;
  AllocationProbe& operator=(const AllocationProbe&) = delete;

  std::size_t largest() const { return largest_; }
  void record(std::size_t numel);

 private:
  AllocationProbe* previous_;
  std::size_t largest_ = 0;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- elementwise (numpy-style trailing-dimension broadcasting) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor shift(const Tensor& x, double offset);
Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor pow(const Tensor& x, double exponent);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
/// Elementwise clamp; gradient passes only where lo < x < hi.
Tensor clamp(const Tensor& x, double lo, double hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return shift(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---- linear algebra and layout ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Rows of a rank-2 tensor picked by index (repeats allowed).
Tensor take_rows(const Tensor& x, std::span<const std::size_t> rows);

// ---- reductions ----
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);
/// Max along an axis; the gradient flows to the first maximal entry only.
Tensor max(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor softmax(const Tensor& x, std::size_t axis);

// ---- fused ops used by the model ----
/// Layer normalisation over the last axis with affine gain/bias of that width.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// 2-D convolution on an HxWxC image. `weight` is [k*k*Cin x Cout] with rows
/// ordered (ky, kx, cin); `bias` is [Cout]. Output is Ho x Wo x Cout.
Tensor conv2d(const Tensor& image, const Tensor& weight, const Tensor& bias, std::size_t kernel, std::size_t stride,
              std::size_t padding);

/// Mean binary cross-entropy of probabilities against fixed 0/1 targets.
/// Probabilities are clamped to [1e-12, 1 - 1e-12] inside the logarithms.
Tensor binary_cross_entropy(const Tensor& probs, std::span<const double> targets);

}  // namespace akt
