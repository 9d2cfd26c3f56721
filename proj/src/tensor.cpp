#include "akt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include <Eigen/Core>

#include "akt/error.hpp"

namespace akt {

namespace detail {

struct Node {
  const char* op = "";
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> node;
};

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;
thread_local AllocationProbe* g_probe = nullptr;

void note_allocation(std::size_t numel) {
  if (g_probe) g_probe->record(numel);
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void check_finite(const char* op, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_str(shape) + " cannot hold " + std::to_string(values.size()) +
                         " values");
  }
  check_finite("Tensor::from", values);
  note_allocation(values.size());
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }

std::span<double> Tensor::mutable_data() {
  if (impl_->node) throw UsageError("mutable_data() on a tensor produced by a recorded op");
  return impl_->data;
}

std::vector<double> Tensor::to_vector() const { return impl_->data; }

double Tensor::item() const {
  if (impl_->data.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(impl_->shape));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = impl_->shape;
  if (index.size() != s.size()) throw DimensionError("index rank does not match tensor rank");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw DimensionError("index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (impl_->node) throw UsageError("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return impl_->node == nullptr; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

void Tensor::backward() const {
  if (numel() != 1) throw DimensionError("backward() requires a scalar, got shape " + shape_str(shape()));

  // Iterative post-order DFS; every node is emitted exactly once.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const std::size_t n_inputs = impl->node ? impl->node->inputs.size() : 0;
    if (next < n_inputs) {
      detail::TensorImpl* child = impl->node->inputs[next].impl_.get();
      ++next;
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(impl);
      stack.pop_back();
    }
  }

  if (impl_->grad.empty()) impl_->grad.assign(1, 0.0);
  impl_->grad[0] += 1.0;

  std::vector<std::span<double>> slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* impl = *it;
    if (!impl->node || impl->grad.empty()) continue;
    slots.clear();
    for (const Tensor& in : impl->node->inputs) {
      detail::TensorImpl* child = in.impl_.get();
      if (!child->requires_grad) {
        slots.emplace_back();
        continue;
      }
      if (child->grad.empty()) child->grad.assign(child->data.size(), 0.0);
      slots.emplace_back(child->grad);
    }
    impl->node->backward(impl->grad, impl->data, slots);
  }
}

Tensor make_result(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   BackwardFn backward) {
  check_finite(op, values);
  note_allocation(values.size());
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  if (g_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      impl->requires_grad = true;
      impl->node = std::make_shared<detail::Node>(detail::Node{op, std::move(inputs), std::move(backward)});
    }
  }
  return Tensor(std::move(impl));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

AllocationProbe::AllocationProbe() : previous_(g_probe) { g_probe = this; }
AllocationProbe::~AllocationProbe() { g_probe = previous_; }

void AllocationProbe::record(std::size_t numel) {
  largest_ = std::max(largest_, numel);
  if (previous_) previous_->record(numel);
}

// ---------------------------------------------------------------------------
// Broadcasting

namespace {

// Maps a linear index of the broadcast output to a linear index of one input.
struct IndexMap {
  enum class Kind { kSame, kModulo, kDivide, kTable } kind = Kind::kSame;
  std::size_t n = 1;
  std::vector<std::size_t> table;

  std::size_t operator()(std::size_t i) const {
    switch (kind) {
      case Kind::kSame:
        return i;
      case Kind::kModulo:
        return i % n;
      case Kind::kDivide:
        return i / n;
      case Kind::kTable:
        break;
    }
    return table[i];
  }
};

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcastable");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

IndexMap make_index_map(const Shape& out, const Shape& in) {
  IndexMap map;
  const std::size_t n_out = shape_numel(out);
  const std::size_t n_in = shape_numel(in);
  if (n_in == n_out) return map;
  const std::size_t offset = out.size() - in.size();
  // Input equal to a trailing block of the output: repeat with period n_in.
  bool suffix = true;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] != out[offset + i]) {
      suffix = false;
      break;
    }
  }
  // Leading ones are allowed in the suffix test.
  if (!suffix) {
    std::size_t first = 0;
    while (first < in.size() && in[first] == 1) ++first;
    suffix = true;
    for (std::size_t i = first; i < in.size(); ++i) {
      if (in[i] != out[offset + i]) {
        suffix = false;
        break;
      }
    }
  }
  if (suffix) {
    map.kind = IndexMap::Kind::kModulo;
    map.n = n_in;
    return map;
  }
  // Input equal to the output with trailing dims collapsed to 1.
  std::size_t last = in.size();
  while (last > 0 && in[last - 1] == 1) --last;
  bool prefix = true;
  for (std::size_t i = 0; i < last; ++i) {
    if (in[i] != out[offset + i]) {
      prefix = false;
      break;
    }
  }
  if (prefix && offset == 0) {
    map.kind = IndexMap::Kind::kDivide;
    map.n = n_out / n_in;
    return map;
  }
  map.kind = IndexMap::Kind::kTable;
  map.table.resize(n_out);
  std::vector<std::size_t> in_strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    in_strides[offset + i] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  std::vector<std::size_t> idx(out.size(), 0);
  for (std::size_t flat = 0; flat < n_out; ++flat) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < out.size(); ++d) src += idx[d] * in_strides[d];
    map.table[flat] = src;
    for (std::size_t d = out.size(); d-- > 0;) {
      if (++idx[d] < out[d]) break;
      idx[d] = 0;
    }
  }
  return map;
}

template <typename Fwd, typename Bwd>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  Shape out = broadcast_shape(a.shape(), b.shape(), op);
  const std::size_t n = shape_numel(out);
  auto ma = std::make_shared<IndexMap>(make_index_map(out, a.shape()));
  auto mb = std::make_shared<IndexMap>(make_index_map(out, b.shape()));
  std::vector<double> values(n);
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < n; ++i) values[i] = fwd(da[(*ma)(i)], db[(*mb)(i)]);
  return make_result(op, std::move(out), std::move(values), {a, b},
                     [a, b, ma, mb, bwd](std::span<const double> g, std::span<const double> y,
                                         std::span<const std::span<double>> grads) {
                       const auto xa = a.data();
                       const auto xb = b.data();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const std::size_t ia = (*ma)(i);
                         const std::size_t ib = (*mb)(i);
                         double ga = 0.0;
                         double gb = 0.0;
                         bwd(xa[ia], xb[ib], y[i], g[i], ga, gb);
                         if (!grads[0].empty()) grads[0][ia] += ga;
                         if (!grads[1].empty()) grads[1][ib] += gb;
                       }
                     });
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto dx = x.data();
  std::vector<double> values(dx.size());
  for (std::size_t i = 0; i < dx.size(); ++i) values[i] = fwd(dx[i]);
  return make_result(op, x.shape(), std::move(values), {x},
                     [x, deriv](std::span<const double> g, std::span<const double> y,
                                std::span<const std::span<double>> grads) {
                       const auto xv = x.data();
                       for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i] * deriv(xv[i], y[i]);
                     });
}

double sigmoid_scalar(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(s));
  }
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape reduced_shape(const Shape& s, std::size_t axis, bool keepdim) {
  Shape out = s;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double, double g, double& ga, double& gb) {
        ga = g;
        gb = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double, double g, double& ga, double& gb) {
        ga = g;
        gb = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double, double g, double& ga, double& gb) {
        ga = g * y;
        gb = g * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double out, double g, double& ga, double& gb) {
        ga = g / y;
        gb = -g * out / y;
      });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor shift(const Tensor& x, double offset) {
  return unary(
      "shift", x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
  // Subgradient 0 at the kink.
  return unary(
      "abs", x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor pow(const Tensor& x, double exponent) {
  return unary(
      "pow", x, [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double v, double) { return exponent * std::pow(v, exponent - 1.0); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x, [](double v) { return sigmoid_scalar(v); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& x) {
  return unary(
      "silu", x, [](double v) { return v * sigmoid_scalar(v); },
      [](double v, double) {
        const double s = sigmoid_scalar(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> values(static_cast<std::size_t>(m * n));
  MutMap(values.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  return make_result("matmul", {a.dim(0), b.dim(1)}, std::move(values), {a, b},
                     [a, b, m, k, n](std::span<const double> g, std::span<const double>,
                                     std::span<const std::span<double>> grads) {
                       ConstMap dc(g.data(), m, n);
                       if (!grads[0].empty()) {
                         MutMap(grads[0].data(), m, k).noalias() += dc * ConstMap(b.data().data(), k, n).transpose();
                       }
                       if (!grads[1].empty()) {
                         MutMap(grads[1].data(), k, n).noalias() += ConstMap(a.data().data(), m, k).transpose() * dc;
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects a rank-2 tensor, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0);
  const std::size_t c = a.dim(1);
  std::vector<double> values(r * c);
  const auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) values[j * r + i] = x[i * c + j];
  return make_result("transpose", {c, r}, std::move(values), {a},
                     [r, c](std::span<const double> g, std::span<const double>,
                            std::span<const std::span<double>> grads) {
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j) grads[0][i * c + j] += g[j * r + i];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return make_result("reshape", std::move(shape), x.to_vector(), {x},
                     [](std::span<const double> g, std::span<const double>, std::span<const std::span<double>> grads) {
                       for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i];
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit s = split_axis(x.shape(), axis, "slice");
  if (start + length > s.n) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds extent " + std::to_string(s.n));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<double> values(s.outer * length * s.inner);
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * s.n + start) * s.inner), length * s.inner,
                values.begin() + static_cast<std::ptrdiff_t>(o * length * s.inner));
  }
  return make_result("slice", std::move(out_shape), std::move(values), {x},
                     [s, start, length](std::span<const double> g, std::span<const double>,
                                        std::span<const std::span<double>> grads) {
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         const double* src = g.data() + o * length * s.inner;
                         double* dst = grads[0].data() + (o * s.n + start) * s.inner;
                         for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const Tensor& p : parts) {
    if (p.rank() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && p.dim(d) != first[d]) {
        throw DimensionError("concat: shapes " + shape_str(first) + " and " + shape_str(p.shape()) + " disagree");
      }
    }
    extents.push_back(p.dim(axis));
    out_shape[axis] += p.dim(axis);
  }
  const AxisSplit s = split_axis(out_shape, axis, "concat");
  std::vector<double> values(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto pv = parts[pi].data();
    const std::size_t block = extents[pi] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                  values.begin() + static_cast<std::ptrdiff_t>(o * s.n * s.inner + offset * s.inner));
    }
    offset += extents[pi];
  }
  return make_result("concat", std::move(out_shape), std::move(values), parts,
                     [s, extents](std::span<const double> g, std::span<const double>,
                                  std::span<const std::span<double>> grads) {
                       std::size_t off = 0;
                       for (std::size_t pi = 0; pi < extents.size(); ++pi) {
                         const std::size_t block = extents[pi] * s.inner;
                         if (!grads[pi].empty()) {
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             const double* src = g.data() + o * s.n * s.inner + off * s.inner;
                             double* dst = grads[pi].data() + o * block;
                             for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                           }
                         }
                         off += extents[pi];
                       }
                     });
}

Tensor take_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() != 2) throw DimensionError("take_rows expects a rank-2 tensor, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0);
  const std::size_t w = x.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> values(idx.size() * w);
  const auto xv = x.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) throw DimensionError("take_rows: row index out of range");
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(idx[r] * w), w,
                values.begin() + static_cast<std::ptrdiff_t>(r * w));
  }
  return make_result("take_rows", {idx.size(), w}, std::move(values), {x},
                     [idx, w](std::span<const double> g, std::span<const double>,
                              std::span<const std::span<double>> grads) {
                       for (std::size_t r = 0; r < idx.size(); ++r)
                         for (std::size_t j = 0; j < w; ++j) grads[0][idx[r] * w + j] += g[r * w + j];
                     });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result("sum", {}, {total}, {x},
                     [](std::span<const double> g, std::span<const double>, std::span<const std::span<double>> grads) {
                       for (double& v : grads[0]) v += g[0];
                     });
}

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
  const AxisSplit s = split_axis(x.shape(), axis, "sum");
  std::vector<double> values(s.outer * s.inner, 0.0);
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.n; ++k)
      for (std::size_t i = 0; i < s.inner; ++i) values[o * s.inner + i] += xv[(o * s.n + k) * s.inner + i];
  return make_result("sum_axis", reduced_shape(x.shape(), axis, keepdim), std::move(values), {x},
                     [s](std::span<const double> g, std::span<const double>, std::span<const std::span<double>> grads) {
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t k = 0; k < s.n; ++k)
                           for (std::size_t i = 0; i < s.inner; ++i)
                             grads[0][(o * s.n + k) * s.inner + i] += g[o * s.inner + i];
                     });
}

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
  const AxisSplit s = split_axis(x.shape(), axis, "mean");
  if (s.n == 0) throw DimensionError("mean over an empty axis");
  return scale(sum(x, axis, keepdim), 1.0 / static_cast<double>(s.n));
}

Tensor max(const Tensor& x, std::size_t axis, bool keepdim) {
  const AxisSplit s = split_axis(x.shape(), axis, "max");
  if (s.n == 0) throw DimensionError("max over an empty axis");
  std::vector<double> values(s.outer * s.inner);
  std::vector<std::size_t> arg(s.outer * s.inner);
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = 0;
      double best_v = xv[o * s.n * s.inner + i];
      for (std::size_t k = 1; k < s.n; ++k) {
        const double v = xv[(o * s.n + k) * s.inner + i];
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      values[o * s.inner + i] = best_v;
      arg[o * s.inner + i] = (o * s.n + best) * s.inner + i;
    }
  }
  return make_result("max", reduced_shape(x.shape(), axis, keepdim), std::move(values), {x},
                     [arg](std::span<const double> g, std::span<const double>,
                           std::span<const std::span<double>> grads) {
                       for (std::size_t j = 0; j < arg.size(); ++j) grads[0][arg[j]] += g[j];
                     });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  std::vector<double> values(x.numel());
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.n; ++k) peak = std::max(peak, xv[(o * s.n + k) * s.inner + i]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) {
        const std::size_t j = (o * s.n + k) * s.inner + i;
        values[j] = std::exp(xv[j] - peak);
        total += values[j];
      }
      for (std::size_t k = 0; k < s.n; ++k) values[(o * s.n + k) * s.inner + i] /= total;
    }
  }
  return make_result("softmax", x.shape(), std::move(values), {x},
                     [s](std::span<const double> g, std::span<const double> y,
                         std::span<const std::span<double>> grads) {
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         for (std::size_t i = 0; i < s.inner; ++i) {
                           double dot = 0.0;
                           for (std::size_t k = 0; k < s.n; ++k) {
                             const std::size_t j = (o * s.n + k) * s.inner + i;
                             dot += g[j] * y[j];
                           }
                           for (std::size_t k = 0; k < s.n; ++k) {
                             const std::size_t j = (o * s.n + k) * s.inner + i;
                             grads[0][j] += y[j] * (g[j] - dot);
                           }
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Fused ops

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm on a scalar");
  const std::size_t w = x.shape().back();
  if (gain.numel() != w || bias.numel() != w) {
    throw DimensionError("layer_norm: gain/bias width does not match " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / w;
  auto normed = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> values(x.numel());
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * w;
    double mu = 0.0;
    for (std::size_t j = 0; j < w; ++j) mu += row[j];
    mu /= static_cast<double>(w);
    double var = 0.0;
    for (std::size_t j = 0; j < w; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(w);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < w; ++j) {
      const double h = (row[j] - mu) * is;
      (*normed)[r * w + j] = h;
      values[r * w + j] = h * gv[j] + bv[j];
    }
  }
  return make_result("layer_norm", x.shape(), std::move(values), {x, gain, bias},
                     [gain, normed, inv_std, rows, w](std::span<const double> g, std::span<const double>,
                                                      std::span<const std::span<double>> grads) {
                       const auto gv = gain.data();
                       const double inv_w = 1.0 / static_cast<double>(w);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* h = normed->data() + r * w;
                         const double* gr = g.data() + r * w;
                         if (!grads[1].empty())
                           for (std::size_t j = 0; j < w; ++j) grads[1][j] += gr[j] * h[j];
                         if (!grads[2].empty())
                           for (std::size_t j = 0; j < w; ++j) grads[2][j] += gr[j];
                         if (grads[0].empty()) continue;
                         double mean_dh = 0.0;
                         double mean_dh_h = 0.0;
                         for (std::size_t j = 0; j < w; ++j) {
                           const double dh = gr[j] * gv[j];
                           mean_dh += dh;
                           mean_dh_h += dh * h[j];
                         }
                         mean_dh *= inv_w;
                         mean_dh_h *= inv_w;
                         for (std::size_t j = 0; j < w; ++j) {
                           const double dh = gr[j] * gv[j];
                           grads[0][r * w + j] += (*inv_std)[r] * (dh - mean_dh - h[j] * mean_dh_h);
                         }
                       }
                     });
}

Tensor conv2d(const Tensor& image, const Tensor& weight, const Tensor& bias, std::size_t kernel, std::size_t stride,
              std::size_t padding) {
  if (image.rank() != 3) throw DimensionError("conv2d expects HxWxC input, got " + shape_str(image.shape()));
  const std::size_t h = image.dim(0);
  const std::size_t w = image.dim(1);
  const std::size_t cin = image.dim(2);
  const std::size_t patch = kernel * kernel * cin;
  if (weight.rank() != 2 || weight.dim(0) != patch) {
    throw DimensionError("conv2d: weight " + shape_str(weight.shape()) + " does not match kernel " +
                         std::to_string(kernel) + " and " + std::to_string(cin) + " input channels");
  }
  const std::size_t cout = weight.dim(1);
  if (bias.numel() != cout) throw DimensionError("conv2d: bias width does not match output channels");
  if (h + 2 * padding < kernel || w + 2 * padding < kernel || stride == 0) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  const std::size_t ho = (h + 2 * padding - kernel) / stride + 1;
  const std::size_t wo = (w + 2 * padding - kernel) / stride + 1;
  const std::size_t pixels = ho * wo;

  auto cols = std::make_shared<std::vector<double>>(pixels * patch, 0.0);
  const auto xv = image.data();
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      double* dst = cols->data() + (oy * wo + ox) * patch;
      for (std::size_t ky = 0; ky < kernel; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < kernel; ++kx) {
          const std::ptrdiff_t ix =
              static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          std::copy_n(xv.data() + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin, cin,
                      dst + (ky * kernel + kx) * cin);
        }
      }
    }
  }
  const auto P = static_cast<Eigen::Index>(pixels);
  const auto K = static_cast<Eigen::Index>(patch);
  const auto C = static_cast<Eigen::Index>(cout);
  std::vector<double> values(pixels * cout);
  MutMap out(values.data(), P, C);
  out.noalias() = ConstMap(cols->data(), P, K) * ConstMap(weight.data().data(), K, C);
  out.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), C);

  return make_result(
      "conv2d", {ho, wo, cout}, std::move(values), {image, weight, bias},
      [weight, cols, h, w, cin, kernel, stride, padding, ho, wo, P, K, C](
          std::span<const double> g, std::span<const double>, std::span<const std::span<double>> grads) {
        ConstMap dy(g.data(), P, C);
        if (!grads[1].empty()) MutMap(grads[1].data(), K, C).noalias() += ConstMap(cols->data(), P, K).transpose() * dy;
        if (!grads[2].empty()) {
          // Fixed row order: Eigen's vectorized column sums depend on buffer alignment.
          for (Eigen::Index p = 0; p < P; ++p) {
            for (Eigen::Index c = 0; c < C; ++c) grads[2][static_cast<std::size_t>(c)] += dy(p, c);
          }
        }
        if (grads[0].empty()) return;
        RowMat dcols = dy * ConstMap(weight.data().data(), K, C).transpose();
        const std::size_t patch = static_cast<std::size_t>(K);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const double* src = dcols.data() + (oy * wo + ox) * patch;
            for (std::size_t ky = 0; ky < kernel; ++ky) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < kernel; ++kx) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                double* dst = grads[0].data() + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin;
                const double* s = src + (ky * kernel + kx) * cin;
                for (std::size_t c = 0; c < cin; ++c) dst[c] += s[c];
              }
            }
          }
        }
      });
}

Tensor binary_cross_entropy(const Tensor& probs, std::span<const double> targets) {
  if (probs.numel() != targets.size()) {
    throw DimensionError("binary_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(probs.numel()) + " probabilities");
  }
  constexpr double kEps = 1e-12;
  const auto p = probs.data();
  const std::size_t n = p.size();
  if (n == 0) throw DimensionError("binary_cross_entropy of an empty tensor");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double q = std::clamp(p[i], kEps, 1.0 - kEps);
    total -= targets[i] * std::log(q) + (1.0 - targets[i]) * std::log(1.0 - q);
  }
  std::vector<double> t(targets.begin(), targets.end());
  return make_result("binary_cross_entropy", {}, {total / static_cast<double>(n)}, {probs},
                     [probs, t](std::span<const double> g, std::span<const double>,
                                std::span<const std::span<double>> grads) {
                       const auto pv = probs.data();
                       const double inv_n = 1.0 / static_cast<double>(pv.size());
                       for (std::size_t i = 0; i < pv.size(); ++i) {
                         if (pv[i] <= kEps || pv[i] >= 1.0 - kEps) continue;
                         grads[0][i] += g[0] * inv_n * (-t[i] / pv[i] + (1.0 - t[i]) / (1.0 - pv[i]));
                       }
                     });
}

}  // namespace akt
