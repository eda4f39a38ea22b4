// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#include "cpvq/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <new>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

// Every heap block starts on a 64-byte boundary. Eigen's vectorized loops
// peel a scalar prefix up to the first aligned element, and the peeled
// elements round differently from the packet ones, so with malloc's 16-byte
// alignment two identical runs could disagree in the last bit.
void* operator new(std::size_t n) {
  void* p = std::aligned_alloc(64, n == 0 ? 64 : (n + 63) & ~std::size_t{63});
  if (p == nullptr) throw std::bad_alloc();
  return p;
}
void operator delete(void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }

namespace cpvq {

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  OpKind kind = OpKind::leaf;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward_fn;
  std::uint64_t sequence = 0;
};

}  // namespace detail

namespace {

using detail::TensorImpl;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_sequence{1};

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b) {
  std::ostringstream msg;
  msg << op << ": shape mismatch " << shape_str(a) << " vs " << shape_str(b);
  throw std::invalid_argument(msg.str());
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_axis(std::string_view op, const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    std::ostringstream msg;
    msg << op << ": axis " << axis << " out of range for shape " << shape_str(x.shape());
    throw std::invalid_argument(msg.str());
  }
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  out.reserve(shape.size() - 1);
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (i != axis) out.push_back(shape[i]);
  return out;
}

template <typename Fwd, typename Deriv>
Tensor unary(OpKind kind, const Tensor& x, Fwd fwd, Deriv deriv) {
  const std::size_t n = x.numel();
  std::vector<double> out(n);
  {
    const double* __restrict in = x.data().data();
    double* __restrict dst = out.data();
    for (std::size_t i = 0; i < n; ++i) dst[i] = fwd(in[i]);
  }
  auto fn = [x, deriv](std::span<const double> g, std::span<const double> result,
                       std::span<std::vector<double>*> gin) {
    if (!gin[0]) return;
    const double* __restrict in = x.data().data();
    const double* __restrict gp = g.data();
    const double* __restrict rp = result.data();
    double* __restrict dst = gin[0]->data();
    const std::size_t n = g.size();
    for (std::size_t i = 0; i < n; ++i) dst[i] += gp[i] * deriv(in[i], rp[i]);
  };
  return record_op(kind, {x}, x.shape(), std::move(out), std::move(fn));
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ')';
  return out.str();
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::matmul: return "matmul";
    case OpKind::affine: return "affine";
    case OpKind::affine_relu: return "affine_relu";
    case OpKind::relu: return "relu";
    case OpKind::tanh: return "tanh";
    case OpKind::max_axis: return "max_axis";
    case OpKind::mean_axis: return "mean_axis";
    case OpKind::sum_axis: return "sum_axis";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::broadcast: return "broadcast";
    case OpKind::square: return "square";
    case OpKind::sqrt: return "sqrt";
    case OpKind::exp: return "exp";
    case OpKind::softmax: return "softmax";
    case OpKind::stop_gradient: return "stop_gradient";
    case OpKind::reshape: return "reshape";
    case OpKind::scale: return "scale";
    case OpKind::custom: return "custom";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() = default;
Tensor::Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> values(shape_numel(shape), value);
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    std::ostringstream msg;
    msg << "Tensor::from: shape " << shape_str(shape) << " holds " << shape_numel(shape)
        << " values, got " << values.size();
    throw std::invalid_argument(msg.str());
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::dim(std::size_t axis) const { return impl_->shape.at(axis); }
std::size_t Tensor::numel() const { return impl_->data.size(); }
std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

void Tensor::clear_grad() { impl_->grad.clear(); }
OpKind Tensor::op() const { return impl_->kind; }

std::vector<Tensor> Tensor::inputs() const {
  std::vector<Tensor> out;
  for (const auto& in : impl_->inputs) out.push_back(Tensor(in));
  return out;
}

Tensor Tensor::detach_copy() const { return from(shape(), std::vector<double>(data().begin(), data().end())); }

// ---------------------------------------------------------------------------
// Recording

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor record_op(OpKind kind, std::vector<Tensor> inputs, Shape shape, std::vector<double> values,
                 BackwardFn backward_fn) {
  auto out = Tensor::from(std::move(shape), std::move(values));
  const bool tracked = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                                     [](const Tensor& t) { return t.requires_grad(); });
  if (!tracked) return out;
  auto& impl = *out.impl_;
  impl.kind = kind;
  impl.requires_grad = true;
  impl.backward_fn = std::move(backward_fn);
  impl.sequence = g_sequence.fetch_add(1, std::memory_order_relaxed);
  impl.inputs.reserve(inputs.size());
  for (auto& in : inputs) impl.inputs.push_back(in.impl_);
  return out;
}

namespace {

std::vector<TensorImpl*> collect_recorded(TensorImpl* root) {
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<TensorImpl*> stack{root};
  while (!stack.empty()) {
    TensorImpl* node = stack.back();
    stack.pop_back();
    if (node->kind == OpKind::leaf || node->inputs.empty() || !seen.insert(node).second) continue;
    order.push_back(node);
    for (const auto& in : node->inputs) stack.push_back(in.get());
  }
  // Recording order is a topological order of the DAG.
  std::sort(order.begin(), order.end(),
            [](const TensorImpl* a, const TensorImpl* b) { return a->sequence < b->sequence; });
  return order;
}

}  // namespace

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
  if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  auto order = collect_recorded(loss.impl_.get());
  if (order.empty()) throw std::invalid_argument("backward: loss was not produced by any recorded op");

  for (TensorImpl* node : order) node->grad.assign(node->data.size(), 0.0);
  loss.impl_->grad[0] = 1.0;

  std::vector<std::vector<double>*> grad_in;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    grad_in.assign(node->inputs.size(), nullptr);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      TensorImpl* in = node->inputs[i].get();
      if (!in->requires_grad) continue;
      if (in->grad.size() != in->data.size()) in->grad.assign(in->data.size(), 0.0);
      grad_in[i] = &in->grad;
    }
    node->backward_fn(node->grad, node->data, grad_in);
  }
}

std::vector<OpKind> tape_of(const Tensor& root) {
  std::vector<OpKind> kinds;
  for (const TensorImpl* node : collect_recorded(root.impl_.get())) kinds.push_back(node->kind);
  return kinds;
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return record_op(OpKind::add, {a, b}, a.shape(), std::move(out),
                   [](std::span<const double> g, std::span<const double>, std::span<std::vector<double>*> gin) {
                     for (auto* dst : gin)
                       if (dst)
                         for (std::size_t i = 0; i < g.size(); ++i) (*dst)[i] += g[i];
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return record_op(OpKind::sub, {a, b}, a.shape(), std::move(out),
                   [](std::span<const double> g, std::span<const double>, std::span<std::vector<double>*> gin) {
                     if (gin[0])
                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                     if (gin[1])
                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return record_op(OpKind::mul, {a, b}, a.shape(), std::move(out),
                   [a, b](std::span<const double> g, std::span<const double>, std::span<std::vector<double>*> gin) {
                     const auto x = a.data(), y = b.data();
                     if (gin[0])
                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * y[i];
                     if (gin[1])
                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * x[i];
                   });
}

Tensor square(const Tensor& x) {
  return unary(OpKind::square, x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(OpKind::sqrt, x, [](double v) { return std::sqrt(v); },
               [](double, double out) { return 0.5 / out; });
}

Tensor exp(const Tensor& x) {
  return unary(OpKind::exp, x, [](double v) { return std::exp(v); }, [](double, double out) { return out; });
}

Tensor relu(const Tensor& x) {
  return unary(OpKind::relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double, double out) { return out > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(OpKind::tanh, x, [](double v) { return std::tanh(v); },
               [](double, double out) { return 1.0 - out * out; });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * factor;
  return record_op(OpKind::scale, {x}, x.shape(), std::move(out),
                   [factor](std::span<const double> g, std::span<const double>, std::span<std::vector<double>*> gin) {
                     if (gin[0])
                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * factor;
                   });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_error("matmul", a.shape(), b.shape());
  const auto n = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto m = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(n * m));
  // out starts zeroed; accumulating skips the product's own setZero pass.
  MutMap(out.data(), n, m).noalias() += ConstMap(a.data().data(), n, k) * ConstMap(b.data().data(), k, m);
  return record_op(OpKind::matmul, {a, b}, {a.dim(0), b.dim(1)}, std::move(out),
                   [a, b, n, k, m](std::span<const double> g, std::span<const double>, std::span<std::vector<double>*> gin) {
                     ConstMap grad(g.data(), n, m);
                     if (gin[0]) MutMap(gin[0]->data(), n, k).noalias() += grad * ConstMap(b.data().data(), k, m).transpose();
                     if (gin[1]) MutMap(gin[1]->data(), k, m).noalias() += ConstMap(a.data().data(), n, k).transpose() * grad;
                   });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0)) shape_error("affine", x.shape(), w.shape());
  if (bias.rank() != 1 || bias.dim(0) != w.dim(1)) shape_error("affine", w.shape(), bias.shape());
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const auto k = static_cast<Eigen::Index>(x.dim(1));
  const auto m = static_cast<Eigen::Index>(w.dim(1));
  std::vector<double> out(static_cast<std::size_t>(n * m));
  MutMap result(out.data(), n, m);
  result.noalias() += ConstMap(x.data().data(), n, k) * ConstMap(w.data().data(), k, m);
  result.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), m);
  return record_op(OpKind::affine, {x, w, bias}, {x.dim(0), w.dim(1)}, std::move(out),
                   [x, w, n, k, m](std::span<const double> g, std::span<const double>,
                                   std::span<std::vector<double>*> gin) {
                     ConstMap grad(g.data(), n, m);
                     if (gin[0]) MutMap(gin[0]->data(), n, k).noalias() += grad * ConstMap(w.data().data(), k, m).transpose();
                     if (gin[1]) MutMap(gin[1]->data(), k, m).noalias() += ConstMap(x.data().data(), n, k).transpose() * grad;
                     if (gin[2]) Eigen::Map<Eigen::RowVectorXd>(gin[2]->data(), m) += grad.colwise().sum();
                   });
}

Tensor affine_relu(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0)) shape_error("affine_relu", x.shape(), w.shape());
  if (bias.rank() != 1 || bias.dim(0) != w.dim(1)) shape_error("affine_relu", w.shape(), bias.shape());
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const auto k = static_cast<Eigen::Index>(x.dim(1));
  const auto m = static_cast<Eigen::Index>(w.dim(1));
  std::vector<double> out(static_cast<std::size_t>(n * m));
  MutMap result(out.data(), n, m);
  result.noalias() += ConstMap(x.data().data(), n, k) * ConstMap(w.data().data(), k, m);
  result.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), m);
  result = result.cwiseMax(0.0);
  return record_op(OpKind::affine_relu, {x, w, bias}, {x.dim(0), w.dim(1)}, std::move(out),
                   [x, w, n, k, m](std::span<const double> g, std::span<const double> y,
                                   std::span<std::vector<double>*> gin) {
                     std::vector<double> masked(g.begin(), g.end());
                     for (std::size_t i = 0; i < masked.size(); ++i)
                       if (!(y[i] > 0.0)) masked[i] = 0.0;
                     ConstMap grad(masked.data(), n, m);
                     if (gin[0]) MutMap(gin[0]->data(), n, k).noalias() += grad * ConstMap(w.data().data(), k, m).transpose();
                     if (gin[1]) MutMap(gin[1]->data(), k, m).noalias() += ConstMap(x.data().data(), n, k).transpose() * grad;
                     if (gin[2]) Eigen::Map<Eigen::RowVectorXd>(gin[2]->data(), m) += grad.colwise().sum();
                   });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor max_axis(const Tensor& x, std::size_t axis) {
  require_axis("max_axis", x, axis);
  const auto s = split_at(x.shape(), axis);
  if (s.extent == 0) throw std::invalid_argument("max_axis: empty axis");
  const auto in = x.data();
  std::vector<double> out(s.outer * s.inner);
  std::vector<std::size_t> winner(out.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* base = in.data() + o * s.extent * s.inner;
    double* dst = out.data() + o * s.inner;
    std::size_t* win = winner.data() + o * s.inner;
    for (std::size_t i = 0; i < s.inner; ++i) {
      dst[i] = base[i];
      win[i] = 0;
    }
    for (std::size_t e = 1; e < s.extent; ++e) {
      const double* row = base + e * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) {
        if (row[i] > dst[i]) {
          dst[i] = row[i];
          win[i] = e;
        }
      }
    }
  }
  return record_op(OpKind::max_axis, {x}, drop_axis(x.shape(), axis), std::move(out),
                   [s, winner = std::move(winner)](std::span<const double> g, std::span<const double>, std::span<std::vector<double>*> gin) {
                     if (!gin[0]) return;
                     auto& dst = *gin[0];
                     for (std::size_t o = 0; o < s.outer; ++o)
                       for (std::size_t i = 0; i < s.inner; ++i) {
                         const std::size_t flat = o * s.inner + i;
                         dst[(o * s.extent + winner[flat]) * s.inner + i] += g[flat];
                       }
                   });
}

namespace {

Tensor reduce_sum(OpKind kind, const Tensor& x, std::size_t axis, double factor) {
  const auto s = split_at(x.shape(), axis);
  const auto in = x.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    double* dst = out.data() + o * s.inner;
    for (std::size_t e = 0; e < s.extent; ++e) {
      const double* row = in.data() + (o * s.extent + e) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += row[i];
    }
    for (std::size_t i = 0; i < s.inner; ++i) dst[i] *= factor;
  }
  return record_op(kind, {x}, drop_axis(x.shape(), axis), std::move(out),
                   [s, factor](std::span<const double> g, std::span<const double>, std::span<std::vector<double>*> gin) {
                     if (!gin[0]) return;
                     auto& dst = *gin[0];
                     for (std::size_t o = 0; o < s.outer; ++o)
                       for (std::size_t e = 0; e < s.extent; ++e) {
                         double* row = dst.data() + (o * s.extent + e) * s.inner;
                         const double* src = g.data() + o * s.inner;
                         for (std::size_t i = 0; i < s.inner; ++i) row[i] += src[i] * factor;
                       }
                   });
}

}  // namespace

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  require_axis("mean_axis", x, axis);
  if (x.dim(axis) == 0) throw std::invalid_argument("mean_axis: empty axis");
  return reduce_sum(OpKind::mean_axis, x, axis, 1.0 / static_cast<double>(x.dim(axis)));
}

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  require_axis("sum_axis", x, axis);
  return reduce_sum(OpKind::sum_axis, x, axis, 1.0);
}

Tensor sum_all(const Tensor& x) { return sum_axis(reshape(x, {x.numel()}), 0); }

// ---------------------------------------------------------------------------
// Structural

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts.front().shape();
  require_axis("concat", parts.front(), axis);
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) shape_error("concat", first, p.shape());
    for (std::size_t d = 0; d < first.size(); ++d)
      if (d != axis && p.dim(d) != first[d]) shape_error("concat", first, p.shape());
    out_shape[axis] += p.dim(axis);
  }
  const auto s = split_at(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t width = p.dim(axis) * s.inner;
    const auto src = p.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(src.data() + o * width, width, out.data() + o * s.extent * s.inner + offset * s.inner);
    offset += p.dim(axis);
  }
  std::vector<std::size_t> extents;
  for (const auto& p : parts) extents.push_back(p.dim(axis));
  return record_op(OpKind::concat, parts, out_shape, std::move(out),
                   [s, offsets, extents](std::span<const double> g, std::span<const double>, std::span<std::vector<double>*> gin) {
                     for (std::size_t k = 0; k < gin.size(); ++k) {
                       if (!gin[k]) continue;
                       const std::size_t width = extents[k] * s.inner;
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         const double* src = g.data() + o * s.extent * s.inner + offsets[k] * s.inner;
                         double* dst = gin[k]->data() + o * width;
                         for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
                       }
                     }
                   });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_axis("slice", x, axis);
  if (begin > end || end > x.dim(axis)) {
    std::ostringstream msg;
    msg << "slice: range [" << begin << ", " << end << ") invalid for axis " << axis << " of shape "
        << shape_str(x.shape());
    throw std::invalid_argument(msg.str());
  }
  const auto s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t width = (end - begin) * s.inner;
  std::vector<double> out(s.outer * width);
  const auto in = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(in.data() + (o * s.extent + begin) * s.inner, width, out.data() + o * width);
  return record_op(OpKind::slice, {x}, out_shape, std::move(out),
                   [s, begin, width](std::span<const double> g, std::span<const double>, std::span<std::vector<double>*> gin) {
                     if (!gin[0]) return;
                     for (std::size_t o = 0; o < s.outer; ++o) {
                       double* dst = gin[0]->data() + (o * s.extent + begin) * s.inner;
                       const double* src = g.data() + o * width;
                       for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
                     }
                   });
}

Tensor broadcast(const Tensor& x, const Shape& target) {
  const Shape& src = x.shape();
  if (src.size() > target.size()) shape_error("broadcast", src, target);
  const std::size_t lead = target.size() - src.size();
  // Source stride for each target dimension; zero where the source repeats.
  std::vector<std::size_t> stride(target.size(), 0);
  std::size_t running = 1;
  for (std::size_t d = target.size(); d-- > lead;) {
    const std::size_t sd = src[d - lead];
    if (sd != target[d] && sd != 1) shape_error("broadcast", src, target);
    stride[d] = sd == 1 ? 0 : running;
    running *= sd;
  }
  const std::size_t total = shape_numel(target);
  const std::size_t src_total = x.numel();
  // Pure leading-dimension repetition is a tiling of the source.
  bool tiled = true;
  for (std::size_t d = lead; d < target.size(); ++d) tiled = tiled && src[d - lead] == target[d];
  if (tiled) {
    std::vector<double> out(total);
    const auto in = x.data();
    for (std::size_t o = 0; o < total; o += src_total) std::copy(in.begin(), in.end(), out.begin() + o);
    return record_op(OpKind::broadcast, {x}, target, std::move(out),
                     [src_total](std::span<const double> g, std::span<const double>, std::span<std::vector<double>*> gin) {
                       if (!gin[0]) return;
                       auto& dst = *gin[0];
                       for (std::size_t o = 0; o < g.size(); o += src_total)
                         for (std::size_t i = 0; i < src_total; ++i) dst[i] += g[o + i];
                     });
  }
  std::vector<std::size_t> source_index(total);
  {
    std::vector<std::size_t> counter(target.size(), 0);
    std::size_t src_flat = 0;
    for (std::size_t flat = 0; flat < total; ++flat) {
      source_index[flat] = src_flat;
      for (std::size_t d = target.size(); d-- > 0;) {
        ++counter[d];
        src_flat += stride[d];
        if (counter[d] < target[d]) break;
        src_flat -= stride[d] * counter[d];
        counter[d] = 0;
      }
    }
  }
  std::vector<double> out(total);
  const auto in = x.data();
  for (std::size_t i = 0; i < total; ++i) out[i] = in[source_index[i]];
  return record_op(OpKind::broadcast, {x}, target, std::move(out),
                   [source_index = std::move(source_index)](std::span<const double> g, std::span<const double>,
                                                            std::span<std::vector<double>*> gin) {
                     if (!gin[0]) return;
                     auto& dst = *gin[0];
                     for (std::size_t i = 0; i < g.size(); ++i) dst[source_index[i]] += g[i];
                   });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) shape_error("reshape", x.shape(), shape);
  std::vector<double> out(x.data().begin(), x.data().end());
  return record_op(OpKind::reshape, {x}, std::move(shape), std::move(out),
                   [](std::span<const double> g, std::span<const double>, std::span<std::vector<double>*> gin) {
                     if (!gin[0]) return;
                     for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                   });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) throw std::invalid_argument("softmax: needs at least one axis");
  const std::size_t width = x.shape().back();
  const std::size_t rows = width == 0 ? 0 : x.numel() / width;
  const auto in = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in.data() + r * width;
    double* dst = out.data() + r * width;
    const double peak = *std::max_element(src, src + width);
    double total = 0.0;
    for (std::size_t i = 0; i < width; ++i) total += dst[i] = std::exp(src[i] - peak);
    for (std::size_t i = 0; i < width; ++i) dst[i] /= total;
  }
  return record_op(OpKind::softmax, {x}, x.shape(), std::move(out),
                   [rows, width](std::span<const double> g, std::span<const double> probs,
                                 std::span<std::vector<double>*> gin) {
                     if (!gin[0]) return;
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double* p = probs.data() + r * width;
                       const double* gr = g.data() + r * width;
                       double dot = 0.0;
                       for (std::size_t i = 0; i < width; ++i) dot += gr[i] * p[i];
                       double* dst = gin[0]->data() + r * width;
                       for (std::size_t i = 0; i < width; ++i) dst[i] += p[i] * (gr[i] - dot);
                     }
                   });
}

Tensor stop_gradient(const Tensor& x) {
  auto out = x.detach_copy();
  out.impl_->kind = OpKind::stop_gradient;
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

void adam_step(std::span<Tensor> params, double lr, AdamState& state) {
  for (const auto& p : params)
    if (!p.has_grad()) throw std::invalid_argument("adam_step: parameter of shape " + shape_str(p.shape()) + " has no gradient");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.second_moment.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size())
    throw std::invalid_argument("adam_step: optimizer state was built for a different parameter list");

  const auto& cfg = state.config;
  ++state.step;
  const double correction1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_data();
    const auto g = params[k].grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != values.size()) throw std::invalid_argument("adam_step: parameter size changed");
    const auto n = static_cast<Eigen::Index>(values.size());
    Eigen::Map<const Eigen::ArrayXd> ga(g.data(), n);
    Eigen::Map<Eigen::ArrayXd> ma(m.data(), n), va(v.data(), n), pa(values.data(), n);
    ma = cfg.beta1 * ma + (1.0 - cfg.beta1) * ga;
    va = cfg.beta2 * va + (1.0 - cfg.beta2) * ga.square();
    pa -= lr * (ma / correction1) / ((va / correction2).sqrt() + cfg.epsilon);
    params[k].clear_grad();
  }
}

}  // namespace cpvq
