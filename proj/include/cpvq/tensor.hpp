// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cpvq {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Every operation the differentiation engine knows how to record.
enum class OpKind {
  leaf,
  add,
  sub,
  mul,
  matmul,
  affine,
  affine_relu,
  relu,
  tanh,
  max_axis,
  mean_axis,
  sum_axis,
  concat,
  slice,
  broadcast,
  square,
  sqrt,
  exp,
  softmax,
  stop_gradient,
  reshape,
  scale,
  custom,
};

std::string_view op_name(OpKind kind);

/// Accumulates into the gradient buffers of the inputs. `out` holds the
/// op's forward values; `grad_in[i]` is null when input i does not take part
/// in differentiation.
using BackwardFn = std::function<void(std::span<const double> grad_out, std::span<const double> out,
                                      std::span<std::vector<double>*> grad_in)>;

namespace detail {
struct TensorImpl;
}

/// Dense row-major tensor of doubles. Copies share storage and graph
/// position, the way a handle to a node in an autodiff graph does.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Direct write access. Only meaningful for leaves; mutating a tensor that
  /// was already consumed by a recorded op does not update its consumers.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  /// Sets the gradient buffer to zeros, allocating it if absent.
  void zero_grad();
  void clear_grad();

  OpKind op() const;
  /// Inputs recorded for this tensor's producing op (empty for leaves).
  std::vector<Tensor> inputs() const;

  /// Deep copy of values only; the result is a fresh leaf.
  Tensor detach_copy() const;

  bool same_node(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl);
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor record_op(OpKind, std::vector<Tensor>, Shape, std::vector<double>, BackwardFn);
  friend void backward(const Tensor& loss);
  friend std::vector<OpKind> tape_of(const Tensor& root);
  friend Tensor stop_gradient(const Tensor& x);
};

/// Records `kind` with the given forward values. When gradient mode is off,
/// or no input requires a gradient, the result is a plain leaf.
Tensor record_op(OpKind kind, std::vector<Tensor> inputs, Shape shape,
                 std::vector<double> values, BackwardFn backward_fn);

/// Disables recording for its lifetime. Thread-local.
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

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor scale(const Tensor& x, double factor);

/// (n, k) x (k, m) -> (n, m).
Tensor matmul(const Tensor& a, const Tensor& b);
/// x * w + bias, with bias of shape (m) added to every row: (n, k) x (k, m) -> (n, m).
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& bias);
/// relu(affine(x, w, bias)) as one op, without storing the pre-activation.
Tensor affine_relu(const Tensor& x, const Tensor& w, const Tensor& bias);

// Reductions drop `axis` from the shape; reducing a rank-1 tensor yields a
// rank-0 scalar. max_axis breaks ties by the lowest index.
Tensor max_axis(const Tensor& x, std::size_t axis);
Tensor mean_axis(const Tensor& x, std::size_t axis);
Tensor sum_axis(const Tensor& x, std::size_t axis);
/// Sum of every element, as a scalar.
Tensor sum_all(const Tensor& x);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
/// Right-aligned expansion: each source dimension equals the target's or is 1,
/// and missing leading dimensions are added.
Tensor broadcast(const Tensor& x, const Shape& target);
Tensor reshape(const Tensor& x, Shape shape);
/// Softmax over the last axis.
Tensor softmax(const Tensor& x);
/// Identity forward, no gradient. The output is a leaf.
Tensor stop_gradient(const Tensor& x);

/// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls
/// until cleared; intermediate gradients are reset at the start of each call.
void backward(const Tensor& loss);

/// Kinds of the ops reachable from `root`, in recording (topological) order.
std::vector<OpKind> tape_of(const Tensor& root);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-parameter first and second moments, keyed by position in the
/// parameter list handed to adam_step.
struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update, then clears the gradients.
/// Throws std::invalid_argument if a parameter carries no gradient.
void adam_step(std::span<Tensor> params, double lr, AdamState& state);

}  // namespace cpvq
