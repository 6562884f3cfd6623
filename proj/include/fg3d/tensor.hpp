// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode automatic differentiation over dense row-major
// float64 arrays. Every op records its parents and a backward closure on the
// output node; backward() walks the recorded graph in reverse topological
// order. The graph is rebuilt on every forward pass.
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fg3d {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Row-major matrix literal, handy in tests.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);
  static Tensor vector(std::initializer_list<double> values,
                       bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  /// Mutable access for leaves (optimizers, finite-difference probes).
  std::span<double> mutable_data() { return node_->value; }
  std::vector<double> to_vector() const { return node_->value; }
  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  /// Gradient values; all-zero if nothing was accumulated.
  std::vector<double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Copy of the values as a fresh leaf, detached from any graph.
  Tensor detach(bool requires_grad = false) const;

  detail::Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const noexcept { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape, std::vector<double>,
                            std::vector<Tensor>,
                            std::function<void(detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

/// True unless a NoGradGuard is alive on this thread.
bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op output. The backward closure is attached only when grad
/// mode is on and some parent requires grad; it receives the output node
/// (with its grad populated) and must accumulate into parent grads.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward);

// --- graph ---------------------------------------------------------------

/// Nodes reachable from `root` that take part in differentiation, in a
/// valid execution (topological) order.
std::vector<detail::Node*> topological_order(const Tensor& root);

/// Accumulates dLoss/dT into every requires_grad tensor reachable from loss.
void backward(const Tensor& loss);

// --- elementwise ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor abs(const Tensor& x);
/// Huber-style smooth L1 with unit transition.
Tensor smooth_l1(const Tensor& x);

// --- linear algebra ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// x[n×in] · wᵀ + bias, with w stored [out×in] and bias [out] (optional).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});
/// Adds a length-d vector to every row of an n×d matrix.
Tensor add_row(const Tensor& x, const Tensor& row);

// --- shape ---------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
/// Concatenates along axis 0; trailing dimensions must agree.
Tensor concat(const std::vector<Tensor>& parts);
/// Stacks equally-shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor row(const Tensor& x, std::size_t index);

// --- reductions ----------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis);
/// Removes `axis`; ties route the gradient to the lowest index.
Tensor reduce_max(const Tensor& x, std::size_t axis);
Tensor reduce_sum(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// -Σ target·log(max(p, 1e-12)) over all elements.
Tensor cross_entropy(const Tensor& p, const Tensor& target);
inline constexpr double kLogClamp = 1e-12;

// --- convolution ---------------------------------------------------------

/// Cross-correlation of x[C×H×W] with w[O×C×k×k], optional bias[O].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::size_t stride, std::size_t pad);
/// Floor-mode max pooling over x[C×H×W].
Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);

}  // namespace fg3d
