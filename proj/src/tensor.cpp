// SPDX-License-Identifier: Apache-2.0
#include "fg3d/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "fg3d/error.hpp"

namespace fg3d {

using detail::Node;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

void check_defined(const char* op, const Tensor& t) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

// Splits a shape around `axis` into (outer, n, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  if (s.n == 0) throw DimensionError(std::string(op) + ": empty reduction axis");
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  return out;
}

void accumulate(Node& parent, std::span<const double> delta) {
  if (!parent.requires_grad) return;
  parent.ensure_grad();
  for (std::size_t i = 0; i < delta.size(); ++i) parent.grad[i] += delta[i];
}

template <typename Fn>
Tensor unary(const Tensor& x, Fn&& forward_fn,
             std::function<double(double /*x*/, double /*y*/)> derivative) {
  check_defined("unary", x);
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward_fn(in[i]);
  return make_result(x.shape(), std::move(out), {x},
                     [derivative = std::move(derivative)](Node& self) {
                       Node& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         p.grad[i] += self.grad[i] * derivative(p.value[i], self.value[i]);
                       }
                     });
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// --- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
  const std::size_t n = rows.size();
  const std::size_t m = n ? rows.begin()->size() : 0;
  std::vector<double> values;
  for (const auto& r : rows) {
    if (r.size() != m) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), r.begin(), r.end());
  }
  return from({n, m}, std::move(values), requires_grad);
}

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
  return from({values.size()}, std::vector<double>(values), requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (!node_ || node_->grad.empty()) return std::vector<double>(node_ ? numel() : 0, 0.0);
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach(bool requires_grad) const {
  return from(shape(), node_->value, requires_grad);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

// --- graph ---------------------------------------------------------------

std::vector<Node*> topological_order(const Tensor& root) {
  std::vector<Node*> order;
  if (!root.requires_grad()) return order;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS; graphs from long unrolls get deep.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void backward(const Tensor& loss) {
  check_defined("backward", loss);
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss is not connected to a recorded graph");
  }
  const auto order = topological_order(loss);
  Node* root = loss.node();
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

// --- elementwise ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    accumulate(*self.parents[0], self.grad);
    accumulate(*self.parents[1], self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    accumulate(*self.parents[0], self.grad);
    Node& b = *self.parents[1];
    if (!b.requires_grad) return;
    b.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) b.grad[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& a = *self.parents[0];
    Node& b = *self.parents[1];
    if (a.requires_grad) {
      a.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) a.grad[i] += self.grad[i] * b.value[i];
    }
    if (b.requires_grad) {
      b.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) b.grad[i] += self.grad[i] * a.value[i];
    }
  });
}

Tensor scale(const Tensor& x, double c) {
  return unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor abs(const Tensor& x) {
  return unary(x, [](double v) { return std::fabs(v); },
               [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor smooth_l1(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        const double a = std::fabs(v);
        return a < 1.0 ? 0.5 * v * v : a - 0.5;
      },
      [](double v, double) { return std::fabs(v) < 1.0 ? v : (v > 0.0 ? 1.0 : -1.0); });
}

// --- linear algebra ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined("matmul", a);
  check_defined("matmul", b);
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  MapMat(out.data(), m, n).noalias() =
      ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& a = *self.parents[0];
    Node& b = *self.parents[1];
    ConstMapMat g(self.grad.data(), m, n);
    if (a.requires_grad) {
      a.ensure_grad();
      MapMat(a.grad.data(), m, k).noalias() += g * ConstMapMat(b.value.data(), k, n).transpose();
    }
    if (b.requires_grad) {
      b.ensure_grad();
      MapMat(b.grad.data(), k, n).noalias() += ConstMapMat(a.value.data(), m, k).transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& a) {
  check_defined("transpose", a);
  if (a.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  MapMat(out.data(), n, m) = ConstMapMat(a.data().data(), m, n).transpose();
  return make_result({n, m}, std::move(out), {a}, [m, n](Node& self) {
    Node& a = *self.parents[0];
    if (!a.requires_grad) return;
    a.ensure_grad();
    MapMat(a.grad.data(), m, n) += ConstMapMat(self.grad.data(), n, m).transpose();
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  check_defined("linear", x);
  check_defined("linear", w);
  const bool vector_input = x.rank() == 1;
  if (w.rank() != 2 || (x.rank() != 1 && x.rank() != 2) ||
      x.shape().back() != w.dim(1)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
  }
  const std::size_t rows = vector_input ? 1 : x.dim(0);
  const std::size_t in = w.dim(1), outd = w.dim(0);
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != outd) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(w.shape()));
  }
  std::vector<double> out(rows * outd);
  MapMat o(out.data(), rows, outd);
  o.noalias() = ConstMapMat(x.data().data(), rows, in) *
                ConstMapMat(w.data().data(), outd, in).transpose();
  if (has_bias) {
    o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), outd);
  }
  Shape shape = vector_input ? Shape{outd} : Shape{rows, outd};
  std::vector<Tensor> parents{x, w};
  if (has_bias) parents.push_back(bias);
  return make_result(std::move(shape), std::move(out), std::move(parents),
                     [rows, in, outd, has_bias](Node& self) {
                       Node& x = *self.parents[0];
                       Node& w = *self.parents[1];
                       ConstMapMat g(self.grad.data(), rows, outd);
                       if (x.requires_grad) {
                         x.ensure_grad();
                         MapMat(x.grad.data(), rows, in).noalias() +=
                             g * ConstMapMat(w.value.data(), outd, in);
                       }
                       if (w.requires_grad) {
                         w.ensure_grad();
                         MapMat(w.grad.data(), outd, in).noalias() +=
                             g.transpose() * ConstMapMat(x.value.data(), rows, in);
                       }
                       if (has_bias && self.parents[2]->requires_grad) {
                         Node& b = *self.parents[2];
                         b.ensure_grad();
                         // Plain loops: Eigen's vectorized reductions peel by
                         // pointer alignment, which makes sums run-dependent.
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < outd; ++j) b.grad[j] += self.grad[r * outd + j];
                         }
                       }
                     });
}

Tensor add_row(const Tensor& x, const Tensor& row_vec) {
  check_defined("add_row", x);
  check_defined("add_row", row_vec);
  if (x.rank() != 2 || row_vec.numel() != x.dim(1)) {
    throw DimensionError("add_row: cannot broadcast " + shape_str(row_vec.shape()) + " over " +
                         shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] + row_vec[j];
  }
  return make_result(x.shape(), std::move(out), {x, row_vec}, [n, d](Node& self) {
    accumulate(*self.parents[0], self.grad);
    Node& r = *self.parents[1];
    if (!r.requires_grad) return;
    r.ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) r.grad[j] += self.grad[i * d + j];
    }
  });
}

// --- shape ---------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  check_defined("reshape", x);
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return make_result(std::move(shape), x.to_vector(), {x},
                     [](Node& self) { accumulate(*self.parents[0], self.grad); });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<double> out;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    check_defined("concat", p);
    if (p.rank() == 0 || Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
      throw DimensionError("concat: incompatible part " + shape_str(p.shape()) + " vs " +
                           shape_str(parts[0].shape()));
    }
    offsets.push_back(out.size());
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Shape shape = tail;
  shape.insert(shape.begin(), rows);
  return make_result(std::move(shape), std::move(out), parts,
                     [offsets = std::move(offsets)](Node& self) {
                       for (std::size_t i = 0; i < self.parents.size(); ++i) {
                         Node& p = *self.parents[i];
                         accumulate(p, std::span<const double>(self.grad).subspan(
                                           offsets[i], p.value.size()));
                       }
                     });
}

Tensor stack(const std::vector<Tensor>& parts) {
  std::vector<Tensor> rows;
  rows.reserve(parts.size());
  for (const auto& p : parts) {
    check_defined("stack", p);
    Shape shape = p.shape();
    shape.insert(shape.begin(), 1);
    rows.push_back(reshape(p, std::move(shape)));
  }
  return concat(rows);
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  check_defined("gather_rows", x);
  if (x.rank() == 0) throw DimensionError("gather_rows: scalar input");
  if (rows.empty()) throw DimensionError("gather_rows: no rows selected");
  const std::size_t stride = x.numel() / x.dim(0);
  std::vector<double> out;
  out.reserve(rows.size() * stride);
  for (std::size_t r : rows) {
    if (r >= x.dim(0)) {
      throw DimensionError("gather_rows: row " + std::to_string(r) + " out of range for " +
                           shape_str(x.shape()));
    }
    out.insert(out.end(), x.data().begin() + r * stride, x.data().begin() + (r + 1) * stride);
  }
  Shape shape = x.shape();
  shape[0] = rows.size();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result(std::move(shape), std::move(out), {x},
                     [idx = std::move(idx), stride](Node& self) {
                       Node& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t j = 0; j < stride; ++j) {
                           p.grad[idx[i] * stride + j] += self.grad[i * stride + j];
                         }
                       }
                     });
}

Tensor row(const Tensor& x, std::size_t index) {
  const std::size_t rows[] = {index};
  Tensor picked = gather_rows(x, rows);
  return reshape(picked, Shape(x.shape().begin() + 1, x.shape().end()));
}

// --- reductions ----------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  check_defined("softmax", x);
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  const auto in = x.data();
  for (double v : in) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  }
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double mx = in[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, in[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(in[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= total;
    }
  }
  return make_result(x.shape(), std::move(out), {x}, [s](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) {
          dot += self.grad[base + j * s.inner] * self.value[base + j * s.inner];
        }
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t k = base + j * s.inner;
          p.grad[k] += self.value[k] * (self.grad[k] - dot);
        }
      }
    }
  });
}

Tensor reduce_max(const Tensor& x, std::size_t axis) {
  check_defined("reduce_max", x);
  const AxisSplit s = split_axis(x.shape(), axis, "reduce_max");
  const auto in = x.data();
  std::vector<double> out(s.outer * s.inner);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      std::size_t best = base;
      for (std::size_t j = 1; j < s.n; ++j) {
        const std::size_t k = base + j * s.inner;
        if (in[k] > in[best]) best = k;  // strict: first maximum wins
      }
      out[o * s.inner + i] = in[best];
      arg[o * s.inner + i] = best;
    }
  }
  return make_result(drop_axis(x.shape(), axis), std::move(out), {x},
                     [arg = std::move(arg)](Node& self) {
                       Node& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (std::size_t i = 0; i < arg.size(); ++i) p.grad[arg[i]] += self.grad[i];
                     });
}

Tensor reduce_sum(const Tensor& x, std::size_t axis) {
  check_defined("reduce_sum", x);
  const AxisSplit s = split_axis(x.shape(), axis, "reduce_sum");
  const auto in = x.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.n; ++j) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        out[o * s.inner + i] += in[(o * s.n + j) * s.inner + i];
      }
    }
  }
  return make_result(drop_axis(x.shape(), axis), std::move(out), {x}, [s](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t j = 0; j < s.n; ++j) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          p.grad[(o * s.n + j) * s.inner + i] += self.grad[o * s.inner + i];
        }
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  check_defined("sum", x);
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({}, {total}, {x}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (double& g : p.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor cross_entropy(const Tensor& p, const Tensor& target) {
  check_defined("cross_entropy", p);
  check_defined("cross_entropy", target);
  check_same_shape("cross_entropy", p, target);
  double loss = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    if (target[i] != 0.0) loss -= target[i] * std::log(std::max(p[i], kLogClamp));
  }
  return make_result({}, {loss}, {p, target}, [](Node& self) {
    Node& p = *self.parents[0];
    Node& t = *self.parents[1];
    const double g = self.grad[0];
    if (p.requires_grad) {
      p.ensure_grad();
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        if (p.value[i] > kLogClamp) p.grad[i] -= g * t.value[i] / p.value[i];
      }
    }
    if (t.requires_grad) {
      t.ensure_grad();
      for (std::size_t i = 0; i < t.value.size(); ++i) {
        t.grad[i] -= g * std::log(std::max(p.value[i], kLogClamp));
      }
    }
  });
}

// --- convolution ---------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  check_defined("conv2d", x);
  check_defined("conv2d", w);
  if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != x.dim(0) || w.dim(2) != w.dim(3)) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                         shape_str(w.shape()));
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  const std::size_t c_in = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t c_out = w.dim(0), k = w.dim(2);
  if (k > h + 2 * pad || k > wd + 2 * pad) {
    throw DimensionError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                         shape_str(x.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != c_out) {
    throw DimensionError("conv2d: bias size " + std::to_string(bias.numel()) + " != " +
                         std::to_string(c_out));
  }
  const std::size_t oh = (h + 2 * pad - k) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - k) / stride + 1;
  const std::size_t patch = c_in * k * k, pixels = oh * ow;

  // im2col: cols[patch × pixels]
  std::vector<double> cols(patch * pixels, 0.0);
  const auto in = x.data();
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* dst = cols.data() + ((c * k + ki) * k + kj) * pixels;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
            dst[oy * ow + ox] = in[(c * h + iy) * wd + ix];
          }
        }
      }
    }
  }
  std::vector<double> out(c_out * pixels);
  MapMat o(out.data(), c_out, pixels);
  o.noalias() = ConstMapMat(w.data().data(), c_out, patch) * ConstMapMat(cols.data(), patch, pixels);
  if (has_bias) o.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.data().data(), c_out);

  std::vector<Tensor> parents{x, w};
  if (has_bias) parents.push_back(bias);
  const bool keep_cols = grad_enabled() && (w.requires_grad() || x.requires_grad());
  return make_result(
      {c_out, oh, ow}, std::move(out), std::move(parents),
      [cols = keep_cols ? std::move(cols) : std::vector<double>{}, c_in, h, wd, c_out, k, oh, ow,
       stride, pad, patch, pixels, has_bias](Node& self) {
        Node& x = *self.parents[0];
        Node& w = *self.parents[1];
        ConstMapMat g(self.grad.data(), c_out, pixels);
        if (w.requires_grad) {
          w.ensure_grad();
          MapMat(w.grad.data(), c_out, patch).noalias() +=
              g * ConstMapMat(cols.data(), patch, pixels).transpose();
        }
        if (has_bias && self.parents[2]->requires_grad) {
          Node& b = *self.parents[2];
          b.ensure_grad();
          for (std::size_t c = 0; c < c_out; ++c) {
            double acc = 0.0;
            for (std::size_t p = 0; p < pixels; ++p) acc += self.grad[c * pixels + p];
            b.grad[c] += acc;
          }
        }
        if (x.requires_grad) {
          x.ensure_grad();
          RowMat dcols = ConstMapMat(w.value.data(), c_out, patch).transpose() * g;
          for (std::size_t c = 0; c < c_in; ++c) {
            for (std::size_t ki = 0; ki < k; ++ki) {
              for (std::size_t kj = 0; kj < k; ++kj) {
                const double* src = dcols.data() + ((c * k + ki) * k + kj) * pixels;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                  const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                                            static_cast<std::ptrdiff_t>(pad);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                  for (std::size_t ox = 0; ox < ow; ++ox) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                                              static_cast<std::ptrdiff_t>(pad);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                    x.grad[(c * h + iy) * wd + ix] += src[oy * ow + ox];
                  }
                }
              }
            }
          }
        }
      });
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  check_defined("max_pool2d", x);
  if (x.rank() != 3) throw DimensionError("max_pool2d: expected C×H×W, got " + shape_str(x.shape()));
  if (kernel == 0 || stride == 0 || kernel > x.dim(1) || kernel > x.dim(2)) {
    throw DimensionError("max_pool2d: window " + std::to_string(kernel) + " does not fit " +
                         shape_str(x.shape()));
  }
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  const auto in = x.data();
  std::vector<double> out(c * oh * ow);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (ch * h + oy * stride) * w + ox * stride;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t idx = (ch * h + oy * stride + ky) * w + ox * stride + kx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (ch * oh + oy) * ow + ox;
        out[o] = in[best];
        arg[o] = best;
      }
    }
  }
  return make_result({c, oh, ow}, std::move(out), {x}, [arg = std::move(arg)](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < arg.size(); ++i) p.grad[arg[i]] += self.grad[i];
  });
}

}  // namespace fg3d
