#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "scanet/error.hpp"

namespace scanet::nk {

/// Dense row-major matrix of doubles. Vectors are 1 x n.
class Array {
 public:
  Array() = default;
  Array(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Array(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows_ * cols_) throw DimensionError("Array: value count does not match shape");
  }

  static Array row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Array(1, n, std::move(values));
  }
  static Array scalar(double v) { return Array(1, 1, v); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  bool same_shape(const Array& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* row_ptr(std::size_t r) { return data_.data() + r * cols_; }
  const double* row_ptr(std::size_t r) const { return data_.data() + r * cols_; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  /// Elementwise this += scale * other.
  void add_scaled(const Array& other, double scale = 1.0) {
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  friend bool operator==(const Array&, const Array&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(const Array& a) {
  return "[" + std::to_string(a.rows()) + " x " + std::to_string(a.cols()) + "]";
}

/// C (+)= op(A) * op(B) for row-major matrices.
inline void gemm(const Array& a, bool trans_a, const Array& b, bool trans_b, Array& c,
                 bool accumulate) {
  const std::size_t m = trans_a ? a.cols() : a.rows();
  const std::size_t k = trans_a ? a.rows() : a.cols();
  const std::size_t kb = trans_b ? b.cols() : b.rows();
  const std::size_t n = trans_b ? b.rows() : b.cols();
  if (k != kb || c.rows() != m || c.cols() != n) throw DimensionError("gemm: incompatible shapes");
  if (!accumulate) c.fill(0.0);
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = c.row_ptr(i);
      const double* ai = a.row_ptr(i);
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ai[p];
        const double* bp = b.row_ptr(p);
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else if (!trans_a && trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = a.row_ptr(i);
      double* ci = c.row_ptr(i);
      for (std::size_t j = 0; j < n; ++j) {
        const double* bj = b.row_ptr(j);
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
        ci[j] += s;
      }
    }
  } else if (trans_a && !trans_b) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* ap = a.row_ptr(p);
      const double* bp = b.row_ptr(p);
      for (std::size_t i = 0; i < m; ++i) {
        const double av = ap[i];
        if (av == 0.0) continue;
        double* ci = c.row_ptr(i);
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = c.row_ptr(i);
      for (std::size_t j = 0; j < n; ++j) {
        const double* bj = b.row_ptr(j);
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a(p, i) * bj[p];
        ci[j] += s;
      }
    }
  }
}

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// Graph node: value, lazily allocated gradient, and the closure that pushes
/// this node's gradient into its parents.
struct Node {
  Array value;
  Array grad;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;

  Array& ensure_grad() {
    if (!grad.same_shape(value)) grad = Array(value.rows(), value.cols());
    return grad;
  }
};

/// Handle to a node of the reverse-mode graph. Copies share the node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Array value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Array& value() const { return node_->value; }
  Array& mutable_value() { return node_->value; }
  const Array& grad() const { return node_->ensure_grad(); }
  Array& mutable_grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_->requires_grad; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  std::size_t numel() const { return node_->value.size(); }
  std::vector<std::size_t> shape() const { return node_->value.shape(); }
  double item() const {
    if (numel() != 1) throw DimensionError("item() on non-scalar " + shape_str(value()));
    return node_->value[0];
  }
  const NodePtr& node() const { return node_; }

  void zero_grad() {
    if (node_->requires_grad) node_->ensure_grad().fill(0.0);
  }

  /// Reverse sweep from this (scalar) node; gradients accumulate into every
  /// reachable node that requires them.
  void backward() const {
    if (numel() != 1) throw DimensionError("backward() requires a scalar root");
    backward(Array::scalar(1.0));
  }

  void backward(const Array& seed) const {
    if (!node_->requires_grad) return;
    if (!seed.same_shape(node_->value)) throw DimensionError("backward seed shape mismatch");
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node* p = n->parents[next++].get();
        if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    // Interior gradients restart from zero on every pass; leaves accumulate.
    for (Node* n : order) {
      if (n->backward && n->grad.size() != 0) n->grad.fill(0.0);
    }
    node_->ensure_grad().add_scaled(seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward) n->backward(*n);
    }
  }

 private:
  NodePtr node_;
};

inline bool& grad_disabled_flag() {
  thread_local bool disabled = false;
  return disabled;
}

/// While alive, new results record no graph (inference and scoring passes).
class NoGradGuard {
 public:
  NoGradGuard() : saved_(grad_disabled_flag()) { grad_disabled_flag() = true; }
  ~NoGradGuard() { grad_disabled_flag() = saved_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

inline void check_finite(const Array& a, const char* op) {
  if (!a.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
}

/// Wraps a computed value into a graph node. The backward closure is recorded
/// only when some parent requires gradients.
inline Tensor make_result(Array value, std::vector<Tensor> parents, const char* op,
                          std::function<void(Node&)> backward) {
  check_finite(value, op);
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool any = false;
  if (!grad_disabled_flag()) {
    for (const auto& p : parents) any = any || p.requires_grad();
  }
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

/// Leaf that never receives gradients.
inline Tensor constant(Array value) { return Tensor(std::move(value), false); }

/// Same value, cut from the graph.
inline Tensor detach(const Tensor& t) { return constant(t.value()); }

}  // namespace scanet::nk
