// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a graph node. Nodes produced while gradient
// recording is enabled and at least one input requires a gradient keep their
// parents and a backward closure; everything else is a plain value.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace tt {

using Shape = std::vector<std::size_t>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::uint64_t id = 0;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() : Tensor(Shape{0}, std::vector<double>{}) {}

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (tt::numel(shape) != values.size()) {
      throw DimensionError("tensor shape " + to_string(shape) + " holds " +
                           std::to_string(tt::numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->id = detail::next_node_id();
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double v) {
    const std::size_t n = tt::numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
  }
  static Tensor parameter(Shape shape, std::vector<double> values) {
    return Tensor(std::move(shape), std::move(values), true);
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  // Matrix view: rank-0 and rank-1 tensors read as a single row.
  std::size_t rows() const { return rank() == 2 ? shape()[0] : 1; }
  std::size_t cols() const {
    if (rank() == 2) return shape()[1];
    return rank() == 1 ? shape()[0] : 1;
  }

  std::span<const double> values() const { return node_->value; }
  // Only for leaves: optimizers and initializers write parameters in place.
  std::span<double> mutable_values() {
    if (!node_->parents.empty()) throw std::logic_error("mutable_values on a non-leaf tensor");
    return node_->value;
  }

  double item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Zeros when no gradient has reached this tensor yet.
  std::vector<double> grad() const {
    return has_grad() ? node_->grad : std::vector<double>(numel(), 0.0);
  }
  void zero_grad() { node_->grad.clear(); }

  // Same values, no graph attachment.
  Tensor detach() const { return Tensor(shape(), node_->value); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

inline void check_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericalError(std::string(what) + " produced a non-finite value");
  }
}

// Builds the output node of an op. Parents and the backward closure are kept
// only when recording is on and some parent needs a gradient.
inline Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                          std::vector<Tensor> parents,
                          std::function<void(detail::Node&)> backward) {
  check_finite(values, op);
  Tensor out(std::move(shape), std::move(values));
  const bool needs = detail::grad_mode() &&
                     std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor& p) { return p.requires_grad(); });
  if (needs) {
    auto& node = *out.node();
    node.requires_grad = true;
    node.op = op;
    node.parents.reserve(parents.size());
    for (auto& p : parents) node.parents.push_back(p.node());
    node.backward = std::move(backward);
  }
  return out;
}

// Accumulates d(root)/d(x) into every reachable tensor that requires a
// gradient. Nodes are visited in decreasing creation order, which is a valid
// reverse topological order and makes accumulation deterministic. Interior
// nodes release their parents afterwards; leaf gradients persist until
// zero_grad().
inline void backward(const Tensor& root) {
  if (root.numel() != 1) {
    throw DimensionError("backward() needs a scalar root, got shape " + to_string(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Owning references keep every node alive until the release loop is done.
  std::vector<std::shared_ptr<detail::Node>> order;
  std::vector<std::shared_ptr<detail::Node>> stack{root.node()};
  std::unordered_set<const detail::Node*> seen;
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(n.get()).second) continue;
    for (auto& p : n->parents) {
      if (p->requires_grad) stack.push_back(p);
    }
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->id > b->id; });

  root.node()->grad_buffer()[0] += 1.0;
  for (auto& n : order) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (auto& n : order) {
    if (!n->parents.empty()) {
      n->backward = nullptr;
      n->parents.clear();
      n->grad.clear();
    } else {
      check_finite(n->grad, "backward");
    }
  }
}

}  // namespace tt
