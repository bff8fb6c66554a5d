#pragma once

// Minimal reverse-mode automatic differentiation over dense float64 arrays.
//
// A Tensor is a shared handle to a graph node. Operations in ops.hpp create
// new nodes that remember their inputs and a closure that pushes the output
// gradient back into them. backward() on a scalar runs those closures in
// reverse topological order. Parameters are leaf nodes created with
// Tensor::parameter; their gradients accumulate across backward calls until
// zero_grad().

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hts/error.hpp"

namespace hts {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

namespace detail {

struct Node {
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient arrives
  Shape shape;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  bool requires_grad = false;
  bool is_parameter = false;
  bool reached = false;  // parameter received a gradient since the last zero_grad

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape) {
    const std::size_t n = shape_numel(shape);
    return constant(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor scalar(double v) { return constant({}, {v}); }

  static Tensor parameter(Shape shape, std::vector<double> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    t.node_->is_parameter = true;
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }
  // Leading dimension; rows of a matrix, batch size of an image stack.
  std::size_t rows() const { return rank() == 0 ? 1 : node_->shape[0]; }
  // Product of trailing dimensions.
  std::size_t row_size() const { return rank() == 0 ? 1 : numel() / node_->shape[0]; }

  std::span<const double> data() const { return node_->value; }
  // Only parameters (and buffers held outside the graph) should be mutated.
  std::span<double> mutable_data() { return node_->value; }
  std::span<const double> row(std::size_t r) const {
    return data().subspan(r * row_size(), row_size());
  }
  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  double at(std::size_t i) const { return node_->value.at(i); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_parameter() const { return node_ && node_->is_parameter; }
  bool reached() const { return node_ && node_->reached; }

  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }

  void zero_grad() {
    node_->grad.clear();
    node_->reached = false;
  }

  // Back-propagates d(this)/d(leaf) * scale into every reachable leaf that
  // requires a gradient. `this` must hold a single element.
  void backward(double scale = 1.0) const;

  // Identity check, used to confirm no-copy pass-through paths.
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Creates an op result. When no input needs a gradient (or recording is
// disabled) the node is a plain constant and the closure is dropped.
inline Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// Gradient sink for input `i` of `self`, or nullptr when that input is
// constant.
inline std::vector<double>* input_grad(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

inline const std::vector<double>& input_value(const Node& self, std::size_t i) {
  return self.inputs[i]->value;
}

}  // namespace detail

inline void Tensor::backward(double scale) const {
  if (numel() != 1) throw ShapeError("backward() needs a scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += scale;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->is_parameter) {
      node->reached = true;
      continue;
    }
    if (node->backward && !node->grad.empty()) node->backward(*node);
    // Intermediate gradients are not needed once propagated.
    if (node != node_.get()) std::vector<double>().swap(node->grad);
  }
  if (!node_->is_parameter) std::vector<double>().swap(node_->grad);
}

}  // namespace hts
