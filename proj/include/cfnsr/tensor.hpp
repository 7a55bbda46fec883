// SPDX-License-Identifier: Apache-2.0
/**
 * @file   tensor.hpp
 * @brief  Dense 64-bit tensor with a reverse-mode gradient tape.
 *
 * Every differentiable operation produces a node that keeps references to
 * its inputs and a backward rule. Calling backward() on a scalar linearises
 * the recorded graph into a tape (inputs before outputs), sweeps it once in
 * reverse and then releases the interior of the graph.
 */
#ifndef CFNSR_TENSOR_HPP_
#define CFNSR_TENSOR_HPP_

#include <cmath>
#include <cstddef>
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

namespace cfnsr {

/// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid hyper-parameter or configuration value.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Operation requested in a state that cannot serve it.
class StateError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// Caller broke an API contract (e.g. backward on a non-scalar).
class ContractError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// NaN or Inf reached an operation boundary.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad; // empty until first accumulation
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node &)> backward;

  /// Gradient buffer of this node, allocated to zeros on first use.
  std::vector<double> &grad_buffer() {
    if (grad.empty())
      grad.assign(data.size(), 0.0);
    return grad;
  }
};

inline bool &grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline void check_finite(const std::vector<double> &data,
                         const std::string &op) {
  for (double v : data)
    if (!std::isfinite(v))
      throw NumericError(op + ": produced a non-finite value");
}

} // namespace detail

/// True while operations record onto the gradient tape (per thread).
inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables tape recording for the lifetime of the guard.
class NoGradGuard {
public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
  bool previous_;
};

class Tensor {
public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false) {
    if (numel(shape) != values.size())
      throw DimensionError("tensor: shape " + to_string(shape) + " holds " +
                           std::to_string(numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    for (std::size_t e : shape)
      if (e == 0)
        throw DimensionError("tensor: zero extent in shape " +
                             to_string(shape));
    detail::check_finite(values, "tensor");
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    std::vector<double> values(numel(shape), value);
    return from(std::move(shape), std::move(values), requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 0.0, requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from({}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape &shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }

  std::span<const double> data() const { return node_->data; }

  /// Writable view for parameter updates and in-place initialisation.
  /// Only leaves may be written; interior values feed recorded rules.
  std::span<double> mutable_data() {
    if (node_->backward)
      throw ContractError("tensor: cannot write into an interior node (" +
                          node_->op + ")");
    return node_->data;
  }

  double item() const {
    if (size() != 1)
      throw ContractError("tensor: item() on tensor of shape " +
                          to_string(shape()));
    return node_->data[0];
  }

  double operator[](std::size_t i) const { return node_->data.at(i); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient (all zeros if nothing has been accumulated yet).
  std::vector<double> grad() const {
    if (node_->grad.empty())
      return std::vector<double>(size(), 0.0);
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// Leaf copy that does not participate in any tape.
  Tensor detach() const {
    auto node = std::make_shared<detail::Node>();
    node->shape = node_->shape;
    node->data = node_->data;
    return Tensor(std::move(node));
  }

  const std::string &op_name() const { return node_->op; }

  void backward() const;

  explicit Tensor(std::shared_ptr<detail::Node> node)
      : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node> &node() const { return node_; }

private:
  std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered list of the interior nodes reachable from a root.
class Tape {
public:
  static Tape record(const Tensor &root) {
    Tape tape;
    if (!root.defined() || !root.node()->backward)
      return tape;
    std::unordered_set<const detail::Node *> seen;
    // Iterative post-order DFS: a node is emitted after all of its inputs.
    std::vector<std::pair<detail::Node *, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
      auto &[node, next] = stack.back();
      if (next < node->inputs.size()) {
        detail::Node *child = node->inputs[next++].get();
        if (child->backward && seen.insert(child).second)
          stack.emplace_back(child, 0);
        continue;
      }
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
    return tape;
  }

  std::span<detail::Node *const> nodes() const { return nodes_; }

  /// Reverse sweep; every node is visited exactly once. Consumes the graph.
  void run() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      detail::Node &node = **it;
      if (!node.grad.empty())
        node.backward(node);
    }
    for (detail::Node *node : nodes_) {
      node->backward = nullptr;
      node->inputs.clear();
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
    nodes_.clear();
  }

private:
  std::vector<detail::Node *> nodes_;
};

inline void Tensor::backward() const {
  if (size() != 1)
    throw ContractError("backward: loss must be a scalar, got shape " +
                        to_string(shape()));
  if (!node_->requires_grad)
    return;
  Tape tape = Tape::record(*this);
  node_->grad_buffer()[0] += 1.0;
  tape.run();
}

namespace detail {

/// Builds an op result. The tape entry is recorded only when grad mode is on
/// and at least one input requires gradients.
inline Tensor make_result(std::string op, Shape shape,
                          std::vector<double> values,
                          std::vector<Tensor> const &inputs,
                          std::function<void(Node &)> backward) {
  check_finite(values, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->op = std::move(op);
  bool any = false;
  for (const Tensor &in : inputs)
    any = any || in.requires_grad();
  if (any && grad_enabled()) {
    node->requires_grad = true;
    for (const Tensor &in : inputs)
      node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

/// Gradient buffer of input `i`, or nullptr when it does not need one.
inline double *input_grad(Node &self, std::size_t i) {
  Node &in = *self.inputs[i];
  if (!in.requires_grad)
    return nullptr;
  return in.grad_buffer().data();
}

} // namespace detail

} // namespace cfnsr

#endif // CFNSR_TENSOR_HPP_
