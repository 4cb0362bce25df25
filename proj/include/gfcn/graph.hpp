#pragma once

#include <cstddef>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gfcn/tensor.hpp"

namespace gfcn {

template <typename Scalar>
class Graph;

/// Handle to a node recorded on a Graph.
template <typename Scalar>
struct Var {
  Graph<Scalar>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<Scalar>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

/// Adjoints of parameter tensors, keyed by the address of the parameter's storage.
template <typename Scalar>
using GradientMap = std::unordered_map<const Tensor<Scalar>*, Tensor<Scalar>>;

/// Tape of executed operations. Nodes are appended in execution order, so the
/// reverse of the node list is a valid topological order for backward.
template <typename Scalar>
class Graph {
 public:
  using TensorT = Tensor<Scalar>;
  /// Propagates the node's output adjoint into its inputs via Graph::grad_of.
  using Backprop = std::function<void(Graph&, const TensorT& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  Var<Scalar> constant(TensorT value) { return push(std::move(value), false, nullptr, {}); }

  /// Leaf that receives a gradient but is not tied to a parameter.
  Var<Scalar> variable(TensorT value) { return push(std::move(value), true, nullptr, {}); }

  /// Leaf bound to parameter storage. Using the same tensor twice returns the
  /// same node, so shared parameters accumulate a single adjoint.
  Var<Scalar> parameter(const TensorT& param) {
    if (auto it = param_nodes_.find(&param); it != param_nodes_.end()) return {this, it->second};
    Var<Scalar> v = push(param, true, &param, {});
    param_nodes_.emplace(&param, v.id);
    return v;
  }

  /// Records an operation result. `backprop` only runs if some input needs a gradient.
  Var<Scalar> record(TensorT value, std::vector<std::size_t> inputs, Backprop backprop) {
    bool needs = false;
    for (std::size_t in : inputs) needs = needs || nodes_[in].requires_grad;
    Var<Scalar> v = push(std::move(value), needs, nullptr, std::move(backprop));
    nodes_[v.id].inputs = std::move(inputs);
    return v;
  }

  const TensorT& value(Var<Scalar> v) const { return nodes_[v.id].value; }
  const TensorT& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Adjoint accumulator for node `id`, zero-initialized on first use.
  TensorT& grad_of(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = TensorT(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  /// Adjoint of `v` after backward, or nullptr if none was accumulated.
  /// Intermediate adjoints are released unless `retain_intermediate` was set.
  const TensorT* grad(Var<Scalar> v) const {
    const Node& n = nodes_[v.id];
    return n.has_grad ? &n.grad : nullptr;
  }

  /// Reverse sweep from a scalar loss. Returns the adjoint of every parameter
  /// reachable from the loss; unreachable parameters get zero tensors.
  GradientMap<Scalar> backward(Var<Scalar> loss, bool retain_intermediate = false) {
    if (loss.graph != this) throw ContractViolation("backward: loss belongs to another graph");
    if (value(loss).size() != 1) {
      throw ContractViolation("backward: loss must be scalar, got shape " + value(loss).shape().str());
    }
    for (Node& n : nodes_) {
      n.grad = TensorT();
      n.has_grad = false;
    }
    grad_of(loss.id).array().setOnes();
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.requires_grad) continue;
      if (n.backprop) {
        // No nodes are appended during the sweep, so `n.grad` stays valid.
        n.backprop(*this, n.grad);
        if (!retain_intermediate && n.param == nullptr && !n.inputs.empty()) {
          nodes_[i].grad = TensorT();
          nodes_[i].has_grad = false;
        }
      }
    }
    GradientMap<Scalar> out;
    for (const auto& [param, id] : param_nodes_) {
      const Node& n = nodes_[id];
      out.emplace(param, n.has_grad ? n.grad : TensorT(n.value.shape()));
    }
    return out;
  }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    bool has_grad = false;
    bool requires_grad = false;
    const TensorT* param = nullptr;
    std::vector<std::size_t> inputs;
    Backprop backprop;
  };

  Var<Scalar> push(TensorT value, bool requires_grad, const TensorT* param, Backprop backprop) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.param = param;
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<const TensorT*, std::size_t> param_nodes_;
};

}  // namespace gfcn
