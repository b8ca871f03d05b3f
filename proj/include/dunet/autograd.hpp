#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dunet/common.hpp"
#include "dunet/tensor.hpp"

namespace dunet {

// ---------------------------------------------------------------------------
// Reverse-mode differentiation over a dynamically built graph.
// ---------------------------------------------------------------------------
//
// Each Var is a shared handle to a node holding a value tensor (with its
// gradient buffer), the list of parent nodes and a pull-back closure that
// scatters the node's gradient into the parents' gradient buffers.  Nodes
// that do not require gradients carry no parents, so inference builds no
// graph and frees intermediates as handles go out of scope.

// Toggle for the NaN/Inf guard run after every op and during backward.
inline bool& finite_checks_enabled() {
  static bool enabled = true;
  return enabled;
}

template <typename T>
struct VarNode {
  Tensor<T> value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<VarNode>> parents;
  // Pull-back: reads value.grad(), accumulates into parents' grads.
  std::function<void(VarNode&)> backward_fn;
};

template <typename T>
class Var {
 public:
  Var() = default;

  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<VarNode<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return node_ != nullptr; }

  Tensor<T>& tensor() { return node_->value; }
  const Tensor<T>& tensor() const { return node_->value; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  std::shared_ptr<VarNode<T>> node() const { return node_; }

  // Convenience for scalar results.
  T item() const {
    if (node_->value.numel() != 1) {
      throw ShapeError("batch", "item: tensor is not a scalar");
    }
    return node_->value.data()[0];
  }

  void zero_grad() { node_->value.zero_grad(); }

  // Reverse pass seeded from this node.  For a scalar the seed is 1; for a
  // general tensor the caller may pre-fill the grad buffer and pass
  // seed_with_ones = false.
  void backward(bool seed_with_ones = true) {
    if (!node_->requires_grad) {
      throw ConfigError("backward: node does not require gradients");
    }
    if (seed_with_ones) {
      auto& g = node_->value.grad();
      std::fill(g.begin(), g.end(), T(1));
    }

    // Iterative post-order DFS to get a reverse topological order.
    std::vector<VarNode<T>*> order;
    std::unordered_set<VarNode<T>*> visited;
    std::vector<std::pair<VarNode<T>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [cur, idx] = stack.back();
      if (idx < cur->parents.size()) {
        VarNode<T>* p = cur->parents[idx++].get();
        if (p->requires_grad && visited.insert(p).second) {
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(cur);
        stack.pop_back();
      }
    }

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      VarNode<T>* cur = *it;
      if (!cur->backward_fn) continue;
      if (finite_checks_enabled() && !finite(cur->value.grad())) {
        throw NumericError("backward: non-finite gradient");
      }
      cur->backward_fn(*cur);
    }
  }

 private:
  static bool finite(const std::vector<T>& v) {
    for (const T& x : v) {
      if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
  }

  std::shared_ptr<VarNode<T>> node_;
};

// Builds an op result node.  Parents that require gradients make the result
// require gradients; otherwise the graph edge is dropped entirely.
template <typename T>
Var<T> make_var(Tensor<T> value, std::vector<Var<T>> parents,
                std::function<void(VarNode<T>&)> backward_fn) {
  if (finite_checks_enabled() && !value.all_finite()) {
    throw NumericError("forward: non-finite op output");
  }
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  Var<T> out(std::move(value), rg);
  if (rg) {
    auto n = out.node();
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
  }
  return out;
}

// Constant wrapper (no gradient tracking).
template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

}  // namespace dunet
