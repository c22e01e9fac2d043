// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "raptr/param_store.hpp"
#include "raptr/tensor.hpp"

namespace raptr {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const;
  bool valid() const { return tape != nullptr; }
};

/// Reverse-mode recording of tensor operations.
///
/// Every op appends a node holding its output and a closure that pushes the
/// node's gradient to its inputs. backward() walks nodes in exact reverse
/// order of recording. Nodes that depend on no trainable input record no
/// closure, so constant subgraphs cost nothing in the backward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }
  Var variable(Tensor value) { return push(std::move(value), true, nullptr); }

  /// Leaf bound to a ParamStore entry; its gradient is added back to the store by flush_param_grads().
  Var param(ParamStore& store, const std::string& name) {
    auto key = std::make_pair(&store, name);
    if (auto it = param_cache_.find(key); it != param_cache_.end()) return it->second;
    Var v = variable(store.value(name));
    param_cache_.emplace(key, v);
    bindings_.push_back({v.id, &store, name});
    return v;
  }

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient buffer of a node, zero-initialized on first access.
  Tensor& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }
  Tensor& grad(Var v) { return grad(v.id); }
  bool has_grad(std::size_t id) const { return nodes_[id].grad.size() == nodes_[id].value.size() && !nodes_[id].value.empty(); }

  /// Adds `g` into the gradient of node `id` if it is trainable.
  void accumulate(std::size_t id, const Tensor& g) {
    if (!nodes_[id].requires_grad) return;
    grad(id).add_inplace(g);
  }

  void backward(Var root) {
    require(value(root).size() == 1, "backward: root must be a scalar, got " + shape_str(value(root).shape()));
    backward(root, Tensor(value(root).shape(), 1.0));
  }

  void backward(Var root, const Tensor& seed) {
    require(seed.size() == value(root).size(), "backward: seed shape mismatch");
    if (!nodes_[root.id].requires_grad) return;
    grad(root.id).add_inplace(seed);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || !has_grad(i)) continue;
      visit_log_.push_back(i);
      n.backward(*this, i);
    }
  }

  /// Adds every bound parameter's gradient into its ParamStore accumulator.
  void flush_param_grads() {
    for (const auto& b : bindings_) {
      if (has_grad(b.id)) b.store->grad(b.name).add_inplace(nodes_[b.id].grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }
  /// Node ids whose backward closure ran, in visit order.
  const std::vector<std::size_t>& visit_log() const { return visit_log_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  struct Binding {
    std::size_t id;
    ParamStore* store;
    std::string name;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, std::move(fn)});
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::vector<Binding> bindings_;
  std::map<std::pair<const ParamStore*, std::string>, Var> param_cache_;
  std::vector<std::size_t> visit_log_;
};

inline const Tensor& Var::value() const { return tape->value(id); }
inline const Shape& Var::shape() const { return tape->value(id).shape(); }

}  // namespace raptr
