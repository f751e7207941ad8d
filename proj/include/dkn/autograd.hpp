#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dkn/tensor.hpp"

namespace dkn {

template <typename S>
class GraphT;

// One entry on the tape: a value, its (lazily allocated) gradient, and a
// closure that pushes the gradient into the producing operation's inputs.
// Parameter leaves borrow their tensor from the model instead of copying it.
template <typename S>
struct NodeT {
  TensorT<S> owned;
  const TensorT<S>* borrowed = nullptr;
  TensorT<S> grad;  // empty until the backward sweep reaches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::function<void(GraphT<S>&, NodeT<S>&)> backward;

  const TensorT<S>& value() const { return borrowed != nullptr ? *borrowed : owned; }
  bool has_grad() const { return !grad.empty(); }
};

// Named trainable tensor. Gradients accumulate across backward calls until
// zero_grad, so the gradient of a sum of losses is the sum of gradients.
template <typename S>
struct ParameterT {
  std::string name;
  TensorT<S> value;
  TensorT<S> grad;

  void init(std::string param_name, TensorT<S> v) {
    name = std::move(param_name);
    grad = TensorT<S>(v.n(), v.c(), v.h(), v.w());
    value = std::move(v);
  }

  void zero_grad() { grad.zero(); }
};

// Lightweight handle into a graph's tape.
template <typename S>
class ValueT {
 public:
  ValueT() = default;
  ValueT(GraphT<S>* graph, NodeT<S>* node) : graph_(graph), node_(node) {}

  const TensorT<S>& tensor() const { return node_->value(); }
  NodeT<S>* node() const { return node_; }
  GraphT<S>* graph() const { return graph_; }
  bool valid() const { return node_ != nullptr; }

 private:
  GraphT<S>* graph_ = nullptr;
  NodeT<S>* node_ = nullptr;
};

// Dynamic tape, rebuilt per forward pass. Creation order is a topological
// order of the computation, so the backward sweep is a single reverse walk.
template <typename S>
class GraphT {
 public:
  GraphT() = default;
  GraphT(const GraphT&) = delete;
  GraphT& operator=(const GraphT&) = delete;

  ValueT<S> leaf(TensorT<S> value, bool requires_grad = false) {
    NodeT<S>* n = new_node();
    n->owned = std::move(value);
    n->requires_grad = requires_grad;
    return ValueT<S>(this, n);
  }

  // Leaf whose gradient is published to the parameter after backward. The
  // parameter tensor is borrowed, not copied; it must stay in place (and
  // unmodified) for the lifetime of the graph.
  ValueT<S> param(ParameterT<S>& p) {
    NodeT<S>* n = new_node();
    n->borrowed = &p.value;
    n->requires_grad = true;
    n->op = "param";
    params_.emplace_back(&p, n);
    return ValueT<S>(this, n);
  }

  ValueT<S> make(TensorT<S> value, bool requires_grad, const char* op,
                 std::function<void(GraphT<S>&, NodeT<S>&)> backward_fn) {
    NodeT<S>* n = new_node();
    n->owned = std::move(value);
    n->requires_grad = requires_grad;
    n->op = op;
    if (requires_grad) n->backward = std::move(backward_fn);
    return ValueT<S>(this, n);
  }

  // Allocates (zeroed) the gradient buffer of a node on first use.
  TensorT<S>& grad_of(NodeT<S>* n) {
    if (!n->has_grad()) {
      const TensorT<S>& v = n->value();
      n->grad = TensorT<S>(v.n(), v.c(), v.h(), v.w());
    }
    return n->grad;
  }

  // Reverse-mode sweep from a scalar loss. Populates gradients of every
  // reachable parameter; unreachable parameters keep their current
  // (typically zero) gradients.
  void backward(ValueT<S> loss);

  // Gradients of all parameters registered on this graph, keyed by name.
  std::map<std::string, TensorT<S>> parameter_gradients() const {
    std::map<std::string, TensorT<S>> out;
    for (const auto& [p, node] : params_) out.emplace(p->name, p->grad);
    return out;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  NodeT<S>* new_node() {
    nodes_.push_back(std::make_unique<NodeT<S>>());
    return nodes_.back().get();
  }

  std::vector<std::unique_ptr<NodeT<S>>> nodes_;
  std::vector<std::pair<ParameterT<S>*, NodeT<S>*>> params_;
};

using Graph = GraphT<float>;
using Value = ValueT<float>;
using Parameter = ParameterT<float>;

extern template class GraphT<float>;
extern template class GraphT<double>;

}  // namespace dkn
