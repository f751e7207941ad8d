#include "dkn/autograd.hpp"

namespace dkn {

template <typename S>
void GraphT<S>::backward(ValueT<S> loss) {
  DKN_CHECK(loss.valid() && loss.graph() == this, ContractError,
            "backward: loss does not belong to this graph");
  NodeT<S>* root = loss.node();
  DKN_CHECK(root->value().size() == 1, ContractError, "backward: loss must be scalar, got shape ",
            root->value().shape_str());
  grad_of(root)[0] = S(1);

  // Tape order is a topological order; one reverse pass suffices. Nodes that
  // never received a gradient contribute nothing.
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    NodeT<S>* n = it->get();
    if (!n->requires_grad || !n->has_grad()) continue;
    if (n->backward) n->backward(*this, *n);
  }

  for (auto& [p, node] : params_) {
    if (!node->has_grad()) continue;
    for (std::int64_t i = 0; i < p->grad.size(); ++i) p->grad[i] += node->grad[i];
  }
}

template class GraphT<float>;
template class GraphT<double>;

}  // namespace dkn
