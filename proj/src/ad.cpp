#include "ovocc/ad.hpp"

#include <unordered_set>
#include <utility>

#include "ovocc/error.hpp"

namespace ovocc::ad {

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size() || grad.shape() != value.shape()) {
    grad = Tensor(value.shape(), 0.0);
  }
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Var out(std::move(value), false);
  bool any = false;
  for (const Var& in : inputs) any = any || in.requires_grad();
  if (any) {
    auto& node = *out.node();
    node.requires_grad = true;
    node.parents.reserve(inputs.size());
    for (const Var& in : inputs) {
      if (in.requires_grad()) node.parents.push_back(in.node());
    }
    node.backward = std::move(backward);
  }
  return out;
}

void accumulate(const std::shared_ptr<Node>& parent, const Tensor& g) {
  if (!parent || !parent->requires_grad) return;
  Tensor& buf = parent->grad_buffer();
  if (buf.size() != g.size()) {
    throw Error(ErrorCode::kShapeMismatch, "gradient shape " + shape_str(g.shape()) +
                                               " vs value " + shape_str(buf.shape()));
  }
  double* dst = buf.ptr();
  const double* src = g.ptr();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

void backward(const Var& root) {
  if (!root.requires_grad()) return;
  if (root.value().size() != 1) {
    throw Error(ErrorCode::kShapeMismatch, "backward() requires a scalar root");
  }
  // Iterative post-order DFS gives a topological order of the graph.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
  // Release intermediate gradients; leaves keep theirs.
  for (Node* n : order) {
    if (!n->parents.empty()) n->grad = Tensor();
  }
}

}  // namespace ovocc::ad
