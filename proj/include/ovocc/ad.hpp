#pragma once

// Minimal tape-free reverse-mode differentiation over Tensor values.
//
// Every op returns a Var whose node keeps its parents and a backward
// closure. Nodes whose inputs all have requires_grad == false record
// nothing, so frozen sub-networks never allocate or receive gradients.

#include <functional>
#include <memory>
#include <vector>

#include "ovocc/tensor.hpp"

namespace ovocc::ad {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node& self)> backward;

  // Zero-initialised gradient buffer shaped like value.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  // Empty tensor when nothing has been accumulated.
  const Tensor& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor(); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using BackwardFn = std::function<void(Node& self)>;

// Builds an op result. `backward` is kept only when some input requires grad.
Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn backward);

// Adds g into parent's gradient when the parent requires grad.
void accumulate(const std::shared_ptr<Node>& parent, const Tensor& g);

// Seeds d(root)/d(root) = 1 and propagates to every reachable leaf.
void backward(const Var& root);

}  // namespace ovocc::ad
