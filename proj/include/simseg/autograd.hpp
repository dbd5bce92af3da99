#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "simseg/tensor.hpp"

// Minimal reverse-mode differentiation over Tensor values. Every op records
// its parents and a closure that pushes the node's gradient into them; the
// graph lives as long as the resulting Var does.
namespace simseg::ag {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape4& shape() const { return node_->value.shape(); }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(0.0);
  }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

// Fresh leaf holding a copy of `v`'s value with the same requires_grad flag.
Var clone_leaf(const Var& v);

// Accumulates d(root)/d(leaf) into every reachable node that requires a
// gradient. `root` must hold a single element.
void backward(const Var& root);

bool grad_enabled();

// While alive, ops do not record graph edges (evaluation mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Creates the output node of an op. When gradients are enabled and any parent
// requires one, the parents and the backward closure are attached.
Var make_result(Tensor value, std::vector<Var> parents,
                std::function<void(Node&)> backward_fn);

}  // namespace simseg::ag
