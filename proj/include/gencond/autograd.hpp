#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "gencond/tensor.hpp"

namespace gencond {

/// One vertex of the reverse-mode tape. Leaves are parameters or constants;
/// interior nodes carry the closure that pushes their gradient to inputs.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  /// Gradient buffer, zero-initialized on first use.
  Tensor& grad_buffer();
  bool wants_grad(size_t input) const { return inputs[input]->requires_grad; }
  Tensor& input_grad(size_t input) { return inputs[input]->grad_buffer(); }
  const Tensor& input_value(size_t input) const { return inputs[input]->value; }
};

/// Shared handle to a tape node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  /// Mutable access for optimizers and loaders; not recorded on the tape.
  Tensor& mutable_value() const { return node_->value; }
  const Tensor& grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t dim(int i) const { return node_->value.dim(i); }
  double item() const { return node_->value.item(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) const { node_->requires_grad = on; }
  void zero_grad() const;

  /// Same value, cut from the tape.
  Var detach() const { return Var(node_->value, false); }

  const std::shared_ptr<Node>& node() const { return node_; }
  bool defined() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

/// Seed d(root)/d(root) = 1 and propagate to every reachable leaf.
void backward(const Var& root);

/// Build an interior node. The closure is dropped when no input needs a gradient.
Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

bool grad_enabled();

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace gencond
