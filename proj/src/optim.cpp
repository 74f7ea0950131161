#include "gencond/optim.hpp"

#include <algorithm>

#include "gencond/errors.hpp"

namespace gencond {

double linear_decay_lr(double base_lr, int64_t step, int64_t total_steps) {
  if (total_steps <= 0) return base_lr;
  const double frac = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  return base_lr * (1.0 - frac);
}

Sgd::Sgd(ParamList params, double lr, double momentum, int64_t total_steps)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), total_steps_(total_steps) {
  if (lr < 0.0 || momentum < 0.0 || momentum >= 1.0) throw ArgumentError("invalid SGD learning rate or momentum");
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.var.shape());
}

void Sgd::step() {
  const double lr = current_lr();
  for (size_t i = 0; i < params_.size(); ++i) {
    const Var& p = params_[i].var;
    if (!p.has_grad()) continue;
    const Tensor& g = p.grad();
    Tensor& v = velocity_[i];
    Tensor& w = p.mutable_value();
    for (size_t j = 0; j < w.numel(); ++j) {
      v[j] = momentum_ * v[j] + g[j];
      w[j] -= lr * v[j];
    }
  }
  ++steps_;
}

}  // namespace gencond
