#pragma once

#include <cstdint>
#include <vector>

#include "gencond/networks.hpp"

namespace gencond {

/// lr * (1 - step / total_steps); constant when total_steps <= 0.
double linear_decay_lr(double base_lr, int64_t step, int64_t total_steps);

/// Stochastic gradient descent with heavy-ball momentum (v = mu v + g; p -= lr v)
/// and an optional linear decay of the learning rate to zero.
class Sgd {
 public:
  Sgd() = default;
  Sgd(ParamList params, double lr, double momentum, int64_t total_steps = 0);

  /// Applies the accumulated gradients, then advances the schedule.
  void step();
  void zero_grad() { zero_grads(params_); }

  double current_lr() const { return linear_decay_lr(lr_, steps_, total_steps_); }
  int64_t steps_taken() const { return steps_; }
  const ParamList& params() const { return params_; }

 private:
  ParamList params_;
  std::vector<Tensor> velocity_;
  double lr_ = 0.0;
  double momentum_ = 0.0;
  int64_t total_steps_ = 0;
  int64_t steps_ = 0;
};

}  // namespace gencond
