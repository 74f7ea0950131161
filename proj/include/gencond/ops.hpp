#pragma once

#include <span>
#include <vector>

#include "gencond/autograd.hpp"

namespace gencond::ops {

// Elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);

// Reductions
Var sum(const Var& x);
Var mean(const Var& x);
/// sum_i weights[i] * terms[i] over scalar terms.
Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);

// Shape
Var reshape(const Var& x, Shape shape);
/// [B, ...] -> [B, prod(...)]
Var flatten(const Var& x);
/// [B, m] ++ [B, n] -> [B, m + n]
Var concat_cols(const Var& a, const Var& b);
/// Rows of a 2-D tensor in the given order; gradients scatter-add back.
Var gather_rows(const Var& x, std::span<const int64_t> rows);

// Dense layers. weight is [out, in]; bias may be undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);

/// Stride-1 "same" convolution: x [B, Ci, H, W], weight [Co, Ci, k, k] with odd k.
Var conv2d(const Var& x, const Var& weight, const Var& bias);
/// 2x2 average pooling with stride 2; odd trailing rows/columns are dropped.
Var avg_pool2(const Var& x);
/// 2x nearest-neighbour upsampling.
Var upsample_nearest2(const Var& x);

/// Per-sample, per-channel normalization with affine (gamma, beta of shape [C]).
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};
/// Batch normalization over (B, H, W) per channel. Training mode uses batch
/// statistics and updates `stats`; inference mode uses the running values.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, bool training);

/// [B, C, H, W] -> [B, C] by spatial averaging.
Var spatial_mean(const Var& x);
/// Mean of rows per group: x [B, F], group[i] in [0, num_groups) -> [num_groups, F].
/// Every group must be non-empty.
Var group_mean_rows(const Var& x, std::span<const int> group, int num_groups);
/// Scale every row of a 2-D tensor to unit Euclidean norm.
Var l2_normalize_rows(const Var& x, double eps = 1e-12);

}  // namespace gencond::ops
