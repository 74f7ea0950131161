#pragma once

#include <span>
#include <string>
#include <vector>

#include "gencond/autograd.hpp"

namespace gencond {

struct LossWeights {
  double adv = 1.0;
  double cls = 1.0;
  double feat = 1.0;
  double intra = 1.0;
  double inter = 1.0;
};

struct LossConfig {
  double tau = 0.1;    // temperature of the intra-class contrastive term
  double tau_m = 1.0;  // margin of the inter-class hinge
  LossWeights weights;
  bool soft_labels = false;
  /// Use cosine instead of raw dot-product similarities in the intra term.
  bool normalize_similarity = false;

  /// Throws ArgumentError unless tau > 0, tau_m >= 0 and weights >= 0.
  void validate() const;
};

/// Probabilities are clamped to [eps, 1 - eps] before taking logs.
inline constexpr double kProbEps = 1e-7;

struct AdvLosses {
  Var d_loss;  // -mean log D(real) - mean log(1 - D(fake))
  Var g_loss;  // -mean log D(fake)
};

AdvLosses adv_losses(const Var& real_probs, const Var& fake_probs);
Var discriminator_loss(const Var& real_probs, const Var& fake_probs);
Var generator_adv_loss(const Var& fake_probs);

/// Mean cross-entropy against class indices.
Var cls_loss(const Var& logits, std::span<const int> targets);
/// Mean cross-entropy against per-row distributions [B, classes].
Var cls_loss(const Var& logits, const Tensor& soft_targets);

/// Mean over synthetic images of sum_l |f_l - target_l|^2. Each layer tensor
/// is [B, ...]; row b of target_l is the association mean for image b.
Var feature_match_loss(std::span<const Var> synth_feats, std::span<const Tensor> target_feats);

/// Contrastive intra-class loss, averaged over rows. Row i's positive is
/// <feats_i, anchors_i>; its negatives are <feats_i, feats_j> for every other
/// row j with the same label. Log-sum-exp is max-shifted.
Var intra_loss(const Var& feats, const Var& anchors, std::span<const int> labels, double tau);

/// Single-sample form: f [F], anchor [F], same-class others [K-1, F].
double intra_loss(const Tensor& feat, const Tensor& anchor, const Tensor& others, double tau);

/// Sum over ordered class pairs of max(tau_m - |mean_A - mean_B|, 0).
/// Fewer than two rows yields 0 and appends a note to `warnings` when given.
Var inter_loss(const Var& class_means, double tau_m, std::vector<std::string>* warnings = nullptr);

struct LossParts {
  Var adv;  // generator side of the adversarial game
  Var cls;
  Var feat;
  Var intra;
  Var inter;
};

/// Weighted sum of the parts. A non-finite part raises DivergenceError naming it.
Var condensation_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace gencond
