#include "gencond/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "gencond/errors.hpp"
#include "gencond/ops.hpp"

namespace gencond {

void LossConfig::validate() const {
  if (!(tau > 0.0)) throw ArgumentError("loss.tau must be > 0");
  if (!(tau_m >= 0.0)) throw ArgumentError("loss.tau_m must be >= 0");
  for (double w : {weights.adv, weights.cls, weights.feat, weights.intra, weights.inter}) {
    if (!(w >= 0.0)) throw ArgumentError("loss weights must be >= 0");
  }
}

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

bool clamped(double p) { return p < kProbEps || p > 1.0 - kProbEps; }

void require_probs(const Var& p, const char* what) {
  if (p.value().rank() != 1 || p.value().numel() == 0) {
    throw ShapeError(std::string(what) + " must be a non-empty vector, got " + shape_str(p.shape()));
  }
}

double dot(const double* a, const double* b, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Row-wise log-sum-exp of logits [B, K], and softmax probabilities.
void softmax_rows(const Tensor& logits, std::vector<double>& lse, Tensor& probs) {
  const int64_t rows = logits.dim(0), k = logits.dim(1);
  lse.assign(static_cast<size_t>(rows), 0.0);
  probs = Tensor(logits.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* z = logits.data() + r * k;
    const double m = *std::max_element(z, z + k);
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) s += std::exp(z[j] - m);
    lse[static_cast<size_t>(r)] = m + std::log(s);
    for (int64_t j = 0; j < k; ++j) probs[static_cast<size_t>(r * k + j)] = std::exp(z[j] - lse[static_cast<size_t>(r)]);
  }
}

}  // namespace

Var discriminator_loss(const Var& real_probs, const Var& fake_probs) {
  require_probs(real_probs, "real_probs");
  require_probs(fake_probs, "fake_probs");
  const auto nr = static_cast<double>(real_probs.value().numel());
  const auto nf = static_cast<double>(fake_probs.value().numel());
  double loss = 0.0;
  for (double p : real_probs.value().values()) loss -= std::log(clamp_prob(p)) / nr;
  for (double p : fake_probs.value().values()) loss -= std::log(1.0 - clamp_prob(p)) / nf;
  return make_node(Tensor::scalar(loss), {real_probs, fake_probs}, [nr, nf](Node& n) {
    const double g = n.grad[0];
    if (n.wants_grad(0)) {
      auto& gr = n.input_grad(0);
      const auto& r = n.input_value(0);
      for (size_t i = 0; i < r.numel(); ++i) {
        if (!clamped(r[i])) gr[i] -= g / (nr * r[i]);
      }
    }
    if (n.wants_grad(1)) {
      auto& gf = n.input_grad(1);
      const auto& f = n.input_value(1);
      for (size_t i = 0; i < f.numel(); ++i) {
        if (!clamped(f[i])) gf[i] += g / (nf * (1.0 - f[i]));
      }
    }
  });
}

Var generator_adv_loss(const Var& fake_probs) {
  require_probs(fake_probs, "fake_probs");
  const auto nf = static_cast<double>(fake_probs.value().numel());
  double loss = 0.0;
  for (double p : fake_probs.value().values()) loss -= std::log(clamp_prob(p)) / nf;
  return make_node(Tensor::scalar(loss), {fake_probs}, [nf](Node& n) {
    auto& gf = n.input_grad(0);
    const auto& f = n.input_value(0);
    for (size_t i = 0; i < f.numel(); ++i) {
      if (!clamped(f[i])) gf[i] -= n.grad[0] / (nf * f[i]);
    }
  });
}

AdvLosses adv_losses(const Var& real_probs, const Var& fake_probs) {
  return {discriminator_loss(real_probs, fake_probs), generator_adv_loss(fake_probs)};
}

Var cls_loss(const Var& logits, std::span<const int> targets) {
  if (logits.value().rank() != 2 || logits.dim(0) != static_cast<int64_t>(targets.size()) || targets.empty()) {
    throw ShapeError("cls_loss: logits " + shape_str(logits.shape()) + " vs " + std::to_string(targets.size()) + " targets");
  }
  const int64_t rows = logits.dim(0), k = logits.dim(1);
  for (int t : targets) {
    if (t < 0 || t >= k) throw ArgumentError("cls_loss: target " + std::to_string(t) + " outside [0, " + std::to_string(k) + ")");
  }
  std::vector<double> lse;
  Tensor probs;
  softmax_rows(logits.value(), lse, probs);
  double loss = 0.0;
  for (int64_t r = 0; r < rows; ++r) loss += lse[static_cast<size_t>(r)] - logits.value()[static_cast<size_t>(r * k + targets[static_cast<size_t>(r)])];
  loss /= static_cast<double>(rows);
  std::vector<int> t(targets.begin(), targets.end());
  return make_node(Tensor::scalar(loss), {logits}, [rows, k, t = std::move(t), probs = std::move(probs)](Node& n) {
    auto& g = n.input_grad(0);
    const double s = n.grad[0] / static_cast<double>(rows);
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t j = 0; j < k; ++j) {
        const auto i = static_cast<size_t>(r * k + j);
        g[i] += s * (probs[i] - (j == t[static_cast<size_t>(r)] ? 1.0 : 0.0));
      }
    }
  });
}

Var cls_loss(const Var& logits, const Tensor& soft_targets) {
  if (logits.value().rank() != 2 || soft_targets.shape() != logits.shape() || logits.dim(0) == 0) {
    throw ShapeError("cls_loss: soft targets " + shape_str(soft_targets.shape()) + " must match logits " +
                     shape_str(logits.shape()));
  }
  const int64_t rows = logits.dim(0), k = logits.dim(1);
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      const double t = soft_targets[static_cast<size_t>(r * k + j)];
      if (t < 0.0) throw ArgumentError("cls_loss: negative soft target");
      s += t;
    }
    if (std::abs(s - 1.0) > 1e-5) throw ArgumentError("cls_loss: soft target row " + std::to_string(r) + " sums to " + std::to_string(s));
  }
  std::vector<double> lse;
  Tensor probs;
  softmax_rows(logits.value(), lse, probs);
  double loss = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    double row = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      const auto i = static_cast<size_t>(r * k + j);
      row += soft_targets[i] * (lse[static_cast<size_t>(r)] - logits.value()[i]);
    }
    loss += row;
  }
  loss /= static_cast<double>(rows);
  std::vector<double> tsum(static_cast<size_t>(rows), 0.0);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < k; ++j) tsum[static_cast<size_t>(r)] += soft_targets[static_cast<size_t>(r * k + j)];
  return make_node(Tensor::scalar(loss), {logits},
                   [rows, k, soft_targets, tsum = std::move(tsum), probs = std::move(probs)](Node& n) {
                     auto& g = n.input_grad(0);
                     const double s = n.grad[0] / static_cast<double>(rows);
                     // d/dz of sum_j t_j (lse - z_j) = p * sum(t) - t
                     for (int64_t r = 0; r < rows; ++r)
                       for (int64_t j = 0; j < k; ++j) {
                         const auto i = static_cast<size_t>(r * k + j);
                         g[i] += s * (probs[i] * tsum[static_cast<size_t>(r)] - soft_targets[i]);
                       }
                   });
}

Var feature_match_loss(std::span<const Var> synth_feats, std::span<const Tensor> target_feats) {
  if (synth_feats.size() != target_feats.size() || synth_feats.empty()) {
    throw ShapeError("feature_match_loss: " + std::to_string(synth_feats.size()) + " synthetic layers vs " +
                     std::to_string(target_feats.size()) + " target layers");
  }
  const int64_t batch = synth_feats[0].value().rank() > 0 ? synth_feats[0].dim(0) : 0;
  if (batch == 0) throw ShapeError("feature_match_loss: empty batch");
  double loss = 0.0;
  std::vector<Tensor> targets;
  for (size_t l = 0; l < synth_feats.size(); ++l) {
    if (synth_feats[l].shape() != target_feats[l].shape() || synth_feats[l].dim(0) != batch) {
      throw ShapeError("feature_match_loss: layer " + std::to_string(l) + " shape " + shape_str(synth_feats[l].shape()) +
                       " vs target " + shape_str(target_feats[l].shape()));
    }
    const auto& s = synth_feats[l].value();
    for (size_t i = 0; i < s.numel(); ++i) {
      const double d = s[i] - target_feats[l][i];
      loss += d * d;
    }
    targets.push_back(target_feats[l]);
  }
  loss /= static_cast<double>(batch);
  return make_node(Tensor::scalar(loss), std::vector<Var>(synth_feats.begin(), synth_feats.end()),
                   [batch, targets = std::move(targets)](Node& n) {
                     const double s = 2.0 * n.grad[0] / static_cast<double>(batch);
                     for (size_t l = 0; l < targets.size(); ++l) {
                       if (!n.wants_grad(l)) continue;
                       auto& g = n.input_grad(l);
                       const auto& v = n.input_value(l);
                       for (size_t i = 0; i < g.numel(); ++i) g[i] += s * (v[i] - targets[l][i]);
                     }
                   });
}

Var intra_loss(const Var& feats, const Var& anchors, std::span<const int> labels, double tau) {
  if (!(tau > 0.0)) throw ArgumentError("intra_loss: tau must be > 0");
  if (feats.value().rank() != 2 || anchors.shape() != feats.shape() || feats.dim(0) != static_cast<int64_t>(labels.size()) ||
      labels.empty()) {
    throw ShapeError("intra_loss: feats " + shape_str(feats.shape()) + ", anchors " + shape_str(anchors.shape()) + ", " +
                     std::to_string(labels.size()) + " labels");
  }
  const int64_t rows = feats.dim(0), width = feats.dim(1);
  const double* f = feats.value().data();
  const double* a = anchors.value().data();

  // per row: positive weight (p_pos - 1) and negative weights p_ij, all / tau
  std::vector<double> pos_coef(static_cast<size_t>(rows), 0.0);
  std::vector<std::vector<std::pair<int64_t, double>>> neg_coef(static_cast<size_t>(rows));
  double loss = 0.0;
  for (int64_t i = 0; i < rows; ++i) {
    std::vector<int64_t> negatives;
    for (int64_t j = 0; j < rows; ++j) {
      if (j != i && labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)]) negatives.push_back(j);
    }
    if (negatives.empty()) continue;  // -log(e/e) = 0
    const double s_pos = dot(f + i * width, a + i * width, width) / tau;
    std::vector<double> s_neg(negatives.size());
    double m = s_pos;
    for (size_t k = 0; k < negatives.size(); ++k) {
      s_neg[k] = dot(f + i * width, f + negatives[k] * width, width) / tau;
      m = std::max(m, s_neg[k]);
    }
    double z = std::exp(s_pos - m);
    for (double s : s_neg) z += std::exp(s - m);
    loss += -s_pos + m + std::log(z);
    pos_coef[static_cast<size_t>(i)] = (std::exp(s_pos - m) / z - 1.0) / tau;
    for (size_t k = 0; k < negatives.size(); ++k) {
      neg_coef[static_cast<size_t>(i)].emplace_back(negatives[k], std::exp(s_neg[k] - m) / z / tau);
    }
  }
  loss /= static_cast<double>(rows);
  return make_node(Tensor::scalar(loss), {feats, anchors},
                   [rows, width, pos_coef = std::move(pos_coef), neg_coef = std::move(neg_coef)](Node& n) {
                     const double s = n.grad[0] / static_cast<double>(rows);
                     const double* f = n.input_value(0).data();
                     const double* a = n.input_value(1).data();
                     double* gf = n.wants_grad(0) ? n.input_grad(0).data() : nullptr;
                     double* ga = n.wants_grad(1) ? n.input_grad(1).data() : nullptr;
                     for (int64_t i = 0; i < rows; ++i) {
                       const double cp = s * pos_coef[static_cast<size_t>(i)];
                       for (int64_t d = 0; d < width; ++d) {
                         if (gf) gf[i * width + d] += cp * a[i * width + d];
                         if (ga) ga[i * width + d] += cp * f[i * width + d];
                       }
                       if (!gf) continue;
                       for (const auto& [j, p] : neg_coef[static_cast<size_t>(i)]) {
                         const double cn = s * p;
                         for (int64_t d = 0; d < width; ++d) {
                           gf[i * width + d] += cn * f[j * width + d];
                           gf[j * width + d] += cn * f[i * width + d];
                         }
                       }
                     }
                   });
}

double intra_loss(const Tensor& feat, const Tensor& anchor, const Tensor& others, double tau) {
  if (feat.rank() != 1 || anchor.shape() != feat.shape()) throw ShapeError("intra_loss: feat and anchor must be equal-width vectors");
  const int64_t width = feat.dim(0);
  const int64_t k = others.numel() == 0 ? 0 : others.dim(0);
  if (k > 0 && (others.rank() != 2 || others.dim(1) != width)) throw ShapeError("intra_loss: others must be [K-1, F]");
  if (k == 0) return 0.0;
  const double s_pos = dot(feat.data(), anchor.data(), width) / tau;
  double m = s_pos;
  std::vector<double> s_neg(static_cast<size_t>(k));
  for (int64_t j = 0; j < k; ++j) {
    s_neg[static_cast<size_t>(j)] = dot(feat.data(), others.data() + j * width, width) / tau;
    m = std::max(m, s_neg[static_cast<size_t>(j)]);
  }
  double z = std::exp(s_pos - m);
  for (double s : s_neg) z += std::exp(s - m);
  return -s_pos + m + std::log(z);
}

Var inter_loss(const Var& class_means, double tau_m, std::vector<std::string>* warnings) {
  if (class_means.value().rank() != 2) throw ShapeError("inter_loss: class means must be [classes, F]");
  const int64_t classes = class_means.dim(0), width = class_means.dim(1);
  if (classes < 2) {
    if (warnings) warnings->push_back("inter_loss: fewer than 2 classes in batch; term is 0");
    return make_node(Tensor::scalar(0.0), {class_means}, [](Node&) {});
  }
  const double* mu = class_means.value().data();
  double loss = 0.0;
  // active unordered pairs with their unit direction scaled by the ordered-pair multiplicity
  std::vector<std::tuple<int64_t, int64_t, double>> active;
  for (int64_t a = 0; a < classes; ++a) {
    for (int64_t b = a + 1; b < classes; ++b) {
      double d2 = 0.0;
      for (int64_t j = 0; j < width; ++j) {
        const double d = mu[a * width + j] - mu[b * width + j];
        d2 += d * d;
      }
      const double d = std::sqrt(d2);
      if (d < tau_m) {
        loss += 2.0 * (tau_m - d);
        active.emplace_back(a, b, d);
      }
    }
  }
  return make_node(Tensor::scalar(loss), {class_means}, [width, active = std::move(active)](Node& n) {
    auto& g = n.input_grad(0);
    const double* mu = n.input_value(0).data();
    for (const auto& [a, b, d] : active) {
      if (d == 0.0) continue;  // subgradient 0 at coincident means
      const double c = 2.0 * n.grad[0] / d;
      for (int64_t j = 0; j < width; ++j) {
        const double diff = mu[a * width + j] - mu[b * width + j];
        g[static_cast<size_t>(a * width + j)] -= c * diff;
        g[static_cast<size_t>(b * width + j)] += c * diff;
      }
    }
  });
}

Var condensation_loss(const LossParts& parts, const LossWeights& weights) {
  const std::array<std::pair<const char*, const Var*>, 5> named{{{"L_adv", &parts.adv},
                                                                 {"L_c", &parts.cls},
                                                                 {"L_f", &parts.feat},
                                                                 {"L_intra", &parts.intra},
                                                                 {"L_inter", &parts.inter}}};
  for (const auto& [name, v] : named) {
    if (!v->defined()) throw ArgumentError(std::string("condensation_loss: missing term ") + name);
    if (!std::isfinite(v->item())) throw DivergenceError(name, std::string("non-finite loss term ") + name);
  }
  const std::array<Var, 5> terms{parts.adv, parts.cls, parts.feat, parts.intra, parts.inter};
  const std::array<double, 5> w{weights.adv, weights.cls, weights.feat, weights.intra, weights.inter};
  return ops::weighted_sum(terms, w);
}

}  // namespace gencond
