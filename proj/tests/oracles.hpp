#pragma once

// Naive reference implementations and numerical helpers shared by the unit
// tests and the acceptance runner. Nothing here calls into the library's loss
// or selection code.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "gencond/autograd.hpp"
#include "gencond/ops.hpp"
#include "gencond/rng.hpp"

namespace oracle {

using gencond::Rng;
using gencond::Shape;
using gencond::Tensor;
using gencond::Var;

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

inline double clamp_p(double p) { return std::clamp(p, 1e-7, 1.0 - 1e-7); }

struct Adv {
  double d, g;
};

inline Adv adv(const std::vector<double>& real, const std::vector<double>& fake) {
  double lr = 0.0, lf = 0.0, lg = 0.0;
  for (double p : real) lr += std::log(clamp_p(p));
  for (double p : fake) {
    lf += std::log(1.0 - clamp_p(p));
    lg += std::log(clamp_p(p));
  }
  const double nr = static_cast<double>(real.size()), nf = static_cast<double>(fake.size());
  return {-lr / nr - lf / nf, -lg / nf};
}

// Cross-entropy with a plain (unshifted) log-sum-exp.
inline double ce_soft(const Tensor& logits, const Tensor& targets) {
  const int64_t b = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (int64_t i = 0; i < b; ++i) {
    double z = 0.0;
    for (int64_t j = 0; j < k; ++j) z += std::exp(logits[static_cast<size_t>(i * k + j)]);
    const double lse = std::log(z);
    for (int64_t j = 0; j < k; ++j) {
      total -= targets[static_cast<size_t>(i * k + j)] * (logits[static_cast<size_t>(i * k + j)] - lse);
    }
  }
  return total / static_cast<double>(b);
}

inline double ce_hard(const Tensor& logits, const std::vector<int>& labels) {
  const int64_t k = logits.dim(1);
  Tensor onehot({logits.dim(0), k});
  for (size_t i = 0; i < labels.size(); ++i) onehot[i * static_cast<size_t>(k) + static_cast<size_t>(labels[i])] = 1.0;
  return ce_soft(logits, onehot);
}

// Mean over rows of sum over layers, channels and positions of squared differences.
inline double feature_match(const std::vector<Tensor>& synth, const std::vector<Tensor>& target) {
  const int64_t b = synth[0].dim(0);
  double total = 0.0;
  for (int64_t i = 0; i < b; ++i) {
    for (size_t l = 0; l < synth.size(); ++l) {
      const int64_t c = synth[l].dim(1);
      const int64_t pos = synth[l].row_size() / c;
      for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t p = 0; p < pos; ++p) {
          const size_t at = static_cast<size_t>(i * c * pos + ch * pos + p);
          const double d = synth[l][at] - target[l][at];
          total += d * d;
        }
      }
    }
  }
  return total / static_cast<double>(b);
}

inline double dot(const double* a, const double* b, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// -log( e(<f,c>) / (sum_i e(<f,f_i>) + e(<f,c>)) ), e(s) = exp(s / tau), unshifted.
inline double intra_single(const double* f, const double* c, const std::vector<const double*>& others, int64_t width,
                           double tau) {
  const double pos = std::exp(dot(f, c, width) / tau);
  double neg = 0.0;
  for (const double* o : others) neg += std::exp(dot(f, o, width) / tau);
  return -std::log(pos / (neg + pos));
}

// Batched intra loss: mean over rows, negatives are the other rows with the same label.
inline double intra_batch(const Tensor& feats, const Tensor& anchors, const std::vector<int>& labels, double tau) {
  const int64_t b = feats.dim(0), w = feats.dim(1);
  double total = 0.0;
  for (int64_t i = 0; i < b; ++i) {
    std::vector<const double*> others;
    for (int64_t j = 0; j < b; ++j) {
      if (j != i && labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)]) others.push_back(feats.data() + j * w);
    }
    total += intra_single(feats.data() + i * w, anchors.data() + i * w, others, w, tau);
  }
  return total / static_cast<double>(b);
}

// Ordered-pair hinge sum.
inline double inter(const Tensor& means, double tau_m) {
  const int64_t c = means.dim(0), w = means.dim(1);
  double total = 0.0;
  for (int64_t a = 0; a < c; ++a) {
    for (int64_t b = 0; b < c; ++b) {
      if (a == b) continue;
      double d2 = 0.0;
      for (int64_t j = 0; j < w; ++j) {
        const double d = means[static_cast<size_t>(a * w + j)] - means[static_cast<size_t>(b * w + j)];
        d2 += d * d;
      }
      total += std::max(tau_m - std::sqrt(d2), 0.0);
    }
  }
  return total;
}

inline double sq_dist(const double* a, const double* b, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Herding step by exhaustion: among unselected candidates (visited in `order`),
// the first one minimizing |mu - (sum + f) / t|. Compared as |t S - n (sum + f)|^2
// with S the column total, which is exact for integral features.
// Candidates whose scores differ by less than this count as tied (first in
// `order` wins); `reach` bounds the magnitude of each compared coordinate.
inline double tie_tolerance(const Tensor& feats, const std::vector<int64_t>& order, double reach) {
  double m = 0.0;
  for (int64_t i : order)
    for (int64_t j = 0; j < feats.dim(1); ++j) m = std::max(m, std::abs(feats[static_cast<size_t>(i * feats.dim(1) + j)]));
  return 1e-10 * static_cast<double>(feats.dim(1)) * reach * reach * m * m;
}

inline int64_t herding_step(const Tensor& feats, const std::vector<int64_t>& order, const std::vector<int64_t>& selected) {
  const int64_t w = feats.dim(1);
  const double n = static_cast<double>(order.size()), t = static_cast<double>(selected.size() + 1);
  const double tol = tie_tolerance(feats, order, 2.0 * n * t);
  int64_t best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int64_t i : order) {
    if (std::find(selected.begin(), selected.end(), i) != selected.end()) continue;
    double d = 0.0;
    for (int64_t j = 0; j < w; ++j) {
      double total = 0.0, sum = 0.0;
      for (int64_t k : order) total += feats[static_cast<size_t>(k * w + j)];
      for (int64_t k : selected) sum += feats[static_cast<size_t>(k * w + j)];
      sum += feats[static_cast<size_t>(i * w + j)];
      d += (t * total - n * sum) * (t * total - n * sum);
    }
    if (best < 0 || d < best_d - tol) best_d = d, best = i;
  }
  return best;
}

// k-center step by exhaustion: the first step takes the candidate nearest the
// mean (compared as |n f - S|^2); later steps take the candidate maximizing the
// distance to its nearest selected point.
inline int64_t kcenter_step(const Tensor& feats, const std::vector<int64_t>& order, const std::vector<int64_t>& selected) {
  const int64_t w = feats.dim(1);
  const double n = static_cast<double>(order.size());
  int64_t best = -1;
  if (selected.empty()) {
    double best_d = std::numeric_limits<double>::infinity();
    for (int64_t i : order) {
      double d = 0.0;
      for (int64_t j = 0; j < w; ++j) {
        double total = 0.0;
        for (int64_t k : order) total += feats[static_cast<size_t>(k * w + j)];
        const double e = n * feats[static_cast<size_t>(i * w + j)] - total;
        d += e * e;
      }
      if (best < 0 || d < best_d - tie_tolerance(feats, order, 2.0 * n)) best_d = d, best = i;
    }
    return best;
  }
  double best_d = -1.0;
  for (int64_t i : order) {
    if (std::find(selected.begin(), selected.end(), i) != selected.end()) continue;
    double nearest = std::numeric_limits<double>::infinity();
    for (int64_t s : selected) nearest = std::min(nearest, sq_dist(feats.data() + i * w, feats.data() + s * w, w));
    if (best < 0 || nearest > best_d + tie_tolerance(feats, order, 2.0)) best_d = nearest, best = i;
  }
  return best;
}

// Scalar probe sum(R * v) with a fixed random R, so every output element matters.
inline Var probe(const Var& v, const Tensor& r) {
  const int64_t n = static_cast<int64_t>(v.value().numel());
  return gencond::ops::sum(gencond::ops::linear(gencond::ops::reshape(v, {1, n}), Var(r.reshaped({1, n})), Var()));
}

// Relative error |a - n| / max(|a|, |n|) of the analytic gradient of `f` with
// respect to every leaf, against central differences, taken over the whole
// gradient vector of each leaf; returns the worst leaf. Leaves whose true
// gradient vanishes (biases ahead of a normalization) are scored against an
// absolute floor of 1e-4 so finite-difference noise does not count as error.
inline double grad_check(const std::function<Var()>& f, const std::vector<Var>& leaves, double h = 1e-5) {
  for (const auto& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();
  }
  gencond::backward(f());
  double worst = 0.0;
  for (const auto& l : leaves) {
    const Tensor analytic = l.has_grad() ? l.grad() : Tensor(l.shape());
    Tensor& x = l.mutable_value();
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (size_t i = 0; i < x.numel(); ++i) {
      const double keep = x[i];
      double up, down;
      {
        gencond::NoGradGuard ng;
        x[i] = keep + h;
        up = f().item();
        x[i] = keep - h;
        down = f().item();
      }
      x[i] = keep;
      const double numeric = (up - down) / (2 * h);
      diff += (numeric - analytic[i]) * (numeric - analytic[i]);
      na += analytic[i] * analytic[i];
      nn += numeric * numeric;
    }
    const double scale = std::max(std::sqrt(std::max(na, nn)), 1e-4);
    worst = std::max(worst, std::sqrt(diff) / scale);
  }
  return worst;
}

}  // namespace oracle
