#include "gencond/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gencond/errors.hpp"
#include "gencond/losses.hpp"
#include "gencond/optim.hpp"

namespace gencond {

void fit_classifier(Classifier& net, const Tensor& images, std::span<const int> labels, const TrainOptions& options,
                    const Tensor& soft_targets) {
  const auto n = static_cast<int64_t>(labels.size());
  if (n == 0 || images.dim(0) != n) throw ArgumentError("fit_classifier: images and labels disagree or are empty");
  if (options.epochs < 1 || options.batch_size < 1) throw ArgumentError("fit_classifier: epochs and batch size must be >= 1");
  const int64_t batch = std::min<int64_t>(options.batch_size, n);
  const int64_t batches_per_epoch = (n + batch - 1) / batch;
  const ParamList params = net.parameters();
  set_trainable(params, true);
  Sgd opt(params, options.lr, options.momentum, options.linear_decay ? batches_per_epoch * options.epochs : 0);
  Rng rng(options.seed);
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int e = 0; e < options.epochs; ++e) {
    rng.shuffle(order);
    for (int64_t start = 0; start < n; start += batch) {
      const int64_t end = std::min(n, start + batch);
      const std::span<const int64_t> idx(order.data() + start, static_cast<size_t>(end - start));
      const Var logits = net.logits(Var(images.gather_rows(idx)));
      Var loss;
      if (soft_targets.empty()) {
        std::vector<int> y;
        y.reserve(idx.size());
        for (int64_t i : idx) y.push_back(labels[static_cast<size_t>(i)]);
        loss = cls_loss(logits, y);
      } else {
        loss = cls_loss(logits, soft_targets.gather_rows(idx));
      }
      opt.zero_grad();
      backward(loss);
      opt.step();
    }
  }
}

Tensor predict_proba(Classifier& net, const Tensor& images, int64_t batch_size) {
  NoGradGuard no_grad;
  const int64_t n = images.dim(0);
  std::vector<Tensor> parts;
  for (int64_t start = 0; start < n; start += batch_size) {
    const Var logits = net.logits(Var(images.slice_rows(start, std::min(n, start + batch_size))));
    Tensor p = logits.value();
    const int64_t k = p.dim(1);
    for (int64_t r = 0; r < p.dim(0); ++r) {
      double* z = p.data() + r * k;
      const double m = *std::max_element(z, z + k);
      double s = 0.0;
      for (int64_t j = 0; j < k; ++j) s += (z[j] = std::exp(z[j] - m));
      for (int64_t j = 0; j < k; ++j) z[j] /= s;
    }
    parts.push_back(std::move(p));
  }
  return concat_rows(parts);
}

double accuracy(Classifier& net, const LabeledDataset& data, int64_t batch_size) {
  NoGradGuard no_grad;
  const int64_t n = data.size();
  if (n == 0) throw ArgumentError("accuracy on an empty dataset");
  int64_t correct = 0;
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t end = std::min(n, start + batch_size);
    const Var logits = net.logits(Var(data.images.slice_rows(start, end)));
    const int64_t k = logits.dim(1);
    for (int64_t r = 0; r < end - start; ++r) {
      const double* z = logits.value().data() + r * k;
      const auto pred = std::max_element(z, z + k) - z;
      if (pred == data.labels[static_cast<size_t>(start + r)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

FeatureNet train_extractor(const LabeledDataset& train, const FeatureNetConfig& config, const TrainOptions& options) {
  Rng init(Rng::mix(options.seed ^ 0x657874ULL));
  FeatureNet net(config, init);
  fit_classifier(net, train.images, train.labels, options);
  return net;
}

Tensor extract_features(const FeatureNet& net, const Tensor& images, int64_t batch_size) {
  NoGradGuard no_grad;
  const int64_t n = images.dim(0);
  std::vector<Tensor> parts;
  for (int64_t start = 0; start < n; start += batch_size) {
    parts.push_back(net.forward(Var(images.slice_rows(start, std::min(n, start + batch_size)))).final.value());
  }
  return concat_rows(parts);
}

}  // namespace gencond
