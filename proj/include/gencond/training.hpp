#pragma once

#include <span>

#include "gencond/datasets.hpp"
#include "gencond/networks.hpp"

namespace gencond {

struct TrainOptions {
  int epochs = 10;
  int batch_size = 256;
  double lr = 0.01;
  double momentum = 0.9;
  bool linear_decay = true;
  uint64_t seed = 0;
};

/// Minibatch SGD on cross-entropy. `soft_targets`, when non-empty, replaces
/// the hard labels with per-row distributions.
void fit_classifier(Classifier& net, const Tensor& images, std::span<const int> labels, const TrainOptions& options,
                    const Tensor& soft_targets = {});

/// Top-1 accuracy on a labeled dataset.
double accuracy(Classifier& net, const LabeledDataset& data, int64_t batch_size = 256);

/// Row-wise softmax of logits for `images`.
Tensor predict_proba(Classifier& net, const Tensor& images, int64_t batch_size = 256);

/// Fresh FeatureNet trained on the dataset with the classification objective.
FeatureNet train_extractor(const LabeledDataset& train, const FeatureNetConfig& config, const TrainOptions& options);

/// Final (flattened last-block) features of every image, [N, F].
Tensor extract_features(const FeatureNet& net, const Tensor& images, int64_t batch_size = 256);

}  // namespace gencond
