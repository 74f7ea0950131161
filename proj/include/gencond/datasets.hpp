#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gencond/tensor.hpp"

namespace gencond {

enum class Split { Train, Test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct ImageShape {
  int channels = 0;
  int height = 0;
  int width = 0;

  int64_t numel() const { return int64_t{channels} * height * width; }
  bool operator==(const ImageShape&) const = default;
};

/// Per-channel statistics of the raw train split.
struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> std;
};

/// Raw values are standardized and then divided by this many standard
/// deviations before clamping into [-1, 1].
inline constexpr double kNormSpread = 3.0;

/// Affine map raw -> [-1, 1] (clamped). images is [N, C, H, W].
Tensor normalize(const Tensor& raw, const NormalizationStats& stats);
/// Inverse of the affine part of normalize(); exact on unclamped values.
Tensor denormalize(const Tensor& normalized, const NormalizationStats& stats);
NormalizationStats compute_stats(const Tensor& raw);

struct LabeledDataset {
  std::string name;
  Split split = Split::Train;
  int num_classes = 0;
  ImageShape shape;
  Tensor images;  // [N, C, H, W], normalized
  std::vector<int> labels;
  NormalizationStats stats;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
  /// Indices of every sample, grouped by label, each list ascending.
  std::vector<std::vector<int64_t>> class_indices() const;
  Tensor gather(std::span<const int64_t> indices) const { return images.gather_rows(indices); }
  /// Throws IntegrityError on out-of-range labels or values, missing classes (train).
  void validate() const;
};

struct AssociationBatch {
  int class_id = 0;
  std::vector<int64_t> indices;  // into the source dataset
  Tensor images;                 // [A, C, H, W]

  int64_t size() const { return static_cast<int64_t>(indices.size()); }
};

/// Condensed or selected training set with (code index, class) provenance.
struct SyntheticSet {
  Tensor images;  // [ipc * num_classes, C, H, W]
  std::vector<int> labels;
  int ipc = 0;
  int num_classes = 0;
  /// For generated sets: codebook row per image. For coresets: source index.
  std::vector<int64_t> source;
  /// Optional per-image target distributions [n, num_classes].
  Tensor soft_labels;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
};

/// Parameters of the procedural fixture.
struct ToyParams {
  int num_classes = 3;
  int per_class = 100;
  int image_size = 16;
  uint64_t seed = 7;
};

inline constexpr std::string_view kToyName = "toy-blobs";

/// Procedural dataset: every class is a fixed arrangement of coloured
/// Gaussian blobs; samples add jitter, bright class-agnostic clutter blobs
/// (one per 256 pixels, so none below 16 px) and pixel noise. The test split
/// shares the class templates but draws fresh samples.
LabeledDataset make_toy_dataset(int num_classes, int per_class, int image_size, uint64_t seed,
                                Split split = Split::Train);
inline LabeledDataset make_toy_dataset(const ToyParams& p, Split split = Split::Train) {
  return make_toy_dataset(p.num_classes, p.per_class, p.image_size, p.seed, split);
}

/// Loads `root/<name>/<split>.json` plus the binary arrays it references.
/// `toy-blobs` is generated instead of read.
LabeledDataset load_dataset(std::string_view name, const std::filesystem::path& root, Split split,
                            const ToyParams& toy = {});

/// Writes raw (un-normalized) images with the manifest layout that
/// load_dataset() reads. `stats` are recorded in the manifest.
void write_dataset_files(const std::filesystem::path& root, std::string_view name, Split split, const Tensor& raw_images,
                         std::span<const int> labels, int num_classes, const NormalizationStats& stats);

/// Uniform sample without replacement of `size` images of class_id.
AssociationBatch sample_association(const LabeledDataset& dataset, int class_id, int64_t size, uint64_t seed);

}  // namespace gencond
