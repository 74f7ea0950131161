#pragma once

#include <span>
#include <vector>

#include "gencond/networks.hpp"

namespace gencond {

enum class CodeSampling {
  TrainUniform,   // i.i.d. uniform rows, with replacement
  EvalEnumerate,  // every row once, in index order
};

struct CodeSample {
  Var codes;  // [count, C], on the tape when Z is trainable
  std::vector<int64_t> indices;
};

/// K x C learnable latent matrix shared by every class.
class Codebook {
 public:
  Codebook() = default;
  /// Entries drawn i.i.d. N(0, 1) / sqrt(C).
  Codebook(int codes, int latent_dim, Rng& rng);
  explicit Codebook(Tensor z);

  int size() const { return static_cast<int>(z_.dim(0)); }
  int latent_dim() const { return static_cast<int>(z_.dim(1)); }
  const Var& z() const { return z_; }

  CodeSample sample_codes(CodeSampling mode, int count, uint64_t seed) const;
  ParamList parameters() const { return {{"codebook.Z", z_}}; }

 private:
  Var z_;
};

std::vector<int64_t> sample_code_indices(int codebook_size, CodeSampling mode, int count, uint64_t seed);

/// Per-class condition vectors c(y) plus the learnable projection E -> C.
class ClassEmbeddingTable {
 public:
  ClassEmbeddingTable() = default;
  ClassEmbeddingTable(Tensor table, EmbedMode mode, int latent_dim, Rng& rng);
  ClassEmbeddingTable(Tensor table, EmbedMode mode, Linear projection);

  int num_classes() const { return static_cast<int>(table_.dim(0)); }
  int embed_dim() const { return static_cast<int>(table_.dim(1)); }
  int latent_dim() const { return static_cast<int>(projection_.out_features()); }
  EmbedMode mode() const { return mode_; }

  const Tensor& table() const { return table_; }
  Tensor& mutable_table() { return table_; }
  /// Online mode refreshes rows from the current feature network.
  void set_row(int class_id, std::span<const double> values);
  const Linear& projection() const { return projection_; }

  /// Constant [B, E] rows of the table for the given labels.
  Var rows(std::span<const int> classes) const;
  /// Rows standardized per column across classes ((c - mean) / std; constant
  /// columns map to 0). Used as the condition fed to the learnable maps.
  Var standardized_rows(std::span<const int> classes) const;
  /// [B, E] -> [B, C].
  Var project(const Var& embeds) const { return projection_(embeds); }

  ParamList parameters() const;

 private:
  Tensor table_;
  EmbedMode mode_ = EmbedMode::ClassFeature;
  Linear projection_;
};

/// Row y = mean over class-y images of the spatially pooled last-block feature.
Tensor class_feature_table(const FeatureNet& extractor, const LabeledDataset& dataset, int64_t batch_size = 256);
Tensor onehot_table(int num_classes);

/// class_feature table from a trained extractor with a fresh projection.
ClassEmbeddingTable build_class_embeddings(const FeatureNet& extractor, const LabeledDataset& dataset, int latent_dim,
                                           Rng& rng);

/// [code ; projection(class_embed)], batched: codes [B, C], class_embeds [B, E] -> [B, 2C].
Var condition_input(const Var& codes, const Var& class_embeds, const ClassEmbeddingTable& table);

}  // namespace gencond
