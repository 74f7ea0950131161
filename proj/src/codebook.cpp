#include "gencond/codebook.hpp"

#include <cmath>
#include <numeric>

#include "gencond/errors.hpp"

namespace gencond {

Codebook::Codebook(int codes, int latent_dim, Rng& rng) {
  if (codes < 1 || latent_dim < 1) throw ArgumentError("codebook needs K >= 1 and C >= 1");
  Tensor z({codes, latent_dim});
  const double s = 1.0 / std::sqrt(static_cast<double>(latent_dim));
  for (auto& v : z.values()) v = s * rng.normal();
  z_ = Var(std::move(z), true);
}

Codebook::Codebook(Tensor z) {
  if (z.rank() != 2) throw ShapeError("codebook must be a K x C matrix, got " + shape_str(z.shape()));
  z_ = Var(std::move(z), true);
}

std::vector<int64_t> sample_code_indices(int codebook_size, CodeSampling mode, int count, uint64_t seed) {
  if (mode == CodeSampling::EvalEnumerate) {
    if (count != codebook_size) {
      throw ArgumentError("eval_enumerate needs count == K (" + std::to_string(codebook_size) + "), got " +
                          std::to_string(count));
    }
    std::vector<int64_t> idx(static_cast<size_t>(count));
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
  }
  if (count < 0) throw ArgumentError("negative code count");
  Rng rng(seed);
  std::vector<int64_t> idx(static_cast<size_t>(count));
  for (auto& i : idx) i = static_cast<int64_t>(rng.below(static_cast<uint64_t>(codebook_size)));
  return idx;
}

CodeSample Codebook::sample_codes(CodeSampling mode, int count, uint64_t seed) const {
  CodeSample s;
  s.indices = sample_code_indices(size(), mode, count, seed);
  s.codes = ops::gather_rows(z_, s.indices);
  return s;
}

ClassEmbeddingTable::ClassEmbeddingTable(Tensor table, EmbedMode mode, int latent_dim, Rng& rng)
    : ClassEmbeddingTable(table, mode, Linear(table.rank() == 2 ? table.dim(1) : 1, latent_dim, rng)) {}

ClassEmbeddingTable::ClassEmbeddingTable(Tensor table, EmbedMode mode, Linear projection)
    : table_(std::move(table)), mode_(mode), projection_(std::move(projection)) {
  if (table_.rank() != 2 || table_.dim(0) < 1) throw ShapeError("embedding table must be [num_classes, E]");
  if (projection_.in_features() != table_.dim(1)) {
    throw ShapeError("projection input width " + std::to_string(projection_.in_features()) +
                     " does not match embedding width " + std::to_string(table_.dim(1)));
  }
}

void ClassEmbeddingTable::set_row(int class_id, std::span<const double> values) {
  if (class_id < 0 || class_id >= num_classes() || static_cast<int64_t>(values.size()) != table_.dim(1)) {
    throw ShapeError("set_row: bad class id or width");
  }
  std::copy(values.begin(), values.end(), table_.data() + class_id * table_.dim(1));
}

Var ClassEmbeddingTable::rows(std::span<const int> classes) const {
  std::vector<int64_t> idx(classes.begin(), classes.end());
  return Var(table_.gather_rows(idx), false);
}

Var ClassEmbeddingTable::standardized_rows(std::span<const int> classes) const {
  const int64_t n = table_.dim(0), e = table_.dim(1);
  std::vector<double> mean(static_cast<size_t>(e), 0.0), inv(static_cast<size_t>(e), 0.0);
  for (int64_t j = 0; j < e; ++j) {
    double s = 0.0, ss = 0.0;
    for (int64_t y = 0; y < n; ++y) s += table_[static_cast<size_t>(y * e + j)];
    const double m = s / static_cast<double>(n);
    for (int64_t y = 0; y < n; ++y) ss += (table_[static_cast<size_t>(y * e + j)] - m) * (table_[static_cast<size_t>(y * e + j)] - m);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    mean[static_cast<size_t>(j)] = m;
    inv[static_cast<size_t>(j)] = sd > 1e-8 ? 1.0 / sd : 0.0;
  }
  Tensor out({static_cast<int64_t>(classes.size()), e});
  for (size_t i = 0; i < classes.size(); ++i) {
    const int y = classes[i];
    if (y < 0 || y >= n) throw ArgumentError("class id " + std::to_string(y) + " out of range");
    for (int64_t j = 0; j < e; ++j) {
      out[i * static_cast<size_t>(e) + static_cast<size_t>(j)] =
          (table_[static_cast<size_t>(y * e + j)] - mean[static_cast<size_t>(j)]) * inv[static_cast<size_t>(j)];
    }
  }
  return Var(std::move(out), false);
}

ParamList ClassEmbeddingTable::parameters() const {
  ParamList out;
  projection_.collect("embed.projection", out);
  return out;
}

Tensor class_feature_table(const FeatureNet& extractor, const LabeledDataset& dataset, int64_t batch_size) {
  NoGradGuard no_grad;
  const auto per_class = dataset.class_indices();
  const int64_t width = extractor.config().width;
  Tensor table({dataset.num_classes, width});
  for (int c = 0; c < dataset.num_classes; ++c) {
    const auto& idx = per_class[static_cast<size_t>(c)];
    if (idx.empty()) throw ArgumentError("class " + std::to_string(c) + " has no images; cannot build its embedding");
    std::vector<double> acc(static_cast<size_t>(width), 0.0);
    for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(batch_size)) {
      const size_t end = std::min(idx.size(), start + static_cast<size_t>(batch_size));
      const std::span<const int64_t> chunk(idx.data() + start, end - start);
      const Var pooled = extractor.pooled_last(Var(dataset.gather(chunk)));
      for (size_t r = 0; r < chunk.size(); ++r)
        for (int64_t j = 0; j < width; ++j) acc[static_cast<size_t>(j)] += pooled.value()[r * static_cast<size_t>(width) + static_cast<size_t>(j)];
    }
    for (int64_t j = 0; j < width; ++j) table[static_cast<size_t>(c * width + j)] = acc[static_cast<size_t>(j)] / static_cast<double>(idx.size());
  }
  return table;
}

Tensor onehot_table(int num_classes) {
  Tensor t({num_classes, num_classes});
  for (int c = 0; c < num_classes; ++c) t[static_cast<size_t>(c * num_classes + c)] = 1.0;
  return t;
}

ClassEmbeddingTable build_class_embeddings(const FeatureNet& extractor, const LabeledDataset& dataset, int latent_dim,
                                           Rng& rng) {
  return ClassEmbeddingTable(class_feature_table(extractor, dataset), EmbedMode::ClassFeature, latent_dim, rng);
}

Var condition_input(const Var& codes, const Var& class_embeds, const ClassEmbeddingTable& table) {
  if (class_embeds.value().rank() != 2 || class_embeds.dim(1) != table.embed_dim()) {
    throw ShapeError("class embeddings " + shape_str(class_embeds.shape()) + " do not have width E=" +
                     std::to_string(table.embed_dim()));
  }
  if (codes.value().rank() != 2 || codes.dim(1) != table.latent_dim() || codes.dim(0) != class_embeds.dim(0)) {
    throw ShapeError("codes " + shape_str(codes.shape()) + " do not match latent width C=" +
                     std::to_string(table.latent_dim()) + " or batch of embeddings");
  }
  return ops::concat_cols(codes, table.project(class_embeds));
}

}  // namespace gencond
