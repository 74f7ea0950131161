#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "gencond/autograd.hpp"
#include "gencond/datasets.hpp"
#include "gencond/ops.hpp"
#include "gencond/rng.hpp"

namespace gencond {

struct NamedParam {
  std::string name;
  Var var;
};

/// Non-learned state that still belongs in a checkpoint (batch-norm statistics).
struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

using ParamList = std::vector<NamedParam>;

int64_t count_params(const ParamList& params);
/// Combined checksum of every parameter value, in list order.
uint64_t params_checksum(const ParamList& params);
void set_trainable(const ParamList& params, bool on);
void zero_grads(const ParamList& params);

// ---------------------------------------------------------------------------
// Layers

struct Linear {
  Var weight;  // [out, in]
  Var bias;    // [out]

  Linear() = default;
  Linear(int64_t in, int64_t out, Rng& rng);
  Var operator()(const Var& x) const { return ops::linear(x, weight, bias); }
  int64_t in_features() const { return weight.dim(1); }
  int64_t out_features() const { return weight.dim(0); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct Conv2d {
  Var weight;  // [out, in, k, k]
  Var bias;    // [out]

  Conv2d() = default;
  Conv2d(int64_t in, int64_t out, int64_t kernel, Rng& rng);
  Var operator()(const Var& x) const { return ops::conv2d(x, weight, bias); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct InstanceNorm2d {
  Var gamma, beta;

  InstanceNorm2d() = default;
  explicit InstanceNorm2d(int64_t channels);
  Var operator()(const Var& x) const { return ops::instance_norm(x, gamma, beta); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct BatchNorm2d {
  Var gamma, beta;
  mutable ops::BatchNormStats stats;  // updated by training-mode forward passes

  BatchNorm2d() = default;
  explicit BatchNorm2d(int64_t channels);
  Var operator()(const Var& x, bool training) const { return ops::batch_norm(x, gamma, beta, stats, training); }
  void collect(const std::string& prefix, ParamList& out) const;
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out);
};

// ---------------------------------------------------------------------------
// Classifiers

/// Any network trained by the evaluation protocol.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual Var logits(const Var& images) = 0;
  virtual ParamList parameters() const = 0;
  virtual std::string arch() const = 0;
};

struct FeatureNetConfig {
  ImageShape input;
  int num_classes = 10;
  int width = 128;
  int depth = 3;

  int final_spatial_h() const;
  int final_spatial_w() const;
  /// Length of the flattened final block output.
  int64_t feature_dim() const { return int64_t{width} * final_spatial_h() * final_spatial_w(); }
};

struct FeatureOutput {
  std::vector<Var> layers;  // one [B, width, h_l, w_l] tensor per block
  Var final;                // [B, feature_dim]
  Var logits;               // [B, num_classes]
};

/// Conv blocks (3x3 conv, instance norm, ReLU, 2x2 average pool) and a linear head.
class FeatureNet final : public Classifier {
 public:
  FeatureNet() = default;
  FeatureNet(const FeatureNetConfig& config, Rng& rng);

  FeatureOutput forward(const Var& images) const;
  /// Spatial mean of the last (lowest-resolution) block: [B, width].
  Var pooled_last(const Var& images) const;

  Var logits(const Var& images) override { return forward(images).logits; }
  ParamList parameters() const override;
  std::string arch() const override { return "convnet" + std::to_string(config_.depth); }
  const FeatureNetConfig& config() const { return config_; }

 private:
  struct Block {
    Conv2d conv;
    InstanceNorm2d norm;
  };
  void check_input(const Var& images) const;

  FeatureNetConfig config_;
  std::vector<Block> blocks_;
  Linear head_;
};

/// Two hidden layers of 128 units over flattened pixels.
class MlpNet final : public Classifier {
 public:
  MlpNet(ImageShape input, int num_classes, Rng& rng, int hidden = 128);
  Var logits(const Var& images) override;
  ParamList parameters() const override;
  std::string arch() const override { return "mlp"; }

 private:
  ImageShape input_;
  Linear fc1_, fc2_, fc3_;
};

/// Architecture zoo: "convnet2", "convnet3", "convnet4" (alias "convnet" = 3), "mlp".
std::unique_ptr<Classifier> make_classifier(std::string_view arch, ImageShape input, int num_classes, int width,
                                            Rng& rng);
bool is_known_arch(std::string_view arch);

// ---------------------------------------------------------------------------
// Generator

struct GeneratorConfig {
  int latent_dim = 128;  // C: width of a code and of a projected class embedding
  int width = 128;       // channels inside the upsampling blocks
  int blocks = 3;
  int base_size = 4;     // spatial size after the input projection
  int out_channels = 3;

  int image_size() const { return base_size << blocks; }
};

/// Upsampling block count for a square image: halve while the result is an
/// integer of at least 4 (32 -> 3 blocks, 64 -> 4, 28 -> 2, 16 -> 2).
int generator_blocks_for(int image_size);
GeneratorConfig generator_config_for(ImageShape image, int latent_dim, int width);

class Generator {
 public:
  Generator() = default;
  Generator(const GeneratorConfig& config, Rng& rng);

  /// input is [B, 2C] = [code ; projected class embedding].
  /// Training mode normalizes with batch statistics and updates the running ones.
  Var forward(const Var& input, bool training) const;
  /// Concatenates codes [B, C] with projected embeddings [B, C] and runs forward().
  Var generate(const Var& codes, const Var& class_embeds, bool training) const;

  ParamList parameters() const;
  std::vector<NamedBuffer> buffers();
  const GeneratorConfig& config() const { return config_; }

 private:
  struct Stage {
    Conv2d conv;
    BatchNorm2d norm;
  };
  struct Block {
    Stage first, second;
  };

  GeneratorConfig config_;
  Linear input_proj_;
  std::vector<Block> blocks_;
  Conv2d head_;
};

int64_t generator_param_count(const GeneratorConfig& config);

// ---------------------------------------------------------------------------
// Discriminator

struct DiscriminatorConfig {
  int64_t feature_dim = 0;
  int64_t embed_dim = 0;
  std::vector<int> hidden{256, 256};
};

/// MLP over [feature ; class embedding] ending in a sigmoid.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const DiscriminatorConfig& config, Rng& rng);

  /// features [B, F], class_embeds [B, E] -> probabilities [B].
  Var forward(const Var& features, const Var& class_embeds) const;
  ParamList parameters() const;
  const DiscriminatorConfig& config() const { return config_; }

 private:
  DiscriminatorConfig config_;
  std::vector<Linear> layers_;
};

// ---------------------------------------------------------------------------
// Parameter accounting

enum class EmbedMode { ClassFeature, OneHot, Online };
std::string_view to_string(EmbedMode mode);
EmbedMode parse_embed_mode(std::string_view text);

/// Architecture hyperparameters shared by condensation and checkpoints.
struct ModelConfig {
  int feature_width = 128;
  int feature_depth = 3;
  int latent_dim = 128;
  int generator_width = 128;
  std::vector<int> disc_hidden{256, 256};
  EmbedMode embed_mode = EmbedMode::ClassFeature;

  /// Width E of a class-embedding row.
  int embed_dim(int num_classes) const { return embed_mode == EmbedMode::OneHot ? num_classes : feature_width; }
};

enum class CondensedFormat { Generative, Pixel };

/// Pixel: ipc * classes * C*H*W. Generative: |Z| + |G| + |embedding table| + |projection|.
int64_t param_count(CondensedFormat format, int num_classes, int ipc, ImageShape image, const ModelConfig& model);

}  // namespace gencond
