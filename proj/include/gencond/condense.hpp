#pragma once

#include <filesystem>
#include <functional>
#include <json.hpp>
#include <string>
#include <vector>

#include "gencond/codebook.hpp"
#include "gencond/datasets.hpp"
#include "gencond/losses.hpp"
#include "gencond/networks.hpp"
#include "gencond/optim.hpp"

namespace gencond {

struct CondenseConfig {
  int outer_iters = 50;   // N
  int inner_steps = 5;    // M: (Z, G) updates per outer iteration
  int repeats = 2;        // re-initializations of the matching network
  int ipc = 10;           // K, rows of the codebook
  double lr_z = 0.01;
  double lr_g = 0.001;    // also used for the projection, intra anchor and discriminator
  double lr_theta = 0.01;
  double momentum = 0.5;
  bool lr_decay = true;   // linear decay to zero over each optimizer's run
  int batch_classes = 0;  // 0: min(num_classes, 10)
  int codes_per_class = 0;  // 0: min(K, 10)
  int assoc_size = 64;
  int inner_batch = 256;
  int extractor_epochs = 20;
  int pretrain_steps = 0;  // generator warm start with L_adv + L_c only
  uint64_t seed = 0;
  LossConfig loss;
  ModelConfig model;

  void validate() const;
};

nlohmann::json to_json(const CondenseConfig& config);
nlohmann::json to_json(const LossConfig& config);
nlohmann::json to_json(const ModelConfig& config);
/// Strict readers: every key is optional, unknown keys raise ConfigError.
CondenseConfig condense_config_from_json(const nlohmann::json& j, CondenseConfig base = {});
LossConfig loss_config_from_json(const nlohmann::json& j, LossConfig base = {});
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

/// One (Z, G) update's loss values.
struct StepRecord {
  int64_t step = 0;
  int repeat = 0;
  double d_loss = 0.0;  // discriminator side of the adversarial game
  double g_loss = 0.0;  // generator side
  double cls = 0.0;
  double feat = 0.0;
  double intra = 0.0;
  double inter = 0.0;
  double con = 0.0;
};

nlohmann::json to_json(const StepRecord& r);

/// The condensed dataset: everything needed to synthesize it, plus the
/// extractor that defined its class embeddings.
struct CondensedModel {
  std::string dataset;
  ImageShape image;
  int num_classes = 0;
  ModelConfig model;
  Codebook codebook;
  Generator generator;
  ClassEmbeddingTable embeddings;
  Linear intra_anchor;   // E -> F map of c(y) used as the intra-class positive
  FeatureNet extractor;  // well-trained network behind the class-feature table
  FeatureNet matcher;    // final state of the matching network
  nlohmann::json config;
  nlohmann::json provenance;

  /// |Z| + |G| + |table| + |projection|.
  int64_t generative_param_count() const;
  /// Named tensors in checkpoint order (parameters and buffers).
  std::vector<std::pair<std::string, Tensor*>> tensors();
};

/// Drives the bi-level loop one phase at a time. condense() is the usual entry
/// point; tests use the individual phases to observe parameter isolation.
class Condenser {
 public:
  Condenser(const LabeledDataset& train, CondenseConfig config);

  /// Fresh matching network and inner optimizer.
  void begin_repeat();
  /// Updates D, then (Z, G, projection, anchor) with the condensation loss.
  StepRecord outer_step();
  /// One classification step of the matching network on real images.
  void inner_step();
  /// Runs every repeat/outer/inner iteration the config asks for.
  void run(const std::function<void(const StepRecord&)>& on_step = {});
  /// Generator warm start with adversarial + classification terms only.
  void pretrain_generator(int steps);

  /// Model from the current state, parameters rounded to 32-bit floats.
  CondensedModel finish() &&;

  ParamList theta_params() const { return matcher_.parameters(); }
  /// Z, G, projection, intra anchor and D.
  ParamList outer_params() const;
  const std::vector<StepRecord>& trace() const { return trace_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  const CondenseConfig& config() const { return config_; }
  const FeatureNet& extractor() const { return extractor_; }
  const FeatureNet& matcher() const { return matcher_; }
  const Codebook& codebook() const { return codebook_; }
  const Generator& generator() const { return generator_; }
  const ClassEmbeddingTable& embeddings() const { return embeddings_; }

 private:
  StepRecord outer_step_with(const FeatureNet& net, const LossWeights& weights, Sgd* z_opt, Sgd& g_opt, Sgd& d_opt,
                             bool record);
  uint64_t stream_seed(uint64_t tag, int64_t counter) const;

  const LabeledDataset& train_;
  CondenseConfig config_;
  std::vector<std::vector<int64_t>> class_index_;
  int batch_classes_ = 0;
  int codes_per_class_ = 0;

  FeatureNet extractor_;
  Tensor soft_targets_;  // per-class mean extractor softmax, [classes, classes]
  Codebook codebook_;
  Generator generator_;
  ClassEmbeddingTable embeddings_;
  Linear intra_anchor_;
  Discriminator discriminator_;
  FeatureNet matcher_;

  Sgd opt_z_, opt_g_, opt_d_, opt_theta_;
  int repeat_ = -1;
  int64_t outer_count_ = 0;
  int64_t inner_count_ = 0;
  std::vector<StepRecord> trace_;
  std::vector<std::string> warnings_;
};

struct CondenseResult {
  CondensedModel model;
  std::vector<StepRecord> trace;
  std::vector<std::string> warnings;
};

CondenseResult condense(const LabeledDataset& train, const CondenseConfig& config,
                        const std::function<void(const StepRecord&)>& on_step = {});

/// One classification step on theta using a real batch; (Z, G, D) are not touched.
void inner_update(FeatureNet& net, Sgd& optimizer, const Tensor& images, std::span<const int> labels);

/// For each class y and code k < ipc: G(z_k, c(y)) in inference mode. Class-major order.
SyntheticSet synthesize_set(const CondensedModel& model, int ipc);

void save_checkpoint(CondensedModel& model, const std::filesystem::path& path);
CondensedModel load_checkpoint(const std::filesystem::path& path);

/// `git describe` of the source tree at build time, or "unknown".
std::string build_version();

}  // namespace gencond
