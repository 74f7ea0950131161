#pragma once

#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gencond/condense.hpp"
#include "gencond/datasets.hpp"
#include "gencond/eval.hpp"

namespace gencond {

/// Fully resolved configuration tree with typed views of each section.
///
/// Sections and defaults (toy-blobs preset in brackets where it differs):
///   dataset.name "toy-blobs", dataset.root "" (GENCOND_DATA_ROOT, else ./data),
///   dataset.toy.{num_classes 3, per_class 100, image_size 16, seed 7}
///   networks.{feature_width 128 [32], feature_depth 3, generator_width 128 [32], disc_hidden [256, 256]}
///   codebook.{ipc 10, latent_dim 128 [32], embed_mode "class_feature"}
///   losses.{tau 0.1, tau_m 1.0, soft_labels false, normalize_similarity false,
///           w_adv 1, w_cls 1, w_feat 1, w_intra 1, w_inter 1}
///   condense.{N 100 [50], M 10 [5], repeats 5 [2], lr_z 0.01, lr_g 0.001, lr_theta 0.01,
///             momentum 0.5, lr_decay true, batch_classes 0, codes_per_class 0, assoc_size 64,
///             inner_batch 256, extractor_epochs 20, pretrain_steps 200 [0], seed 0}
///   eval.{runs 20, epochs 300, arch "convnet3", width 128 [32], lr 0.01, momentum 0.9,
///         batch_size 256, seed_base 0, threads 1, ipc 0 (= stored K)}
struct RunConfig {
  nlohmann::json tree;

  std::string dataset;
  std::filesystem::path data_root;
  ToyParams toy;
  CondenseConfig condense;
  EvalConfig eval;
  int eval_ipc = 0;
};

/// Defaults for a dataset name; toy-blobs gets its desk-scale preset.
nlohmann::json default_config_tree(std::string_view dataset);

/// Sets `section.key` (dotted path) from text. The value is parsed as JSON
/// when possible, else taken as a string. Unknown keys raise ConfigError.
void apply_override(nlohmann::json& tree, std::string_view dotted_key, std::string_view value);

/// Recursively merges `patch` into `tree`; every key must already exist.
void merge_config(nlohmann::json& tree, const nlohmann::json& patch, const std::string& where = "");

/// Preset for the dataset (taken from overrides, then file, then toy-blobs),
/// then the file, then `key=value` overrides, validated into typed sections.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides);

/// Typed view of an already merged tree.
RunConfig config_from_tree(const nlohmann::json& tree);

}  // namespace gencond
