#pragma once

#include <filesystem>
#include <functional>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "gencond/condense.hpp"
#include "gencond/datasets.hpp"
#include "gencond/networks.hpp"

namespace gencond {

struct EvalConfig {
  int runs = 20;
  int epochs = 300;
  std::string arch = "convnet3";
  int width = 128;  // channels of convnet evaluation models
  double lr = 0.01;
  double momentum = 0.9;
  int batch_size = 256;  // capped at |S|
  uint64_t seed_base = 0;
  int threads = 1;

  void validate() const;
};

nlohmann::json to_json(const EvalConfig& config);
EvalConfig eval_config_from_json(const nlohmann::json& j, EvalConfig base = {});

struct EvalReport {
  std::vector<double> per_run_acc;  // indexed by run, seed = seed_base + run
  double mean = 0.0;
  double std = 0.0;  // population
  std::string dataset;
  std::string method;
  std::string arch;
  int ipc = 0;
  nlohmann::json config;
};

nlohmann::json to_json(const EvalReport& report);

/// Trains one fresh model on `synth` and returns its test accuracy.
using RunTrainer = std::function<double(const SyntheticSet& synth, const LabeledDataset& test, const EvalConfig& config,
                                        uint64_t seed)>;

/// Default trainer: fresh `config.arch`, SGD on the synthetic set only, top-1 on test.
double train_and_test(const SyntheticSet& synth, const LabeledDataset& test, const EvalConfig& config, uint64_t seed);

/// Mean and population std; independent of the order of `accs`.
void aggregate(EvalReport& report);

/// `config.runs` independent trainings with seeds seed_base + r.
EvalReport evaluate(const SyntheticSet& synth, const LabeledDataset& test, const EvalConfig& config,
                    const RunTrainer& trainer = train_and_test);

enum class CoresetMethod { Random, Herding, KCenter };
std::string_view to_string(CoresetMethod method);
CoresetMethod parse_coreset_method(std::string_view text);

/// Greedy herding over rows of `feats` visited in `order`: step t adds the
/// candidate minimizing |mean(feats) - (sum of selected + f) / t|. Earlier
/// positions in `order` win ties. Returns row indices.
std::vector<int64_t> herding_select(const Tensor& feats, std::span<const int64_t> order, int count);
/// Greedy farthest-point selection, started from the row nearest the mean.
std::vector<int64_t> kcenter_select(const Tensor& feats, std::span<const int64_t> order, int count);

/// Per-class real-image subset. Candidates are visited in a seeded per-class
/// permutation; `random` takes its first ipc entries.
SyntheticSet coreset_baseline(const LabeledDataset& dataset, CoresetMethod method, int ipc, const FeatureNet& extractor,
                              uint64_t seed);

/// One evaluate() per architecture on the same synthesized set.
std::vector<EvalReport> cross_arch_eval(const CondensedModel& model, const LabeledDataset& test,
                                        std::span<const std::string> archs, const EvalConfig& config, int ipc = 0,
                                        const RunTrainer& trainer = train_and_test);

/// Summary table rows: dataset,method,ipc,arch,mean,std,runs,epochs.
std::string csv_header();
std::string csv_row(const EvalReport& report, int epochs);
/// Appends rows, writing the header first when the file is new.
void append_csv(const std::filesystem::path& path, std::span<const EvalReport> reports, int epochs);

}  // namespace gencond
