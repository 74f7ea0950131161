// gencond: condense a labeled image dataset into a codebook + generator and
// score the synthesized set against coreset baselines.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "gencond/condense.hpp"
#include "gencond/errors.hpp"
#include "gencond/eval.hpp"
#include "gencond/run_config.hpp"
#include "gencond/training.hpp"
#include "gencond/visualize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gencond;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::optional<std::string> config;
  std::string out = "runs/latest";
  std::optional<uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
  cmd->add_option("--seed", c.seed, "seed (condense.seed, or eval.seed_base for scoring commands)");
  cmd->allow_extras();
}

/// Remaining `--section.key=value` arguments become overrides.
std::vector<std::string> overrides_of(const CLI::App* cmd) {
  std::vector<std::string> out;
  for (const auto& arg : cmd->remaining()) {
    if (arg.rfind("--", 0) != 0 || arg.find('=') == std::string::npos) {
      throw UsageError("unexpected argument '" + arg + "'; overrides look like --section.key=value");
    }
    out.push_back(arg.substr(2));
  }
  return out;
}

RunConfig resolve(const Common& c, std::vector<std::string> overrides, const char* seed_key,
                  const std::vector<std::string>& preset = {}) {
  overrides.insert(overrides.begin(), preset.begin(), preset.end());
  if (c.seed) overrides.push_back(std::string(seed_key) + "=" + std::to_string(*c.seed));
  std::optional<fs::path> file;
  if (c.config) file = *c.config;
  return resolve_config(file, overrides);
}

LabeledDataset load(const RunConfig& rc, Split split) { return load_dataset(rc.dataset, rc.data_root, split, rc.toy); }

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw LoadError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

/// Dataset section stored with a checkpoint, replayed unless overridden.
std::vector<std::string> dataset_preset(const CondensedModel& m, const std::vector<std::string>& overrides) {
  const bool overridden = std::any_of(overrides.begin(), overrides.end(),
                                      [](const std::string& o) { return o.rfind("dataset.", 0) == 0; });
  if (overridden || !m.provenance.contains("data")) return {};
  const json& d = m.provenance["data"];
  std::vector<std::string> out{"dataset.name=" + d.at("name").get<std::string>()};
  for (const auto& [k, v] : d.at("toy").items()) out.push_back("dataset.toy." + k + "=" + v.dump());
  return out;
}

int cmd_condense(const Common& c, const CLI::App* cmd) {
  const RunConfig rc = resolve(c, overrides_of(cmd), "condense.seed");
  const fs::path out = c.out;
  fs::create_directories(out);
  const LabeledDataset train = load(rc, Split::Train);

  std::ofstream metrics(out / "metrics.ndjson", std::ios::trunc);
  const auto t0 = std::chrono::steady_clock::now();
  CondenseResult result = condense(train, rc.condense, [&](const StepRecord& r) { metrics << to_json(r).dump() << '\n'; });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  metrics.close();

  result.model.provenance["data"] = rc.tree["dataset"];
  result.model.provenance["resolved_config"] = rc.tree;
  save_checkpoint(result.model, out / "model.gcnd");

  const StepRecord last = result.trace.empty() ? StepRecord{} : result.trace.back();
  json run = {{"command", "condense"},
              {"config", rc.tree},
              {"seed", rc.condense.seed},
              {"version", build_version()},
              {"wall_clock_s", seconds},
              {"steps", result.trace.size()},
              {"final", to_json(last)},
              {"warnings", result.warnings},
              {"param_count",
               {{"generative", result.model.generative_param_count()},
                {"pixel", param_count(CondensedFormat::Pixel, train.num_classes, rc.condense.ipc, train.shape, rc.condense.model)}}}};
  write_json(out / "run.json", run);
  std::cout << "condensed " << train.name << " in " << result.trace.size() << " steps (" << seconds << " s), L_con "
            << last.con << "\ncheckpoint: " << (out / "model.gcnd").string() << '\n';
  return 0;
}

int cmd_synthesize(const Common& c, const CLI::App* cmd, const std::string& checkpoint, int ipc) {
  CondensedModel model = load_checkpoint(checkpoint);
  const auto overrides = overrides_of(cmd);
  const RunConfig rc = resolve(c, overrides, "eval.seed_base", dataset_preset(model, overrides));
  const int k = ipc > 0 ? ipc : (rc.eval_ipc > 0 ? rc.eval_ipc : model.codebook.size());
  if (k > model.codebook.size()) throw UsageError("ipc " + std::to_string(k) + " exceeds stored K " + std::to_string(model.codebook.size()));
  const SyntheticSet set = synthesize_set(model, k);
  NormalizationStats stats;
  stats.mean = model.provenance.at("stats").at("mean").get<std::vector<double>>();
  stats.std = model.provenance.at("stats").at("std").get<std::vector<double>>();
  const fs::path out = c.out;
  const std::string name = model.dataset + "-synthetic";
  write_dataset_files(out, name, Split::Train, denormalize(set.images, stats), set.labels, set.num_classes, stats);
  write_json(out / name / "provenance.json", {{"checkpoint", checkpoint}, {"ipc", k}, {"source_code", set.source}, {"config", rc.tree}});
  std::cout << "wrote " << set.size() << " images to " << (out / name).string() << '\n';
  return 0;
}

int cmd_evaluate(const Common& c, const CLI::App* cmd, const std::string& checkpoint, int ipc,
                 const std::vector<std::string>& archs) {
  CondensedModel model = load_checkpoint(checkpoint);
  const auto overrides = overrides_of(cmd);
  const RunConfig rc = resolve(c, overrides, "eval.seed_base", dataset_preset(model, overrides));
  const int k = ipc > 0 ? ipc : (rc.eval_ipc > 0 ? rc.eval_ipc : model.codebook.size());
  if (k > model.codebook.size()) throw UsageError("ipc " + std::to_string(k) + " exceeds stored K " + std::to_string(model.codebook.size()));
  const LabeledDataset test = load(rc, Split::Test);
  std::vector<std::string> list = archs.empty() ? std::vector<std::string>{rc.eval.arch} : archs;
  for (const auto& a : list) {
    if (!is_known_arch(a)) throw UsageError("unknown architecture '" + a + "'");
  }
  std::vector<EvalReport> reports = cross_arch_eval(model, test, list, rc.eval, k);
  const fs::path out = c.out;
  fs::create_directories(out);
  json all = json::array();
  for (auto& r : reports) {
    r.dataset = test.name;
    json j = to_json(r);
    j["checkpoint"] = checkpoint;
    j["resolved_config"] = rc.tree;
    j["seed_base"] = rc.eval.seed_base;
    all.push_back(j);
    std::cout << r.dataset << " condensed ipc=" << r.ipc << " " << r.arch << ": " << 100 * r.mean << " +- " << 100 * r.std
              << " % over " << r.per_run_acc.size() << " runs\n";
  }
  write_json(out / "report.json", all.size() == 1 ? all[0] : all);
  append_csv(out / "results.csv", reports, rc.eval.epochs);
  return 0;
}

int cmd_baseline(const Common& c, const CLI::App* cmd, const std::string& method_name, int ipc,
                 const std::optional<std::string>& checkpoint) {
  const CoresetMethod method = parse_coreset_method(method_name);
  std::optional<CondensedModel> model;
  if (checkpoint) model = load_checkpoint(*checkpoint);
  const auto overrides = overrides_of(cmd);
  const RunConfig rc = resolve(c, overrides, "eval.seed_base", model ? dataset_preset(*model, overrides) : std::vector<std::string>{});
  const int k = ipc > 0 ? ipc : (rc.eval_ipc > 0 ? rc.eval_ipc : rc.condense.ipc);
  const LabeledDataset train = load(rc, Split::Train);
  const LabeledDataset test = load(rc, Split::Test);

  FeatureNet extractor;
  if (model) {
    extractor = model->extractor;
  } else if (method != CoresetMethod::Random) {
    TrainOptions opt;
    opt.epochs = std::max(1, rc.condense.extractor_epochs);
    opt.seed = rc.condense.seed;
    extractor = train_extractor(
        train, FeatureNetConfig{train.shape, train.num_classes, rc.condense.model.feature_width, rc.condense.model.feature_depth},
        opt);
  }
  const SyntheticSet set = coreset_baseline(train, method, k, extractor, rc.eval.seed_base);
  EvalReport report = evaluate(set, test, rc.eval);
  report.method = "coreset:" + std::string(to_string(method));
  const fs::path out = c.out;
  fs::create_directories(out);
  json j = to_json(report);
  j["selected"] = set.source;
  j["resolved_config"] = rc.tree;
  j["seed_base"] = rc.eval.seed_base;
  write_json(out / "report.json", j);
  const std::vector<EvalReport> rows{report};
  append_csv(out / "results.csv", rows, rc.eval.epochs);
  std::cout << report.dataset << " " << report.method << " ipc=" << k << " " << report.arch << ": " << 100 * report.mean
            << " +- " << 100 * report.std << " %\n";
  return 0;
}

int cmd_visualize(const Common& c, const CLI::App* cmd, const std::string& checkpoint, int real_sample,
                  const std::string& feature_source) {
  CondensedModel model = load_checkpoint(checkpoint);
  const auto overrides = overrides_of(cmd);
  const RunConfig rc = resolve(c, overrides, "eval.seed_base", dataset_preset(model, overrides));
  const int k = rc.eval_ipc > 0 ? std::min(rc.eval_ipc, model.codebook.size()) : model.codebook.size();
  const LabeledDataset train = load(rc, Split::Train);
  if (feature_source != "matcher" && feature_source != "extractor") throw UsageError("--features must be matcher or extractor");
  const FeatureNet& net = feature_source == "matcher" ? model.matcher : model.extractor;

  const SyntheticSet synth = synthesize_set(model, k);
  std::vector<int64_t> idx(static_cast<size_t>(train.size()));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(Rng::mix(rc.eval.seed_base ^ 0x766973ULL));
  rng.shuffle(idx);
  idx.resize(static_cast<size_t>(std::min<int64_t>(real_sample, train.size())));
  std::sort(idx.begin(), idx.end());

  const Tensor real_feats = extract_features(net, train.gather(idx));
  const Tensor synth_feats = extract_features(net, synth.images);
  const Pca2 pca = fit_pca2(real_feats);
  const Tensor pr = pca.project(real_feats), ps = pca.project(synth_feats);
  std::vector<ScatterPoint> points;
  for (size_t i = 0; i < idx.size(); ++i) points.push_back({pr[2 * i], pr[2 * i + 1], train.labels[static_cast<size_t>(idx[i])], false});
  for (int64_t i = 0; i < synth.size(); ++i) {
    points.push_back({ps[static_cast<size_t>(2 * i)], ps[static_cast<size_t>(2 * i + 1)], synth.labels[static_cast<size_t>(i)], true});
  }
  const fs::path out = c.out;
  fs::create_directories(out);
  write_scatter_svg(out / "scatter.svg", points, train.num_classes);
  write_scatter_csv(out / "scatter.csv", points);
  write_json(out / "visualize.json", {{"checkpoint", checkpoint},
                                      {"features", feature_source},
                                      {"real_indices", idx},
                                      {"pca_variance", pca.variance},
                                      {"resolved_config", rc.tree}});
  std::cout << "wrote " << points.size() << " points to " << (out / "scatter.svg").string() << '\n';
  return 0;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

int cmd_report(const std::string& dir) {
  if (!fs::is_directory(dir)) throw LoadError("results directory " + dir + " does not exist");
  struct Row {
    std::string run_id;
    std::vector<std::string> cells;
  };
  std::vector<Row> rows;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() == "results.csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  const auto header = split_csv(csv_header());
  for (const auto& file : files) {
    std::ifstream f(file);
    std::string line;
    std::string run_id = fs::relative(file.parent_path(), dir).generic_string();
    if (run_id.empty()) run_id = ".";
    bool first = true;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      if (first && line == csv_header()) {
        first = false;
        continue;
      }
      first = false;
      auto cells = split_csv(line);
      if (cells.size() != header.size()) throw IntegrityError("malformed row in " + file.string() + ": " + line);
      rows.push_back({run_id, cells});
    }
  }
  if (rows.empty()) {
    std::cout << "no results in " << dir << '\n';
    return 0;
  }
  // (dataset, ipc, method)
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    const int ia = std::stoi(a.cells[2]), ib = std::stoi(b.cells[2]);
    return std::tie(a.cells[0], ia, a.cells[1]) < std::tie(b.cells[0], ib, b.cells[1]);
  });
  std::ofstream summary(fs::path(dir) / "summary.csv");
  summary << "run_id," << csv_header() << '\n';
  std::printf("%-18s %-18s %4s %-9s %16s %5s %6s  %s\n", "dataset", "method", "ipc", "arch", "acc %", "runs", "epochs", "run_id");
  for (const auto& r : rows) {
    summary << r.run_id;
    for (const auto& cell : r.cells) summary << ',' << cell;
    summary << '\n';
    const double mean = std::stod(r.cells[4]) * 100, sd = std::stod(r.cells[5]) * 100;
    std::printf("%-18s %-18s %4s %-9s %8.2f +- %5.2f %5s %6s  %s\n", r.cells[0].c_str(), r.cells[1].c_str(), r.cells[2].c_str(),
                r.cells[3].c_str(), mean, sd, r.cells[6].c_str(), r.cells[7].c_str(), r.run_id.c_str());
  }
  return 0;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ArgumentError*>(&e)) {
    return 2;
  }
  if (dynamic_cast<const LoadError*>(&e) || dynamic_cast<const IntegrityError*>(&e)) return 3;
  if (dynamic_cast<const DivergenceError*>(&e)) return 4;
  return 1;
}

std::string kind_of(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const ArgumentError*>(&e)) return "argument";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const LoadError*>(&e)) return "load";
  if (dynamic_cast<const IntegrityError*>(&e)) return "integrity";
  if (dynamic_cast<const DivergenceError*>(&e)) return "divergence";
  return "internal";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Condense a labeled image dataset into a generative model and evaluate it."};
  app.require_subcommand(1);

  Common common;
  std::string checkpoint, method = "random", results_dir, features = "matcher";
  std::optional<std::string> baseline_checkpoint;
  int ipc = 0, real_sample = 300;
  std::vector<std::string> archs;

  auto* condense_cmd = app.add_subcommand("condense", "run the bi-level condensation and write a checkpoint");
  add_common(condense_cmd, common);

  auto* synth_cmd = app.add_subcommand("synthesize", "write the synthetic set of a checkpoint as a dataset");
  add_common(synth_cmd, common);
  synth_cmd->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  synth_cmd->add_option("--ipc", ipc, "images per class (default: stored K)");

  auto* eval_cmd = app.add_subcommand("evaluate", "train fresh models on the synthetic set and test on real data");
  add_common(eval_cmd, common);
  eval_cmd->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--ipc", ipc, "images per class (default: stored K)");
  eval_cmd->add_option("--arch", archs, "evaluation architectures (default: eval.arch)");

  auto* base_cmd = app.add_subcommand("baseline", "evaluate a coreset of real images");
  add_common(base_cmd, common);
  base_cmd->add_option("--method", method, "random, herding or k_center")->capture_default_str();
  base_cmd->add_option("--ipc", ipc, "images per class (default: eval.ipc, else codebook.ipc)");
  base_cmd->add_option("--checkpoint", baseline_checkpoint, "take the feature extractor (and dataset) from a checkpoint");

  auto* vis_cmd = app.add_subcommand("visualize", "2-D PCA scatter of real and synthetic features");
  add_common(vis_cmd, common);
  vis_cmd->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  vis_cmd->add_option("--real", real_sample, "number of real images to plot")->capture_default_str();
  vis_cmd->add_option("--features", features, "matcher (final feature net) or extractor")->capture_default_str();

  auto* report_cmd = app.add_subcommand("report", "collect results.csv files into one table");
  report_cmd->add_option("results_dir", results_dir, "directory searched recursively")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0) std::cerr << json{{"error", {{"kind", "usage"}, {"message", e.what()}}}}.dump() << '\n';
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (condense_cmd->parsed()) return cmd_condense(common, condense_cmd);
    if (synth_cmd->parsed()) return cmd_synthesize(common, synth_cmd, checkpoint, ipc);
    if (eval_cmd->parsed()) return cmd_evaluate(common, eval_cmd, checkpoint, ipc, archs);
    if (base_cmd->parsed()) return cmd_baseline(common, base_cmd, method, ipc, baseline_checkpoint);
    if (vis_cmd->parsed()) return cmd_visualize(common, vis_cmd, checkpoint, real_sample, features);
    if (report_cmd->parsed()) return cmd_report(results_dir);
  } catch (const std::exception& e) {
    json record = {{"error", {{"command", command}, {"kind", kind_of(e)}, {"message", e.what()}}}};
    if (const auto* d = dynamic_cast<const DivergenceError*>(&e)) record["error"]["term"] = d->term();
    std::cerr << record.dump() << '\n';
    return exit_code_for(e);
  }
  return 1;
}
