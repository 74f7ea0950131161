#include "gencond/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "gencond/errors.hpp"
#include "gencond/training.hpp"

namespace gencond {

using nlohmann::json;

void EvalConfig::validate() const {
  if (runs < 1 || epochs < 1) throw ConfigError("eval: runs and epochs must be >= 1");
  if (!is_known_arch(arch)) throw ConfigError("eval: unknown architecture '" + arch + "'");
  if (width < 1 || batch_size < 1 || threads < 1) throw ConfigError("eval: width, batch_size and threads must be >= 1");
  if (lr < 0.0 || momentum < 0.0 || momentum >= 1.0) throw ConfigError("eval: invalid lr or momentum");
}

json to_json(const EvalConfig& c) {
  return {{"runs", c.runs},         {"epochs", c.epochs},         {"arch", c.arch},
          {"width", c.width},       {"lr", c.lr},                 {"momentum", c.momentum},
          {"batch_size", c.batch_size}, {"seed_base", c.seed_base}, {"threads", c.threads}};
}

EvalConfig eval_config_from_json(const json& j, EvalConfig c) {
  if (!j.is_object()) throw ConfigError("eval: expected an object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "runs") c.runs = value.get<int>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "arch") c.arch = value.get<std::string>();
      else if (key == "width") c.width = value.get<int>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "momentum") c.momentum = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "seed_base") c.seed_base = value.get<uint64_t>();
      else if (key == "threads") c.threads = value.get<int>();
      else throw ConfigError("unknown config key 'eval." + key + "'");
    } catch (const json::exception&) {
      throw ConfigError("config key 'eval." + key + "' has the wrong type");
    }
  }
  return c;
}

json to_json(const EvalReport& r) {
  return {{"dataset", r.dataset}, {"method", r.method}, {"arch", r.arch},           {"ipc", r.ipc},
          {"mean", r.mean},       {"std", r.std},       {"per_run_acc", r.per_run_acc}, {"config", r.config}};
}

void aggregate(EvalReport& report) {
  if (report.per_run_acc.empty()) throw ArgumentError("no runs to aggregate");
  std::vector<double> a = report.per_run_acc;
  std::sort(a.begin(), a.end());
  const auto n = static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a) s += v;
  const double mean = s / n;
  double ss = 0.0;
  for (double v : a) ss += (v - mean) * (v - mean);
  report.mean = mean;
  report.std = std::sqrt(ss / n);
}

double train_and_test(const SyntheticSet& synth, const LabeledDataset& test, const EvalConfig& config, uint64_t seed) {
  Rng init(Rng::mix(seed ^ 0x696e6974ULL));
  auto net = make_classifier(config.arch, test.shape, test.num_classes, config.width, init);
  TrainOptions opt;
  opt.epochs = config.epochs;
  opt.batch_size = config.batch_size;
  opt.lr = config.lr;
  opt.momentum = config.momentum;
  opt.seed = seed;
  fit_classifier(*net, synth.images, synth.labels, opt, synth.soft_labels);
  return accuracy(*net, test);
}

EvalReport evaluate(const SyntheticSet& synth, const LabeledDataset& test, const EvalConfig& config,
                    const RunTrainer& trainer) {
  config.validate();
  if (synth.num_classes != test.num_classes) throw ArgumentError("synthetic set and test split disagree on num_classes");
  if (synth.images.rank() != 4 || synth.images.dim(1) != test.shape.channels || synth.images.dim(2) != test.shape.height ||
      synth.images.dim(3) != test.shape.width) {
    throw ArgumentError("synthetic images " + shape_str(synth.images.shape()) + " do not match the test image shape");
  }
  std::vector<int> seen(static_cast<size_t>(synth.num_classes), 0);
  for (int y : synth.labels) {
    if (y < 0 || y >= synth.num_classes) throw ArgumentError("synthetic label out of range");
    seen[static_cast<size_t>(y)] = 1;
  }
  for (int c = 0; c < synth.num_classes; ++c) {
    if (!seen[static_cast<size_t>(c)]) throw ArgumentError("class " + std::to_string(c) + " is missing from the synthetic set");
  }

  EvalReport report;
  report.dataset = test.name;
  report.arch = config.arch;
  report.ipc = synth.ipc;
  report.config = to_json(config);
  report.per_run_acc.assign(static_cast<size_t>(config.runs), 0.0);

  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (int r = next++; r < config.runs; r = next++) {
      try {
        report.per_run_acc[static_cast<size_t>(r)] = trainer(synth, test, config, config.seed_base + static_cast<uint64_t>(r));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int threads = std::min(config.threads, config.runs);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  aggregate(report);
  return report;
}

// ---------------------------------------------------------------------------
// Coresets

std::string_view to_string(CoresetMethod m) {
  switch (m) {
    case CoresetMethod::Random:
      return "random";
    case CoresetMethod::Herding:
      return "herding";
    case CoresetMethod::KCenter:
      return "k_center";
  }
  return "random";
}

CoresetMethod parse_coreset_method(std::string_view text) {
  if (text == "random") return CoresetMethod::Random;
  if (text == "herding") return CoresetMethod::Herding;
  if (text == "k_center" || text == "kcenter") return CoresetMethod::KCenter;
  throw ArgumentError("unknown coreset method '" + std::string(text) + "'");
}

namespace {

std::vector<double> row_sum(const Tensor& feats) {
  const int64_t n = feats.dim(0), f = feats.row_size();
  std::vector<double> s(static_cast<size_t>(f), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < f; ++j) s[static_cast<size_t>(j)] += feats[static_cast<size_t>(i * f + j)];
  return s;
}

// Distances closer than this are treated as ties, so rounding cannot reorder
// mathematically equal candidates; `reach` bounds each coordinate difference.
double tie_slack(const Tensor& feats, std::span<const int64_t> order, double reach) {
  double m = 0.0;
  for (int64_t i : order)
    for (int64_t j = 0; j < feats.dim(1); ++j) m = std::max(m, std::abs(feats[static_cast<size_t>(i * feats.dim(1) + j)]));
  return 1e-10 * static_cast<double>(feats.dim(1)) * (reach * m) * (reach * m);
}

void check_selection(const Tensor& feats, std::span<const int64_t> order, int count) {
  if (feats.rank() != 2) throw ShapeError("features must be [n, F]");
  if (count < 0 || count > static_cast<int64_t>(order.size())) throw ArgumentError("cannot select more points than candidates");
  for (int64_t i : order) {
    if (i < 0 || i >= feats.dim(0)) throw ArgumentError("candidate index out of range");
  }
}

}  // namespace

std::vector<int64_t> herding_select(const Tensor& feats, std::span<const int64_t> order, int count) {
  check_selection(feats, order, count);
  if (count == 0) return {};
  const int64_t f = feats.dim(1);
  // distances are scaled by (n t)^2 so integral features compare exactly
  const double n = static_cast<double>(order.size());
  const std::vector<double> total = row_sum(feats.gather_rows(order));
  std::vector<double> sum(static_cast<size_t>(f), 0.0);
  std::vector<char> used(order.size(), 0);
  std::vector<int64_t> picked;
  for (int t = 1; t <= count; ++t) {
    const double slack = tie_slack(feats, order, 2.0 * n * t);
    double best = 0.0;
    size_t arg = order.size();
    for (size_t p = 0; p < order.size(); ++p) {
      if (used[p]) continue;
      const double* x = feats.data() + order[p] * f;
      double d = 0.0;
      for (int64_t j = 0; j < f; ++j) {
        const double diff = t * total[static_cast<size_t>(j)] - n * (sum[static_cast<size_t>(j)] + x[j]);
        d += diff * diff;
      }
      if (arg == order.size() || d < best - slack) {
        best = d;
        arg = p;
      }
    }
    used[arg] = 1;
    picked.push_back(order[arg]);
    const double* x = feats.data() + order[arg] * f;
    for (int64_t j = 0; j < f; ++j) sum[static_cast<size_t>(j)] += x[j];
  }
  return picked;
}

std::vector<int64_t> kcenter_select(const Tensor& feats, std::span<const int64_t> order, int count) {
  check_selection(feats, order, count);
  if (count == 0) return {};
  const int64_t f = feats.dim(1);
  auto dist2 = [&](const double* a, const double* b) {
    double d = 0.0;
    for (int64_t j = 0; j < f; ++j) d += (a[j] - b[j]) * (a[j] - b[j]);
    return d;
  };
  const double n = static_cast<double>(order.size());
  const std::vector<double> total = row_sum(feats.gather_rows(order));
  const double first_slack = tie_slack(feats, order, 2.0 * n), slack = tie_slack(feats, order, 2.0);
  size_t first = 0;
  double best = 0.0;
  for (size_t p = 0; p < order.size(); ++p) {
    const double* x = feats.data() + order[p] * f;
    double d = 0.0;
    for (int64_t j = 0; j < f; ++j) d += (n * x[j] - total[static_cast<size_t>(j)]) * (n * x[j] - total[static_cast<size_t>(j)]);
    if (p == 0 || d < best - first_slack) {
      best = d;
      first = p;
    }
  }
  std::vector<int64_t> picked{order[first]};
  std::vector<char> used(order.size(), 0);
  used[first] = 1;
  std::vector<double> nearest(order.size());
  for (size_t p = 0; p < order.size(); ++p) nearest[p] = dist2(feats.data() + order[p] * f, feats.data() + order[first] * f);
  while (static_cast<int>(picked.size()) < count) {
    size_t arg = order.size();
    for (size_t p = 0; p < order.size(); ++p) {
      if (used[p]) continue;
      if (arg == order.size() || nearest[p] > nearest[arg] + slack) arg = p;
    }
    used[arg] = 1;
    picked.push_back(order[arg]);
    for (size_t p = 0; p < order.size(); ++p) {
      nearest[p] = std::min(nearest[p], dist2(feats.data() + order[p] * f, feats.data() + order[arg] * f));
    }
  }
  return picked;
}

SyntheticSet coreset_baseline(const LabeledDataset& dataset, CoresetMethod method, int ipc, const FeatureNet& extractor,
                              uint64_t seed) {
  if (ipc < 1) throw ArgumentError("ipc must be >= 1");
  const auto per_class = dataset.class_indices();
  for (int c = 0; c < dataset.num_classes; ++c) {
    if (static_cast<int64_t>(per_class[static_cast<size_t>(c)].size()) < ipc) {
      throw ArgumentError("ipc " + std::to_string(ipc) + " exceeds the population of class " + std::to_string(c));
    }
  }
  SyntheticSet set;
  set.ipc = ipc;
  set.num_classes = dataset.num_classes;
  for (int c = 0; c < dataset.num_classes; ++c) {
    const auto& members = per_class[static_cast<size_t>(c)];
    std::vector<int64_t> order(members.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(Rng::mix(seed ^ Rng::mix(static_cast<uint64_t>(c) + 1)));
    rng.shuffle(order);
    std::vector<int64_t> local;
    if (method == CoresetMethod::Random) {
      local.assign(order.begin(), order.begin() + ipc);
    } else {
      const Tensor feats = extract_features(extractor, dataset.gather(members));
      local = method == CoresetMethod::Herding ? herding_select(feats, order, ipc) : kcenter_select(feats, order, ipc);
    }
    for (int64_t i : local) {
      set.source.push_back(members[static_cast<size_t>(i)]);
      set.labels.push_back(c);
    }
  }
  set.images = dataset.gather(set.source);
  return set;
}

std::vector<EvalReport> cross_arch_eval(const CondensedModel& model, const LabeledDataset& test,
                                        std::span<const std::string> archs, const EvalConfig& config, int ipc,
                                        const RunTrainer& trainer) {
  if (archs.empty()) throw ArgumentError("cross_arch_eval needs at least one architecture");
  for (const auto& a : archs) {
    if (!is_known_arch(a)) throw ArgumentError("unknown architecture '" + a + "'");
  }
  const SyntheticSet synth = synthesize_set(model, ipc > 0 ? ipc : model.codebook.size());
  std::vector<EvalReport> out;
  for (const auto& a : archs) {
    EvalConfig c = config;
    c.arch = a;
    EvalReport r = evaluate(synth, test, c, trainer);
    r.method = "condensed";
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

std::string csv_header() { return "dataset,method,ipc,arch,mean,std,runs,epochs"; }

std::string csv_row(const EvalReport& r, int epochs) {
  std::ostringstream s;
  s.precision(17);
  s << r.dataset << ',' << r.method << ',' << r.ipc << ',' << r.arch << ',' << r.mean << ',' << r.std << ','
    << r.per_run_acc.size() << ',' << epochs;
  return s.str();
}

void append_csv(const std::filesystem::path& path, std::span<const EvalReport> reports, int epochs) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::app);
  if (!f) throw LoadError("cannot write " + path.string());
  if (fresh) f << csv_header() << '\n';
  for (const auto& r : reports) f << csv_row(r, epochs) << '\n';
}

}  // namespace gencond
