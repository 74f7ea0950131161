// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance [criterion ...]
//
// With no arguments every criterion runs. The MNIST half of criterion 4 runs
// only when <GENCOND_DATA_ROOT or ./data>/mnist/train.json exists.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "gencond/codebook.hpp"
#include "gencond/condense.hpp"
#include "gencond/errors.hpp"
#include "gencond/eval.hpp"
#include "gencond/losses.hpp"
#include "gencond/run_config.hpp"
#include "gencond/training.hpp"
#include "oracles.hpp"

using namespace gencond;
namespace fs = std::filesystem;
using oracle::random_tensor;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  bool skipped = false;
};

/// Records the worst value seen against a bound.
struct Worst {
  const char* what;
  double bound;
  double value = 0.0;
  void see(double v) { value = std::max(value, std::isfinite(v) ? v : INFINITY); }
  bool ok() const { return value <= bound; }
  std::string str() const {
    std::ostringstream s;
    s << what << " " << value << " (<= " << bound << ")";
    return s.str();
  }
};

Outcome combine(const std::vector<Worst>& checks) {
  Outcome o;
  for (const auto& w : checks) {
    o.pass = o.pass && w.ok();
    o.detail += (o.detail.empty() ? "" : "; ") + w.str();
  }
  return o;
}

std::vector<double> values_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Tensor probs(Shape s, Rng& rng) {
  Tensor t(std::move(s));
  for (auto& v : t.values()) v = rng.uniform(0.001, 0.999);
  return t;
}

std::vector<int> labels_in(int64_t n, int classes, Rng& rng) {
  std::vector<int> out(static_cast<size_t>(n));
  for (auto& y : out) y = static_cast<int>(rng.below(static_cast<uint64_t>(classes)));
  return out;
}

Tensor simplex_rows(int64_t n, int64_t k, Rng& rng) {
  Tensor t({n, k});
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) s += (t[static_cast<size_t>(i * k + j)] = rng.uniform(0.01, 1.0));
    for (int64_t j = 0; j < k; ++j) t[static_cast<size_t>(i * k + j)] /= s;
  }
  return t;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

// ---------------------------------------------------------------------------

Outcome criterion1() {
  Rng rng(101);
  Worst adv{"adv", 1e-6}, cls{"cls", 1e-6}, feat{"feat", 1e-6}, intra{"intra", 1e-6}, inter{"inter", 1e-6};
  for (int i = 0; i < 100; ++i) {
    const Tensor r = probs({1 + static_cast<int64_t>(rng.below(8))}, rng);
    const Tensor f = probs({1 + static_cast<int64_t>(rng.below(8))}, rng);
    const AdvLosses got = adv_losses(Var(r), Var(f));
    const oracle::Adv want = oracle::adv(values_of(r), values_of(f));
    adv.see(rel(got.d_loss.item(), want.d));
    adv.see(rel(got.g_loss.item(), want.g));
  }
  for (int i = 0; i < 100; ++i) {
    const int64_t b = 1 + static_cast<int64_t>(rng.below(6)), k = 2 + static_cast<int64_t>(rng.below(6));
    const Tensor logits = random_tensor({b, k}, rng, 3.0);
    const std::vector<int> y = labels_in(b, static_cast<int>(k), rng);
    cls.see(rel(cls_loss(Var(logits), y).item(), oracle::ce_hard(logits, y)));
    const Tensor soft = simplex_rows(b, k, rng);
    cls.see(rel(cls_loss(Var(logits), soft).item(), oracle::ce_soft(logits, soft)));
  }
  for (int i = 0; i < 100; ++i) {
    const int64_t b = 1 + static_cast<int64_t>(rng.below(4));
    std::vector<Var> s;
    std::vector<Tensor> sv, t;
    for (int l = 0; l < 3; ++l) {
      const Shape shape{b, 1 + static_cast<int64_t>(rng.below(4)), 1 + static_cast<int64_t>(rng.below(3)),
                        1 + static_cast<int64_t>(rng.below(3))};
      sv.push_back(random_tensor(shape, rng));
      s.emplace_back(sv.back());
      t.push_back(random_tensor(shape, rng));
    }
    feat.see(rel(feature_match_loss(s, t).item(), oracle::feature_match(sv, t)));
  }
  for (int i = 0; i < 100; ++i) {
    const int64_t b = 2 + static_cast<int64_t>(rng.below(6)), w = 1 + static_cast<int64_t>(rng.below(5));
    const double tau = rng.uniform(0.2, 2.0);
    const Tensor feats = random_tensor({b, w}, rng), anchors = random_tensor({b, w}, rng);
    const std::vector<int> y = labels_in(b, 2, rng);
    intra.see(rel(intra_loss(Var(feats), Var(anchors), y, tau).item(), oracle::intra_batch(feats, anchors, y, tau)));
  }
  for (int i = 0; i < 100; ++i) {
    const Tensor means = random_tensor({2 + static_cast<int64_t>(rng.below(5)), 1 + static_cast<int64_t>(rng.below(4))}, rng);
    const double tau_m = rng.uniform(0.1, 4.0);
    inter.see(rel(inter_loss(Var(means), tau_m).item(), oracle::inter(means, tau_m)));
  }

  Worst hand{"hand values", 1e-9};
  {
    Tensor f({2}), c({2}), o({1, 2});
    f[0] = 1.0;
    c[1] = 1.0;
    o[1] = -1.0;
    hand.see(std::abs(intra_loss(f, c, o, 0.1) - std::numbers::ln2));
    Tensor half({4});
    half.fill(0.5);
    hand.see(std::abs(discriminator_loss(Var(half), Var(half)).item() - 2.0 * std::numbers::ln2));
    Tensor same({3, 4});
    same.fill(0.7);
    hand.see(std::abs(inter_loss(Var(same), 1.0).item() - 6.0));
  }
  return combine({adv, cls, feat, intra, inter, hand});
}

// ---------------------------------------------------------------------------

std::vector<Var> vars_of(const ParamList& params) {
  std::vector<Var> out;
  for (const auto& p : params) out.push_back(p.var);
  return out;
}

Outcome criterion2() {
  Rng rng(202);
  std::vector<Worst> checks;
  auto check = [&](const char* name, const std::function<Var()>& f, const std::vector<Var>& leaves) {
    Worst w{name, 1e-4};
    w.see(oracle::grad_check(f, leaves));
    checks.push_back(w);
  };

  {
    Var r(probs({5}, rng)), f(probs({4}, rng));
    check("L_adv (D side)", [&] { return discriminator_loss(r, f); }, {r, f});
    check("L_adv (G side)", [&] { return generator_adv_loss(f); }, {f});
  }
  {
    Var logits(random_tensor({4, 5}, rng));
    const std::vector<int> y{0, 3, 4, 1};
    const Tensor soft = simplex_rows(4, 5, rng);
    check("L_c (hard)", [&] { return cls_loss(logits, y); }, {logits});
    check("L_c (soft)", [&] { return cls_loss(logits, soft); }, {logits});
  }
  {
    std::vector<Var> s{Var(random_tensor({3, 2, 2, 2}, rng)), Var(random_tensor({3, 4}, rng))};
    const std::vector<Tensor> t{random_tensor({3, 2, 2, 2}, rng), random_tensor({3, 4}, rng)};
    check("L_f", [&] { return feature_match_loss(s, t); }, s);
  }
  {
    Var feats(random_tensor({6, 3}, rng)), anchors(random_tensor({6, 3}, rng));
    const std::vector<int> y{0, 0, 1, 1, 1, 0};
    check("L_intra", [&] { return intra_loss(feats, anchors, y, 0.5); }, {feats, anchors});
  }
  {
    Var means(random_tensor({4, 3}, rng, 0.3));
    check("L_inter", [&] { return inter_loss(means, 2.0); }, {means});
  }
  {
    FeatureNet net({{1, 8, 8}, 3, 4, 2}, rng);
    Var x(random_tensor({2, 1, 8, 8}, rng));
    const Tensor r1 = random_tensor({2, 3}, rng), r2 = random_tensor({2, 16}, rng), r3 = random_tensor({2, 4, 4, 4}, rng);
    auto leaves = vars_of(net.parameters());
    leaves.push_back(x);
    check("FeatureNet", [&] {
      const auto out = net.forward(x);
      return ops::add(ops::add(oracle::probe(out.logits, r1), oracle::probe(out.final, r2)), oracle::probe(out.layers[0], r3));
    }, leaves);
  }
  {
    GeneratorConfig cfg;
    cfg.latent_dim = 4;
    cfg.width = 3;
    cfg.blocks = 2;
    cfg.base_size = 2;
    cfg.out_channels = 2;
    Generator g(cfg, rng);
    Var in(random_tensor({3, 8}, rng));
    const Tensor r = random_tensor({3, 2, 8, 8}, rng);
    auto leaves = vars_of(g.parameters());
    leaves.push_back(in);
    check("Generator (train)", [&] { return oracle::probe(g.forward(in, true), r); }, leaves);
    check("Generator (eval)", [&] { return oracle::probe(g.forward(in, false), r); }, leaves);
  }
  {
    Discriminator d({5, 3, {6, 6}}, rng);
    Var f(random_tensor({4, 5}, rng)), e(random_tensor({4, 3}, rng));
    const Tensor r = random_tensor({4}, rng);
    auto leaves = vars_of(d.parameters());
    leaves.push_back(f);
    leaves.push_back(e);
    check("Discriminator", [&] { return oracle::probe(d.forward(f, e), r); }, leaves);
  }
  {
    MlpNet net({1, 4, 4}, 3, rng, 8);
    Var x(random_tensor({2, 1, 4, 4}, rng));
    const Tensor r = random_tensor({2, 3}, rng);
    auto leaves = vars_of(net.parameters());
    leaves.push_back(x);
    check("MLP", [&] { return oracle::probe(net.logits(x), r); }, leaves);
  }
  {
    ClassEmbeddingTable t(random_tensor({4, 3}, rng), EmbedMode::Online, 4, rng);
    Var codes(random_tensor({3, 4}, rng)), embeds(random_tensor({3, 3}, rng));
    const Tensor r = random_tensor({3, 8}, rng);
    check("condition_input", [&] { return oracle::probe(condition_input(codes, embeds, t), r); },
          {t.projection().weight, t.projection().bias, codes, embeds});
  }
  return combine(checks);
}

// ---------------------------------------------------------------------------

Outcome criterion3() {
  Outcome o;
  const ModelConfig m;
  const ImageShape img{3, 128, 128};
  const int64_t pixel = param_count(CondensedFormat::Pixel, 1000, 10, img, m);
  o.pass = pixel == 491'520'000;
  const int64_t per_class_pixel = param_count(CondensedFormat::Pixel, 1, 10, img, m);
  const int64_t g10 = param_count(CondensedFormat::Generative, 10, 10, img, m);
  const int64_t slope = m.embed_dim(10);
  for (int c : {1, 10, 100, 1000}) {
    o.pass = o.pass && param_count(CondensedFormat::Pixel, c, 10, img, m) == c * per_class_pixel;
    o.pass = o.pass && param_count(CondensedFormat::Generative, c, 10, img, m) - g10 == (c - 10) * slope;
  }
  std::ostringstream s;
  s << "pixel(1000, ipc 10, 3x128x128) = " << pixel << ", linear in classes; generative(1000) = "
    << param_count(CondensedFormat::Generative, 1000, 10, img, m) << ", slope " << slope << " per class";
  o.detail = s.str();
  return o;
}

// ---------------------------------------------------------------------------

fs::path data_root() {
  const char* env = std::getenv("GENCOND_DATA_ROOT");
  return env ? fs::path(env) : fs::path("data");
}

struct Gap {
  double condensed, condensed_std, random, random_std;
};

Gap condensed_vs_random(const RunConfig& rc, int ipc, int runs, int epochs) {
  const LabeledDataset train = load_dataset(rc.dataset, rc.data_root, Split::Train, rc.toy);
  const LabeledDataset test = load_dataset(rc.dataset, rc.data_root, Split::Test, rc.toy);
  const CondensedModel model = condense(train, rc.condense).model;
  EvalConfig ec = rc.eval;
  ec.runs = runs;
  ec.epochs = epochs;
  const EvalReport c = evaluate(synthesize_set(model, ipc), test, ec);
  const EvalReport r = evaluate(coreset_baseline(train, CoresetMethod::Random, ipc, model.extractor, ec.seed_base), test, ec);
  return {100 * c.mean, 100 * c.std, 100 * r.mean, 100 * r.std};
}

std::string describe(const Gap& g) {
  std::ostringstream s;
  s.precision(4);
  s << "condensed " << g.condensed << " +- " << g.condensed_std << " %, random " << g.random << " +- " << g.random_std
    << " %, gap " << g.condensed - g.random;
  return s.str();
}

Outcome criterion4() {
  Outcome o;
  const RunConfig toy = resolve_config(std::nullopt, {});
  const Gap g = condensed_vs_random(toy, 5, 5, 60);
  o.pass = g.condensed - g.random >= 5.0;
  o.detail = "toy: " + describe(g) + " (>= 5)";
  return o;
}

Outcome criterion4_mnist() {
  Outcome o;
  const fs::path root = data_root();
  if (!fs::exists(root / "mnist" / "train.json")) {
    o.skipped = true;
    o.detail = "mnist not found under " + root.string();
    return o;
  }
  const RunConfig rc = resolve_config(std::nullopt, {"dataset.name=mnist", "dataset.root=" + root.string(), "codebook.ipc=1",
                                                     "condense.N=100", "condense.M=10", "condense.repeats=3"});
  const Gap g = condensed_vs_random(rc, 1, 5, 100);
  o.pass = g.condensed - g.random >= 10.0;
  o.detail = "mnist ipc 1: " + describe(g) + " (>= 10)";
  return o;
}

// ---------------------------------------------------------------------------

struct Spread {
  double intra;      // mean pairwise distance within a class, averaged over classes
  double min_inter;  // smallest distance between class centres
};

Spread spread(const CondensedModel& m, const FeatureNet& net) {
  const SyntheticSet s = synthesize_set(m, m.codebook.size());
  const Tensor f = extract_features(net, s.images);
  const int64_t w = f.dim(1);
  const int k = s.ipc, classes = s.num_classes;
  std::vector<std::vector<double>> centre(static_cast<size_t>(classes), std::vector<double>(static_cast<size_t>(w), 0.0));
  double intra = 0.0;
  for (int c = 0; c < classes; ++c) {
    double sum = 0.0;
    int pairs = 0;
    for (int a = 0; a < k; ++a) {
      const double* fa = f.data() + (c * k + a) * w;
      for (int64_t j = 0; j < w; ++j) centre[static_cast<size_t>(c)][static_cast<size_t>(j)] += fa[j] / k;
      for (int b = a + 1; b < k; ++b) {
        sum += std::sqrt(oracle::sq_dist(fa, f.data() + (c * k + b) * w, w));
        ++pairs;
      }
    }
    intra += (pairs ? sum / pairs : 0.0) / classes;
  }
  double min_inter = INFINITY;
  for (int a = 0; a < classes; ++a)
    for (int b = a + 1; b < classes; ++b)
      min_inter = std::min(min_inter, std::sqrt(oracle::sq_dist(centre[static_cast<size_t>(a)].data(),
                                                                centre[static_cast<size_t>(b)].data(), w)));
  return {intra, min_inter};
}

Outcome criterion5() {
  const std::vector<std::string> base{"losses.tau_m=5"};
  auto run = [&](const std::string& extra) {
    std::vector<std::string> o = base;
    if (!extra.empty()) o.push_back(extra);
    const RunConfig rc = resolve_config(std::nullopt, o);
    return condense(load_dataset(rc.dataset, rc.data_root, Split::Train, rc.toy), rc.condense).model;
  };
  const CondensedModel on = run(""), no_intra = run("losses.w_intra=0"), no_inter = run("losses.w_inter=0");
  const FeatureNet& net = on.extractor;
  const Spread a = spread(on, net), b = spread(no_intra, net), c = spread(no_inter, net);
  Outcome o;
  const double ratio = a.intra / b.intra;
  o.pass = ratio >= 1.2 && a.min_inter > c.min_inter;
  std::ostringstream s;
  s.precision(4);
  s << "intra spread on " << a.intra << " / off " << b.intra << " = " << ratio << " (>= 1.2); min centre distance on "
    << a.min_inter << " vs off " << c.min_inter << " (on > off); tau_m 5";
  o.detail = s.str();
  return o;
}

// ---------------------------------------------------------------------------

CondenseConfig tiny(int outer, int inner) {
  CondenseConfig c;
  c.ipc = 3;
  c.outer_iters = outer;
  c.inner_steps = inner;
  c.repeats = 1;
  c.extractor_epochs = 1;
  c.assoc_size = 6;
  c.inner_batch = 16;
  c.model.feature_width = 6;
  c.model.feature_depth = 2;
  c.model.latent_dim = 4;
  c.model.generator_width = 4;
  c.model.disc_hidden = {8};
  return c;
}

Outcome criterion6() {
  const LabeledDataset d = make_toy_dataset(3, 20, 8, 6);
  Condenser c(d, tiny(50, 2));
  c.begin_repeat();
  int outer = 0, inner = 0, theta_moved = 0, outer_moved = 0, violations = 0;
  for (int n = 0; n < 50; ++n) {
    for (int i = 0; i < 2; ++i) {
      const uint64_t theta = params_checksum(c.theta_params()), z = params_checksum(c.outer_params());
      c.outer_step();
      ++outer;
      violations += params_checksum(c.theta_params()) != theta;
      outer_moved += params_checksum(c.outer_params()) != z;
    }
    const uint64_t theta = params_checksum(c.theta_params()), z = params_checksum(c.outer_params());
    c.inner_step();
    ++inner;
    violations += params_checksum(c.outer_params()) != z;
    theta_moved += params_checksum(c.theta_params()) != theta;
  }
  Outcome o;
  // the inner schedule decays to zero on the last step, so that one may legitimately not move
  o.pass = violations == 0 && outer_moved == outer && theta_moved >= inner - 1;
  std::ostringstream s;
  s << outer << " outer + " << inner << " inner steps, " << violations << " cross-phase mutations; outer steps moved (Z, G, D, projection) "
    << outer_moved << "/" << outer << ", inner steps moved theta " << theta_moved << "/" << inner;
  o.detail = s.str();
  return o;
}

// ---------------------------------------------------------------------------

Outcome criterion7() {
  Outcome o;
  const LabeledDataset train = make_toy_dataset(3, 10, 8, 7), test = make_toy_dataset(3, 10, 8, 7, Split::Test);
  SyntheticSet all;
  all.images = train.images;
  all.labels = train.labels;
  all.num_classes = 3;
  all.ipc = 10;
  EvalConfig cfg;
  cfg.runs = 3;
  const EvalReport fixed = evaluate(all, test, cfg, [](const SyntheticSet&, const LabeledDataset&, const EvalConfig&, uint64_t) { return 0.9; });
  bool ok = std::abs(fixed.mean - 0.9) <= 1e-12 && std::abs(fixed.std) <= 1e-12;

  cfg.runs = 11;
  cfg.seed_base = 40;
  const auto by_seed = [](const SyntheticSet&, const LabeledDataset&, const EvalConfig&, uint64_t seed) {
    return static_cast<double>(Rng::mix(seed) % 997) / 997.0;
  };
  EvalReport r = evaluate(all, test, cfg, by_seed);
  double mean = 0.0, var = 0.0;
  for (double a : r.per_run_acc) mean += a / 11.0;
  for (double a : r.per_run_acc) var += (a - mean) * (a - mean) / 11.0;
  ok = ok && std::abs(r.mean - mean) <= 1e-12 && std::abs(r.std - std::sqrt(var)) <= 1e-12;
  const double m0 = r.mean, s0 = r.std;
  std::reverse(r.per_run_acc.begin(), r.per_run_acc.end());
  std::rotate(r.per_run_acc.begin(), r.per_run_acc.begin() + 3, r.per_run_acc.end());
  aggregate(r);
  ok = ok && std::abs(r.mean - m0) <= 1e-12 && std::abs(r.std - s0) <= 1e-12;

  CondensedModel model = condense(train, tiny(2, 2)).model;
  const fs::path dir = fs::temp_directory_path() / ("gencond_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  save_checkpoint(model, dir / "a.gcnd");
  CondensedModel loaded = load_checkpoint(dir / "a.gcnd");
  save_checkpoint(loaded, dir / "b.gcnd");
  auto bytes = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  };
  const bool bitwise = bytes(dir / "a.gcnd") == bytes(dir / "b.gcnd");
  const bool same_synth = synthesize_set(model, 3).images == synthesize_set(loaded, 3).images;
  fs::remove_all(dir);
  o.pass = ok && bitwise && same_synth;
  o.detail = std::string("stub aggregation and permutation ") + (ok ? "exact to 1e-12" : "MISMATCH") + "; checkpoint resave " +
             (bitwise ? "byte-identical" : "DIFFERS") + "; synthesis after reload " + (same_synth ? "bitwise equal" : "DIFFERS");
  return o;
}

// ---------------------------------------------------------------------------

Outcome criterion8() {
  Rng rng(808);
  int instances = 0, mismatches = 0;
  for (int64_t n = 1; n <= 12; ++n) {
    for (int ipc = 1; ipc <= std::min<int64_t>(4, n); ++ipc) {
      for (int trial = 0; trial < 40; ++trial) {
        const int64_t w = 1 + static_cast<int64_t>(rng.below(4));
        Tensor f = random_tensor({n, w}, rng);
        // every other instance uses coarse integer features so ties actually occur
        if (trial % 2) for (auto& v : f.values()) v = std::round(v * 1.5);
        std::vector<int64_t> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        std::vector<int64_t> h, k;
        for (int t = 0; t < ipc; ++t) {
          h.push_back(oracle::herding_step(f, order, h));
          k.push_back(oracle::kcenter_step(f, order, k));
        }
        mismatches += herding_select(f, order, ipc) != h;
        mismatches += kcenter_select(f, order, ipc) != k;
        ++instances;
      }
    }
  }
  const Tensor line = [] {
    Tensor t({3, 1});
    t[1] = 1.0;
    t[2] = 10.0;
    return t;
  }();
  std::vector<int64_t> order{0, 1, 2};
  auto picked = kcenter_select(line, order, 2);
  std::sort(picked.begin(), picked.end());
  const bool example = picked == std::vector<int64_t>{1, 2};
  Outcome o;
  o.pass = mismatches == 0 && example;
  std::ostringstream s;
  s << instances << " instances (n <= 12, ipc <= 4), herding and k-center each, " << mismatches
    << " mismatches; k-center {0, 1, 10} ipc 2 -> " << (example ? "{1, 10}" : "WRONG");
  o.detail = s.str();
  return o;
}

struct Criterion {
  std::string id;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {"1", 60, criterion1},          {"2", 300, criterion2},         {"3", 1, criterion3},  {"4", 600, criterion4},
      {"4-mnist", 7200, criterion4_mnist}, {"5", 900, criterion5},    {"6", 60, criterion6}, {"7", 60, criterion7},
      {"8", 60, criterion8},
  };
  std::set<std::string> wanted(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& c : all) {
    const std::string major = c.id.substr(0, c.id.find('-'));
    if (!wanted.empty() && !wanted.count(c.id) && !wanted.count(major)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("threw: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_s;
    const char* verdict = o.skipped ? "SKIP" : (o.pass && in_time ? "PASS" : "FAIL");
    if (!o.skipped && !(o.pass && in_time)) ++failed;
    std::printf("criterion %-8s %s  %s [%.1f s, budget %.0f s]\n", c.id.c_str(), verdict, o.detail.c_str(), secs, c.budget_s);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
