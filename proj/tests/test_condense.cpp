#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <unistd.h>

#include "gencond/condense.hpp"
#include "gencond/errors.hpp"
#include "gencond/training.hpp"
#include "oracles.hpp"

using namespace gencond;
namespace fs = std::filesystem;

namespace {

CondenseConfig tiny_config() {
  CondenseConfig c;
  c.ipc = 3;
  c.outer_iters = 2;
  c.inner_steps = 2;
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

std::string read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

struct Scratch {
  fs::path dir = fs::temp_directory_path() / ("gencond_condense_" + std::to_string(::getpid()));
  Scratch() { fs::create_directories(dir); }
  ~Scratch() { fs::remove_all(dir); }
};

fs::path temp_path(const std::string& name) {
  static const Scratch scratch;
  return scratch.dir / name;
}

}  // namespace

TEST_CASE("run bookkeeping on the toy fixture") {
  const LabeledDataset d = make_toy_dataset(3, 10, 8, 2);
  CondenseConfig cfg = tiny_config();
  cfg.outer_iters = 50;
  cfg.inner_steps = 5;
  cfg.repeats = 2;
  int64_t seen = 0;
  const CondenseResult r = condense(d, cfg, [&](const StepRecord&) { ++seen; });
  CHECK(r.trace.size() == 500);
  CHECK(seen == 500);
  for (size_t i = 0; i < r.trace.size(); ++i) {
    CHECK(r.trace[i].step == static_cast<int64_t>(i));
    CHECK(r.trace[i].repeat == (i < 250 ? 0 : 1));
    CHECK(std::isfinite(r.trace[i].con));
  }
  CHECK(r.model.generative_param_count() == param_count(CondensedFormat::Generative, 3, 3, d.shape, cfg.model));
}

TEST_CASE("zero learning rates freeze the codebook and generator") {
  const LabeledDataset d = make_toy_dataset(3, 10, 8, 3);
  CondenseConfig cfg = tiny_config();
  cfg.lr_z = 0.0;
  cfg.lr_g = 0.0;
  Condenser c(d, cfg);
  const uint64_t z = params_checksum(c.codebook().parameters());
  const uint64_t g = params_checksum(c.generator().parameters());
  c.run();
  CHECK(params_checksum(c.codebook().parameters()) == z);
  CHECK(params_checksum(c.generator().parameters()) == g);
}

TEST_CASE("same seed, same run") {
  const LabeledDataset d = make_toy_dataset(3, 10, 8, 4);
  const CondenseResult a = condense(d, tiny_config());
  const CondenseResult b = condense(d, tiny_config());
  REQUIRE(a.trace.size() == b.trace.size());
  for (size_t i = 0; i < a.trace.size(); ++i) CHECK(a.trace[i].con == b.trace[i].con);
  CHECK(synthesize_set(a.model, 3).images == synthesize_set(b.model, 3).images);
}

TEST_CASE("configuration errors") {
  const LabeledDataset d = make_toy_dataset(3, 10, 8, 5);
  CondenseConfig cfg = tiny_config();
  cfg.outer_iters = 0;
  CHECK_THROWS_AS(Condenser(d, cfg), ConfigError);
  cfg = tiny_config();
  cfg.lr_z = -1.0;
  CHECK_THROWS_AS(Condenser(d, cfg), ConfigError);
  cfg = tiny_config();
  cfg.batch_classes = 1;
  CHECK_THROWS_AS(Condenser(d, cfg), ConfigError);
  const LabeledDataset test = make_toy_dataset(3, 10, 8, 5, Split::Test);
  CHECK_THROWS_AS(Condenser(test, tiny_config()), ConfigError);
  CHECK_THROWS_AS(condense_config_from_json({{"outer", 3}}), ConfigError);
  CHECK_THROWS_AS(condense_config_from_json({{"N", "three"}}), ConfigError);
}

TEST_CASE("inner_update") {
  const LabeledDataset d = make_toy_dataset(2, 8, 8, 6);
  Rng rng(1);
  FeatureNet net({d.shape, 2, 6, 2}, rng);
  SUBCASE("zero learning rate leaves theta unchanged") {
    const uint64_t before = params_checksum(net.parameters());
    Sgd opt(net.parameters(), 0.0, 0.5);
    for (int i = 0; i < 3; ++i) inner_update(net, opt, d.images, d.labels);
    CHECK(params_checksum(net.parameters()) == before);
  }
  SUBCASE("a small step descends") {
    const auto loss = [&] {
      NoGradGuard ng;
      return cls_loss(net.forward(Var(d.images)).logits, d.labels).item();
    };
    const double before = loss();
    Sgd opt(net.parameters(), 1e-3, 0.0);
    inner_update(net, opt, d.images, d.labels);
    CHECK(loss() < before);
  }
  SUBCASE("repeated steps overfit one batch") {
    Sgd opt(net.parameters(), 0.01, 0.5);
    for (int i = 0; i < 200; ++i) inner_update(net, opt, d.images, d.labels);
    CHECK(accuracy(net, d) == 1.0);
  }
}

TEST_CASE("phases touch only their own parameters") {
  const LabeledDataset d = make_toy_dataset(3, 10, 8, 7);
  CondenseConfig cfg = tiny_config();
  cfg.outer_iters = 5;
  Condenser c(d, cfg);
  c.begin_repeat();
  for (int i = 0; i < 3; ++i) {
    const uint64_t theta = params_checksum(c.theta_params());
    const uint64_t outer = params_checksum(c.outer_params());
    c.outer_step();
    CHECK(params_checksum(c.theta_params()) == theta);
    CHECK(params_checksum(c.outer_params()) != outer);

    const uint64_t outer2 = params_checksum(c.outer_params());
    const uint64_t theta2 = params_checksum(c.theta_params());
    c.inner_step();
    CHECK(params_checksum(c.outer_params()) == outer2);
    CHECK(params_checksum(c.theta_params()) != theta2);
  }
}

TEST_CASE("pure feature matching does not increase the matching loss on a probe batch") {
  const LabeledDataset d = make_toy_dataset(3, 20, 8, 8);
  CondenseConfig cfg = tiny_config();
  cfg.loss.weights = {0.0, 0.0, 1.0, 0.0, 0.0};
  cfg.outer_iters = 100;
  cfg.inner_steps = 1;
  Condenser c(d, cfg);
  c.begin_repeat();

  std::vector<int> labels;
  std::vector<int64_t> codes;
  for (int y = 0; y < 3; ++y)
    for (int k = 0; k < cfg.ipc; ++k) labels.push_back(y), codes.push_back(k);
  std::vector<Tensor> targets;
  {
    NoGradGuard ng;
    const auto per_class = d.class_indices();
    const FeatureOutput real = c.matcher().forward(Var(d.images));
    for (const Var& layer : real.layers) {
      const Tensor& v = layer.value();
      const int64_t row = v.row_size();
      Shape s = v.shape();
      s[0] = static_cast<int64_t>(labels.size());
      Tensor target(s);
      for (size_t i = 0; i < labels.size(); ++i) {
        const auto& members = per_class[static_cast<size_t>(labels[i])];
        for (int64_t m : members)
          for (int64_t j = 0; j < row; ++j)
            target[i * static_cast<size_t>(row) + static_cast<size_t>(j)] +=
                v[static_cast<size_t>(m * row + j)] / static_cast<double>(members.size());
      }
      targets.push_back(std::move(target));
    }
  }
  const auto probe = [&] {
    NoGradGuard ng;
    const Var z = ops::gather_rows(c.codebook().z(), codes);
    const Var e = c.embeddings().project(c.embeddings().standardized_rows(labels));
    Generator g = c.generator();
    const FeatureOutput out = c.matcher().forward(g.generate(z, e, true));
    std::vector<Tensor> synth;
    for (const Var& l : out.layers) synth.push_back(l.value());
    return oracle::feature_match(synth, targets);
  };

  const double first = probe();
  double last = first;
  for (int block = 0; block < 10; ++block) {
    for (int i = 0; i < 10; ++i) c.outer_step();
    const double now = probe();
    CHECK(now <= 1.05 * last);
    last = now;
  }
  MESSAGE("probe L_f " << first << " -> " << last);
  CHECK(last < first);
}

TEST_CASE("linear decay schedule") {
  CHECK(linear_decay_lr(0.01, 0, 100) == 0.01);
  CHECK(linear_decay_lr(0.01, 100, 100) == 0.0);
  CHECK(linear_decay_lr(0.01, 7, 0) == 0.01);
  Var w(Tensor({1}), true);
  const double lr = 0.05;
  const int64_t total = 37;
  Sgd opt({{"w", w}}, lr, 0.0, total);
  for (int64_t t = 0; t < total; ++t) {
    CHECK(std::abs(opt.current_lr() - lr * (1.0 - static_cast<double>(t) / total)) <= 1e-12);
    const double before = w.value()[0];
    opt.zero_grad();
    backward(ops::sum(w));
    opt.step();
    CHECK(std::abs((before - w.value()[0]) - lr * (1.0 - static_cast<double>(t) / total)) <= 1e-12);
  }

  const LabeledDataset d = make_toy_dataset(3, 10, 8, 9);
  CondenseConfig cfg = tiny_config();
  Condenser c(d, cfg);
  c.run();
  CHECK(c.trace().size() == static_cast<size_t>(cfg.repeats * cfg.outer_iters * cfg.inner_steps));
}

TEST_CASE("synthesis and checkpoints") {
  const LabeledDataset d = make_toy_dataset(10, 4, 8, 10);
  CondenseConfig cfg = tiny_config();
  cfg.ipc = 10;
  cfg.outer_iters = 1;
  cfg.inner_steps = 1;
  cfg.assoc_size = 2;
  CondenseResult r = condense(d, cfg);
  CondensedModel& m = r.model;

  SUBCASE("enumeration contract") {
    const SyntheticSet s = synthesize_set(m, 10);
    CHECK(s.images.shape() == Shape{100, 3, 8, 8});
    CHECK(s.ipc == 10);
    std::vector<int> counts(10, 0);
    for (int y : s.labels) ++counts[static_cast<size_t>(y)];
    CHECK(counts == std::vector<int>(10, 10));
    std::set<std::pair<int64_t, int>> pairs;
    for (size_t i = 0; i < s.labels.size(); ++i) pairs.insert({s.source[i], s.labels[i]});
    CHECK(pairs.size() == 100);
    for (double v : s.images.values()) {
      if (!(std::abs(v) <= 1.0)) FAIL("synthetic value outside [-1, 1]");
    }
    CHECK(synthesize_set(m, 10).images == s.images);
    CHECK_THROWS_AS(synthesize_set(m, 11), ArgumentError);
    CHECK_THROWS_AS(synthesize_set(m, 0), ArgumentError);
  }
  SUBCASE("ipc 1 pairs code 0 with every class") {
    const SyntheticSet s = synthesize_set(m, 1);
    REQUIRE(s.size() == 10);
    NoGradGuard ng;
    const std::vector<int64_t> zero{0};
    std::vector<int> ys(10);
    std::iota(ys.begin(), ys.end(), 0);
    const Var z0 = ops::gather_rows(m.codebook.z(), zero);
    for (int y = 0; y < 10; ++y) {
      const std::vector<int> one{y};
      const Tensor expect = m.generator.generate(z0, m.embeddings.project(m.embeddings.standardized_rows(one)), false).value();
      const std::vector<int64_t> row{y};
      CHECK(s.images.gather_rows(row) == expect);
    }
    CHECK(s.labels == ys);
  }
  SUBCASE("save, load, save is byte-identical and synthesis is bitwise stable") {
    const fs::path a = temp_path("a.gcnd"), b = temp_path("b.gcnd");
    save_checkpoint(m, a);
    CondensedModel loaded = load_checkpoint(a);
    save_checkpoint(loaded, b);
    CHECK(read_bytes(a) == read_bytes(b));
    CHECK(synthesize_set(loaded, 10).images == synthesize_set(m, 10).images);
    CHECK(loaded.dataset == m.dataset);
    CHECK(loaded.config == m.config);
    CHECK(loaded.generative_param_count() == m.generative_param_count());
  }
  SUBCASE("tampering is detected") {
    const fs::path a = temp_path("t.gcnd");
    save_checkpoint(m, a);
    const std::string good = read_bytes(a);

    std::string bad = good;
    const auto at = bad.find("\"toy-blobs\"");
    REQUIRE(at != std::string::npos);
    bad.replace(at, 11, "\"toy-blobz\"");
    write_bytes(a, bad);
    CHECK_THROWS_AS(load_checkpoint(a), LoadError);

    bad = good;
    bad[bad.size() - 3] = static_cast<char>(bad[bad.size() - 3] ^ 0x40);
    write_bytes(a, bad);
    CHECK_THROWS_AS(load_checkpoint(a), LoadError);

    bad = good;
    bad[8] = 9;  // version
    write_bytes(a, bad);
    CHECK_THROWS_WITH_AS(load_checkpoint(a), doctest::Contains("version"), LoadError);

    write_bytes(a, good.substr(0, good.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(a), LoadError);
    write_bytes(a, "not a checkpoint");
    CHECK_THROWS_AS(load_checkpoint(a), LoadError);
    CHECK_THROWS_AS(load_checkpoint(temp_path("missing.gcnd")), LoadError);
  }
  SUBCASE("stored tensors are 32-bit representable") {
    for (auto& [name, t] : m.tensors())
      for (double v : t->values())
        if (static_cast<double>(static_cast<float>(v)) != v) FAIL(name << " holds a non-f32 value");
  }
}

TEST_CASE("embedding modes") {
  const LabeledDataset d = make_toy_dataset(3, 10, 8, 12);
  SUBCASE("online refreshes table rows from the matching network") {
    CondenseConfig cfg = tiny_config();
    cfg.model.embed_mode = EmbedMode::Online;
    Condenser c(d, cfg);
    const Tensor before = c.embeddings().table();
    c.begin_repeat();
    c.outer_step();
    CHECK_FALSE(c.embeddings().table() == before);
  }
  SUBCASE("onehot uses an identity table") {
    CondenseConfig cfg = tiny_config();
    cfg.model.embed_mode = EmbedMode::OneHot;
    Condenser c(d, cfg);
    CHECK(c.embeddings().table() == onehot_table(3));
    c.run();
    CHECK(c.embeddings().table() == onehot_table(3));
    CondensedModel m = std::move(c).finish();
    CHECK(m.generative_param_count() == param_count(CondensedFormat::Generative, 3, 3, d.shape, cfg.model));
  }
}
