#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "gencond/errors.hpp"
#include "gencond/run_config.hpp"

using namespace gencond;
using nlohmann::json;
namespace fs = std::filesystem;

TEST_CASE("toy preset and real-dataset defaults") {
  const RunConfig toy = resolve_config(std::nullopt, {});
  CHECK(toy.dataset == "toy-blobs");
  CHECK(toy.condense.outer_iters == 50);
  CHECK(toy.condense.inner_steps == 5);
  CHECK(toy.condense.repeats == 2);
  CHECK(toy.condense.lr_z == 0.01);
  CHECK(toy.condense.lr_g == 0.001);
  CHECK(toy.condense.lr_theta == 0.01);
  CHECK(toy.condense.momentum == 0.5);
  CHECK(toy.condense.assoc_size == 64);
  CHECK(toy.eval.runs == 20);
  CHECK(toy.eval.epochs == 300);
  CHECK(toy.toy.num_classes == 3);
  CHECK(toy.toy.per_class == 100);
  CHECK(toy.toy.image_size == 16);

  const RunConfig cifar = resolve_config(std::nullopt, {"dataset.name=cifar10"});
  CHECK(cifar.dataset == "cifar10");
  CHECK(cifar.condense.outer_iters == 100);
  CHECK(cifar.condense.inner_steps == 10);
  CHECK(cifar.condense.repeats == 5);
  CHECK(cifar.condense.model.latent_dim == 128);
  CHECK(cifar.eval.width == 128);
}

TEST_CASE("overrides") {
  const RunConfig rc = resolve_config(std::nullopt, {"condense.N=3", "losses.tau_m=5", "eval.arch=mlp",
                                                     "networks.disc_hidden=[4,4]", "codebook.embed_mode=onehot",
                                                     "losses.soft_labels=true"});
  CHECK(rc.condense.outer_iters == 3);
  CHECK(rc.condense.loss.tau_m == 5.0);
  CHECK(rc.eval.arch == "mlp");
  CHECK(rc.condense.model.disc_hidden == std::vector<int>{4, 4});
  CHECK(rc.condense.model.embed_mode == EmbedMode::OneHot);
  CHECK(rc.condense.loss.soft_labels);
  CHECK(rc.tree["condense"]["N"] == 3);
}

TEST_CASE("unknown keys and type errors are rejected") {
  CHECK_THROWS_AS(resolve_config(std::nullopt, {"foo=1"}), ConfigError);
  CHECK_THROWS_AS(resolve_config(std::nullopt, {"condense.foo=1"}), ConfigError);
  CHECK_THROWS_AS(resolve_config(std::nullopt, {"condense=1"}), ConfigError);
  CHECK_THROWS_AS(resolve_config(std::nullopt, {"condense.N=many"}), ConfigError);
  CHECK_THROWS_AS(resolve_config(std::nullopt, {"condense.N=2.5"}), ConfigError);
  CHECK_THROWS_AS(resolve_config(std::nullopt, {"condense.lr_decay=3"}), ConfigError);
  CHECK_THROWS_AS(resolve_config(std::nullopt, {"condense.N=0"}), ConfigError);
  CHECK_THROWS_AS(resolve_config(std::nullopt, {"losses.tau=0"}), ConfigError);
  CHECK_THROWS_AS(resolve_config(std::nullopt, {"codebook.embed_mode=random"}), ConfigError);
  CHECK_THROWS_AS(resolve_config(std::nullopt, {"eval.arch=resnet"}), ConfigError);
  CHECK_THROWS_AS(resolve_config(std::nullopt, {"noequals"}), ConfigError);

  json tree = default_config_tree("toy-blobs");
  CHECK_THROWS_AS(merge_config(tree, {{"eval", {{"runz", 1}}}}), ConfigError);
  CHECK_THROWS_AS(merge_config(tree, {{"eval", 3}}), ConfigError);
  CHECK_THROWS_AS(apply_override(tree, "eval.runs.deeper", "1"), ConfigError);
}

TEST_CASE("config files") {
  const fs::path p = fs::temp_directory_path() / ("gencond_cfg_" + std::to_string(::getpid()) + ".json");
  {
    std::ofstream f(p);
    f << R"({"condense": {"N": 7, "seed": 3}, "eval": {"runs": 2}})";
  }
  const RunConfig rc = resolve_config(p, {"eval.runs=4"});
  CHECK(rc.condense.outer_iters == 7);
  CHECK(rc.condense.seed == 3);
  CHECK(rc.eval.runs == 4);
  CHECK(config_from_tree(rc.tree).condense.outer_iters == 7);
  {
    std::ofstream f(p);
    f << R"({"condense": {"N": 7, "typo": 1}})";
  }
  CHECK_THROWS_AS(resolve_config(p, {}), ConfigError);
  {
    std::ofstream f(p);
    f << "{ not json";
  }
  CHECK_THROWS_AS(resolve_config(p, {}), ConfigError);
  fs::remove(p);
  CHECK_THROWS_AS(resolve_config(p, {}), ConfigError);
}

TEST_CASE("data root") {
  ::setenv("GENCOND_DATA_ROOT", "/tmp/somewhere", 1);
  CHECK(resolve_config(std::nullopt, {}).data_root == fs::path("/tmp/somewhere"));
  CHECK(resolve_config(std::nullopt, {"dataset.root=/x"}).data_root == fs::path("/x"));
  ::unsetenv("GENCOND_DATA_ROOT");
  CHECK(resolve_config(std::nullopt, {}).data_root == fs::path("data"));
}
