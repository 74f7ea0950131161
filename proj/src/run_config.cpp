#include "gencond/run_config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>

#include "gencond/errors.hpp"

namespace gencond {

using nlohmann::json;

json default_config_tree(std::string_view dataset) {
  const bool toy = dataset == kToyName;
  const int width = toy ? 32 : 128;
  const char* env = std::getenv("GENCOND_DATA_ROOT");
  json t;
  t["dataset"] = {{"name", std::string(dataset)},
                  {"root", env ? env : "data"},
                  {"toy", {{"num_classes", 3}, {"per_class", 100}, {"image_size", 16}, {"seed", 7u}}}};
  t["networks"] = {{"feature_width", width},
                   {"feature_depth", 3},
                   {"generator_width", width},
                   {"disc_hidden", {256, 256}}};
  t["codebook"] = {{"ipc", 10}, {"latent_dim", width}, {"embed_mode", "class_feature"}};
  t["losses"] = {{"tau", 0.1},   {"tau_m", 1.0},  {"soft_labels", false}, {"normalize_similarity", false},
                 {"w_adv", 1.0}, {"w_cls", 1.0},  {"w_feat", 1.0},        {"w_intra", 1.0},
                 {"w_inter", 1.0}};
  t["condense"] = {{"N", toy ? 50 : 100},
                   {"M", toy ? 5 : 10},
                   {"repeats", toy ? 2 : 5},
                   {"lr_z", 0.01},
                   {"lr_g", 0.001},
                   {"lr_theta", 0.01},
                   {"momentum", 0.5},
                   {"lr_decay", true},
                   {"batch_classes", 0},
                   {"codes_per_class", 0},
                   {"assoc_size", 64},
                   {"inner_batch", 256},
                   {"extractor_epochs", 20},
                   {"pretrain_steps", toy ? 0 : 200},
                   {"seed", 0u}};
  t["eval"] = {{"runs", 20},         {"epochs", 300},   {"arch", "convnet3"}, {"width", width},
               {"lr", 0.01},         {"momentum", 0.9}, {"batch_size", 256},  {"seed_base", 0u},
               {"threads", 1},       {"ipc", 0}};
  return t;
}

namespace {

json coerce(const json& current, const json& value, const std::string& key) {
  auto bad = [&] { return ConfigError("config key '" + key + "' expects " + std::string(current.type_name()) + ", got " + value.dump()); };
  if (current.is_boolean()) {
    if (!value.is_boolean()) throw bad();
    return value;
  }
  if (current.is_number_integer()) {
    if (value.is_number_integer()) {
      if (!current.is_number_unsigned()) return value;
      if (value.is_number_unsigned()) return value;
      if (value.get<int64_t>() < 0) throw bad();
      return json(value.get<uint64_t>());
    }
    if (value.is_number_float() && value.get<double>() == std::floor(value.get<double>())) return json(static_cast<int64_t>(value.get<double>()));
    throw bad();
  }
  if (current.is_number_float()) {
    if (!value.is_number()) throw bad();
    return json(value.get<double>());
  }
  if (current.is_string()) {
    if (!value.is_string()) throw bad();
    return value;
  }
  if (current.is_array()) {
    if (!value.is_array()) throw bad();
    return value;
  }
  throw bad();
}

}  // namespace

void merge_config(json& tree, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config " + (where.empty() ? std::string("file") : "section '" + where + "'") + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!tree.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    json& slot = tree[key];
    if (slot.is_object()) {
      merge_config(slot, value, path);
    } else {
      slot = coerce(slot, value, path);
    }
  }
}

void apply_override(json& tree, std::string_view dotted_key, std::string_view value) {
  const std::string key(dotted_key);
  json* node = &tree;
  size_t start = 0;
  while (true) {
    const size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty() || !node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("config key '" + key + "' is a section, not a value");
  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = std::string(value);
  *node = coerce(*node, parsed, key);
}

RunConfig config_from_tree(const json& t) {
  RunConfig rc;
  rc.tree = t;
  try {
    const json& d = t.at("dataset");
    rc.dataset = d.at("name").get<std::string>();
    rc.data_root = d.at("root").get<std::string>();
    const json& toy = d.at("toy");
    rc.toy = {toy.at("num_classes").get<int>(), toy.at("per_class").get<int>(), toy.at("image_size").get<int>(),
              toy.at("seed").get<uint64_t>()};

    CondenseConfig& c = rc.condense;
    const json& n = t.at("networks");
    c.model.feature_width = n.at("feature_width").get<int>();
    c.model.feature_depth = n.at("feature_depth").get<int>();
    c.model.generator_width = n.at("generator_width").get<int>();
    c.model.disc_hidden = n.at("disc_hidden").get<std::vector<int>>();
    const json& cb = t.at("codebook");
    c.ipc = cb.at("ipc").get<int>();
    c.model.latent_dim = cb.at("latent_dim").get<int>();
    c.model.embed_mode = parse_embed_mode(cb.at("embed_mode").get<std::string>());
    const json& l = t.at("losses");
    c.loss.tau = l.at("tau").get<double>();
    c.loss.tau_m = l.at("tau_m").get<double>();
    c.loss.soft_labels = l.at("soft_labels").get<bool>();
    c.loss.normalize_similarity = l.at("normalize_similarity").get<bool>();
    c.loss.weights = {l.at("w_adv").get<double>(), l.at("w_cls").get<double>(), l.at("w_feat").get<double>(),
                      l.at("w_intra").get<double>(), l.at("w_inter").get<double>()};
    const json& k = t.at("condense");
    c.outer_iters = k.at("N").get<int>();
    c.inner_steps = k.at("M").get<int>();
    c.repeats = k.at("repeats").get<int>();
    c.lr_z = k.at("lr_z").get<double>();
    c.lr_g = k.at("lr_g").get<double>();
    c.lr_theta = k.at("lr_theta").get<double>();
    c.momentum = k.at("momentum").get<double>();
    c.lr_decay = k.at("lr_decay").get<bool>();
    c.batch_classes = k.at("batch_classes").get<int>();
    c.codes_per_class = k.at("codes_per_class").get<int>();
    c.assoc_size = k.at("assoc_size").get<int>();
    c.inner_batch = k.at("inner_batch").get<int>();
    c.extractor_epochs = k.at("extractor_epochs").get<int>();
    c.pretrain_steps = k.at("pretrain_steps").get<int>();
    c.seed = k.at("seed").get<uint64_t>();

    const json& e = t.at("eval");
    EvalConfig& ev = rc.eval;
    ev.runs = e.at("runs").get<int>();
    ev.epochs = e.at("epochs").get<int>();
    ev.arch = e.at("arch").get<std::string>();
    ev.width = e.at("width").get<int>();
    ev.lr = e.at("lr").get<double>();
    ev.momentum = e.at("momentum").get<double>();
    ev.batch_size = e.at("batch_size").get<int>();
    ev.seed_base = e.at("seed_base").get<uint64_t>();
    ev.threads = e.at("threads").get<int>();
    rc.eval_ipc = e.at("ipc").get<int>();
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("malformed configuration: ") + ex.what());
  } catch (const ArgumentError& ex) {
    throw ConfigError(ex.what());
  }
  rc.condense.validate();
  rc.eval.validate();
  if (rc.eval_ipc < 0) throw ConfigError("eval.ipc must be >= 0");
  return rc;
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides) {
  json patch = json::object();
  if (file) {
    std::ifstream f(*file);
    if (!f) throw ConfigError("cannot read config file " + file->string());
    patch = json::parse(f, nullptr, false, true);
    if (patch.is_discarded()) throw ConfigError("config file " + file->string() + " is not valid JSON");
  }
  std::vector<std::pair<std::string, std::string>> kv;
  std::string dataset(kToyName);
  if (patch.contains("dataset") && patch["dataset"].is_object() && patch["dataset"].contains("name") &&
      patch["dataset"]["name"].is_string()) {
    dataset = patch["dataset"]["name"].get<std::string>();
  }
  for (const auto& o : overrides) {
    const size_t eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' must look like section.key=value");
    kv.emplace_back(o.substr(0, eq), o.substr(eq + 1));
    if (kv.back().first == "dataset.name") dataset = kv.back().second;
  }
  json tree = default_config_tree(dataset);
  merge_config(tree, patch);
  for (const auto& [k, v] : kv) apply_override(tree, k, v);
  return config_from_tree(tree);
}

}  // namespace gencond
