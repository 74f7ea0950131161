#include "gencond/condense.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "gencond/errors.hpp"
#include "gencond/training.hpp"

#ifndef GENCOND_GIT_DESCRIBE
#define GENCOND_GIT_DESCRIBE "unknown"
#endif

namespace gencond {

using nlohmann::json;

namespace {

constexpr uint64_t kOuterTag = 0x6f75746572ULL;
constexpr uint64_t kInnerTag = 0x696e6e6572ULL;
constexpr uint64_t kThetaTag = 0x7468657461ULL;

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown config key '" + std::string(where) + "." + key + "'");
    }
  }
}

template <class T>
void read(const json& j, const char* key, T& out, std::string_view where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + std::string(where) + "." + key + "' has the wrong type");
  }
}

void round_to_f32(Tensor& t) {
  for (auto& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

ParamList concat(std::initializer_list<ParamList> lists) {
  ParamList out;
  for (const auto& l : lists) out.insert(out.end(), l.begin(), l.end());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void CondenseConfig::validate() const {
  if (outer_iters < 1 || inner_steps < 1 || repeats < 1) throw ConfigError("condense: N, M and repeats must be >= 1");
  if (ipc < 1) throw ConfigError("condense: ipc must be >= 1");
  if (lr_z < 0.0 || lr_g < 0.0 || lr_theta < 0.0) throw ConfigError("condense: learning rates must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("condense: momentum must lie in [0, 1)");
  if (batch_classes < 0 || codes_per_class < 0) throw ConfigError("condense: batch_classes/codes_per_class must be >= 0");
  if (assoc_size < 1 || inner_batch < 1) throw ConfigError("condense: assoc_size and inner_batch must be >= 1");
  if (extractor_epochs < 0 || pretrain_steps < 0) throw ConfigError("condense: epochs and pretrain steps must be >= 0");
  if (model.feature_width < 1 || model.feature_depth < 1 || model.latent_dim < 1 || model.generator_width < 1) {
    throw ConfigError("model widths and depth must be >= 1");
  }
  try {
    loss.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
}

json to_json(const LossConfig& c) {
  return {{"tau", c.tau},
          {"tau_m", c.tau_m},
          {"soft_labels", c.soft_labels},
          {"normalize_similarity", c.normalize_similarity},
          {"weights",
           {{"adv", c.weights.adv},
            {"cls", c.weights.cls},
            {"feat", c.weights.feat},
            {"intra", c.weights.intra},
            {"inter", c.weights.inter}}}};
}

json to_json(const ModelConfig& c) {
  return {{"feature_width", c.feature_width},     {"feature_depth", c.feature_depth},
          {"latent_dim", c.latent_dim},           {"generator_width", c.generator_width},
          {"disc_hidden", c.disc_hidden},         {"embed_mode", std::string(to_string(c.embed_mode))}};
}

json to_json(const CondenseConfig& c) {
  return {{"N", c.outer_iters},
          {"M", c.inner_steps},
          {"repeats", c.repeats},
          {"ipc", c.ipc},
          {"lr_z", c.lr_z},
          {"lr_g", c.lr_g},
          {"lr_theta", c.lr_theta},
          {"momentum", c.momentum},
          {"lr_decay", c.lr_decay},
          {"batch_classes", c.batch_classes},
          {"codes_per_class", c.codes_per_class},
          {"assoc_size", c.assoc_size},
          {"inner_batch", c.inner_batch},
          {"extractor_epochs", c.extractor_epochs},
          {"pretrain_steps", c.pretrain_steps},
          {"seed", c.seed},
          {"loss", to_json(c.loss)},
          {"model", to_json(c.model)}};
}

LossConfig loss_config_from_json(const json& j, LossConfig c) {
  check_keys(j, {"tau", "tau_m", "soft_labels", "normalize_similarity", "weights"}, "loss");
  read(j, "tau", c.tau, "loss");
  read(j, "tau_m", c.tau_m, "loss");
  read(j, "soft_labels", c.soft_labels, "loss");
  read(j, "normalize_similarity", c.normalize_similarity, "loss");
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    check_keys(w, {"adv", "cls", "feat", "intra", "inter"}, "loss.weights");
    read(w, "adv", c.weights.adv, "loss.weights");
    read(w, "cls", c.weights.cls, "loss.weights");
    read(w, "feat", c.weights.feat, "loss.weights");
    read(w, "intra", c.weights.intra, "loss.weights");
    read(w, "inter", c.weights.inter, "loss.weights");
  }
  return c;
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  check_keys(j, {"feature_width", "feature_depth", "latent_dim", "generator_width", "disc_hidden", "embed_mode"}, "model");
  read(j, "feature_width", c.feature_width, "model");
  read(j, "feature_depth", c.feature_depth, "model");
  read(j, "latent_dim", c.latent_dim, "model");
  read(j, "generator_width", c.generator_width, "model");
  read(j, "disc_hidden", c.disc_hidden, "model");
  if (j.contains("embed_mode")) {
    std::string mode;
    read(j, "embed_mode", mode, "model");
    try {
      c.embed_mode = parse_embed_mode(mode);
    } catch (const ArgumentError& e) {
      throw ConfigError(e.what());
    }
  }
  return c;
}

CondenseConfig condense_config_from_json(const json& j, CondenseConfig c) {
  check_keys(j,
             {"N", "M", "repeats", "ipc", "lr_z", "lr_g", "lr_theta", "momentum", "lr_decay", "batch_classes",
              "codes_per_class", "assoc_size", "inner_batch", "extractor_epochs", "pretrain_steps", "seed", "loss", "model"},
             "condense");
  read(j, "N", c.outer_iters, "condense");
  read(j, "M", c.inner_steps, "condense");
  read(j, "repeats", c.repeats, "condense");
  read(j, "ipc", c.ipc, "condense");
  read(j, "lr_z", c.lr_z, "condense");
  read(j, "lr_g", c.lr_g, "condense");
  read(j, "lr_theta", c.lr_theta, "condense");
  read(j, "momentum", c.momentum, "condense");
  read(j, "lr_decay", c.lr_decay, "condense");
  read(j, "batch_classes", c.batch_classes, "condense");
  read(j, "codes_per_class", c.codes_per_class, "condense");
  read(j, "assoc_size", c.assoc_size, "condense");
  read(j, "inner_batch", c.inner_batch, "condense");
  read(j, "extractor_epochs", c.extractor_epochs, "condense");
  read(j, "pretrain_steps", c.pretrain_steps, "condense");
  read(j, "seed", c.seed, "condense");
  if (j.contains("loss")) c.loss = loss_config_from_json(j.at("loss"), c.loss);
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"), c.model);
  return c;
}

json to_json(const StepRecord& r) {
  return {{"step", r.step},     {"repeat", r.repeat},   {"L_adv_d", r.d_loss}, {"L_adv_g", r.g_loss},
          {"L_c", r.cls},       {"L_f", r.feat},        {"L_intra", r.intra},  {"L_inter", r.inter},
          {"L_con", r.con}};
}

std::string build_version() { return GENCOND_GIT_DESCRIBE; }

// ---------------------------------------------------------------------------
// Model

int64_t CondensedModel::generative_param_count() const {
  return count_params(codebook.parameters()) + count_params(generator.parameters()) +
         static_cast<int64_t>(embeddings.table().numel()) + count_params(embeddings.parameters());
}

std::vector<std::pair<std::string, Tensor*>> CondensedModel::tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto add = [&out](const std::string& prefix, const ParamList& params) {
    for (const auto& p : params) out.emplace_back(prefix + p.name, &p.var.mutable_value());
  };
  add("", codebook.parameters());
  add("generator.", generator.parameters());
  for (const auto& b : generator.buffers()) out.emplace_back("generator." + b.name, b.tensor);
  out.emplace_back("embed.table", &embeddings.mutable_table());
  add("", embeddings.parameters());
  ParamList anchor;
  intra_anchor.collect("intra_anchor", anchor);
  add("", anchor);
  add("extractor.", extractor.parameters());
  add("feature_net.", matcher.parameters());
  return out;
}

// ---------------------------------------------------------------------------
// Condenser

Condenser::Condenser(const LabeledDataset& train, CondenseConfig config) : train_(train), config_(std::move(config)) {
  config_.validate();
  if (train_.split != Split::Train) throw ConfigError("condensation needs the train split");
  if (train_.num_classes < 2) throw ConfigError("condensation needs at least two classes");
  class_index_ = train_.class_indices();
  for (int c = 0; c < train_.num_classes; ++c) {
    if (class_index_[static_cast<size_t>(c)].empty()) {
      throw ConfigError("class " + std::to_string(c) + " has no training images");
    }
  }
  batch_classes_ = config_.batch_classes > 0 ? config_.batch_classes : std::min(train_.num_classes, 10);
  if (batch_classes_ < 2 || batch_classes_ > train_.num_classes) {
    throw ConfigError("batch_classes must lie in [2, num_classes]; the inter-class term needs two classes per step");
  }
  codes_per_class_ = config_.codes_per_class > 0 ? config_.codes_per_class : std::min(config_.ipc, 10);

  const ModelConfig& m = config_.model;
  const FeatureNetConfig fcfg{train_.shape, train_.num_classes, m.feature_width, m.feature_depth};
  TrainOptions topt;
  topt.epochs = std::max(1, config_.extractor_epochs);
  topt.seed = stream_seed(0x657874ULL, 0);
  if (config_.extractor_epochs > 0) {
    extractor_ = train_extractor(train_, fcfg, topt);
  } else {
    Rng r(topt.seed);
    extractor_ = FeatureNet(fcfg, r);
  }
  set_trainable(extractor_.parameters(), false);

  if (config_.loss.soft_labels) {
    FeatureNet ex = extractor_;
    soft_targets_ = Tensor({train_.num_classes, train_.num_classes});
    for (int c = 0; c < train_.num_classes; ++c) {
      const auto& idx = class_index_[static_cast<size_t>(c)];
      const Tensor p = predict_proba(ex, train_.gather(idx));
      for (int64_t r = 0; r < p.dim(0); ++r)
        for (int j = 0; j < train_.num_classes; ++j)
          soft_targets_[static_cast<size_t>(c * train_.num_classes + j)] +=
              p[static_cast<size_t>(r * train_.num_classes + j)] / static_cast<double>(idx.size());
    }
  }

  Rng zr(stream_seed(0x5aULL, 0));
  codebook_ = Codebook(config_.ipc, m.latent_dim, zr);
  Rng gr(stream_seed(0x47ULL, 0));
  generator_ = Generator(generator_config_for(train_.shape, m.latent_dim, m.generator_width), gr);
  if (generator_.config().image_size() != train_.shape.height) {
    throw ConfigError("generator cannot produce " + std::to_string(train_.shape.height) + "-px images");
  }
  Rng er(stream_seed(0x45ULL, 0));
  Tensor table;
  switch (m.embed_mode) {
    case EmbedMode::ClassFeature:
      table = class_feature_table(extractor_, train_);
      break;
    case EmbedMode::OneHot:
      table = onehot_table(train_.num_classes);
      break;
    case EmbedMode::Online:
      table = Tensor({train_.num_classes, m.feature_width});
      break;
  }
  embeddings_ = ClassEmbeddingTable(std::move(table), m.embed_mode, m.latent_dim, er);
  const int64_t embed = embeddings_.embed_dim();
  Rng ar(stream_seed(0x41ULL, 0));
  intra_anchor_ = Linear(embed, fcfg.feature_dim(), ar);
  Rng dr(stream_seed(0x44ULL, 0));
  discriminator_ = Discriminator(DiscriminatorConfig{fcfg.feature_dim(), embed, m.disc_hidden}, dr);

  const int64_t total = config_.lr_decay ? int64_t{config_.repeats} * config_.outer_iters * config_.inner_steps : 0;
  opt_z_ = Sgd(codebook_.parameters(), config_.lr_z, config_.momentum, total);
  ParamList anchor;
  intra_anchor_.collect("intra_anchor", anchor);
  opt_g_ = Sgd(concat({generator_.parameters(), embeddings_.parameters(), anchor}), config_.lr_g, config_.momentum, total);
  opt_d_ = Sgd(discriminator_.parameters(), config_.lr_g, config_.momentum, total);
}

uint64_t Condenser::stream_seed(uint64_t tag, int64_t counter) const {
  return Rng::mix(Rng::mix(config_.seed ^ Rng::mix(tag)) + static_cast<uint64_t>(counter));
}

ParamList Condenser::outer_params() const {
  ParamList anchor;
  intra_anchor_.collect("intra_anchor", anchor);
  return concat({codebook_.parameters(), generator_.parameters(), embeddings_.parameters(), anchor,
                 discriminator_.parameters()});
}

void Condenser::begin_repeat() {
  ++repeat_;
  Rng r(stream_seed(kThetaTag, repeat_));
  matcher_ = FeatureNet(FeatureNetConfig{train_.shape, train_.num_classes, config_.model.feature_width,
                                         config_.model.feature_depth},
                        r);
  set_trainable(matcher_.parameters(), false);
  opt_theta_ = Sgd(matcher_.parameters(), config_.lr_theta, config_.momentum, config_.lr_decay ? config_.outer_iters : 0);
}

StepRecord Condenser::outer_step() {
  if (repeat_ < 0) begin_repeat();
  return outer_step_with(matcher_, config_.loss.weights, &opt_z_, opt_g_, opt_d_, true);
}

StepRecord Condenser::outer_step_with(const FeatureNet& net, const LossWeights& weights, Sgd* z_opt, Sgd& g_opt,
                                      Sgd& d_opt, bool record) {
  Rng rng(stream_seed(kOuterTag, outer_count_++));
  set_trainable(net.parameters(), false);

  std::vector<int> classes(static_cast<size_t>(train_.num_classes));
  std::iota(classes.begin(), classes.end(), 0);
  rng.shuffle(classes);
  classes.resize(static_cast<size_t>(batch_classes_));
  std::sort(classes.begin(), classes.end());

  std::vector<int> labels, group;
  for (int g = 0; g < batch_classes_; ++g) {
    for (int k = 0; k < codes_per_class_; ++k) {
      labels.push_back(classes[static_cast<size_t>(g)]);
      group.push_back(g);
    }
  }

  // Real side: association statistics and discriminator inputs.
  std::vector<std::vector<Tensor>> layer_means(static_cast<size_t>(batch_classes_));
  std::vector<Tensor> real_final;
  std::vector<int> real_labels;
  {
    NoGradGuard no_grad;
    for (int g = 0; g < batch_classes_; ++g) {
      const int c = classes[static_cast<size_t>(g)];
      const auto pop = static_cast<int64_t>(class_index_[static_cast<size_t>(c)].size());
      const AssociationBatch assoc = sample_association(train_, c, std::min<int64_t>(config_.assoc_size, pop), rng.next_u64());
      const FeatureOutput fo = net.forward(Var(assoc.images));
      for (const Var& layer : fo.layers) {
        const Tensor& v = layer.value();
        const int64_t row = v.row_size();
        Shape s(v.shape().begin() + 1, v.shape().end());
        Tensor mean(s);
        for (int64_t r = 0; r < v.dim(0); ++r)
          for (int64_t j = 0; j < row; ++j) mean[static_cast<size_t>(j)] += v[static_cast<size_t>(r * row + j)];
        mean *= 1.0 / static_cast<double>(v.dim(0));
        layer_means[static_cast<size_t>(g)].push_back(std::move(mean));
      }
      real_final.push_back(fo.final.value());
      real_labels.insert(real_labels.end(), static_cast<size_t>(assoc.size()), c);
      if (embeddings_.mode() == EmbedMode::Online) {
        const Tensor pooled = ops::spatial_mean(fo.layers.back()).value();
        std::vector<double> row(static_cast<size_t>(pooled.dim(1)), 0.0);
        for (int64_t r = 0; r < pooled.dim(0); ++r)
          for (size_t j = 0; j < row.size(); ++j) row[j] += pooled[static_cast<size_t>(r) * row.size() + j];
        for (auto& v : row) v /= static_cast<double>(pooled.dim(0));
        embeddings_.set_row(c, row);
      }
    }
  }
  std::vector<Tensor> targets;
  for (size_t l = 0; l < layer_means[0].size(); ++l) {
    std::vector<Tensor> rows;
    for (int g : group) {
      const Tensor& m = layer_means[static_cast<size_t>(g)][l];
      Shape s{1};
      s.insert(s.end(), m.shape().begin(), m.shape().end());
      rows.push_back(m.reshaped(s));
    }
    targets.push_back(concat_rows(rows));
  }

  // Synthetic side.
  const CodeSample cs = codebook_.sample_codes(CodeSampling::TrainUniform, static_cast<int>(labels.size()), rng.next_u64());
  const Var raw = embeddings_.standardized_rows(labels);
  const Var images = generator_.generate(cs.codes, embeddings_.project(raw), true);
  const FeatureOutput out = net.forward(images);

  StepRecord rec;
  rec.repeat = std::max(repeat_, 0);
  {
    const Var real_p = discriminator_.forward(Var(concat_rows(real_final)), embeddings_.standardized_rows(real_labels));
    const Var fake_p = discriminator_.forward(out.final.detach(), raw);
    const Var d_loss = discriminator_loss(real_p, fake_p);
    rec.d_loss = d_loss.item();
    if (!std::isfinite(rec.d_loss)) throw DivergenceError("L_adv_d", "non-finite discriminator loss");
    d_opt.zero_grad();
    backward(d_loss);
    d_opt.step();
  }

  LossParts parts;
  parts.adv = generator_adv_loss(discriminator_.forward(out.final, raw));
  if (config_.loss.soft_labels && !soft_targets_.empty()) {
    const std::vector<int64_t> rows(labels.begin(), labels.end());
    parts.cls = cls_loss(out.logits, soft_targets_.gather_rows(rows));
  } else {
    parts.cls = cls_loss(out.logits, labels);
  }
  parts.feat = feature_match_loss(out.layers, targets);
  Var feats = out.final;
  Var anchors = intra_anchor_(raw);
  if (config_.loss.normalize_similarity) {
    feats = ops::l2_normalize_rows(feats);
    anchors = ops::l2_normalize_rows(anchors);
  }
  parts.intra = intra_loss(feats, anchors, labels, config_.loss.tau);
  parts.inter = inter_loss(ops::group_mean_rows(out.final, group, batch_classes_), config_.loss.tau_m, &warnings_);
  const Var con = condensation_loss(parts, weights);

  if (z_opt) z_opt->zero_grad();
  g_opt.zero_grad();
  backward(con);
  if (z_opt) z_opt->step();
  g_opt.step();
  // D's gradients from the generator pass are discarded; it steps on its own loss only.
  d_opt.zero_grad();

  rec.g_loss = parts.adv.item();
  rec.cls = parts.cls.item();
  rec.feat = parts.feat.item();
  rec.intra = parts.intra.item();
  rec.inter = parts.inter.item();
  rec.con = con.item();
  if (record) {
    rec.step = static_cast<int64_t>(trace_.size());
    trace_.push_back(rec);
  }
  return rec;
}

void inner_update(FeatureNet& net, Sgd& optimizer, const Tensor& images, std::span<const int> labels) {
  const ParamList params = net.parameters();
  set_trainable(params, true);
  const Var loss = cls_loss(net.forward(Var(images)).logits, labels);
  optimizer.zero_grad();
  backward(loss);
  optimizer.step();
  optimizer.zero_grad();
  set_trainable(params, false);
}

void Condenser::inner_step() {
  if (repeat_ < 0) begin_repeat();
  Rng rng(stream_seed(kInnerTag, inner_count_++));
  const int64_t n = train_.size();
  const int64_t b = std::min<int64_t>(config_.inner_batch, n);
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t i = 0; i < b; ++i) {
    const auto j = i + static_cast<int64_t>(rng.below(static_cast<uint64_t>(n - i)));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(b));
  std::vector<int> y;
  y.reserve(idx.size());
  for (int64_t i : idx) y.push_back(train_.labels[static_cast<size_t>(i)]);
  inner_update(matcher_, opt_theta_, train_.gather(idx), y);
}

void Condenser::pretrain_generator(int steps) {
  if (steps <= 0) return;
  Sgd g(concat({generator_.parameters(), embeddings_.parameters()}), config_.lr_g, config_.momentum,
        config_.lr_decay ? steps : 0);
  Sgd d(discriminator_.parameters(), config_.lr_g, config_.momentum, config_.lr_decay ? steps : 0);
  LossWeights w{};
  w.feat = w.intra = w.inter = 0.0;
  for (int s = 0; s < steps; ++s) outer_step_with(extractor_, w, nullptr, g, d, false);
}

void Condenser::run(const std::function<void(const StepRecord&)>& on_step) {
  pretrain_generator(config_.pretrain_steps);
  for (int r = 0; r < config_.repeats; ++r) {
    begin_repeat();
    for (int n = 0; n < config_.outer_iters; ++n) {
      for (int m = 0; m < config_.inner_steps; ++m) {
        const StepRecord rec = outer_step();
        if (on_step) on_step(rec);
      }
      inner_step();
    }
  }
}

CondensedModel Condenser::finish() && {
  if (repeat_ < 0) begin_repeat();
  CondensedModel m;
  m.dataset = train_.name;
  m.image = train_.shape;
  m.num_classes = train_.num_classes;
  m.model = config_.model;
  m.codebook = codebook_;
  m.generator = std::move(generator_);
  m.embeddings = std::move(embeddings_);
  m.intra_anchor = intra_anchor_;
  m.extractor = std::move(extractor_);
  m.matcher = std::move(matcher_);
  m.config = to_json(config_);
  m.provenance = {{"dataset", train_.name},
                  {"seed", config_.seed},
                  {"version", build_version()},
                  {"stats", {{"mean", train_.stats.mean}, {"std", train_.stats.std}}}};
  for (auto& [name, t] : m.tensors()) round_to_f32(*t);
  return m;
}

CondenseResult condense(const LabeledDataset& train, const CondenseConfig& config,
                        const std::function<void(const StepRecord&)>& on_step) {
  Condenser c(train, config);
  c.run(on_step);
  CondenseResult result;
  result.trace = c.trace();
  result.warnings = c.warnings();
  result.model = std::move(c).finish();
  return result;
}

// ---------------------------------------------------------------------------
// Synthesis

SyntheticSet synthesize_set(const CondensedModel& model, int ipc) {
  const int k = model.codebook.size();
  if (ipc < 1 || ipc > k) {
    throw ArgumentError("ipc " + std::to_string(ipc) + " exceeds the stored codebook size " + std::to_string(k));
  }
  NoGradGuard no_grad;
  std::vector<int64_t> codes = sample_code_indices(k, CodeSampling::EvalEnumerate, k, 0);
  codes.resize(static_cast<size_t>(ipc));
  const Var z = ops::gather_rows(model.codebook.z(), codes);

  SyntheticSet set;
  set.ipc = ipc;
  set.num_classes = model.num_classes;
  std::vector<Tensor> parts;
  for (int y = 0; y < model.num_classes; ++y) {
    const std::vector<int> labels(static_cast<size_t>(ipc), y);
    const Var embeds = model.embeddings.project(model.embeddings.standardized_rows(labels));
    parts.push_back(model.generator.generate(z, embeds, false).value());
    set.labels.insert(set.labels.end(), labels.begin(), labels.end());
    set.source.insert(set.source.end(), codes.begin(), codes.end());
  }
  set.images = concat_rows(parts);
  if (model.config.is_object() && model.config.contains("loss") &&
      model.config["loss"].value("soft_labels", false)) {
    FeatureNet ex = model.extractor;
    set.soft_labels = predict_proba(ex, set.images);
  }
  return set;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'G', 'C', 'N', 'D', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCheckpointVersion = 1;

uint64_t fnv1a(std::string_view bytes, uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<size_t>(i)] = digits[v & 0xf];
  return s;
}

template <class T>
void put_le(std::string& out, T v) {
  for (size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff));
}

template <class T>
T get_le(const std::string& in, size_t pos) {
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return static_cast<T>(v);
}

json model_header(const CondensedModel& m) {
  return {{"dataset", m.dataset},
          {"image", {{"channels", m.image.channels}, {"height", m.image.height}, {"width", m.image.width}}},
          {"num_classes", m.num_classes},
          {"codebook_size", m.codebook.size()},
          {"model", to_json(m.model)}};
}

template <class T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw LoadError(std::string("checkpoint manifest is missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw LoadError(std::string("checkpoint manifest field '") + key + "' has the wrong type");
  }
}

}  // namespace

void save_checkpoint(CondensedModel& model, const std::filesystem::path& path) {
  std::string data;
  json entries = json::array();
  uint64_t offset = 0;
  for (auto& [name, t] : model.tensors()) {
    for (double v : t->values()) put_le<uint32_t>(data, std::bit_cast<uint32_t>(static_cast<float>(v)));
    entries.push_back({{"name", name}, {"shape", t->shape()}, {"dtype", "f32"}, {"offset", offset}, {"numel", t->numel()}});
    offset += t->numel() * 4;
  }
  json manifest = {{"format", "gencond-condensed"},
                   {"version", kCheckpointVersion},
                   {"arch", model_header(model)},
                   {"config", model.config},
                   {"provenance", model.provenance},
                   {"tensors", entries}};
  manifest["digest"] = hex64(fnv1a(data, fnv1a(manifest.dump())));
  const std::string text = manifest.dump();

  std::string bytes(kMagic, sizeof(kMagic));
  put_le<uint32_t>(bytes, kCheckpointVersion);
  put_le<uint64_t>(bytes, text.size());
  bytes += text;
  bytes += data;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw LoadError("cannot write checkpoint " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw LoadError("failed writing checkpoint " + path.string());
}

CondensedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  constexpr size_t header = sizeof(kMagic) + 4 + 8;
  if (bytes.size() < header || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw LoadError("not a checkpoint file (bad magic): " + path.string());
  }
  const auto version = get_le<uint32_t>(bytes, sizeof(kMagic));
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint field 'version' is " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  }
  const auto mlen = get_le<uint64_t>(bytes, sizeof(kMagic) + 4);
  if (mlen > bytes.size() - header) throw LoadError("checkpoint manifest length exceeds file size");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(header, mlen));
  } catch (const json::exception& e) {
    throw LoadError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  const std::string data = bytes.substr(header + mlen);

  if (field<std::string>(manifest, "format") != "gencond-condensed") throw LoadError("checkpoint field 'format' is wrong");
  if (field<uint32_t>(manifest, "version") != kCheckpointVersion) throw LoadError("checkpoint field 'version' mismatch");
  const auto digest = field<std::string>(manifest, "digest");
  json body = manifest;
  body.erase("digest");
  if (hex64(fnv1a(data, fnv1a(body.dump()))) != digest) {
    throw LoadError("checkpoint field 'digest' does not match the manifest and tensor data");
  }

  const json arch = field<json>(manifest, "arch");
  CondensedModel m;
  m.dataset = field<std::string>(arch, "dataset");
  const json image = field<json>(arch, "image");
  m.image = {field<int>(image, "channels"), field<int>(image, "height"), field<int>(image, "width")};
  m.num_classes = field<int>(arch, "num_classes");
  const int k = field<int>(arch, "codebook_size");
  try {
    m.model = model_config_from_json(field<json>(arch, "model"));
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint field 'arch.model': ") + e.what());
  }
  m.config = field<json>(manifest, "config");
  m.provenance = field<json>(manifest, "provenance");

  try {
    Rng r(0);
    const FeatureNetConfig fcfg{m.image, m.num_classes, m.model.feature_width, m.model.feature_depth};
    m.codebook = Codebook(k, m.model.latent_dim, r);
    m.generator = Generator(generator_config_for(m.image, m.model.latent_dim, m.model.generator_width), r);
    const int e = m.model.embed_dim(m.num_classes);
    m.embeddings = ClassEmbeddingTable(Tensor({m.num_classes, e}), m.model.embed_mode, m.model.latent_dim, r);
    m.intra_anchor = Linear(e, fcfg.feature_dim(), r);
    m.extractor = FeatureNet(fcfg, r);
    m.matcher = FeatureNet(fcfg, r);
  } catch (const std::exception& e) {
    throw LoadError(std::string("checkpoint field 'arch' describes an invalid model: ") + e.what());
  }

  const json entries = field<json>(manifest, "tensors");
  auto slots = m.tensors();
  if (!entries.is_array() || entries.size() != slots.size()) {
    throw LoadError("checkpoint field 'tensors' lists " + std::to_string(entries.is_array() ? entries.size() : 0) +
                    " tensors, expected " + std::to_string(slots.size()));
  }
  for (size_t i = 0; i < slots.size(); ++i) {
    const json& e = entries[i];
    auto& [name, t] = slots[i];
    if (field<std::string>(e, "name") != name) throw LoadError("checkpoint tensor " + std::to_string(i) + " should be '" + name + "'");
    if (field<Shape>(e, "shape") != t->shape()) throw LoadError("checkpoint tensor '" + name + "' has the wrong shape");
    if (field<std::string>(e, "dtype") != "f32") throw LoadError("checkpoint tensor '" + name + "' has unsupported dtype");
    const auto off = field<uint64_t>(e, "offset");
    if (field<uint64_t>(e, "numel") != t->numel() || off + t->numel() * 4 > data.size()) {
      throw LoadError("checkpoint tensor '" + name + "' extends past the data section");
    }
    for (size_t j = 0; j < t->numel(); ++j) {
      (*t)[j] = static_cast<double>(std::bit_cast<float>(get_le<uint32_t>(data, off + 4 * j)));
    }
  }
  for (const auto* params : {&m.extractor, &m.matcher}) set_trainable(params->parameters(), false);
  return m;
}

}  // namespace gencond
