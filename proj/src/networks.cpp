#include "gencond/networks.hpp"

#include <cmath>

#include "gencond/errors.hpp"

namespace gencond {

int64_t count_params(const ParamList& params) {
  int64_t n = 0;
  for (const auto& p : params) n += static_cast<int64_t>(p.var.value().numel());
  return n;
}

uint64_t params_checksum(const ParamList& params) {
  uint64_t h = 0x6a09e667f3bcc908ULL;
  for (const auto& p : params) h = Rng::mix(h ^ checksum(p.var.value()));
  return h;
}

void set_trainable(const ParamList& params, bool on) {
  for (const auto& p : params) p.var.set_requires_grad(on);
}

void zero_grads(const ParamList& params) {
  for (const auto& p : params) p.var.zero_grad();
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

Linear::Linear(int64_t in, int64_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = Var(uniform_tensor({out, in}, bound, rng), true);
  bias = Var(uniform_tensor({out}, bound, rng), true);
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w", weight});
  out.push_back({prefix + ".b", bias});
}

Conv2d::Conv2d(int64_t in, int64_t out, int64_t kernel, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
  weight = Var(uniform_tensor({out, in, kernel, kernel}, bound, rng), true);
  bias = Var(uniform_tensor({out}, bound, rng), true);
}

void Conv2d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w", weight});
  out.push_back({prefix + ".b", bias});
}

InstanceNorm2d::InstanceNorm2d(int64_t channels)
    : gamma(Tensor({channels}, 1.0), true), beta(Tensor({channels}, 0.0), true) {}

void InstanceNorm2d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

BatchNorm2d::BatchNorm2d(int64_t channels)
    : gamma(Tensor({channels}, 1.0), true),
      beta(Tensor({channels}, 0.0), true),
      stats{Tensor({channels}, 0.0), Tensor({channels}, 1.0)} {}

void BatchNorm2d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void BatchNorm2d::collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
  out.push_back({prefix + ".running_mean", &stats.running_mean});
  out.push_back({prefix + ".running_var", &stats.running_var});
}

// ---------------------------------------------------------------------------

int FeatureNetConfig::final_spatial_h() const {
  int s = input.height;
  for (int i = 0; i < depth; ++i) s /= 2;
  return s;
}

int FeatureNetConfig::final_spatial_w() const {
  int s = input.width;
  for (int i = 0; i < depth; ++i) s /= 2;
  return s;
}

FeatureNet::FeatureNet(const FeatureNetConfig& config, Rng& rng) : config_(config) {
  if (config.depth < 1 || config.width < 1 || config.num_classes < 1 || config.input.channels < 1) {
    throw ArgumentError("FeatureNet needs positive depth, width, classes and channels");
  }
  if (config.final_spatial_h() < 1 || config.final_spatial_w() < 1) {
    throw ShapeError("FeatureNet depth " + std::to_string(config.depth) + " pools a " + std::to_string(config.input.height) +
                     "x" + std::to_string(config.input.width) + " input below 1x1");
  }
  int64_t in = config.input.channels;
  for (int b = 0; b < config.depth; ++b) {
    blocks_.push_back({Conv2d(in, config.width, 3, rng), InstanceNorm2d(config.width)});
    in = config.width;
  }
  head_ = Linear(config.feature_dim(), config.num_classes, rng);
}

void FeatureNet::check_input(const Var& images) const {
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != config_.input.channels || s[2] != config_.input.height || s[3] != config_.input.width) {
    throw ShapeError("FeatureNet expects [B," + std::to_string(config_.input.channels) + "," +
                     std::to_string(config_.input.height) + "," + std::to_string(config_.input.width) + "], got " +
                     shape_str(s));
  }
}

FeatureOutput FeatureNet::forward(const Var& images) const {
  check_input(images);
  FeatureOutput out;
  Var h = images;
  for (const auto& block : blocks_) {
    h = ops::avg_pool2(ops::relu(block.norm(block.conv(h))));
    out.layers.push_back(h);
  }
  out.final = ops::flatten(h);
  out.logits = head_(out.final);
  return out;
}

Var FeatureNet::pooled_last(const Var& images) const {
  check_input(images);
  Var h = images;
  for (const auto& block : blocks_) h = ops::avg_pool2(ops::relu(block.norm(block.conv(h))));
  return ops::spatial_mean(h);
}

ParamList FeatureNet::parameters() const {
  ParamList out;
  for (size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = "block" + std::to_string(b);
    blocks_[b].conv.collect(p + ".conv", out);
    blocks_[b].norm.collect(p + ".norm", out);
  }
  head_.collect("head", out);
  return out;
}

MlpNet::MlpNet(ImageShape input, int num_classes, Rng& rng, int hidden)
    : input_(input), fc1_(input.numel(), hidden, rng), fc2_(hidden, hidden, rng), fc3_(hidden, num_classes, rng) {}

Var MlpNet::logits(const Var& images) {
  if (images.value().rank() != 4 || images.value().row_size() != input_.numel()) {
    throw ShapeError("MlpNet input " + shape_str(images.shape()) + " does not match configured image shape");
  }
  return fc3_(ops::relu(fc2_(ops::relu(fc1_(ops::flatten(images))))));
}

ParamList MlpNet::parameters() const {
  ParamList out;
  fc1_.collect("fc1", out);
  fc2_.collect("fc2", out);
  fc3_.collect("fc3", out);
  return out;
}

bool is_known_arch(std::string_view arch) {
  return arch == "convnet" || arch == "convnet2" || arch == "convnet3" || arch == "convnet4" || arch == "mlp";
}

std::unique_ptr<Classifier> make_classifier(std::string_view arch, ImageShape input, int num_classes, int width,
                                            Rng& rng) {
  if (arch == "mlp") return std::make_unique<MlpNet>(input, num_classes, rng);
  int depth = 0;
  if (arch == "convnet" || arch == "convnet3") depth = 3;
  if (arch == "convnet2") depth = 2;
  if (arch == "convnet4") depth = 4;
  if (depth == 0) throw ArgumentError("unknown architecture '" + std::string(arch) + "'");
  return std::make_unique<FeatureNet>(FeatureNetConfig{input, num_classes, width, depth}, rng);
}

// ---------------------------------------------------------------------------

int generator_blocks_for(int image_size) {
  int blocks = 0;
  int s = image_size;
  while (s % 2 == 0 && s / 2 >= 4) {
    s /= 2;
    ++blocks;
  }
  return blocks;
}

GeneratorConfig generator_config_for(ImageShape image, int latent_dim, int width) {
  if (image.height != image.width) throw ShapeError("generator supports square images only");
  GeneratorConfig g;
  g.latent_dim = latent_dim;
  g.width = width;
  g.blocks = generator_blocks_for(image.height);
  g.base_size = image.height >> g.blocks;
  g.out_channels = image.channels;
  return g;
}

Generator::Generator(const GeneratorConfig& config, Rng& rng) : config_(config) {
  if (config.latent_dim < 1 || config.width < 1 || config.blocks < 0 || config.base_size < 1 || config.out_channels < 1) {
    throw ArgumentError("invalid generator configuration");
  }
  input_proj_ = Linear(2 * int64_t{config.latent_dim}, int64_t{config.width} * config.base_size * config.base_size, rng);
  for (int b = 0; b < config.blocks; ++b) {
    Block block;
    block.first = {Conv2d(config.width, config.width, 3, rng), BatchNorm2d(config.width)};
    block.second = {Conv2d(config.width, config.width, 3, rng), BatchNorm2d(config.width)};
    blocks_.push_back(std::move(block));
  }
  head_ = Conv2d(config.width, config.out_channels, 3, rng);
}

Var Generator::forward(const Var& input, bool training) const {
  if (input.value().rank() != 2 || input.dim(1) != 2 * int64_t{config_.latent_dim}) {
    throw ShapeError("generator input must be [B," + std::to_string(2 * config_.latent_dim) + "], got " +
                     shape_str(input.shape()));
  }
  Var h = ops::reshape(input_proj_(input), {input.dim(0), config_.width, config_.base_size, config_.base_size});
  for (const auto& block : blocks_) {
    for (const Stage* stage : {&block.first, &block.second}) h = stage->norm(stage->conv(ops::relu(h)), training);
    h = ops::upsample_nearest2(h);
  }
  return ops::tanh(head_(h));
}

Var Generator::generate(const Var& codes, const Var& class_embeds, bool training) const {
  if (codes.value().rank() != 2 || class_embeds.value().rank() != 2 || codes.dim(0) != class_embeds.dim(0) ||
      codes.dim(1) != config_.latent_dim || class_embeds.dim(1) != config_.latent_dim) {
    throw ShapeError("generate: codes " + shape_str(codes.shape()) + " and class embeddings " +
                     shape_str(class_embeds.shape()) + " must both be [B," + std::to_string(config_.latent_dim) + "]");
  }
  return forward(ops::concat_cols(codes, class_embeds), training);
}

ParamList Generator::parameters() const {
  ParamList out;
  input_proj_.collect("input_proj", out);
  for (size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = "block" + std::to_string(b);
    blocks_[b].first.conv.collect(p + ".conv0", out);
    blocks_[b].first.norm.collect(p + ".bn0", out);
    blocks_[b].second.conv.collect(p + ".conv1", out);
    blocks_[b].second.norm.collect(p + ".bn1", out);
  }
  head_.collect("head", out);
  return out;
}

std::vector<NamedBuffer> Generator::buffers() {
  std::vector<NamedBuffer> out;
  for (size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = "block" + std::to_string(b);
    blocks_[b].first.norm.collect_buffers(p + ".bn0", out);
    blocks_[b].second.norm.collect_buffers(p + ".bn1", out);
  }
  return out;
}

int64_t generator_param_count(const GeneratorConfig& c) {
  const int64_t w = c.width;
  const int64_t proj = 2 * int64_t{c.latent_dim} * w * c.base_size * c.base_size + w * c.base_size * c.base_size;
  const int64_t stage = w * w * 9 + w + 2 * w;
  const int64_t head = w * c.out_channels * 9 + c.out_channels;
  return proj + 2 * stage * c.blocks + head;
}

// ---------------------------------------------------------------------------

Discriminator::Discriminator(const DiscriminatorConfig& config, Rng& rng) : config_(config) {
  if (config.feature_dim < 1 || config.embed_dim < 0) throw ArgumentError("invalid discriminator widths");
  int64_t in = config.feature_dim + config.embed_dim;
  for (int h : config.hidden) {
    layers_.emplace_back(in, h, rng);
    in = h;
  }
  layers_.emplace_back(in, 1, rng);
}

Var Discriminator::forward(const Var& features, const Var& class_embeds) const {
  if (features.value().rank() != 2 || class_embeds.value().rank() != 2 || features.dim(1) != config_.feature_dim ||
      class_embeds.dim(1) != config_.embed_dim || features.dim(0) != class_embeds.dim(0)) {
    throw ShapeError("discriminator expects features [B," + std::to_string(config_.feature_dim) + "] and embeddings [B," +
                     std::to_string(config_.embed_dim) + "], got " + shape_str(features.shape()) + " and " +
                     shape_str(class_embeds.shape()));
  }
  Var h = ops::concat_cols(features, class_embeds);
  for (size_t i = 0; i + 1 < layers_.size(); ++i) h = ops::relu(layers_[i](h));
  return ops::reshape(ops::sigmoid(layers_.back()(h)), {features.dim(0)});
}

ParamList Discriminator::parameters() const {
  ParamList out;
  for (size_t i = 0; i < layers_.size(); ++i) layers_[i].collect("fc" + std::to_string(i), out);
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(EmbedMode mode) {
  switch (mode) {
    case EmbedMode::ClassFeature:
      return "class_feature";
    case EmbedMode::OneHot:
      return "onehot";
    case EmbedMode::Online:
      return "online";
  }
  return "class_feature";
}

EmbedMode parse_embed_mode(std::string_view text) {
  if (text == "class_feature") return EmbedMode::ClassFeature;
  if (text == "onehot") return EmbedMode::OneHot;
  if (text == "online") return EmbedMode::Online;
  throw ArgumentError("unknown embed mode '" + std::string(text) + "'");
}

int64_t param_count(CondensedFormat format, int num_classes, int ipc, ImageShape image, const ModelConfig& model) {
  if (format == CondensedFormat::Pixel) return int64_t{ipc} * num_classes * image.numel();
  const int64_t codebook = int64_t{ipc} * model.latent_dim;
  const int64_t generator = generator_param_count(generator_config_for(image, model.latent_dim, model.generator_width));
  const int64_t embed = model.embed_dim(num_classes);
  const int64_t table = int64_t{num_classes} * embed;
  const int64_t projection = embed * model.latent_dim + model.latent_dim;
  return codebook + generator + table + projection;
}

}  // namespace gencond
