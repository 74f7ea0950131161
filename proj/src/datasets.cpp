#include "gencond/datasets.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "gencond/errors.hpp"
#include "gencond/rng.hpp"

namespace gencond {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Split split) { return split == Split::Train ? "train" : "test"; }

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "test") return Split::Test;
  throw ArgumentError("unknown split '" + std::string(text) + "' (expected train or test)");
}

NormalizationStats compute_stats(const Tensor& raw) {
  if (raw.rank() != 4 || raw.dim(0) == 0) throw ShapeError("compute_stats expects a non-empty [N,C,H,W] tensor");
  const int64_t n = raw.dim(0), c = raw.dim(1), hw = raw.dim(2) * raw.dim(3);
  NormalizationStats s{std::vector<double>(static_cast<size_t>(c), 0.0), std::vector<double>(static_cast<size_t>(c), 0.0)};
  const double count = static_cast<double>(n * hw);
  for (int64_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t p = 0; p < hw; ++p) sum += raw[static_cast<size_t>((i * c + ch) * hw + p)];
    const double mu = sum / count;
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t p = 0; p < hw; ++p) {
        const double d = raw[static_cast<size_t>((i * c + ch) * hw + p)] - mu;
        var += d * d;
      }
    s.mean[static_cast<size_t>(ch)] = mu;
    s.std[static_cast<size_t>(ch)] = std::max(std::sqrt(var / count), 1e-8);
  }
  return s;
}

namespace {

template <typename F>
Tensor per_channel_map(const Tensor& x, const NormalizationStats& stats, F f) {
  if (x.rank() != 4) throw ShapeError("expected [N,C,H,W] images, got " + shape_str(x.shape()));
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (stats.mean.size() != static_cast<size_t>(c) || stats.std.size() != static_cast<size_t>(c)) {
    throw ShapeError("normalization stats have " + std::to_string(stats.mean.size()) + " channels, images have " +
                     std::to_string(c));
  }
  Tensor y(x.shape());
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch) {
      const double mu = stats.mean[static_cast<size_t>(ch)], sd = stats.std[static_cast<size_t>(ch)];
      for (int64_t p = 0; p < hw; ++p) {
        const auto idx = static_cast<size_t>((i * c + ch) * hw + p);
        y[idx] = f(x[idx], mu, sd);
      }
    }
  return y;
}

}  // namespace

Tensor normalize(const Tensor& raw, const NormalizationStats& stats) {
  return per_channel_map(raw, stats, [](double v, double mu, double sd) {
    return std::clamp((v - mu) / (kNormSpread * sd), -1.0, 1.0);
  });
}

Tensor denormalize(const Tensor& normalized, const NormalizationStats& stats) {
  return per_channel_map(normalized, stats, [](double v, double mu, double sd) { return v * kNormSpread * sd + mu; });
}

std::vector<std::vector<int64_t>> LabeledDataset::class_indices() const {
  std::vector<std::vector<int64_t>> out(static_cast<size_t>(num_classes));
  for (size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= num_classes) throw IntegrityError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    out[static_cast<size_t>(y)].push_back(static_cast<int64_t>(i));
  }
  return out;
}

void LabeledDataset::validate() const {
  if (num_classes < 1) throw IntegrityError(name + ": num_classes must be positive");
  if (images.rank() != 4 || images.dim(0) != size() || images.dim(1) != shape.channels || images.dim(2) != shape.height ||
      images.dim(3) != shape.width) {
    throw IntegrityError(name + ": image tensor " + shape_str(images.shape()) + " inconsistent with labels/shape");
  }
  for (double v : images.values()) {
    if (!(v >= -1.0 && v <= 1.0)) throw IntegrityError(name + ": image value outside [-1, 1]");
  }
  const auto per_class = class_indices();
  if (split == Split::Train) {
    if (size() < num_classes) throw IntegrityError(name + ": fewer samples than classes");
    for (size_t c = 0; c < per_class.size(); ++c) {
      if (per_class[c].empty()) throw IntegrityError(name + ": class " + std::to_string(c) + " absent from train split");
    }
  }
}

namespace {

struct Blob {
  double cy, cx, sigma;
  std::vector<double> color;
};

Blob random_blob(Rng& rng, int size, int channels) {
  Blob b;
  b.cy = rng.uniform(0.2, 0.8) * size;
  b.cx = rng.uniform(0.2, 0.8) * size;
  b.sigma = rng.uniform(0.08, 0.16) * size;
  b.color.resize(static_cast<size_t>(channels));
  for (auto& c : b.color) c = rng.uniform(0.3, 1.0);
  return b;
}

void paint(Tensor& img, int64_t sample, const Blob& b, double amplitude, int size, int channels) {
  const double inv = 1.0 / (2.0 * b.sigma * b.sigma);
  for (int ch = 0; ch < channels; ++ch) {
    const double a = amplitude * b.color[static_cast<size_t>(ch)];
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double dy = y + 0.5 - b.cy, dx = x + 0.5 - b.cx;
        img[static_cast<size_t>(((sample * channels + ch) * size + y) * size + x)] += a * std::exp(-(dy * dy + dx * dx) * inv);
      }
  }
}

constexpr int kToyChannels = 3;
constexpr int kBlobsPerClass = 2;
constexpr double kJitter = 0.10;        // blob-centre jitter, fraction of image size
constexpr double kClutter = 3.0;        // amplitude of the class-agnostic blobs
constexpr int kClutterArea = 256;       // one clutter blob per this many pixels
constexpr double kPixelNoise = 0.2;     // per-pixel Gaussian noise

Tensor toy_raw(int num_classes, int per_class, int image_size, uint64_t seed, Split split, std::vector<int>& labels) {
  Rng template_rng(seed);
  std::vector<std::vector<Blob>> templates(static_cast<size_t>(num_classes));
  for (auto& t : templates)
    for (int b = 0; b < kBlobsPerClass; ++b) t.push_back(random_blob(template_rng, image_size, kToyChannels));

  Rng rng(Rng::mix(seed ^ (split == Split::Train ? 0x7261696eULL : 0x74657374ULL)));
  const int64_t n = int64_t{num_classes} * per_class;
  Tensor raw({n, kToyChannels, image_size, image_size});
  labels.assign(static_cast<size_t>(n), 0);
  const int clutter = image_size * image_size / kClutterArea;
  int64_t s = 0;
  for (int i = 0; i < per_class; ++i) {
    for (int c = 0; c < num_classes; ++c, ++s) {
      labels[static_cast<size_t>(s)] = c;
      for (const Blob& tb : templates[static_cast<size_t>(c)]) {
        Blob b = tb;
        b.cy += rng.normal() * kJitter * image_size;
        b.cx += rng.normal() * kJitter * image_size;
        paint(raw, s, b, rng.uniform(0.7, 1.2), image_size, kToyChannels);
      }
      for (int d = 0; d < clutter; ++d)
        paint(raw, s, random_blob(rng, image_size, kToyChannels), kClutter * rng.uniform(0.5, 1.0), image_size,
              kToyChannels);
      const int64_t off = s * kToyChannels * image_size * image_size;
      for (int64_t p = 0; p < int64_t{kToyChannels} * image_size * image_size; ++p) {
        raw[static_cast<size_t>(off + p)] += kPixelNoise * rng.normal();
      }
    }
  }
  return raw;
}

}  // namespace

LabeledDataset make_toy_dataset(int num_classes, int per_class, int image_size, uint64_t seed, Split split) {
  if (num_classes < 2 || per_class < 2 || image_size < 8) {
    throw ArgumentError("make_toy_dataset needs num_classes >= 2, per_class >= 2, image_size >= 8");
  }
  LabeledDataset ds;
  ds.name = std::string(kToyName);
  ds.split = split;
  ds.num_classes = num_classes;
  ds.shape = {kToyChannels, image_size, image_size};
  std::vector<int> train_labels;
  const Tensor train_raw = toy_raw(num_classes, per_class, image_size, seed, Split::Train, train_labels);
  ds.stats = compute_stats(train_raw);
  if (split == Split::Train) {
    ds.images = normalize(train_raw, ds.stats);
    ds.labels = std::move(train_labels);
  } else {
    ds.images = normalize(toy_raw(num_classes, per_class, image_size, seed, Split::Test, ds.labels), ds.stats);
  }
  return ds;
}

namespace {

template <typename T>
std::vector<T> read_le_array(const fs::path& path, size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("missing data file " + path.string());
  std::vector<unsigned char> bytes(count * sizeof(T));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<size_t>(in.gcount()) != bytes.size()) throw LoadError("truncated data file " + path.string());
  using U = std::conditional_t<sizeof(T) == 4, uint32_t, uint64_t>;
  std::vector<T> out(count);
  for (size_t i = 0; i < count; ++i) {
    U u = 0;
    for (size_t b = 0; b < sizeof(T); ++b) u |= static_cast<U>(bytes[i * sizeof(T) + b]) << (8 * b);
    out[i] = std::bit_cast<T>(u);
  }
  return out;
}

template <typename T>
void write_le_array(const fs::path& path, std::span<const T> values) {
  using U = std::conditional_t<sizeof(T) == 4, uint32_t, uint64_t>;
  std::vector<unsigned char> bytes(values.size() * sizeof(T));
  for (size_t i = 0; i < values.size(); ++i) {
    const U u = std::bit_cast<U>(values[i]);
    for (size_t b = 0; b < sizeof(T); ++b) bytes[i * sizeof(T) + b] = static_cast<unsigned char>(u >> (8 * b));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

void write_dataset_files(const fs::path& root, std::string_view name, Split split, const Tensor& raw_images,
                         std::span<const int> labels, int num_classes, const NormalizationStats& stats) {
  if (raw_images.rank() != 4 || raw_images.dim(0) != static_cast<int64_t>(labels.size())) {
    throw ShapeError("write_dataset_files: images/labels disagree");
  }
  const fs::path dir = root / std::string(name);
  fs::create_directories(dir);
  const std::string stem(to_string(split));
  std::vector<float> f(raw_images.numel());
  std::transform(raw_images.values().begin(), raw_images.values().end(), f.begin(), [](double v) { return static_cast<float>(v); });
  std::vector<int64_t> l(labels.begin(), labels.end());
  write_le_array<float>(dir / (stem + ".images.f32"), f);
  write_le_array<int64_t>(dir / (stem + ".labels.i64"), l);
  json m = {{"name", name},
            {"split", stem},
            {"n", labels.size()},
            {"channels", raw_images.dim(1)},
            {"height", raw_images.dim(2)},
            {"width", raw_images.dim(3)},
            {"num_classes", num_classes},
            {"mean", stats.mean},
            {"std", stats.std},
            {"images", stem + ".images.f32"},
            {"labels", stem + ".labels.i64"}};
  std::ofstream(dir / (stem + ".json")) << m.dump(2) << '\n';
}

LabeledDataset load_dataset(std::string_view name, const fs::path& root, Split split, const ToyParams& toy) {
  if (name == kToyName) return make_toy_dataset(toy, split);

  const fs::path dir = root / std::string(name);
  const fs::path manifest_path = dir / (std::string(to_string(split)) + ".json");
  std::ifstream in(manifest_path);
  if (!in) throw LoadError("missing dataset manifest " + manifest_path.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }

  LabeledDataset ds;
  try {
    ds.name = m.at("name").get<std::string>();
    ds.split = parse_split(m.at("split").get<std::string>());
    ds.num_classes = m.at("num_classes").get<int>();
    ds.shape = {m.at("channels").get<int>(), m.at("height").get<int>(), m.at("width").get<int>()};
    const auto n = m.at("n").get<int64_t>();
    const auto raw = read_le_array<float>(dir / m.value("images", std::string(to_string(split)) + ".images.f32"),
                                          static_cast<size_t>(n * ds.shape.numel()));
    const auto labels = read_le_array<int64_t>(dir / m.value("labels", std::string(to_string(split)) + ".labels.i64"),
                                               static_cast<size_t>(n));
    Tensor raw_t({n, ds.shape.channels, ds.shape.height, ds.shape.width}, std::vector<double>(raw.begin(), raw.end()));
    ds.stats.mean = m.value("mean", std::vector<double>{});
    ds.stats.std = m.value("std", std::vector<double>{});
    if (ds.stats.mean.empty()) {
      if (split != Split::Train) throw LoadError(manifest_path.string() + ": test manifest must carry train statistics");
      ds.stats = compute_stats(raw_t);
    }
    ds.images = normalize(raw_t, ds.stats);
    ds.labels.reserve(labels.size());
    for (int64_t y : labels) {
      if (y < 0 || y >= ds.num_classes) {
        throw IntegrityError(manifest_path.string() + ": label " + std::to_string(y) + " outside [0, " +
                             std::to_string(ds.num_classes) + ")");
      }
      ds.labels.push_back(static_cast<int>(y));
    }
  } catch (const json::exception& e) {
    throw LoadError("manifest " + manifest_path.string() + " is missing a field: " + e.what());
  }
  ds.validate();
  return ds;
}

AssociationBatch sample_association(const LabeledDataset& dataset, int class_id, int64_t size, uint64_t seed) {
  if (class_id < 0 || class_id >= dataset.num_classes) throw ArgumentError("class id out of range");
  std::vector<int64_t> pool;
  for (size_t i = 0; i < dataset.labels.size(); ++i) {
    if (dataset.labels[i] == class_id) pool.push_back(static_cast<int64_t>(i));
  }
  if (size < 1 || size > static_cast<int64_t>(pool.size())) {
    throw ArgumentError("association size " + std::to_string(size) + " not in [1, " + std::to_string(pool.size()) +
                        "] for class " + std::to_string(class_id));
  }
  Rng rng(seed);
  // partial Fisher-Yates: the first `size` slots are a uniform sample
  for (int64_t i = 0; i < size; ++i) {
    const auto j = static_cast<size_t>(i) + static_cast<size_t>(rng.below(pool.size() - static_cast<size_t>(i)));
    std::swap(pool[static_cast<size_t>(i)], pool[j]);
  }
  pool.resize(static_cast<size_t>(size));
  AssociationBatch batch{class_id, pool, dataset.gather(pool)};
  return batch;
}

}  // namespace gencond
