#include "gencond/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gencond/errors.hpp"

namespace gencond {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::span<const double> data)
    : Tensor(std::move(shape), Storage(data.begin(), data.end())) {}

Tensor::Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (static_cast<int64_t>(data_.size()) != shape_numel(shape_)) {
    throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != static_cast<int64_t>(numel())) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

int64_t Tensor::row_size() const {
  if (shape_.empty()) throw ShapeError("row access on a scalar tensor");
  return shape_[0] == 0 ? 0 : static_cast<int64_t>(numel()) / shape_[0];
}

Tensor Tensor::slice_rows(int64_t begin, int64_t end) const {
  if (shape_.empty() || begin < 0 || end < begin || end > shape_[0]) {
    throw ShapeError("row slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
                     shape_str(shape_));
  }
  const int64_t rs = row_size();
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s), Storage(data_.begin() + begin * rs, data_.begin() + end * rs));
}

Tensor Tensor::gather_rows(std::span<const int64_t> rows) const {
  const int64_t rs = row_size();
  Shape s = shape_;
  s[0] = static_cast<int64_t>(rows.size());
  Tensor out(std::move(s));
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= shape_[0]) throw ShapeError("row index out of range");
    std::copy_n(data_.begin() + rows[i] * rs, rs, out.data_.begin() + static_cast<int64_t>(i) * rs);
  }
  return out;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.numel() != numel()) throw ShapeError("+= shape mismatch " + shape_str(shape_) + " vs " + shape_str(other.shape_));
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape s = parts[0].shape();
  int64_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<int>(s.size()) || !std::equal(s.begin() + 1, s.end(), p.shape().begin() + 1)) {
      throw ShapeError("concat_rows trailing shape mismatch");
    }
    rows += p.dim(0);
  }
  s[0] = rows;
  Storage data;
  data.reserve(static_cast<size_t>(shape_numel(s)));
  for (const auto& p : parts) data.insert(data.end(), p.storage().begin(), p.storage().end());
  return Tensor(std::move(s), std::move(data));
}

uint64_t checksum(const Tensor& t) {
  // FNV-1a over shape and raw bit patterns
  uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  for (auto d : t.shape()) feed(static_cast<uint64_t>(d));
  for (double v : t.values()) feed(std::bit_cast<uint64_t>(v));
  return h;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.values()) m = std::max(m, std::abs(v));
  return m;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace gencond
