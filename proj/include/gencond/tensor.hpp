#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace gencond {

using Shape = std::vector<int64_t>;

/// 64-byte aligned allocation, so vectorized kernels see the same alignment
/// (and hence the same summation order) on every run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

std::string shape_str(const Shape& shape);
int64_t shape_numel(const Shape& shape);

/// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::span<const double> data);
  Tensor(Shape shape, Storage data);
  Tensor(Shape shape, const std::vector<double>& data) : Tensor(std::move(shape), std::span<const double>(data)) {}

  static Tensor scalar(double v) { return Tensor(Shape{}, Storage{v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i < 0 ? i + rank() : i)); }
  size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  Storage& storage() { return data_; }
  const Storage& storage() const { return data_; }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  /// Scalar value of a one-element tensor.
  double item() const;

  /// Same data, new shape (element counts must agree).
  Tensor reshaped(Shape shape) const;

  /// Rows [begin, end) along the leading dimension.
  Tensor slice_rows(int64_t begin, int64_t end) const;
  /// Leading-dimension rows in the given order.
  Tensor gather_rows(std::span<const int64_t> rows) const;
  /// Elements per leading-dimension row.
  int64_t row_size() const;

  void fill(double v);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  Storage data_;
};

/// Concatenate along the leading dimension; trailing dimensions must agree.
Tensor concat_rows(std::span<const Tensor> parts);

/// Order-sensitive 64-bit hash of shape and exact bit patterns.
uint64_t checksum(const Tensor& t);

double max_abs(const Tensor& t);
bool all_finite(const Tensor& t);

}  // namespace gencond
