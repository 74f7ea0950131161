#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "gencond/tensor.hpp"

namespace gencond {

/// Two leading principal axes of a point cloud.
struct Pca2 {
  std::vector<double> mean;      // [F]
  Tensor components;             // [2, F], unit rows, decreasing variance
  std::vector<double> variance;  // variance along each component

  /// [n, F] -> [n, 2].
  Tensor project(const Tensor& feats) const;
};

/// Throws ArgumentError when features have fewer than 2 dimensions or rows.
Pca2 fit_pca2(const Tensor& feats);

struct ScatterPoint {
  double x = 0.0;
  double y = 0.0;
  int label = 0;
  bool synthetic = false;
};

/// One colour per class; synthetic points are drawn as outlined diamonds.
void write_scatter_svg(const std::filesystem::path& path, std::span<const ScatterPoint> points, int num_classes);
/// kind,label,x,y rows.
void write_scatter_csv(const std::filesystem::path& path, std::span<const ScatterPoint> points);

}  // namespace gencond
