#include "gencond/visualize.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gencond/errors.hpp"

namespace gencond {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string class_colour(int c) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  if (c < 10) return palette[c];
  const double hue = std::fmod(c * 137.508, 360.0);
  std::ostringstream s;
  s << "hsl(" << hue << ",65%,45%)";
  return s.str();
}

}  // namespace

Pca2 fit_pca2(const Tensor& feats) {
  if (feats.rank() != 2 || feats.dim(1) < 2) throw ArgumentError("projection needs at least 2 feature dimensions");
  if (feats.dim(0) < 2) throw ArgumentError("projection needs at least 2 points");
  const Eigen::Index n = feats.dim(0), f = feats.dim(1);
  Eigen::Map<const RowMat> x(feats.data(), n, f);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const RowMat centered = x.rowwise() - mu;
  Eigen::BDCSVD<RowMat> svd(centered, Eigen::ComputeThinV);
  Pca2 p;
  p.mean.assign(mu.data(), mu.data() + f);
  p.components = Tensor({2, f});
  for (int k = 0; k < 2; ++k) {
    Eigen::VectorXd v = k < svd.matrixV().cols() ? Eigen::VectorXd(svd.matrixV().col(k)) : Eigen::VectorXd::Zero(f);
    // Sign convention: largest-magnitude entry positive.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    for (Eigen::Index j = 0; j < f; ++j) p.components[static_cast<size_t>(k * f + j)] = v(j);
    const double s = k < svd.singularValues().size() ? svd.singularValues()(k) : 0.0;
    p.variance.push_back(s * s / static_cast<double>(n));
  }
  return p;
}

Tensor Pca2::project(const Tensor& feats) const {
  const int64_t f = static_cast<int64_t>(mean.size());
  if (feats.rank() != 2 || feats.dim(1) != f) throw ShapeError("projection input width does not match the fitted PCA");
  Tensor out({feats.dim(0), 2});
  for (int64_t i = 0; i < feats.dim(0); ++i) {
    for (int k = 0; k < 2; ++k) {
      double s = 0.0;
      for (int64_t j = 0; j < f; ++j) {
        s += (feats[static_cast<size_t>(i * f + j)] - mean[static_cast<size_t>(j)]) * components[static_cast<size_t>(k * f + j)];
      }
      out[static_cast<size_t>(i * 2 + k)] = s;
    }
  }
  return out;
}

void write_scatter_svg(const std::filesystem::path& path, std::span<const ScatterPoint> points, int num_classes) {
  constexpr double size = 640.0, margin = 40.0;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!points.empty()) {
    x0 = x1 = points[0].x;
    y0 = y1 = points[0].y;
    for (const auto& p : points) {
      x0 = std::min(x0, p.x), x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
    }
  }
  const double sx = (size - 2 * margin) / std::max(x1 - x0, 1e-12);
  const double sy = (size - 2 * margin) / std::max(y1 - y0, 1e-12);
  std::ofstream f(path);
  if (!f) throw LoadError("cannot write " + path.string());
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size + 24 << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& p : points) {
      if (p.synthetic != (pass == 1)) continue;
      const double cx = margin + (p.x - x0) * sx;
      const double cy = size - margin - (p.y - y0) * sy;
      const std::string colour = class_colour(p.label);
      if (p.synthetic) {
        f << "<path d=\"M" << cx << ' ' << cy - 6 << " L" << cx + 6 << ' ' << cy << " L" << cx << ' ' << cy + 6 << " L"
          << cx - 6 << ' ' << cy << " Z\" fill=\"" << colour << "\" stroke=\"black\" stroke-width=\"1.2\"/>\n";
      } else {
        f << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"2.5\" fill=\"" << colour
          << "\" fill-opacity=\"0.45\"/>\n";
      }
    }
  }
  for (int c = 0; c < num_classes; ++c) {
    f << "<rect x=\"" << margin + 60 * c << "\" y=\"" << size << "\" width=\"10\" height=\"10\" fill=\"" << class_colour(c)
      << "\"/><text x=\"" << margin + 60 * c + 14 << "\" y=\"" << size + 10 << "\" font-size=\"11\">" << c << "</text>\n";
  }
  f << "</svg>\n";
}

void write_scatter_csv(const std::filesystem::path& path, std::span<const ScatterPoint> points) {
  std::ofstream f(path);
  if (!f) throw LoadError("cannot write " + path.string());
  f.precision(17);
  f << "kind,label,x,y\n";
  for (const auto& p : points) f << (p.synthetic ? "synthetic" : "real") << ',' << p.label << ',' << p.x << ',' << p.y << '\n';
}

}  // namespace gencond
