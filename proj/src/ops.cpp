#include "gencond/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "gencond/errors.hpp"

namespace gencond::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const Var& x, int rank, const char* op) {
  if (x.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
  }
}

template <typename F, typename D>
Var unary(const Var& x, F forward, D derivative_from_output) {
  Tensor y(x.shape());
  const auto& xv = x.value();
  for (size_t i = 0; i < y.numel(); ++i) y[i] = forward(xv[i]);
  return make_node(std::move(y), {x}, [derivative_from_output](Node& n) {
    if (!n.wants_grad(0)) return;
    auto& g = n.input_grad(0);
    const auto& xv = n.input_value(0);
    for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * derivative_from_output(xv[i], n.value[i]);
  });
}

// Column buffer for one sample: rows (ci, ky, kx), columns (oy, ox).
void im2col(const double* img, int64_t channels, int64_t h, int64_t w, int64_t k, double* col) {
  const int64_t pad = k / 2;
  const int64_t hw = h * w;
  for (int64_t c = 0; c < channels; ++c) {
    const double* plane = img + c * hw;
    for (int64_t ky = 0; ky < k; ++ky) {
      for (int64_t kx = 0; kx < k; ++kx) {
        double* row = col + ((c * k + ky) * k + kx) * hw;
        const int64_t dx = kx - pad;
        const int64_t x0 = std::max<int64_t>(0, -dx);
        const int64_t x1 = std::min<int64_t>(w, w - dx);
        for (int64_t oy = 0; oy < h; ++oy) {
          const int64_t iy = oy + ky - pad;
          double* dst = row + oy * w;
          if (iy < 0 || iy >= h || x1 <= x0) {
            std::fill_n(dst, w, 0.0);
            continue;
          }
          std::fill_n(dst, x0, 0.0);
          std::copy_n(plane + iy * w + x0 + dx, x1 - x0, dst + x0);
          std::fill(dst + x1, dst + w, 0.0);
        }
      }
    }
  }
}

void col2im_add(const double* col, int64_t channels, int64_t h, int64_t w, int64_t k, double* img) {
  const int64_t pad = k / 2;
  const int64_t hw = h * w;
  for (int64_t c = 0; c < channels; ++c) {
    double* plane = img + c * hw;
    for (int64_t ky = 0; ky < k; ++ky) {
      for (int64_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((c * k + ky) * k + kx) * hw;
        const int64_t dx = kx - pad;
        const int64_t x0 = std::max<int64_t>(0, -dx);
        const int64_t x1 = std::min<int64_t>(w, w - dx);
        for (int64_t oy = 0; oy < h; ++oy) {
          const int64_t iy = oy + ky - pad;
          if (iy < 0 || iy >= h) continue;
          const double* src = row + oy * w;
          double* dst = plane + iy * w + dx;
          for (int64_t ox = x0; ox < x1; ++ox) dst[ox] += src[ox];
        }
      }
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor y = a.value();
  y += b.value();
  return make_node(std::move(y), {a, b}, [](Node& n) {
    if (n.wants_grad(0)) n.input_grad(0) += n.grad;
    if (n.wants_grad(1)) n.input_grad(1) += n.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor y = a.value();
  for (size_t i = 0; i < y.numel(); ++i) y[i] -= b.value()[i];
  return make_node(std::move(y), {a, b}, [](Node& n) {
    if (n.wants_grad(0)) n.input_grad(0) += n.grad;
    if (n.wants_grad(1)) {
      auto& g = n.input_grad(1);
      for (size_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor y = a.value();
  y *= s;
  return make_node(std::move(y), {a}, [s](Node& n) {
    auto& g = n.input_grad(0);
    for (size_t i = 0; i < g.numel(); ++i) g[i] += s * n.grad[i];
  });
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return make_node(Tensor::scalar(s), {x}, [](Node& n) {
    auto& g = n.input_grad(0);
    const double d = n.grad[0];
    for (auto& v : g.values()) v += d;
  });
}

Var mean(const Var& x) {
  const auto count = static_cast<double>(x.value().numel());
  if (count == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / count);
}

Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
  if (terms.size() != weights.size()) throw ShapeError("weighted_sum: term/weight count mismatch");
  double s = 0.0;
  for (size_t i = 0; i < terms.size(); ++i) s += weights[i] * terms[i].item();
  std::vector<double> w(weights.begin(), weights.end());
  return make_node(Tensor::scalar(s), std::vector<Var>(terms.begin(), terms.end()), [w](Node& n) {
    for (size_t i = 0; i < w.size(); ++i) {
      if (n.wants_grad(i)) n.input_grad(i)[0] += w[i] * n.grad[0];
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return make_node(std::move(y), {x}, [](Node& n) {
    auto& g = n.input_grad(0);
    for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

Var flatten(const Var& x) {
  if (x.value().rank() < 1) throw ShapeError("flatten of a scalar");
  return reshape(x, {x.dim(0), x.value().row_size()});
}

Var concat_cols(const Var& a, const Var& b) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  if (a.dim(0) != b.dim(0)) throw ShapeError("concat_cols: batch mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int64_t rows = a.dim(0), na = a.dim(1), nb = b.dim(1);
  Tensor y({rows, na + nb});
  for (int64_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().data() + r * na, na, y.data() + r * (na + nb));
    std::copy_n(b.value().data() + r * nb, nb, y.data() + r * (na + nb) + na);
  }
  return make_node(std::move(y), {a, b}, [rows, na, nb](Node& n) {
    for (int64_t r = 0; r < rows; ++r) {
      const double* gy = n.grad.data() + r * (na + nb);
      if (n.wants_grad(0)) {
        double* ga = n.input_grad(0).data() + r * na;
        for (int64_t j = 0; j < na; ++j) ga[j] += gy[j];
      }
      if (n.wants_grad(1)) {
        double* gb = n.input_grad(1).data() + r * nb;
        for (int64_t j = 0; j < nb; ++j) gb[j] += gy[na + j];
      }
    }
  });
}

Var gather_rows(const Var& x, std::span<const int64_t> rows) {
  Tensor y = x.value().gather_rows(rows);
  std::vector<int64_t> idx(rows.begin(), rows.end());
  const int64_t rs = x.value().row_size();
  return make_node(std::move(y), {x}, [idx = std::move(idx), rs](Node& n) {
    auto& g = n.input_grad(0);
    for (size_t i = 0; i < idx.size(); ++i) {
      const double* src = n.grad.data() + static_cast<int64_t>(i) * rs;
      double* dst = g.data() + idx[i] * rs;
      for (int64_t j = 0; j < rs; ++j) dst[j] += src[j];
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const int64_t batch = x.dim(0), in = x.dim(1), out = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ShapeError("linear: input width " + std::to_string(in) + " does not match weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && bias.value().numel() != static_cast<size_t>(out)) throw ShapeError("linear: bias width mismatch");

  Tensor y({batch, out});
  MapMat ym(y.data(), batch, out);
  ym.noalias() = CMapMat(x.value().data(), batch, in) * CMapMat(weight.value().data(), out, in).transpose();
  if (bias.defined()) ym.rowwise() += CMapVec(bias.value().data(), out).transpose();

  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_node(std::move(y), std::move(inputs), [batch, in, out](Node& n) {
    CMapMat gy(n.grad.data(), batch, out);
    if (n.wants_grad(0)) {
      MapMat(n.input_grad(0).data(), batch, in).noalias() += gy * CMapMat(n.input_value(1).data(), out, in);
    }
    if (n.wants_grad(1)) {
      MapMat(n.input_grad(1).data(), out, in).noalias() += gy.transpose() * CMapMat(n.input_value(0).data(), batch, in);
    }
    if (n.inputs.size() > 2 && n.wants_grad(2)) {
      MapVec(n.input_grad(2).data(), out) += gy.colwise().sum().transpose();
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  const int64_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin || weight.dim(3) != k || k % 2 == 0) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
  }
  if (bias.defined() && bias.value().numel() != static_cast<size_t>(cout)) throw ShapeError("conv2d: bias width mismatch");

  const int64_t hw = h * w, kk = cin * k * k;
  Tensor y({batch, cout, h, w});
  Storage col(static_cast<size_t>(kk * hw));
  CMapMat wm(weight.value().data(), cout, kk);
  for (int64_t b = 0; b < batch; ++b) {
    im2col(x.value().data() + b * cin * hw, cin, h, w, k, col.data());
    MapMat yb(y.data() + b * cout * hw, cout, hw);
    yb.noalias() = wm * CMapMat(col.data(), kk, hw);
    if (bias.defined()) yb.colwise() += CMapVec(bias.value().data(), cout);
  }

  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_node(std::move(y), std::move(inputs), [=](Node& n) {
    const bool gx = n.wants_grad(0), gw = n.wants_grad(1);
    const bool gb = n.inputs.size() > 2 && n.wants_grad(2);
    Storage col(static_cast<size_t>(kk * hw));
    Storage dcol(gx ? static_cast<size_t>(kk * hw) : 0);
    CMapMat wm(n.input_value(1).data(), cout, kk);
    for (int64_t b = 0; b < batch; ++b) {
      CMapMat gyb(n.grad.data() + b * cout * hw, cout, hw);
      if (gw) {
        im2col(n.input_value(0).data() + b * cin * hw, cin, h, w, k, col.data());
        MapMat(n.input_grad(1).data(), cout, kk).noalias() += gyb * CMapMat(col.data(), kk, hw).transpose();
      }
      if (gb) MapVec(n.input_grad(2).data(), cout) += gyb.rowwise().sum();
      if (gx) {
        MapMat(dcol.data(), kk, hw).noalias() = wm.transpose() * gyb;
        col2im_add(dcol.data(), cin, h, w, k, n.input_grad(0).data() + b * cin * hw);
      }
    }
  });
}

Var avg_pool2(const Var& x) {
  require_rank(x, 4, "avg_pool2");
  const int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < 2 || w < 2) throw ShapeError("avg_pool2: spatial size below 2 in " + shape_str(x.shape()));
  const int64_t oh = h / 2, ow = w / 2;
  Tensor y({x.dim(0), x.dim(1), oh, ow});
  const double* xv = x.value().data();
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = xv + p * h * w;
    double* dst = y.data() + p * oh * ow;
    for (int64_t i = 0; i < oh; ++i) {
      for (int64_t j = 0; j < ow; ++j) {
        const double* s = src + 2 * i * w + 2 * j;
        dst[i * ow + j] = 0.25 * (s[0] + s[1] + s[w] + s[w + 1]);
      }
    }
  }
  return make_node(std::move(y), {x}, [planes, h, w, oh, ow](Node& n) {
    double* gx = n.input_grad(0).data();
    for (int64_t p = 0; p < planes; ++p) {
      const double* gy = n.grad.data() + p * oh * ow;
      double* dst = gx + p * h * w;
      for (int64_t i = 0; i < oh; ++i) {
        for (int64_t j = 0; j < ow; ++j) {
          const double g = 0.25 * gy[i * ow + j];
          double* d = dst + 2 * i * w + 2 * j;
          d[0] += g;
          d[1] += g;
          d[w] += g;
          d[w + 1] += g;
        }
      }
    }
  });
}

Var upsample_nearest2(const Var& x) {
  require_rank(x, 4, "upsample_nearest2");
  const int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t oh = 2 * h, ow = 2 * w;
  Tensor y({x.dim(0), x.dim(1), oh, ow});
  const double* xv = x.value().data();
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = xv + p * h * w;
    double* dst = y.data() + p * oh * ow;
    for (int64_t i = 0; i < oh; ++i) {
      for (int64_t j = 0; j < ow; ++j) dst[i * ow + j] = src[(i / 2) * w + j / 2];
    }
  }
  return make_node(std::move(y), {x}, [planes, h, w, oh, ow](Node& n) {
    double* gx = n.input_grad(0).data();
    for (int64_t p = 0; p < planes; ++p) {
      const double* gy = n.grad.data() + p * oh * ow;
      double* dst = gx + p * h * w;
      for (int64_t i = 0; i < oh; ++i) {
        for (int64_t j = 0; j < ow; ++j) dst[(i / 2) * w + j / 2] += gy[i * ow + j];
      }
    }
  });
}

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_rank(x, 4, "instance_norm");
  const int64_t batch = x.dim(0), channels = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.value().numel() != static_cast<size_t>(channels) || beta.value().numel() != static_cast<size_t>(channels)) {
    throw ShapeError("instance_norm: affine width does not match channels of " + shape_str(x.shape()));
  }
  Tensor y(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> inv_std(static_cast<size_t>(batch * channels));
  const double* xv = x.value().data();
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t c = 0; c < channels; ++c) {
      const int64_t off = (b * channels + c) * hw;
      double mu = 0.0;
      for (int64_t i = 0; i < hw; ++i) mu += xv[off + i];
      mu /= static_cast<double>(hw);
      double var = 0.0;
      for (int64_t i = 0; i < hw; ++i) var += (xv[off + i] - mu) * (xv[off + i] - mu);
      var /= static_cast<double>(hw);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[static_cast<size_t>(b * channels + c)] = is;
      const double g = gamma.value()[static_cast<size_t>(c)], be = beta.value()[static_cast<size_t>(c)];
      for (int64_t i = 0; i < hw; ++i) {
        const double xh = (xv[off + i] - mu) * is;
        xhat[static_cast<size_t>(off + i)] = xh;
        y[static_cast<size_t>(off + i)] = g * xh + be;
      }
    }
  }
  return make_node(std::move(y), {x, gamma, beta},
                   [batch, channels, hw, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
                     const double* gy = n.grad.data();
                     const double* gam = n.input_value(1).data();
                     const bool gx = n.wants_grad(0);
                     double* gxp = gx ? n.input_grad(0).data() : nullptr;
                     double* ggp = n.wants_grad(1) ? n.input_grad(1).data() : nullptr;
                     double* gbp = n.wants_grad(2) ? n.input_grad(2).data() : nullptr;
                     const double m = static_cast<double>(hw);
                     for (int64_t b = 0; b < batch; ++b) {
                       for (int64_t c = 0; c < channels; ++c) {
                         const int64_t off = (b * channels + c) * hw;
                         double sum_dy = 0.0, sum_dy_xh = 0.0;
                         for (int64_t i = 0; i < hw; ++i) {
                           sum_dy += gy[off + i];
                           sum_dy_xh += gy[off + i] * xhat[static_cast<size_t>(off + i)];
                         }
                         if (ggp) ggp[c] += sum_dy_xh;
                         if (gbp) gbp[c] += sum_dy;
                         if (gx) {
                           const double k = gam[c] * inv_std[static_cast<size_t>(b * channels + c)] / m;
                           for (int64_t i = 0; i < hw; ++i) {
                             gxp[off + i] += k * (m * gy[off + i] - sum_dy - xhat[static_cast<size_t>(off + i)] * sum_dy_xh);
                           }
                         }
                       }
                     }
                   });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, bool training) {
  const int rank = x.value().rank();
  if (rank != 2 && rank != 4) throw ShapeError("batch_norm: expected rank 2 or 4, got " + shape_str(x.shape()));
  const int64_t batch = x.dim(0), channels = x.dim(1);
  const int64_t hw = rank == 4 ? x.dim(2) * x.dim(3) : 1;
  if (gamma.value().numel() != static_cast<size_t>(channels) || beta.value().numel() != static_cast<size_t>(channels) ||
      stats.running_mean.numel() != static_cast<size_t>(channels) ||
      stats.running_var.numel() != static_cast<size_t>(channels)) {
    throw ShapeError("batch_norm: parameter width does not match channels of " + shape_str(x.shape()));
  }
  const double count = static_cast<double>(batch * hw);
  std::vector<double> mu(static_cast<size_t>(channels)), inv_std(static_cast<size_t>(channels));
  const double* xv = x.value().data();
  if (training) {
    if (batch * hw < 2) throw ShapeError("batch_norm: training mode needs more than one value per channel");
    for (int64_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (int64_t b = 0; b < batch; ++b)
        for (int64_t i = 0; i < hw; ++i) s += xv[(b * channels + c) * hw + i];
      const double m = s / count;
      double v = 0.0;
      for (int64_t b = 0; b < batch; ++b)
        for (int64_t i = 0; i < hw; ++i) {
          const double d = xv[(b * channels + c) * hw + i] - m;
          v += d * d;
        }
      const double biased = v / count;
      mu[static_cast<size_t>(c)] = m;
      inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(biased + stats.eps);
      const auto cs = static_cast<size_t>(c);
      stats.running_mean[cs] = (1.0 - stats.momentum) * stats.running_mean[cs] + stats.momentum * m;
      stats.running_var[cs] = (1.0 - stats.momentum) * stats.running_var[cs] + stats.momentum * (v / (count - 1.0));
    }
  } else {
    for (int64_t c = 0; c < channels; ++c) {
      const auto cs = static_cast<size_t>(c);
      mu[cs] = stats.running_mean[cs];
      inv_std[cs] = 1.0 / std::sqrt(stats.running_var[cs] + stats.eps);
    }
  }
  Tensor y(x.shape());
  Tensor xhat(x.shape());
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t c = 0; c < channels; ++c) {
      const auto cs = static_cast<size_t>(c);
      const double g = gamma.value()[cs], be = beta.value()[cs];
      for (int64_t i = 0; i < hw; ++i) {
        const auto idx = static_cast<size_t>((b * channels + c) * hw + i);
        xhat[idx] = (xv[idx] - mu[cs]) * inv_std[cs];
        y[idx] = g * xhat[idx] + be;
      }
    }
  }
  return make_node(std::move(y), {x, gamma, beta},
                   [batch, channels, hw, count, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
                     const double* gy = n.grad.data();
                     const double* gam = n.input_value(1).data();
                     const bool gx = n.wants_grad(0);
                     double* gxp = gx ? n.input_grad(0).data() : nullptr;
                     double* ggp = n.wants_grad(1) ? n.input_grad(1).data() : nullptr;
                     double* gbp = n.wants_grad(2) ? n.input_grad(2).data() : nullptr;
                     for (int64_t c = 0; c < channels; ++c) {
                       const auto cs = static_cast<size_t>(c);
                       double sum_dy = 0.0, sum_dy_xh = 0.0;
                       for (int64_t b = 0; b < batch; ++b)
                         for (int64_t i = 0; i < hw; ++i) {
                           const auto idx = static_cast<size_t>((b * channels + c) * hw + i);
                           sum_dy += gy[idx];
                           sum_dy_xh += gy[idx] * xhat[idx];
                         }
                       if (ggp) ggp[c] += sum_dy_xh;
                       if (gbp) gbp[c] += sum_dy;
                       if (!gx) continue;
                       for (int64_t b = 0; b < batch; ++b)
                         for (int64_t i = 0; i < hw; ++i) {
                           const auto idx = static_cast<size_t>((b * channels + c) * hw + i);
                           if (training) {
                             gxp[idx] += gam[c] * inv_std[cs] / count * (count * gy[idx] - sum_dy - xhat[idx] * sum_dy_xh);
                           } else {
                             gxp[idx] += gam[c] * inv_std[cs] * gy[idx];
                           }
                         }
                     }
                   });
}

Var spatial_mean(const Var& x) {
  require_rank(x, 4, "spatial_mean");
  const int64_t batch = x.dim(0), channels = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y({batch, channels});
  for (int64_t p = 0; p < batch * channels; ++p) {
    double s = 0.0;
    for (int64_t i = 0; i < hw; ++i) s += x.value()[static_cast<size_t>(p * hw + i)];
    y[static_cast<size_t>(p)] = s / static_cast<double>(hw);
  }
  return make_node(std::move(y), {x}, [batch, channels, hw](Node& n) {
    auto& g = n.input_grad(0);
    for (int64_t p = 0; p < batch * channels; ++p) {
      const double d = n.grad[static_cast<size_t>(p)] / static_cast<double>(hw);
      for (int64_t i = 0; i < hw; ++i) g[static_cast<size_t>(p * hw + i)] += d;
    }
  });
}

Var group_mean_rows(const Var& x, std::span<const int> group, int num_groups) {
  require_rank(x, 2, "group_mean_rows");
  const int64_t rows = x.dim(0), width = x.dim(1);
  if (static_cast<int64_t>(group.size()) != rows) throw ShapeError("group_mean_rows: one group id per row required");
  std::vector<double> count(static_cast<size_t>(num_groups), 0.0);
  for (int g : group) {
    if (g < 0 || g >= num_groups) throw ShapeError("group_mean_rows: group id out of range");
    count[static_cast<size_t>(g)] += 1.0;
  }
  for (double c : count) {
    if (c == 0.0) throw ShapeError("group_mean_rows: empty group");
  }
  Tensor y({num_groups, width});
  for (int64_t r = 0; r < rows; ++r) {
    const auto g = static_cast<size_t>(group[static_cast<size_t>(r)]);
    for (int64_t j = 0; j < width; ++j) y[g * static_cast<size_t>(width) + static_cast<size_t>(j)] += x.value()[static_cast<size_t>(r * width + j)] / count[g];
  }
  std::vector<int> groups(group.begin(), group.end());
  return make_node(std::move(y), {x}, [groups = std::move(groups), count = std::move(count), width](Node& n) {
    auto& gx = n.input_grad(0);
    for (size_t r = 0; r < groups.size(); ++r) {
      const auto g = static_cast<size_t>(groups[r]);
      for (int64_t j = 0; j < width; ++j) gx[r * static_cast<size_t>(width) + static_cast<size_t>(j)] += n.grad[g * static_cast<size_t>(width) + static_cast<size_t>(j)] / count[g];
    }
  });
}

Var l2_normalize_rows(const Var& x, double eps) {
  require_rank(x, 2, "l2_normalize_rows");
  const int64_t rows = x.dim(0), width = x.dim(1);
  Tensor y(x.shape());
  std::vector<double> norms(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j < width; ++j) s += x.value()[static_cast<size_t>(r * width + j)] * x.value()[static_cast<size_t>(r * width + j)];
    const double nr = std::sqrt(s + eps);
    norms[static_cast<size_t>(r)] = nr;
    for (int64_t j = 0; j < width; ++j) y[static_cast<size_t>(r * width + j)] = x.value()[static_cast<size_t>(r * width + j)] / nr;
  }
  return make_node(std::move(y), {x}, [rows, width, norms = std::move(norms)](Node& n) {
    auto& gx = n.input_grad(0);
    for (int64_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (int64_t j = 0; j < width; ++j) dot += n.value[static_cast<size_t>(r * width + j)] * n.grad[static_cast<size_t>(r * width + j)];
      for (int64_t j = 0; j < width; ++j) {
        const auto i = static_cast<size_t>(r * width + j);
        gx[i] += (n.grad[i] - n.value[i] * dot) / norms[static_cast<size_t>(r)];
      }
    }
  });
}

}  // namespace gencond::ops
