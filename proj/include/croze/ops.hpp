#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "croze/common.hpp"
#include "croze/tensor.hpp"

namespace croze {

/// Every primitive the network evaluator understands. The first ten are the
/// edge operations of the cell search spaces; the rest are structural.
enum class OpKind {
  conv1x1,
  conv3x3,
  dilconv3x3,
  conv5x5,
  dilconv5x5,
  conv7x7,
  maxpool3x3,
  avgpool3x3,
  skip,
  zero,
  relu,
  global_avg_pool,
  linear,
};

inline bool is_conv(OpKind k) {
  switch (k) {
    case OpKind::conv1x1:
    case OpKind::conv3x3:
    case OpKind::dilconv3x3:
    case OpKind::conv5x5:
    case OpKind::dilconv5x5:
    case OpKind::conv7x7:
      return true;
    default:
      return false;
  }
}

inline int conv_kernel(OpKind k) {
  switch (k) {
    case OpKind::conv1x1: return 1;
    case OpKind::conv3x3:
    case OpKind::dilconv3x3: return 3;
    case OpKind::conv5x5:
    case OpKind::dilconv5x5: return 5;
    case OpKind::conv7x7: return 7;
    default: return 0;
  }
}

inline int conv_dilation(OpKind k) {
  return (k == OpKind::dilconv3x3 || k == OpKind::dilconv5x5) ? 2 : 1;
}

namespace detail {

inline void require_rank4(const Tensor& x, const char* who) {
  if (x.rank() != 4) throw ShapeError(std::string(who) + ": expected rank-4 input");
}

}  // namespace detail

/// k x k convolution, stride 1, zero same-padding, optional dilation.
/// x: (N, Cin, H, W), w: (Cout, Cin, k, k), b: (Cout) -> (N, Cout, H, W).
inline Tensor conv2d_same(const Tensor& x, const Tensor& w, const Tensor& b,
                          int dilation = 1) {
  detail::require_rank4(x, "conv2d");
  if (w.rank() != 4) throw ShapeError("conv2d: weight must be rank 4");
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin || w.dim(3) != k) throw ShapeError("conv2d: weight/input channel mismatch");
  if (b.rank() != 1 || b.dim(0) != cout) throw ShapeError("conv2d: bias shape mismatch");
  const int pad = dilation * (static_cast<int>(k) - 1) / 2;

  Tensor y({n, cout, h, wd});
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t oc = 0; oc < cout; ++oc) {
      for (std::size_t oy = 0; oy < h; ++oy) {
        for (std::size_t ox = 0; ox < wd; ++ox) {
          double acc = b[oc];
          for (std::size_t ic = 0; ic < cin; ++ic) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              const int iy = static_cast<int>(oy) + dilation * static_cast<int>(ky) - pad;
              if (iy < 0 || iy >= static_cast<int>(h)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const int ix = static_cast<int>(ox) + dilation * static_cast<int>(kx) - pad;
                if (ix < 0 || ix >= static_cast<int>(wd)) continue;
                acc += w.at4(oc, ic, ky, kx) * x.at4(in, ic, iy, ix);
              }
            }
          }
          y.at4(in, oc, oy, ox) = acc;
        }
      }
    }
  }
  return y;
}

/// Accumulates conv adjoints into dx, dw, db (caller allocates zeros).
inline void conv2d_same_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                                 Tensor& dx, Tensor& dw, Tensor& db, int dilation = 1) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  const int pad = dilation * (static_cast<int>(k) - 1) / 2;

  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t oc = 0; oc < cout; ++oc) {
      for (std::size_t oy = 0; oy < h; ++oy) {
        for (std::size_t ox = 0; ox < wd; ++ox) {
          const double g = dy.at4(in, oc, oy, ox);
          if (g == 0.0) continue;
          db[oc] += g;
          for (std::size_t ic = 0; ic < cin; ++ic) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              const int iy = static_cast<int>(oy) + dilation * static_cast<int>(ky) - pad;
              if (iy < 0 || iy >= static_cast<int>(h)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const int ix = static_cast<int>(ox) + dilation * static_cast<int>(kx) - pad;
                if (ix < 0 || ix >= static_cast<int>(wd)) continue;
                dw.at4(oc, ic, ky, kx) += g * x.at4(in, ic, iy, ix);
                dx.at4(in, ic, iy, ix) += g * w.at4(oc, ic, ky, kx);
              }
            }
          }
        }
      }
    }
  }
}

/// 3x3 average pool, stride 1, same padding; out-of-bounds taps are excluded
/// from the average so a constant input stays constant.
inline Tensor avgpool3x3_same(const Tensor& x) {
  detail::require_rank4(x, "avgpool3x3");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, c, h, w});
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t oy = 0; oy < h; ++oy)
        for (std::size_t ox = 0; ox < w; ++ox) {
          double acc = 0.0;
          int cnt = 0;
          for (int dy = -1; dy <= 1; ++dy) {
            const int iy = static_cast<int>(oy) + dy;
            if (iy < 0 || iy >= static_cast<int>(h)) continue;
            for (int dxo = -1; dxo <= 1; ++dxo) {
              const int ix = static_cast<int>(ox) + dxo;
              if (ix < 0 || ix >= static_cast<int>(w)) continue;
              acc += x.at4(in, ic, iy, ix);
              ++cnt;
            }
          }
          y.at4(in, ic, oy, ox) = acc / cnt;
        }
  return y;
}

inline void avgpool3x3_same_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t oy = 0; oy < h; ++oy)
        for (std::size_t ox = 0; ox < w; ++ox) {
          int cnt = 0;
          for (int dy2 = -1; dy2 <= 1; ++dy2) {
            const int iy = static_cast<int>(oy) + dy2;
            if (iy < 0 || iy >= static_cast<int>(h)) continue;
            for (int dx2 = -1; dx2 <= 1; ++dx2) {
              const int ix = static_cast<int>(ox) + dx2;
              if (ix >= 0 && ix < static_cast<int>(w)) ++cnt;
            }
          }
          const double g = dy.at4(in, ic, oy, ox) / cnt;
          if (g == 0.0) continue;
          for (int dy2 = -1; dy2 <= 1; ++dy2) {
            const int iy = static_cast<int>(oy) + dy2;
            if (iy < 0 || iy >= static_cast<int>(h)) continue;
            for (int dx2 = -1; dx2 <= 1; ++dx2) {
              const int ix = static_cast<int>(ox) + dx2;
              if (ix < 0 || ix >= static_cast<int>(w)) continue;
              dx.at4(in, ic, iy, ix) += g;
            }
          }
        }
}

/// 3x3 max pool, stride 1, same padding; out-of-bounds taps are ignored.
inline Tensor maxpool3x3_same(const Tensor& x) {
  detail::require_rank4(x, "maxpool3x3");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, c, h, w});
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t oy = 0; oy < h; ++oy)
        for (std::size_t ox = 0; ox < w; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          for (int dy = -1; dy <= 1; ++dy) {
            const int iy = static_cast<int>(oy) + dy;
            if (iy < 0 || iy >= static_cast<int>(h)) continue;
            for (int dxo = -1; dxo <= 1; ++dxo) {
              const int ix = static_cast<int>(ox) + dxo;
              if (ix < 0 || ix >= static_cast<int>(w)) continue;
              best = std::max(best, x.at4(in, ic, iy, ix));
            }
          }
          y.at4(in, ic, oy, ox) = best;
        }
  return y;
}

/// Routes each output gradient to the first-scanned argmax tap.
inline void maxpool3x3_same_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t oy = 0; oy < h; ++oy)
        for (std::size_t ox = 0; ox < w; ++ox) {
          const double g = dy.at4(in, ic, oy, ox);
          if (g == 0.0) continue;
          double best = -std::numeric_limits<double>::infinity();
          int by = -1, bx = -1;
          for (int dy2 = -1; dy2 <= 1; ++dy2) {
            const int iy = static_cast<int>(oy) + dy2;
            if (iy < 0 || iy >= static_cast<int>(h)) continue;
            for (int dx2 = -1; dx2 <= 1; ++dx2) {
              const int ix = static_cast<int>(ox) + dx2;
              if (ix < 0 || ix >= static_cast<int>(w)) continue;
              const double v = x.at4(in, ic, iy, ix);
              if (v > best) {
                best = v;
                by = iy;
                bx = ix;
              }
            }
          }
          dx.at4(in, ic, by, bx) += g;
        }
}

/// 2x2 average pool with stride 2 (spatial halving); dims must be even.
inline Tensor avgpool2x2_stride2(const Tensor& x) {
  detail::require_rank4(x, "avgpool2x2");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("avgpool2x2: spatial dims must be even");
  Tensor y({n, c, h / 2, w / 2});
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t oy = 0; oy < h / 2; ++oy)
        for (std::size_t ox = 0; ox < w / 2; ++ox) {
          const double acc = x.at4(in, ic, 2 * oy, 2 * ox) + x.at4(in, ic, 2 * oy, 2 * ox + 1) +
                             x.at4(in, ic, 2 * oy + 1, 2 * ox) + x.at4(in, ic, 2 * oy + 1, 2 * ox + 1);
          y.at4(in, ic, oy, ox) = acc * 0.25;
        }
  return y;
}

inline void avgpool2x2_stride2_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t oy = 0; oy < h / 2; ++oy)
        for (std::size_t ox = 0; ox < w / 2; ++ox) {
          const double g = dy.at4(in, ic, oy, ox) * 0.25;
          dx.at4(in, ic, 2 * oy, 2 * ox) += g;
          dx.at4(in, ic, 2 * oy, 2 * ox + 1) += g;
          dx.at4(in, ic, 2 * oy + 1, 2 * ox) += g;
          dx.at4(in, ic, 2 * oy + 1, 2 * ox + 1) += g;
        }
}

inline Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

/// Subgradient 0 at the kink.
inline void relu_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (x[i] > 0.0) dx[i] += dy[i];
  }
}

/// (N, C, H, W) -> (N, C), mean over the spatial dims.
inline Tensor global_avg_pool(const Tensor& x) {
  detail::require_rank4(x, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y({n, c});
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ic = 0; ic < c; ++ic) {
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) acc += x.data()[(in * c + ic) * hw + i];
      y[in * c + ic] = acc / static_cast<double>(hw);
    }
  return y;
}

inline void global_avg_pool_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ic = 0; ic < c; ++ic) {
      const double g = dy[in * c + ic] / static_cast<double>(hw);
      for (std::size_t i = 0; i < hw; ++i) dx.data()[(in * c + ic) * hw + i] += g;
    }
}

/// Affine map on flattened per-sample features.
/// x: (N, ...) flattened to (N, F), w: (K, F), b: (K) -> (N, K).
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t n = x.dim(0), f = x.numel() / x.dim(0);
  const std::size_t k = w.dim(0);
  if (w.rank() != 2 || w.dim(1) != f) throw ShapeError("linear: weight shape mismatch");
  if (b.rank() != 1 || b.dim(0) != k) throw ShapeError("linear: bias shape mismatch");
  Tensor y({n, k});
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ok = 0; ok < k; ++ok) {
      double acc = b[ok];
      for (std::size_t i = 0; i < f; ++i) acc += w[ok * f + i] * x[in * f + i];
      y[in * k + ok] = acc;
    }
  return y;
}

inline void linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                            Tensor& dx, Tensor& dw, Tensor& db) {
  const std::size_t n = x.dim(0), f = x.numel() / x.dim(0), k = w.dim(0);
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ok = 0; ok < k; ++ok) {
      const double g = dy[in * k + ok];
      if (g == 0.0) continue;
      db[ok] += g;
      for (std::size_t i = 0; i < f; ++i) {
        dw[ok * f + i] += g * x[in * f + i];
        dx[in * f + i] += g * w[ok * f + i];
      }
    }
}

/// Mean softmax cross-entropy with max-subtraction.
inline double cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be (N, K)");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("cross_entropy: label count mismatch");
  double total = 0.0;
  for (std::size_t in = 0; in < n; ++in) {
    const int label = labels[in];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw ShapeError("cross_entropy: label out of range");
    }
    double mx = logits[in * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits[in * k + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(logits[in * k + j] - mx);
    total += std::log(sum) - (logits[in * k + label] - mx);
  }
  return total / static_cast<double>(n);
}

/// Gradient of the mean cross-entropy w.r.t. the logits: (softmax - onehot)/N.
inline Tensor cross_entropy_grad(const Tensor& logits, const std::vector<int>& labels,
                                 double* loss_out = nullptr) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("cross_entropy: label count mismatch");
  Tensor g({n, k});
  double total = 0.0;
  for (std::size_t in = 0; in < n; ++in) {
    double mx = logits[in * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits[in * k + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(logits[in * k + j] - mx);
    const int label = labels[in];
    total += std::log(sum) - (logits[in * k + label] - mx);
    for (std::size_t j = 0; j < k; ++j) {
      g[in * k + j] = std::exp(logits[in * k + j] - mx) / sum / static_cast<double>(n);
    }
    g[in * k + label] -= 1.0 / static_cast<double>(n);
  }
  if (loss_out) *loss_out = total / static_cast<double>(n);
  return g;
}

/// One-shot primitive application, mostly for tests and small probes. Conv
/// kinds and linear take weight/bias; the rest take none.
inline Tensor apply_primitive(OpKind kind, const Tensor& x,
                              const Tensor* w = nullptr, const Tensor* b = nullptr) {
  if (is_conv(kind) || kind == OpKind::linear) {
    if (!w || !b) throw ShapeError("apply_primitive: parameterized kind needs weight and bias");
  }
  switch (kind) {
    case OpKind::conv1x1:
    case OpKind::conv3x3:
    case OpKind::dilconv3x3:
    case OpKind::conv5x5:
    case OpKind::dilconv5x5:
    case OpKind::conv7x7:
      return conv2d_same(x, *w, *b, conv_dilation(kind));
    case OpKind::maxpool3x3:
      return maxpool3x3_same(x);
    case OpKind::avgpool3x3:
      return avgpool3x3_same(x);
    case OpKind::skip:
      return x;
    case OpKind::zero:
      return Tensor::zeros(x.shape());
    case OpKind::relu:
      return relu(x);
    case OpKind::global_avg_pool:
      return global_avg_pool(x);
    case OpKind::linear:
      return linear(x, *w, *b);
  }
  throw ConfigError("apply_primitive: unknown kind");
}

}  // namespace croze
