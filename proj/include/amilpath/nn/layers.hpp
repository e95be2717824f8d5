#pragma once
// Spatial ops over NCHW tensors: convolution (banded im2col + dgemm),
// batch norm, max/avg/adaptive pooling, global spatial max.

#include <cmath>
#include <cstdint>
#include <vector>

#include "amilpath/nn/autograd.hpp"

namespace amilpath::nn {

namespace detail {

inline int conv_out(int in, int k, int stride, int pad) {
  int out = (in + 2 * pad - k) / stride + 1;
  require(out >= 1, "spatial dim collapses: in=", in, " k=", k, " stride=", stride, " pad=", pad);
  return out;
}

// Writes the im2col block for output rows [oh0, oh1) of sample n:
// rows = C*kh*kw, cols = (oh1-oh0)*out_w. Zero-padded out-of-bounds taps.
inline void im2col_band(const Tensor& x, int n, int kh, int kw, int stride, int pad_h, int pad_w,
                        int out_w, int oh0, int oh1, double* cols) {
  int c_in = x.dim(1), h_in = x.dim(2), w_in = x.dim(3);
  int band = (oh1 - oh0) * out_w;
  size_t col = 0;
  for (int c = 0; c < c_in; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        double* row = cols + col++ * band;
        size_t at = 0;
        for (int oh = oh0; oh < oh1; ++oh) {
          int ih = oh * stride - pad_h + ki;
          for (int ow = 0; ow < out_w; ++ow, ++at) {
            int iw = ow * stride - pad_w + kj;
            row[at] = (ih >= 0 && ih < h_in && iw >= 0 && iw < w_in)
                          ? x.data[off4(x, n, c, ih, iw)]
                          : 0.0;
          }
        }
      }
}

// Transpose of im2col_band: accumulates column gradients back into gx.
inline void col2im_band(Tensor& gx, int n, int kh, int kw, int stride, int pad_h, int pad_w,
                        int out_w, int oh0, int oh1, const double* cols) {
  int c_in = gx.dim(1), h_in = gx.dim(2), w_in = gx.dim(3);
  int band = (oh1 - oh0) * out_w;
  size_t col = 0;
  for (int c = 0; c < c_in; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        const double* row = cols + col++ * band;
        size_t at = 0;
        for (int oh = oh0; oh < oh1; ++oh) {
          int ih = oh * stride - pad_h + ki;
          for (int ow = 0; ow < out_w; ++ow, ++at) {
            int iw = ow * stride - pad_w + kj;
            if (ih >= 0 && ih < h_in && iw >= 0 && iw < w_in)
              gx.data[off4(gx, n, c, ih, iw)] += row[at];
          }
        }
      }
}

// Band height keeping the im2col buffer under ~64 MB.
inline int conv_band_rows(int col_rows, int out_w, int out_h) {
  int64_t budget = (int64_t{64} << 20) / 8;  // doubles
  int64_t per_row = static_cast<int64_t>(col_rows) * out_w;
  int rows = per_row > 0 ? static_cast<int>(budget / per_row) : out_h;
  return std::clamp(rows, 1, out_h);
}

}  // namespace detail

// x:(N,C,H,W) w:(K,C,kh,kw) b:(K) or undefined -> (N,K,H',W').
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad_h, int pad_w) {
  use_single_blas_thread();
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require(xv.ndim() == 4 && wv.ndim() == 4, "conv2d expects NCHW input and KCkhkw weight");
  require(xv.dim(1) == wv.dim(1), "conv2d channel mismatch: input ", xv.dim(1), " vs weight ",
          wv.dim(1));
  int n_batch = xv.dim(0), k_out = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  int out_h = detail::conv_out(xv.dim(2), kh, stride, pad_h);
  int out_w = detail::conv_out(xv.dim(3), kw, stride, pad_w);
  int col_rows = xv.dim(1) * kh * kw;
  int band_rows = detail::conv_band_rows(col_rows, out_w, out_h);

  // Band results go through a staging buffer: a (K, band) gemm block is not
  // contiguous in the NCHW output unless the band covers the whole height.
  Tensor out({n_batch, k_out, out_h, out_w});
  std::vector<double> cols(static_cast<size_t>(col_rows) * band_rows * out_w);
  std::vector<double> slab(static_cast<size_t>(k_out) * band_rows * out_w);
  for (int n = 0; n < n_batch; ++n)
    for (int oh0 = 0; oh0 < out_h; oh0 += band_rows) {
      int oh1 = std::min(out_h, oh0 + band_rows);
      int band = (oh1 - oh0) * out_w;
      detail::im2col_band(xv, n, kh, kw, stride, pad_h, pad_w, out_w, oh0, oh1, cols.data());
      // (K, col_rows) x (col_rows, band)
      gemm(false, false, k_out, band, col_rows, 1.0, wv.data.data(), cols.data(), 0.0,
           slab.data());
      for (int k = 0; k < k_out; ++k)
        std::copy_n(&slab[static_cast<size_t>(k) * band], band,
                    &out.data[off4(out, n, k, oh0, 0)]);
    }
  if (b.defined()) {
    const Tensor& bias = b.value();
    require(bias.ndim() == 1 && bias.dim(0) == k_out, "conv2d bias width mismatch");
    for (int n = 0; n < n_batch; ++n)
      for (int k = 0; k < k_out; ++k) {
        double add = bias.data[static_cast<size_t>(k)];
        double* dst = &out.data[off4(out, n, k, 0, 0)];
        for (int i = 0; i < out_h * out_w; ++i) dst[i] += add;
      }
  }

  std::vector<Var> ins = b.defined() ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return make_op(
      std::move(out), std::move(ins),
      [x, w, b, stride, pad_h, pad_w, n_batch, k_out, kh, kw, out_h, out_w, col_rows,
       band_rows](Node& self) {
        const Tensor& xv = x.value();
        const Tensor& wv = w.value();
        const Tensor& g = self.grad;
        bool need_x = x.node()->requires_grad;
        bool need_w = w.node()->requires_grad;
        Tensor gx = need_x ? Tensor(xv.shape) : Tensor();
        Tensor gw = need_w ? Tensor(wv.shape) : Tensor();
        std::vector<double> cols(static_cast<size_t>(col_rows) * band_rows * out_w);
        std::vector<double> gcols(cols.size());
        std::vector<double> gslab(static_cast<size_t>(k_out) * band_rows * out_w);
        for (int n = 0; n < n_batch; ++n)
          for (int oh0 = 0; oh0 < out_h; oh0 += band_rows) {
            int oh1 = std::min(out_h, oh0 + band_rows);
            int band = (oh1 - oh0) * out_w;
            for (int k = 0; k < k_out; ++k)
              std::copy_n(&g.data[off4(g, n, k, oh0, 0)], band,
                          &gslab[static_cast<size_t>(k) * band]);
            if (need_w) {
              detail::im2col_band(xv, n, kh, kw, stride, pad_h, pad_w, out_w, oh0, oh1,
                                  cols.data());
              // gw += gslab (K, band) x cols^T (band, col_rows)
              gemm(false, true, k_out, col_rows, band, 1.0, gslab.data(), cols.data(), 1.0,
                   gw.data.data());
            }
            if (need_x) {
              // gcols = w^T (col_rows, K) x gslab (K, band)
              gemm(true, false, col_rows, band, k_out, 1.0, wv.data.data(), gslab.data(), 0.0,
                   gcols.data());
              detail::col2im_band(gx, n, kh, kw, stride, pad_h, pad_w, out_w, oh0, oh1,
                                  gcols.data());
            }
          }
        if (need_x) x.node()->accumulate(gx);
        if (need_w) w.node()->accumulate(gw);
        if (b.defined() && b.node()->requires_grad) {
          Tensor gb({k_out});
          for (int n = 0; n < n_batch; ++n)
            for (int k = 0; k < k_out; ++k) {
              const double* src = &g.data[off4(g, n, k, 0, 0)];
              double sum = 0.0;
              for (int i = 0; i < out_h * out_w; ++i) sum += src[i];
              gb.data[static_cast<size_t>(k)] += sum;
            }
          b.node()->accumulate(gb);
        }
      });
}

inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride = 1, int pad = 0) {
  return conv2d(x, w, b, stride, pad, pad);
}

// NCHW concat along channels; backward splits the gradient back.
inline Var concat_channels(const std::vector<Var>& xs) {
  require(!xs.empty(), "concat_channels of nothing");
  int n = xs[0].value().dim(0), h = xs[0].value().dim(2), w = xs[0].value().dim(3);
  int c_total = 0;
  for (const Var& x : xs) {
    require(x.value().ndim() == 4, "concat_channels expects NCHW");
    require(x.value().dim(0) == n && x.value().dim(2) == h && x.value().dim(3) == w,
            "concat_channels shape mismatch");
    c_total += x.value().dim(1);
  }
  Tensor out({n, c_total, h, w});
  for (int i = 0; i < n; ++i) {
    int c_at = 0;
    for (const Var& x : xs) {
      int c_n = x.value().dim(1);
      std::copy_n(&x.value().data[off4(x.value(), i, 0, 0, 0)],
                  static_cast<size_t>(c_n) * h * w, &out.data[off4(out, i, c_at, 0, 0)]);
      c_at += c_n;
    }
  }
  return make_op(std::move(out), xs, [xs, n, h, w](Node& self) {
    int c_at = 0;
    for (const Var& x : xs) {
      int c_n = x.value().dim(1);
      if (x.node()->requires_grad) {
        Tensor gx(x.value().shape);
        for (int i = 0; i < n; ++i)
          std::copy_n(&self.grad.data[off4(self.grad, i, c_at, 0, 0)],
                      static_cast<size_t>(c_n) * h * w, &gx.data[off4(gx, i, 0, 0, 0)]);
        x.node()->accumulate(gx);
      }
      c_at += c_n;
    }
  });
}

// Batch norm over N,H,W per channel. Training mode normalizes with batch
// statistics and updates the running buffers in place (PyTorch convention:
// biased variance for normalization, unbiased for the running estimate).
inline Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                       Tensor& running_var, bool training, double momentum = 0.1,
                       double eps = 1e-5) {
  const Tensor& xv = x.value();
  require(xv.ndim() == 4, "batchnorm2d expects NCHW");
  int n_batch = xv.dim(0), c_n = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  require(gamma.value().ndim() == 1 && gamma.value().dim(0) == c_n, "gamma width mismatch");
  require(beta.value().ndim() == 1 && beta.value().dim(0) == c_n, "beta width mismatch");
  require(running_mean.dim(0) == c_n && running_var.dim(0) == c_n, "running stats width mismatch");
  int64_t count = static_cast<int64_t>(n_batch) * h * w;
  require(!training || count > 1, "batchnorm2d training needs > 1 value per channel");

  std::vector<double> mean(static_cast<size_t>(c_n)), invstd(static_cast<size_t>(c_n));
  if (training) {
    for (int c = 0; c < c_n; ++c) {
      double sum = 0.0;
      for (int n = 0; n < n_batch; ++n) {
        const double* src = &xv.data[off4(xv, n, c, 0, 0)];
        for (int i = 0; i < h * w; ++i) sum += src[i];
      }
      mean[static_cast<size_t>(c)] = sum / count;
      double var = 0.0;
      for (int n = 0; n < n_batch; ++n) {
        const double* src = &xv.data[off4(xv, n, c, 0, 0)];
        for (int i = 0; i < h * w; ++i) {
          double d = src[i] - mean[static_cast<size_t>(c)];
          var += d * d;
        }
      }
      var /= count;
      invstd[static_cast<size_t>(c)] = 1.0 / std::sqrt(var + eps);
      running_mean.data[static_cast<size_t>(c)] =
          (1.0 - momentum) * running_mean.data[static_cast<size_t>(c)] +
          momentum * mean[static_cast<size_t>(c)];
      double unbiased = var * count / (count - 1);
      running_var.data[static_cast<size_t>(c)] =
          (1.0 - momentum) * running_var.data[static_cast<size_t>(c)] + momentum * unbiased;
    }
  } else {
    for (int c = 0; c < c_n; ++c) {
      mean[static_cast<size_t>(c)] = running_mean.data[static_cast<size_t>(c)];
      invstd[static_cast<size_t>(c)] =
          1.0 / std::sqrt(running_var.data[static_cast<size_t>(c)] + eps);
    }
  }

  Tensor xhat(xv.shape);
  Tensor out(xv.shape);
  for (int n = 0; n < n_batch; ++n)
    for (int c = 0; c < c_n; ++c) {
      double m = mean[static_cast<size_t>(c)], is = invstd[static_cast<size_t>(c)];
      double gm = gamma.value().data[static_cast<size_t>(c)];
      double bt = beta.value().data[static_cast<size_t>(c)];
      const double* src = &xv.data[off4(xv, n, c, 0, 0)];
      double* xh = &xhat.data[off4(xhat, n, c, 0, 0)];
      double* dst = &out.data[off4(out, n, c, 0, 0)];
      for (int i = 0; i < h * w; ++i) {
        xh[i] = (src[i] - m) * is;
        dst[i] = gm * xh[i] + bt;
      }
    }

  return make_op(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, invstd, training, n_batch, c_n, h, w, count](Node& self) {
        const Tensor& g = self.grad;
        bool need_x = x.node()->requires_grad;
        Tensor gx = need_x ? Tensor(x.value().shape) : Tensor();
        Tensor ggamma({c_n}), gbeta({c_n});
        for (int c = 0; c < c_n; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (int n = 0; n < n_batch; ++n) {
            const double* gs = &g.data[off4(g, n, c, 0, 0)];
            const double* xh = &xhat.data[off4(xhat, n, c, 0, 0)];
            for (int i = 0; i < h * w; ++i) {
              sum_g += gs[i];
              sum_gx += gs[i] * xh[i];
            }
          }
          ggamma.data[static_cast<size_t>(c)] = sum_gx;
          gbeta.data[static_cast<size_t>(c)] = sum_g;
          if (!need_x) continue;
          double gm = gamma.value().data[static_cast<size_t>(c)];
          double is = invstd[static_cast<size_t>(c)];
          for (int n = 0; n < n_batch; ++n) {
            const double* gs = &g.data[off4(g, n, c, 0, 0)];
            const double* xh = &xhat.data[off4(xhat, n, c, 0, 0)];
            double* gd = &gx.data[off4(gx, n, c, 0, 0)];
            for (int i = 0; i < h * w; ++i) {
              if (training) {
                gd[i] = gm * is * (gs[i] - sum_g / count - xh[i] * sum_gx / count);
              } else {
                gd[i] = gm * is * gs[i];
              }
            }
          }
        }
        if (need_x) x.node()->accumulate(gx);
        if (gamma.node()->requires_grad) gamma.node()->accumulate(ggamma);
        if (beta.node()->requires_grad) beta.node()->accumulate(gbeta);
      });
}

inline Var maxpool2d(const Var& x, int k, int stride, int pad = 0) {
  const Tensor& xv = x.value();
  require(xv.ndim() == 4, "maxpool2d expects NCHW");
  int n_batch = xv.dim(0), c_n = xv.dim(1);
  int out_h = detail::conv_out(xv.dim(2), k, stride, pad);
  int out_w = detail::conv_out(xv.dim(3), k, stride, pad);
  Tensor out({n_batch, c_n, out_h, out_w});
  std::vector<int64_t> argmax(out.data.size());
  size_t at = 0;
  for (int n = 0; n < n_batch; ++n)
    for (int c = 0; c < c_n; ++c)
      for (int oh = 0; oh < out_h; ++oh)
        for (int ow = 0; ow < out_w; ++ow, ++at) {
          double best = -HUGE_VAL;
          int64_t best_at = -1;
          for (int ki = 0; ki < k; ++ki) {
            int ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= xv.dim(2)) continue;
            for (int kj = 0; kj < k; ++kj) {
              int iw = ow * stride - pad + kj;
              if (iw < 0 || iw >= xv.dim(3)) continue;
              size_t src = off4(xv, n, c, ih, iw);
              if (xv.data[src] > best) {
                best = xv.data[src];
                best_at = static_cast<int64_t>(src);
              }
            }
          }
          require(best_at >= 0, "maxpool window fully outside input");
          out.data[at] = best;
          argmax[at] = best_at;
        }
  return make_op(std::move(out), {x}, [x, argmax](Node& self) {
    if (!x.node()->requires_grad) return;
    Tensor gx(x.value().shape);
    for (size_t i = 0; i < argmax.size(); ++i)
      gx.data[static_cast<size_t>(argmax[i])] += self.grad.data[i];
    x.node()->accumulate(gx);
  });
}

inline Var avgpool2d(const Var& x, int k, int stride, int pad = 0,
                     bool count_include_pad = true) {
  const Tensor& xv = x.value();
  require(xv.ndim() == 4, "avgpool2d expects NCHW");
  int n_batch = xv.dim(0), c_n = xv.dim(1);
  int out_h = detail::conv_out(xv.dim(2), k, stride, pad);
  int out_w = detail::conv_out(xv.dim(3), k, stride, pad);
  Tensor out({n_batch, c_n, out_h, out_w});
  size_t at = 0;
  for (int n = 0; n < n_batch; ++n)
    for (int c = 0; c < c_n; ++c)
      for (int oh = 0; oh < out_h; ++oh)
        for (int ow = 0; ow < out_w; ++ow, ++at) {
          double sum = 0.0;
          int valid = 0;
          for (int ki = 0; ki < k; ++ki) {
            int ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= xv.dim(2)) continue;
            for (int kj = 0; kj < k; ++kj) {
              int iw = ow * stride - pad + kj;
              if (iw < 0 || iw >= xv.dim(3)) continue;
              sum += xv.data[off4(xv, n, c, ih, iw)];
              ++valid;
            }
          }
          out.data[at] = sum / (count_include_pad ? k * k : valid);
        }
  return make_op(std::move(out), {x},
                 [x, k, stride, pad, count_include_pad, n_batch, c_n, out_h, out_w](Node& self) {
                   if (!x.node()->requires_grad) return;
                   const Tensor& xv = x.value();
                   Tensor gx(xv.shape);
                   size_t at = 0;
                   for (int n = 0; n < n_batch; ++n)
                     for (int c = 0; c < c_n; ++c)
                       for (int oh = 0; oh < out_h; ++oh)
                         for (int ow = 0; ow < out_w; ++ow, ++at) {
                           int valid = 0;
                           if (!count_include_pad) {
                             for (int ki = 0; ki < k; ++ki) {
                               int ih = oh * stride - pad + ki;
                               if (ih < 0 || ih >= xv.dim(2)) continue;
                               for (int kj = 0; kj < k; ++kj) {
                                 int iw = ow * stride - pad + kj;
                                 if (iw >= 0 && iw < xv.dim(3)) ++valid;
                               }
                             }
                           }
                           double share =
                               self.grad.data[at] / (count_include_pad ? k * k : valid);
                           for (int ki = 0; ki < k; ++ki) {
                             int ih = oh * stride - pad + ki;
                             if (ih < 0 || ih >= xv.dim(2)) continue;
                             for (int kj = 0; kj < k; ++kj) {
                               int iw = ow * stride - pad + kj;
                               if (iw < 0 || iw >= xv.dim(3)) continue;
                               gx.data[off4(gx, n, c, ih, iw)] += share;
                             }
                           }
                         }
                   x.node()->accumulate(gx);
                 });
}

// Adaptive average pooling with window bounds start=floor(i*in/out),
// end=ceil((i+1)*in/out), matching the common framework convention.
inline Var adaptive_avgpool2d(const Var& x, int out_h, int out_w) {
  const Tensor& xv = x.value();
  require(xv.ndim() == 4, "adaptive_avgpool2d expects NCHW");
  require(out_h >= 1 && out_w >= 1, "adaptive_avgpool2d target must be positive");
  int n_batch = xv.dim(0), c_n = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  auto lo = [](int i, int in, int out) { return (i * in) / out; };
  auto hi = [](int i, int in, int out) { return ((i + 1) * in + out - 1) / out; };
  Tensor out({n_batch, c_n, out_h, out_w});
  size_t at = 0;
  for (int n = 0; n < n_batch; ++n)
    for (int c = 0; c < c_n; ++c)
      for (int oh = 0; oh < out_h; ++oh)
        for (int ow = 0; ow < out_w; ++ow, ++at) {
          int h0 = lo(oh, h, out_h), h1 = hi(oh, h, out_h);
          int w0 = lo(ow, w, out_w), w1 = hi(ow, w, out_w);
          double sum = 0.0;
          for (int ih = h0; ih < h1; ++ih)
            for (int iw = w0; iw < w1; ++iw) sum += xv.data[off4(xv, n, c, ih, iw)];
          out.data[at] = sum / ((h1 - h0) * (w1 - w0));
        }
  return make_op(std::move(out), {x},
                 [x, out_h, out_w, n_batch, c_n, h, w, lo, hi](Node& self) {
                   if (!x.node()->requires_grad) return;
                   Tensor gx(x.value().shape);
                   size_t at = 0;
                   for (int n = 0; n < n_batch; ++n)
                     for (int c = 0; c < c_n; ++c)
                       for (int oh = 0; oh < out_h; ++oh)
                         for (int ow = 0; ow < out_w; ++ow, ++at) {
                           int h0 = lo(oh, h, out_h), h1 = hi(oh, h, out_h);
                           int w0 = lo(ow, w, out_w), w1 = hi(ow, w, out_w);
                           double share = self.grad.data[at] / ((h1 - h0) * (w1 - w0));
                           for (int ih = h0; ih < h1; ++ih)
                             for (int iw = w0; iw < w1; ++iw)
                               gx.data[off4(gx, n, c, ih, iw)] += share;
                         }
                   x.node()->accumulate(gx);
                 });
}

// (N,C,H,W) -> (N,C): max over the spatial grid, the bag-instance reduction.
inline Var global_spatial_max(const Var& x) {
  const Tensor& xv = x.value();
  require(xv.ndim() == 4, "global_spatial_max expects NCHW");
  int n_batch = xv.dim(0), c_n = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  require(hw >= 1, "empty spatial grid");
  Tensor out({n_batch, c_n});
  std::vector<int64_t> argmax(out.data.size());
  size_t at = 0;
  for (int n = 0; n < n_batch; ++n)
    for (int c = 0; c < c_n; ++c, ++at) {
      const double* src = &xv.data[off4(xv, n, c, 0, 0)];
      int best = 0;
      for (int i = 1; i < hw; ++i)
        if (src[i] > src[best]) best = i;
      out.data[at] = src[best];
      argmax[at] = static_cast<int64_t>(off4(xv, n, c, 0, 0)) + best;
    }
  return make_op(std::move(out), {x}, [x, argmax](Node& self) {
    if (!x.node()->requires_grad) return;
    Tensor gx(x.value().shape);
    for (size_t i = 0; i < argmax.size(); ++i)
      gx.data[static_cast<size_t>(argmax[i])] += self.grad.data[i];
    x.node()->accumulate(gx);
  });
}

}  // namespace amilpath::nn
