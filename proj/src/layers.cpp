#include "tseg/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

namespace tseg {
namespace {

template <class T>
using MatRM =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<MatRM<T>>;
template <class T>
using MapConst = Eigen::Map<const MatRM<T>>;

// Unrolls one image (C, H, W) into a (C*kh*kw) x (out_h*out_w) column matrix.
template <class T>
void im2col(const T* img, int c_in, int h, int w, int kh, int kw, int stride,
            int pad_top, int pad_left, int out_h, int out_w, T* col) {
  const std::int64_t n_pos = static_cast<std::int64_t>(out_h) * out_w;
  for (int c = 0; c < c_in; ++c) {
    const T* plane = img + static_cast<std::int64_t>(c) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* row = col + ((static_cast<std::int64_t>(c) * kh + ky) * kw + kx) *
                           n_pos;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - pad_top;
          T* dst = row + static_cast<std::int64_t>(oy) * out_w;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + out_w, T{});
            continue;
          }
          const T* src = plane + static_cast<std::int64_t>(iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - pad_left;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T{};
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col: accumulates a column matrix back into the
// (C, H, W) image.
template <class T>
void col2im_add(const T* col, int c_in, int h, int w, int kh, int kw,
                int stride, int pad_top, int pad_left, int out_h, int out_w,
                T* img) {
  const std::int64_t n_pos = static_cast<std::int64_t>(out_h) * out_w;
  for (int c = 0; c < c_in; ++c) {
    T* plane = img + static_cast<std::int64_t>(c) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* row = col +
                       ((static_cast<std::int64_t>(c) * kh + ky) * kw + kx) *
                           n_pos;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - pad_top;
          if (iy < 0 || iy >= h) continue;
          T* dst = plane + static_cast<std::int64_t>(iy) * w;
          const T* src = row + static_cast<std::int64_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - pad_left;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <class T>
void validate_conv_args(const Tensor<T>& input, const ConvParams<T>& params,
                        const char* op) {
  check_arg(input.rank() == 4,
            cat(op, ": input must be NCHW, got rank ", input.rank()));
  check_arg(params.kernel.rank() == 4,
            cat(op, ": kernel must be (out_c, in_c, kH, kW), got rank ",
                params.kernel.rank()));
  check_arg(params.stride >= 1,
            cat(op, ": stride must be positive, got ", params.stride));
  check_arg(params.kernel.dim(2) >= 1 && params.kernel.dim(3) >= 1,
            cat(op, ": kernel dims must be >= 1, got ",
                shape_str(params.kernel.shape())));
  check_arg(
      params.bias.rank() == 1 && params.bias.dim(0) == params.kernel.dim(0),
      cat(op, ": bias shape ", shape_str(params.bias.shape()),
          " must be (out_channels=", params.kernel.dim(0), ")"));
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

template <class T>
std::pair<Tensor<T>, Conv2dCtx<T>> conv2d_forward(const Tensor<T>& input,
                                                  const ConvParams<T>& params) {
  validate_conv_args(input, params, "conv2d");
  const int n = input.dim(0), c_in = input.dim(1), h = input.dim(2),
            w = input.dim(3);
  const int c_out = params.kernel.dim(0), kh = params.kernel.dim(2),
            kw = params.kernel.dim(3);
  const int stride = params.stride;
  check_arg(params.kernel.dim(1) == c_in,
            cat("conv2d: input channels (", c_in,
                ") do not match kernel in_channels (", params.kernel.dim(1),
                ")"));

  int pad_top = 0, pad_left = 0, out_h = 0, out_w = 0;
  if (params.padding == Padding::same) {
    out_h = (h + stride - 1) / stride;
    out_w = (w + stride - 1) / stride;
    const int pad_h = std::max(0, (out_h - 1) * stride + kh - h);
    const int pad_w = std::max(0, (out_w - 1) * stride + kw - w);
    pad_top = pad_h / 2;
    pad_left = pad_w / 2;
  } else {
    check_arg(h >= kh && w >= kw,
              cat("conv2d: spatial dims (", h, "x", w,
                  ") smaller than kernel (", kh, "x", kw,
                  ") with valid padding"));
    out_h = (h - kh) / stride + 1;
    out_w = (w - kw) / stride + 1;
  }

  Tensor<T> out({n, c_out, out_h, out_w});
  const std::int64_t k_rows = static_cast<std::int64_t>(c_in) * kh * kw;
  const std::int64_t n_pos = static_cast<std::int64_t>(out_h) * out_w;
  MapConst<T> kernel_mat(params.kernel.data(), c_out, k_rows);

#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    std::vector<T> col(static_cast<std::size_t>(k_rows * n_pos));
    im2col(input.data() + static_cast<std::int64_t>(i) * c_in * h * w, c_in, h,
           w, kh, kw, stride, pad_top, pad_left, out_h, out_w, col.data());
    MapConst<T> col_mat(col.data(), k_rows, n_pos);
    MapMat<T> out_mat(out.data() + static_cast<std::int64_t>(i) * c_out * n_pos,
                      c_out, n_pos);
    out_mat.noalias() = kernel_mat * col_mat;
    for (int c = 0; c < c_out; ++c)
      out_mat.row(c).array() += params.bias[c];
  }

  Conv2dCtx<T> ctx{input, stride, pad_top, pad_left, out_h, out_w};
  return {std::move(out), std::move(ctx)};
}

template <class T>
ConvGrads<T> conv2d_backward(const Conv2dCtx<T>& ctx,
                             const ConvParams<T>& params,
                             const Tensor<T>& grad_out) {
  const Tensor<T>& input = ctx.input;
  const int n = input.dim(0), c_in = input.dim(1), h = input.dim(2),
            w = input.dim(3);
  const int c_out = params.kernel.dim(0), kh = params.kernel.dim(2),
            kw = params.kernel.dim(3);
  check_arg(grad_out.rank() == 4 && grad_out.dim(0) == n &&
                grad_out.dim(1) == c_out && grad_out.dim(2) == ctx.out_h &&
                grad_out.dim(3) == ctx.out_w,
            cat("conv2d backward: grad shape ", shape_str(grad_out.shape()),
                " does not match forward output (", n, ", ", c_out, ", ",
                ctx.out_h, ", ", ctx.out_w, ")"));

  const std::int64_t k_rows = static_cast<std::int64_t>(c_in) * kh * kw;
  const std::int64_t n_pos = static_cast<std::int64_t>(ctx.out_h) * ctx.out_w;

  ConvGrads<T> grads;
  grads.input = Tensor<T>(input.shape());
  grads.kernel = Tensor<T>(params.kernel.shape());
  grads.bias = Tensor<T>(params.bias.shape());

  // Per-image kernel-gradient partials, reduced in batch order afterwards so
  // the sum is independent of the thread schedule.
  std::vector<std::vector<T>> kernel_partials(
      static_cast<std::size_t>(n),
      std::vector<T>(static_cast<std::size_t>(c_out * k_rows)));

#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    std::vector<T> col(static_cast<std::size_t>(k_rows * n_pos));
    const T* x_i = input.data() + static_cast<std::int64_t>(i) * c_in * h * w;
    im2col(x_i, c_in, h, w, kh, kw, ctx.stride, ctx.pad_top, ctx.pad_left,
           ctx.out_h, ctx.out_w, col.data());
    MapConst<T> col_mat(col.data(), k_rows, n_pos);
    MapConst<T> gout_mat(
        grad_out.data() + static_cast<std::int64_t>(i) * c_out * n_pos, c_out,
        n_pos);

    MapMat<T> gk_mat(kernel_partials[static_cast<std::size_t>(i)].data(),
                     c_out, k_rows);
    gk_mat.noalias() = gout_mat * col_mat.transpose();

    std::vector<T> gcol(static_cast<std::size_t>(k_rows * n_pos));
    MapMat<T> gcol_mat(gcol.data(), k_rows, n_pos);
    MapConst<T> kernel_mat(params.kernel.data(), c_out, k_rows);
    gcol_mat.noalias() = kernel_mat.transpose() * gout_mat;
    col2im_add(gcol.data(), c_in, h, w, kh, kw, ctx.stride, ctx.pad_top,
               ctx.pad_left, ctx.out_h, ctx.out_w,
               grads.input.data() + static_cast<std::int64_t>(i) * c_in * h * w);
  }

  for (int i = 0; i < n; ++i) {
    const std::vector<T>& part = kernel_partials[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < part.size(); ++j) grads.kernel[j] += part[j];
  }
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < c_out; ++c) {
      T acc{};
      const T* g = grad_out.data() +
                   (static_cast<std::int64_t>(i) * c_out + c) * n_pos;
      for (std::int64_t p = 0; p < n_pos; ++p) acc += g[p];
      grads.bias[c] += acc;
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// conv_transpose2d

template <class T>
std::pair<Tensor<T>, ConvTranspose2dCtx<T>> conv_transpose2d_forward(
    const Tensor<T>& input, const ConvParams<T>& params) {
  validate_conv_args(input, params, "conv_transpose2d");
  const int n = input.dim(0), c_in = input.dim(1), h = input.dim(2),
            w = input.dim(3);
  const int c_out = params.kernel.dim(0), kh = params.kernel.dim(2),
            kw = params.kernel.dim(3);
  const int stride = params.stride;
  check_arg(params.kernel.dim(1) == c_in,
            cat("conv_transpose2d: input channels (", c_in,
                ") do not match kernel in_channels (", params.kernel.dim(1),
                ")"));

  const int out_h = (h - 1) * stride + kh;
  const int out_w = (w - 1) * stride + kw;

  // Rearranged kernel: (in_c) x (out_c*kh*kw), so the output columns come
  // from a single matrix product per image.
  const std::int64_t k_rows = static_cast<std::int64_t>(c_out) * kh * kw;
  std::vector<T> kernel_r(static_cast<std::size_t>(c_in * k_rows));
  for (int oc = 0; oc < c_out; ++oc)
    for (int ic = 0; ic < c_in; ++ic)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx)
          kernel_r[static_cast<std::size_t>(ic) * k_rows +
                   (static_cast<std::size_t>(oc) * kh + ky) * kw + kx] =
              params.kernel.at(oc, ic, ky, kx);

  const std::int64_t n_pos = static_cast<std::int64_t>(h) * w;
  Tensor<T> out({n, c_out, out_h, out_w});
  MapConst<T> kr_mat(kernel_r.data(), c_in, k_rows);

#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    MapConst<T> x_mat(input.data() + static_cast<std::int64_t>(i) * c_in * n_pos,
                      c_in, n_pos);
    std::vector<T> cols(static_cast<std::size_t>(k_rows * n_pos));
    MapMat<T> col_mat(cols.data(), k_rows, n_pos);
    col_mat.noalias() = kr_mat.transpose() * x_mat;
    T* out_i = out.data() + static_cast<std::int64_t>(i) * c_out * out_h * out_w;
    col2im_add(cols.data(), c_out, out_h, out_w, kh, kw, stride, 0, 0, h, w,
               out_i);
    for (int c = 0; c < c_out; ++c) {
      T* plane = out_i + static_cast<std::int64_t>(c) * out_h * out_w;
      for (std::int64_t p = 0; p < static_cast<std::int64_t>(out_h) * out_w;
           ++p)
        plane[p] += params.bias[c];
    }
  }

  return {std::move(out), ConvTranspose2dCtx<T>{input, stride}};
}

template <class T>
ConvGrads<T> conv_transpose2d_backward(const ConvTranspose2dCtx<T>& ctx,
                                       const ConvParams<T>& params,
                                       const Tensor<T>& grad_out) {
  const Tensor<T>& input = ctx.input;
  const int n = input.dim(0), c_in = input.dim(1), h = input.dim(2),
            w = input.dim(3);
  const int c_out = params.kernel.dim(0), kh = params.kernel.dim(2),
            kw = params.kernel.dim(3);
  const int stride = ctx.stride;
  const int out_h = (h - 1) * stride + kh;
  const int out_w = (w - 1) * stride + kw;
  check_arg(grad_out.rank() == 4 && grad_out.dim(0) == n &&
                grad_out.dim(1) == c_out && grad_out.dim(2) == out_h &&
                grad_out.dim(3) == out_w,
            cat("conv_transpose2d backward: grad shape ",
                shape_str(grad_out.shape()), " does not match forward output (",
                n, ", ", c_out, ", ", out_h, ", ", out_w, ")"));

  const std::int64_t k_rows = static_cast<std::int64_t>(c_out) * kh * kw;
  const std::int64_t n_pos = static_cast<std::int64_t>(h) * w;

  std::vector<T> kernel_r(static_cast<std::size_t>(c_in * k_rows));
  for (int oc = 0; oc < c_out; ++oc)
    for (int ic = 0; ic < c_in; ++ic)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx)
          kernel_r[static_cast<std::size_t>(ic) * k_rows +
                   (static_cast<std::size_t>(oc) * kh + ky) * kw + kx] =
              params.kernel.at(oc, ic, ky, kx);
  MapConst<T> kr_mat(kernel_r.data(), c_in, k_rows);

  ConvGrads<T> grads;
  grads.input = Tensor<T>(input.shape());
  grads.kernel = Tensor<T>(params.kernel.shape());
  grads.bias = Tensor<T>(params.bias.shape());

  std::vector<std::vector<T>> kernel_partials(
      static_cast<std::size_t>(n),
      std::vector<T>(static_cast<std::size_t>(c_in * k_rows)));

#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    // Columns of the output gradient under the forward's scatter geometry.
    std::vector<T> gcols(static_cast<std::size_t>(k_rows * n_pos));
    im2col(grad_out.data() +
               static_cast<std::int64_t>(i) * c_out * out_h * out_w,
           c_out, out_h, out_w, kh, kw, stride, 0, 0, h, w, gcols.data());
    MapConst<T> gcol_mat(gcols.data(), k_rows, n_pos);

    MapMat<T> gx_mat(grads.input.data() +
                         static_cast<std::int64_t>(i) * c_in * n_pos,
                     c_in, n_pos);
    gx_mat.noalias() = kr_mat * gcol_mat;

    MapConst<T> x_mat(input.data() + static_cast<std::int64_t>(i) * c_in * n_pos,
                      c_in, n_pos);
    MapMat<T> gkr_mat(kernel_partials[static_cast<std::size_t>(i)].data(),
                      c_in, k_rows);
    gkr_mat.noalias() = x_mat * gcol_mat.transpose();
  }

  for (int i = 0; i < n; ++i) {
    const std::vector<T>& part = kernel_partials[static_cast<std::size_t>(i)];
    for (int oc = 0; oc < c_out; ++oc)
      for (int ic = 0; ic < c_in; ++ic)
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx)
            grads.kernel.at(oc, ic, ky, kx) +=
                part[static_cast<std::size_t>(ic) * k_rows +
                     (static_cast<std::size_t>(oc) * kh + ky) * kw + kx];
  }
  const std::int64_t out_pos = static_cast<std::int64_t>(out_h) * out_w;
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < c_out; ++c) {
      T acc{};
      const T* g = grad_out.data() +
                   (static_cast<std::int64_t>(i) * c_out + c) * out_pos;
      for (std::int64_t p = 0; p < out_pos; ++p) acc += g[p];
      grads.bias[c] += acc;
    }
  return grads;
}

// ---------------------------------------------------------------------------
// maxpool2d

template <class T>
std::pair<Tensor<T>, MaxPool2dCtx> maxpool2d_forward(const Tensor<T>& input,
                                                     int window) {
  check_arg(input.rank() == 4,
            cat("maxpool2d: input must be NCHW, got rank ", input.rank()));
  check_arg(window >= 1, cat("maxpool2d: window must be >= 1, got ", window));
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2),
            w = input.dim(3);
  check_arg(h % window == 0 && w % window == 0,
            cat("maxpool2d: spatial dims (", h, "x", w,
                ") must be multiples of the window ", window));
  const int out_h = h / window, out_w = w / window;

  Tensor<T> out({n, c, out_h, out_w});
  MaxPool2dCtx ctx;
  ctx.in_shape = input.shape();
  ctx.argmax.resize(static_cast<std::size_t>(out.numel()));

  const std::int64_t planes = static_cast<std::int64_t>(n) * c;
#pragma omp parallel for schedule(static)
  for (std::int64_t pl = 0; pl < planes; ++pl) {
    const T* in_plane = input.data() + pl * h * w;
    T* out_plane = out.data() + pl * out_h * out_w;
    std::int32_t* arg_plane = ctx.argmax.data() + pl * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        T best{};
        std::int32_t best_idx = -1;
        for (int ky = 0; ky < window; ++ky) {
          for (int kx = 0; kx < window; ++kx) {
            const int iy = oy * window + ky, ix = ox * window + kx;
            const T v = in_plane[static_cast<std::int64_t>(iy) * w + ix];
            // strict > keeps the first maximum in row-major window order
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = static_cast<std::int32_t>(iy * w + ix);
            }
          }
        }
        out_plane[static_cast<std::int64_t>(oy) * out_w + ox] = best;
        arg_plane[static_cast<std::int64_t>(oy) * out_w + ox] = best_idx;
      }
    }
  }
  return {std::move(out), std::move(ctx)};
}

template <class T>
Tensor<T> maxpool2d_backward(const MaxPool2dCtx& ctx,
                             const Tensor<T>& grad_out) {
  const int n = ctx.in_shape[0], c = ctx.in_shape[1], h = ctx.in_shape[2],
            w = ctx.in_shape[3];
  check_arg(grad_out.rank() == 4 &&
                grad_out.numel() ==
                    static_cast<std::int64_t>(ctx.argmax.size()),
            "maxpool2d backward: grad shape does not match forward output");
  Tensor<T> grad_in({n, c, h, w});
  const std::int64_t out_plane = grad_out.numel() / (static_cast<std::int64_t>(n) * c);
  const std::int64_t planes = static_cast<std::int64_t>(n) * c;
#pragma omp parallel for schedule(static)
  for (std::int64_t pl = 0; pl < planes; ++pl) {
    T* gin = grad_in.data() + pl * h * w;
    const T* gout = grad_out.data() + pl * out_plane;
    const std::int32_t* arg = ctx.argmax.data() + pl * out_plane;
    for (std::int64_t p = 0; p < out_plane; ++p) gin[arg[p]] += gout[p];
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// batchnorm2d

template <class T>
std::pair<Tensor<T>, BatchNorm2dCtx<T>> batchnorm2d_forward(
    const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
    BatchNormState<T>& state, Mode mode) {
  check_arg(input.rank() == 4,
            cat("batchnorm2d: input must be NCHW, got rank ", input.rank()));
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2),
            w = input.dim(3);
  check_arg(gamma.rank() == 1 && gamma.dim(0) == c,
            cat("batchnorm2d: gamma length ", gamma.numel(),
                " does not match channel count ", c));
  check_arg(beta.rank() == 1 && beta.dim(0) == c,
            cat("batchnorm2d: beta length ", beta.numel(),
                " does not match channel count ", c));
  if (mode == Mode::eval && !state.initialized)
    fail("batchnorm2d: eval mode requested before any training step "
         "(running statistics are uninitialized)");

  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t m = static_cast<std::int64_t>(n) * plane;

  BatchNorm2dCtx<T> ctx;
  ctx.mode = mode;
  ctx.x_hat = Tensor<T>(input.shape());
  ctx.inv_std.resize(static_cast<std::size_t>(c));
  Tensor<T> out(input.shape());

  for (int ch = 0; ch < c; ++ch) {
    T mean, var;
    if (mode == Mode::train) {
      double sum = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* p = input.data() +
                     (static_cast<std::int64_t>(i) * c + ch) * plane;
        for (std::int64_t j = 0; j < plane; ++j) sum += p[j];
      }
      mean = static_cast<T>(sum / static_cast<double>(m));
      double sq = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* p = input.data() +
                     (static_cast<std::int64_t>(i) * c + ch) * plane;
        for (std::int64_t j = 0; j < plane; ++j) {
          const double d = static_cast<double>(p[j]) - mean;
          sq += d * d;
        }
      }
      var = static_cast<T>(sq / static_cast<double>(m));
      state.running_mean[ch] = static_cast<T>(
          kBatchNormMomentum * state.running_mean[ch] +
          (1.0 - kBatchNormMomentum) * mean);
      state.running_var[ch] = static_cast<T>(
          kBatchNormMomentum * state.running_var[ch] +
          (1.0 - kBatchNormMomentum) * var);
    } else {
      mean = state.running_mean[ch];
      var = state.running_var[ch];
    }
    const T istd = static_cast<T>(
        1.0 / std::sqrt(static_cast<double>(var) + kBatchNormEps));
    ctx.inv_std[static_cast<std::size_t>(ch)] = istd;
    for (int i = 0; i < n; ++i) {
      const std::int64_t base = (static_cast<std::int64_t>(i) * c + ch) * plane;
      const T* p = input.data() + base;
      T* xh = ctx.x_hat.data() + base;
      T* o = out.data() + base;
      for (std::int64_t j = 0; j < plane; ++j) {
        xh[j] = (p[j] - mean) * istd;
        o[j] = gamma[ch] * xh[j] + beta[ch];
      }
    }
  }
  if (mode == Mode::train) state.initialized = true;
  return {std::move(out), std::move(ctx)};
}

template <class T>
BatchNormGrads<T> batchnorm2d_backward(const BatchNorm2dCtx<T>& ctx,
                                       const Tensor<T>& gamma,
                                       const Tensor<T>& grad_out) {
  check_arg(grad_out.same_shape(ctx.x_hat),
            "batchnorm2d backward: grad shape does not match forward output");
  const int n = grad_out.dim(0), c = grad_out.dim(1), h = grad_out.dim(2),
            w = grad_out.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t m = static_cast<std::int64_t>(n) * plane;

  BatchNormGrads<T> grads;
  grads.input = Tensor<T>(grad_out.shape());
  grads.gamma = Tensor<T>({c});
  grads.beta = Tensor<T>({c});

  for (int ch = 0; ch < c; ++ch) {
    double g_sum = 0.0, gx_sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const std::int64_t base = (static_cast<std::int64_t>(i) * c + ch) * plane;
      const T* g = grad_out.data() + base;
      const T* xh = ctx.x_hat.data() + base;
      for (std::int64_t j = 0; j < plane; ++j) {
        g_sum += g[j];
        gx_sum += static_cast<double>(g[j]) * xh[j];
      }
    }
    grads.beta[ch] = static_cast<T>(g_sum);
    grads.gamma[ch] = static_cast<T>(gx_sum);
    const double istd = ctx.inv_std[static_cast<std::size_t>(ch)];
    const double gam = gamma[ch];
    if (ctx.mode == Mode::train) {
      const double mean_g = g_sum / static_cast<double>(m);
      const double mean_gx = gx_sum / static_cast<double>(m);
      for (int i = 0; i < n; ++i) {
        const std::int64_t base =
            (static_cast<std::int64_t>(i) * c + ch) * plane;
        const T* g = grad_out.data() + base;
        const T* xh = ctx.x_hat.data() + base;
        T* gi = grads.input.data() + base;
        for (std::int64_t j = 0; j < plane; ++j)
          gi[j] = static_cast<T>(gam * istd *
                                 (g[j] - mean_g - xh[j] * mean_gx));
      }
    } else {
      // Running statistics are constants in eval mode.
      for (int i = 0; i < n; ++i) {
        const std::int64_t base =
            (static_cast<std::int64_t>(i) * c + ch) * plane;
        const T* g = grad_out.data() + base;
        T* gi = grads.input.data() + base;
        for (std::int64_t j = 0; j < plane; ++j)
          gi[j] = static_cast<T>(gam * istd * g[j]);
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// relu

template <class T>
std::pair<Tensor<T>, ReluCtx> relu_forward(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  ReluCtx ctx;
  ctx.positive.resize(static_cast<std::size_t>(input.numel()));
  for (std::int64_t i = 0; i < input.numel(); ++i) {
    const bool pos = input[i] > T{};
    ctx.positive[static_cast<std::size_t>(i)] = pos;
    out[i] = pos ? input[i] : T{};
  }
  return {std::move(out), std::move(ctx)};
}

template <class T>
Tensor<T> relu_backward(const ReluCtx& ctx, const Tensor<T>& grad_out) {
  check_arg(static_cast<std::size_t>(grad_out.numel()) == ctx.positive.size(),
            "relu backward: grad size does not match forward input");
  Tensor<T> grad_in(grad_out.shape());
  for (std::int64_t i = 0; i < grad_out.numel(); ++i)
    grad_in[i] = ctx.positive[static_cast<std::size_t>(i)] ? grad_out[i] : T{};
  return grad_in;
}

// ---------------------------------------------------------------------------
// sigmoid

template <class T>
std::pair<Tensor<T>, SigmoidCtx<T>> sigmoid_forward(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  const T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T(1), T(0));
  for (std::int64_t i = 0; i < input.numel(); ++i) {
    const T x = input[i];
    T s;
    if (x >= T{}) {
      s = T(1) / (T(1) + std::exp(-x));
    } else {
      const T e = std::exp(x);
      s = e / (T(1) + e);
    }
    out[i] = std::clamp(s, lo, hi);
  }
  SigmoidCtx<T> ctx{out};
  return {std::move(out), std::move(ctx)};
}

template <class T>
Tensor<T> sigmoid_backward(const SigmoidCtx<T>& ctx,
                           const Tensor<T>& grad_out) {
  check_arg(grad_out.same_shape(ctx.output),
            "sigmoid backward: grad shape does not match forward output");
  Tensor<T> grad_in(grad_out.shape());
  for (std::int64_t i = 0; i < grad_out.numel(); ++i) {
    const T s = ctx.output[i];
    grad_in[i] = s * (T(1) - s) * grad_out[i];
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// dropout

template <class T>
std::pair<Tensor<T>, DropoutCtx> dropout_forward(const Tensor<T>& input,
                                                 double rate, Mode mode,
                                                 Rng& rng) {
  check_arg(rate >= 0.0 && rate < 1.0,
            cat("dropout: rate must be in [0, 1), got ", rate));
  DropoutCtx ctx;
  if (mode == Mode::eval || rate == 0.0) {
    ctx.identity = true;
    return {input, std::move(ctx)};
  }
  ctx.identity = false;
  ctx.scale = 1.0 / (1.0 - rate);
  ctx.keep.resize(static_cast<std::size_t>(input.numel()));
  Tensor<T> out(input.shape());
  for (std::int64_t i = 0; i < input.numel(); ++i) {
    const bool keep = rng.next_unit() >= rate;
    ctx.keep[static_cast<std::size_t>(i)] = keep;
    out[i] = keep ? static_cast<T>(input[i] * ctx.scale) : T{};
  }
  return {std::move(out), std::move(ctx)};
}

template <class T>
Tensor<T> dropout_backward(const DropoutCtx& ctx, const Tensor<T>& grad_out) {
  if (ctx.identity) return grad_out;
  check_arg(static_cast<std::size_t>(grad_out.numel()) == ctx.keep.size(),
            "dropout backward: grad size does not match forward input");
  Tensor<T> grad_in(grad_out.shape());
  for (std::int64_t i = 0; i < grad_out.numel(); ++i)
    grad_in[i] = ctx.keep[static_cast<std::size_t>(i)]
                     ? static_cast<T>(grad_out[i] * ctx.scale)
                     : T{};
  return grad_in;
}

// ---------------------------------------------------------------------------
// concat / split

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  check_arg(a.rank() == 4 && b.rank() == 4,
            "concat_channels: both inputs must be NCHW");
  check_arg(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) &&
                a.dim(3) == b.dim(3),
            cat("concat_channels: N/H/W mismatch between ",
                shape_str(a.shape()), " and ", shape_str(b.shape())));
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2),
            w = a.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor<T> out({n, ca + cb, h, w});
  for (int i = 0; i < n; ++i) {
    std::copy(a.data() + static_cast<std::int64_t>(i) * ca * plane,
              a.data() + static_cast<std::int64_t>(i + 1) * ca * plane,
              out.data() + static_cast<std::int64_t>(i) * (ca + cb) * plane);
    std::copy(b.data() + static_cast<std::int64_t>(i) * cb * plane,
              b.data() + static_cast<std::int64_t>(i + 1) * cb * plane,
              out.data() + static_cast<std::int64_t>(i) * (ca + cb) * plane +
                  ca * plane);
  }
  return out;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x,
                                               int channels_a) {
  check_arg(x.rank() == 4, "split_channels: input must be NCHW");
  check_arg(channels_a > 0 && channels_a < x.dim(1),
            cat("split_channels: split point ", channels_a,
                " out of range for ", x.dim(1), " channels"));
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cb = c - channels_a;
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor<T> a({n, channels_a, h, w});
  Tensor<T> b({n, cb, h, w});
  for (int i = 0; i < n; ++i) {
    const T* src = x.data() + static_cast<std::int64_t>(i) * c * plane;
    std::copy(src, src + static_cast<std::int64_t>(channels_a) * plane,
              a.data() + static_cast<std::int64_t>(i) * channels_a * plane);
    std::copy(src + static_cast<std::int64_t>(channels_a) * plane,
              src + static_cast<std::int64_t>(c) * plane,
              b.data() + static_cast<std::int64_t>(i) * cb * plane);
  }
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------

#define TSEG_INSTANTIATE(T)                                                    \
  template std::pair<Tensor<T>, Conv2dCtx<T>> conv2d_forward<T>(               \
      const Tensor<T>&, const ConvParams<T>&);                                 \
  template ConvGrads<T> conv2d_backward<T>(const Conv2dCtx<T>&,                \
                                           const ConvParams<T>&,               \
                                           const Tensor<T>&);                  \
  template std::pair<Tensor<T>, ConvTranspose2dCtx<T>>                         \
  conv_transpose2d_forward<T>(const Tensor<T>&, const ConvParams<T>&);         \
  template ConvGrads<T> conv_transpose2d_backward<T>(                          \
      const ConvTranspose2dCtx<T>&, const ConvParams<T>&, const Tensor<T>&);   \
  template std::pair<Tensor<T>, MaxPool2dCtx> maxpool2d_forward<T>(            \
      const Tensor<T>&, int);                                                  \
  template Tensor<T> maxpool2d_backward<T>(const MaxPool2dCtx&,                \
                                           const Tensor<T>&);                  \
  template std::pair<Tensor<T>, BatchNorm2dCtx<T>> batchnorm2d_forward<T>(     \
      const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                    \
      BatchNormState<T>&, Mode);                                               \
  template BatchNormGrads<T> batchnorm2d_backward<T>(                          \
      const BatchNorm2dCtx<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template std::pair<Tensor<T>, ReluCtx> relu_forward<T>(const Tensor<T>&);    \
  template Tensor<T> relu_backward<T>(const ReluCtx&, const Tensor<T>&);       \
  template std::pair<Tensor<T>, SigmoidCtx<T>> sigmoid_forward<T>(             \
      const Tensor<T>&);                                                       \
  template Tensor<T> sigmoid_backward<T>(const SigmoidCtx<T>&,                 \
                                         const Tensor<T>&);                    \
  template std::pair<Tensor<T>, DropoutCtx> dropout_forward<T>(                \
      const Tensor<T>&, double, Mode, Rng&);                                   \
  template Tensor<T> dropout_backward<T>(const DropoutCtx&, const Tensor<T>&); \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);   \
  template std::pair<Tensor<T>, Tensor<T>> split_channels<T>(const Tensor<T>&, \
                                                             int);

TSEG_INSTANTIATE(float)
TSEG_INSTANTIATE(double)

#undef TSEG_INSTANTIATE

}  // namespace tseg
