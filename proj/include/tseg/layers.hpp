#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "tseg/rng.hpp"
#include "tseg/tensor.hpp"

namespace tseg {

// Forward/backward pairs for every primitive the U-Net needs. Each forward
// returns the output plus a context holding exactly what its backward needs;
// a backward consumes the context of its matching forward. All functions are
// pure given their inputs (plus the explicit Rng for dropout) and use fixed
// reduction orders, so results are bit-identical across runs and thread
// counts.

enum class Padding { same, valid };

// Kernel layout is (out_channels, in_channels, kH, kW); bias is (out_channels).
template <class T>
struct ConvParams {
  Tensor<T> kernel;
  Tensor<T> bias;
  int stride = 1;
  Padding padding = Padding::same;
};

template <class T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> kernel;
  Tensor<T> bias;
};

// ---------------------------------------------------------------------------
// conv2d (cross-correlation, zero padding)

template <class T>
struct Conv2dCtx {
  Tensor<T> input;
  int stride = 1;
  int pad_top = 0, pad_left = 0;
  int out_h = 0, out_w = 0;
};

template <class T>
std::pair<Tensor<T>, Conv2dCtx<T>> conv2d_forward(const Tensor<T>& input,
                                                  const ConvParams<T>& params);

template <class T>
ConvGrads<T> conv2d_backward(const Conv2dCtx<T>& ctx,
                             const ConvParams<T>& params,
                             const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// conv_transpose2d (no padding; output spatial = (in-1)*stride + k)

template <class T>
struct ConvTranspose2dCtx {
  Tensor<T> input;
  int stride = 1;
};

template <class T>
std::pair<Tensor<T>, ConvTranspose2dCtx<T>> conv_transpose2d_forward(
    const Tensor<T>& input, const ConvParams<T>& params);

template <class T>
ConvGrads<T> conv_transpose2d_backward(const ConvTranspose2dCtx<T>& ctx,
                                       const ConvParams<T>& params,
                                       const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// maxpool2d, window = stride = 2. Ties break to the first element of the
// window in row-major order so the backward routing is deterministic.

struct MaxPool2dCtx {
  std::vector<int> in_shape;
  std::vector<std::int32_t> argmax;  // flat spatial index into the input plane
};

template <class T>
std::pair<Tensor<T>, MaxPool2dCtx> maxpool2d_forward(const Tensor<T>& input,
                                                     int window = 2);

template <class T>
Tensor<T> maxpool2d_backward(const MaxPool2dCtx& ctx,
                             const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// batchnorm2d. Train mode normalizes per channel over (N, H, W) with biased
// batch variance and updates running stats by EMA; eval mode uses the stored
// running stats and requires them to be populated.

template <class T>
struct BatchNormState {
  Tensor<T> running_mean;  // (C)
  Tensor<T> running_var;   // (C)
  bool initialized = false;
};

template <class T>
struct BatchNorm2dCtx {
  Mode mode = Mode::train;
  Tensor<T> x_hat;          // normalized input, same shape as input
  std::vector<T> inv_std;   // per channel
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

template <class T>
std::pair<Tensor<T>, BatchNorm2dCtx<T>> batchnorm2d_forward(
    const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
    BatchNormState<T>& state, Mode mode);

template <class T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <class T>
BatchNormGrads<T> batchnorm2d_backward(const BatchNorm2dCtx<T>& ctx,
                                       const Tensor<T>& gamma,
                                       const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// relu

struct ReluCtx {
  std::vector<std::uint8_t> positive;
};

template <class T>
std::pair<Tensor<T>, ReluCtx> relu_forward(const Tensor<T>& input);

template <class T>
Tensor<T> relu_backward(const ReluCtx& ctx, const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// sigmoid. Branches on the sign of x so e^x is never taken for large
// positive x; output is strictly inside (0, 1) for every finite input.

template <class T>
struct SigmoidCtx {
  Tensor<T> output;
};

template <class T>
std::pair<Tensor<T>, SigmoidCtx<T>> sigmoid_forward(const Tensor<T>& input);

template <class T>
Tensor<T> sigmoid_backward(const SigmoidCtx<T>& ctx, const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// dropout (inverted: survivors scaled by 1/(1-rate) at train time, identity
// at eval). rate 0 and eval mode draw nothing from the rng.

struct DropoutCtx {
  std::vector<std::uint8_t> keep;
  double scale = 1.0;
  bool identity = true;
};

template <class T>
std::pair<Tensor<T>, DropoutCtx> dropout_forward(const Tensor<T>& input,
                                                 double rate, Mode mode,
                                                 Rng& rng);

template <class T>
Tensor<T> dropout_backward(const DropoutCtx& ctx, const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// channel concatenation (NCHW); backward is split_channels.

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x,
                                               int channels_a);

// Explicit instantiations for float and double live in layers.cpp.

}  // namespace tseg
