#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tseg/layers.hpp"

namespace tseg {

struct UNetConfig {
  int depth = 3;
  int base_filters = 16;
  int in_channels = 4;
  int n_classes = 4;
  float dropout_rate = 0.07f;
  bool use_batchnorm = true;
  int input_size = 64;

  // Throws invalid_argument naming the violated constraint.
  void validate() const;

  int bottleneck_channels() const { return base_filters << depth; }
};

// Parameter names follow the canonical grammar
//   enc{i}.conv{1,2}.{kernel,bias}   enc{i}.bn{1,2}.{gamma,beta}
//   bottleneck.conv{1,2}.* / .bn{1,2}.*
//   dec{i}.up.{kernel,bias}          dec{i}.conv{1,2}.* / .bn{1,2}.*
//   head.{kernel,bias}
// with param_names listing them in execution order. Name and shape sets are a
// pure function of the config.
template <class T>
struct UNetModel {
  UNetConfig config;
  std::vector<std::string> param_names;
  std::map<std::string, Tensor<T>> params;
  std::vector<std::string> bn_names;  // "enc0.bn1", ...
  std::map<std::string, BatchNormState<T>> bn;

  Tensor<T>& param(const std::string& name);
  const Tensor<T>& param(const std::string& name) const;

  // True once every batch-norm layer has seen a training batch (always true
  // when batch norm is disabled).
  bool stats_ready() const;

  std::int64_t parameter_count() const;
};

template <class T>
using GradMap = std::map<std::string, Tensor<T>>;

template <class T>
UNetModel<T> build_unet(const UNetConfig& config, std::uint64_t seed);

template <class T>
struct ConvBlockTrace {
  Conv2dCtx<T> conv1, conv2;
  BatchNorm2dCtx<T> bn1, bn2;
  ReluCtx relu1, relu2;
};

template <class T>
struct UNetTrace {
  Mode mode = Mode::train;
  std::vector<ConvBlockTrace<T>> enc;
  std::vector<MaxPool2dCtx> pool;
  std::vector<DropoutCtx> enc_drop;
  ConvBlockTrace<T> bottleneck;
  std::vector<ConvTranspose2dCtx<T>> up;
  std::vector<DropoutCtx> dec_drop;
  std::vector<ConvBlockTrace<T>> dec;
  std::vector<int> skip_channels;
  Conv2dCtx<T> head;
  SigmoidCtx<T> sig;
};

// conv(3x3, same) -> batchnorm -> relu, twice. Train mode updates the block's
// running statistics.
template <class T>
Tensor<T> conv2d_block_forward(UNetModel<T>& model, const std::string& prefix,
                               const Tensor<T>& x, Mode mode,
                               ConvBlockTrace<T>& trace);

template <class T>
Tensor<T> conv2d_block_backward(const UNetModel<T>& model,
                                const std::string& prefix,
                                const ConvBlockTrace<T>& trace,
                                const Tensor<T>& grad_out, GradMap<T>& grads);

// Full forward pass; output values are probabilities in (0, 1) with the same
// spatial dims as the input.
template <class T>
std::pair<Tensor<T>, UNetTrace<T>> unet_forward(UNetModel<T>& model,
                                                const Tensor<T>& batch,
                                                Mode mode, Rng& rng);

// Gradients for every parameter; skip-connection gradients from the decoder
// concat and the encoder pooling path are summed.
template <class T>
GradMap<T> unet_backward(const UNetModel<T>& model, const UNetTrace<T>& trace,
                         const Tensor<T>& grad_probs);

// Encoder + bottleneck only (eval mode); returns the spatial global average
// of each bottleneck channel. `image` is a single CHW image.
template <class T>
std::vector<T> encode_bottleneck(UNetModel<T>& model, const Tensor<T>& image);

}  // namespace tseg
