#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "tseg/tensor.hpp"

namespace tseg {

// Note on the update rule: the standard Adam recurrences with bias
// correction are used here,
//   m <- b1*m + (1-b1)*g        v <- b2*v + (1-b2)*g^2
//   theta <- theta - alpha * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
// which is what "moving averages of previous gradients and past squared
// gradients" describes.
struct AdamConfig {
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
struct AdamState {
  AdamConfig cfg;
  std::int64_t t = 0;
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;

  static AdamState init(const std::map<std::string, Tensor<T>>& params,
                        const AdamConfig& cfg);
};

// One optimizer step over the full parameter map. Throws (without touching
// any parameter) if the gradient key set differs from the parameter key set
// or any gradient is non-finite.
template <class T>
void adam_step(std::map<std::string, Tensor<T>>& params,
               const std::map<std::string, Tensor<T>>& grads,
               AdamState<T>& state);

inline constexpr double kBceClamp = 1e-7;

template <class T>
struct BceResult {
  double loss = 0.0;
  Tensor<T> grad_probs;
};

// Mean over all elements of -y*log(p) - (1-y)*log(1-p), probabilities clamped
// to [1e-7, 1-1e-7]. Targets must be exactly 0 or 1.
template <class T>
BceResult<T> bce_loss(const Tensor<T>& probs, const Tensor<T>& targets);

}  // namespace tseg
