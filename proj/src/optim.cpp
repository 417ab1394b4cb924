#include "tseg/optim.hpp"

#include <algorithm>
#include <cmath>

namespace tseg {

template <class T>
AdamState<T> AdamState<T>::init(const std::map<std::string, Tensor<T>>& params,
                                const AdamConfig& cfg) {
  AdamState<T> state;
  state.cfg = cfg;
  for (const auto& [name, p] : params) {
    state.m.emplace(name, Tensor<T>(p.shape()));
    state.v.emplace(name, Tensor<T>(p.shape()));
  }
  return state;
}

template <class T>
void adam_step(std::map<std::string, Tensor<T>>& params,
               const std::map<std::string, Tensor<T>>& grads,
               AdamState<T>& state) {
  check_arg(params.size() == grads.size() && params.size() == state.m.size(),
            cat("adam: parameter/gradient/state key counts differ (",
                params.size(), "/", grads.size(), "/", state.m.size(), ")"));
  for (const auto& [name, p] : params) {
    auto git = grads.find(name);
    check_arg(git != grads.end(), cat("adam: no gradient for '", name, "'"));
    check_arg(git->second.same_shape(p),
              cat("adam: gradient shape ", shape_str(git->second.shape()),
                  " does not match parameter '", name, "' ",
                  shape_str(p.shape())));
    if (!git->second.all_finite())
      fail(cat("adam: non-finite gradient for '", name,
               "'; step refused"));
  }

  state.t += 1;
  const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.t));

  for (auto& [name, p] : params) {
    const Tensor<T>& g = grads.at(name);
    Tensor<T>& m = state.m.at(name);
    Tensor<T>& v = state.v.at(name);
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / bias1;
      const double v_hat = vi / bias2;
      p[i] = static_cast<T>(p[i] - state.cfg.alpha * m_hat /
                                       (std::sqrt(v_hat) + state.cfg.epsilon));
    }
  }
}

template <class T>
BceResult<T> bce_loss(const Tensor<T>& probs, const Tensor<T>& targets) {
  check_arg(probs.same_shape(targets),
            cat("bce: probs shape ", shape_str(probs.shape()),
                " does not match targets ", shape_str(targets.shape())));
  const std::int64_t n = probs.numel();
  check_arg(n > 0, "bce: empty input");

  BceResult<T> result;
  result.grad_probs = Tensor<T>(probs.shape());
  const double lo = kBceClamp, hi = 1.0 - kBceClamp;
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double y = targets[i];
    check_arg(y == 0.0 || y == 1.0,
              cat("bce: target at index ", i, " is ", y,
                  "; labels must be 0 or 1"));
    const double p = std::clamp(static_cast<double>(probs[i]), lo, hi);
    loss += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    result.grad_probs[i] =
        static_cast<T>((p - y) / (p * (1.0 - p)) / static_cast<double>(n));
  }
  result.loss = loss / static_cast<double>(n);
  return result;
}

#define TSEG_INSTANTIATE(T)                                             \
  template struct AdamState<T>;                                         \
  template void adam_step<T>(std::map<std::string, Tensor<T>>&,         \
                             const std::map<std::string, Tensor<T>>&,   \
                             AdamState<T>&);                            \
  template BceResult<T> bce_loss<T>(const Tensor<T>&, const Tensor<T>&);

TSEG_INSTANTIATE(float)
TSEG_INSTANTIATE(double)

#undef TSEG_INSTANTIATE

}  // namespace tseg
