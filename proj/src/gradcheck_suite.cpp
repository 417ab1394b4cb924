#include "tseg/gradcheck_suite.hpp"

#include <cmath>

#include "tseg/layers.hpp"
#include "tseg/optim.hpp"
#include "tseg/rng.hpp"
#include "tseg/unet.hpp"

namespace tseg {
namespace {

TensorD random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                      double hi = 1.0) {
  TensorD t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Keeps relu inputs away from the kink at 0.
TensorD random_tensor_off_zero(std::vector<int> shape, Rng& rng) {
  TensorD t = random_tensor(std::move(shape), rng);
  for (std::int64_t i = 0; i < t.numel(); ++i)
    if (std::abs(t[i]) < 1e-3) t[i] += t[i] >= 0.0 ? 0.1 : -0.1;
  return t;
}

double weighted_sum(const TensorD& out, const TensorD& weights) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < out.numel(); ++i) acc += out[i] * weights[i];
  return acc;
}

SuiteResult check_conv2d(Rng& rng) {
  TensorD input = random_tensor({1, 3, 8, 8}, rng);
  ConvParams<double> params{random_tensor({4, 3, 3, 3}, rng),
                            random_tensor({4}, rng), 1, Padding::same};
  const TensorD weights =
      random_tensor(conv2d_forward(input, params).first.shape(), rng);

  auto loss = [&] {
    return weighted_sum(conv2d_forward(input, params).first, weights);
  };
  auto analytic = [&] {
    auto [out, ctx] = conv2d_forward(input, params);
    ConvGrads<double> g = conv2d_backward(ctx, params, weights);
    return std::vector<TensorD>{g.input, g.kernel, g.bias};
  };
  return {"conv2d",
          finite_diff_check({{"input", &input},
                             {"kernel", &params.kernel},
                             {"bias", &params.bias}},
                            loss, analytic, 1e-5, 1e-4)};
}

SuiteResult check_conv_transpose2d(Rng& rng) {
  TensorD input = random_tensor({1, 8, 4, 4}, rng);
  ConvParams<double> params{random_tensor({4, 8, 2, 2}, rng),
                            random_tensor({4}, rng), 2, Padding::valid};
  const TensorD weights = random_tensor(
      conv_transpose2d_forward(input, params).first.shape(), rng);

  auto loss = [&] {
    return weighted_sum(conv_transpose2d_forward(input, params).first, weights);
  };
  auto analytic = [&] {
    auto [out, ctx] = conv_transpose2d_forward(input, params);
    ConvGrads<double> g = conv_transpose2d_backward(ctx, params, weights);
    return std::vector<TensorD>{g.input, g.kernel, g.bias};
  };
  return {"conv_transpose2d",
          finite_diff_check({{"input", &input},
                             {"kernel", &params.kernel},
                             {"bias", &params.bias}},
                            loss, analytic, 1e-5, 1e-4)};
}

SuiteResult check_maxpool2d(Rng& rng) {
  TensorD input = random_tensor({1, 2, 8, 8}, rng);
  const TensorD weights =
      random_tensor(maxpool2d_forward(input, 2).first.shape(), rng);

  auto loss = [&] {
    return weighted_sum(maxpool2d_forward(input, 2).first, weights);
  };
  auto analytic = [&] {
    auto [out, ctx] = maxpool2d_forward(input, 2);
    return std::vector<TensorD>{maxpool2d_backward(ctx, weights)};
  };
  // Perturbation small enough not to flip any argmax.
  return {"maxpool2d",
          finite_diff_check({{"input", &input}}, loss, analytic, 1e-6, 1e-4)};
}

SuiteResult check_batchnorm2d(Rng& rng) {
  TensorD input = random_tensor({4, 3, 5, 5}, rng);
  TensorD gamma = random_tensor({3}, rng, 0.5, 1.5);
  TensorD beta = random_tensor({3}, rng);
  const TensorD weights = random_tensor(input.shape(), rng);

  auto fresh_state = [] {
    BatchNormState<double> state;
    state.running_mean = TensorD({3});
    state.running_var = TensorD::full({3}, 1.0);
    return state;
  };
  auto loss = [&] {
    BatchNormState<double> state = fresh_state();
    return weighted_sum(
        batchnorm2d_forward(input, gamma, beta, state, Mode::train).first,
        weights);
  };
  auto analytic = [&] {
    BatchNormState<double> state = fresh_state();
    auto [out, ctx] =
        batchnorm2d_forward(input, gamma, beta, state, Mode::train);
    BatchNormGrads<double> g = batchnorm2d_backward(ctx, gamma, weights);
    return std::vector<TensorD>{g.input, g.gamma, g.beta};
  };
  return {"batchnorm2d",
          finite_diff_check(
              {{"input", &input}, {"gamma", &gamma}, {"beta", &beta}}, loss,
              analytic, 1e-5, 1e-4)};
}

SuiteResult check_relu(Rng& rng) {
  TensorD input = random_tensor_off_zero({1, 2, 6, 6}, rng);
  const TensorD weights = random_tensor(input.shape(), rng);

  auto loss = [&] { return weighted_sum(relu_forward(input).first, weights); };
  auto analytic = [&] {
    auto [out, ctx] = relu_forward(input);
    return std::vector<TensorD>{relu_backward(ctx, weights)};
  };
  return {"relu",
          finite_diff_check({{"input", &input}}, loss, analytic, 1e-5, 1e-4)};
}

SuiteResult check_sigmoid(Rng& rng) {
  TensorD input = random_tensor({1, 2, 6, 6}, rng, -3.0, 3.0);
  const TensorD weights = random_tensor(input.shape(), rng);

  auto loss = [&] {
    return weighted_sum(sigmoid_forward(input).first, weights);
  };
  auto analytic = [&] {
    auto [out, ctx] = sigmoid_forward(input);
    return std::vector<TensorD>{sigmoid_backward(ctx, weights)};
  };
  return {"sigmoid",
          finite_diff_check({{"input", &input}}, loss, analytic, 1e-5, 1e-4)};
}

SuiteResult check_dropout(Rng& rng) {
  TensorD input = random_tensor({1, 2, 8, 8}, rng);
  const TensorD weights = random_tensor(input.shape(), rng);
  const std::uint64_t mask_seed = rng.next_u64();

  // A fresh generator with the same seed fixes the mask across evaluations.
  auto loss = [&] {
    Rng mask_rng(mask_seed);
    return weighted_sum(
        dropout_forward(input, 0.07, Mode::train, mask_rng).first, weights);
  };
  auto analytic = [&] {
    Rng mask_rng(mask_seed);
    auto [out, ctx] = dropout_forward(input, 0.07, Mode::train, mask_rng);
    return std::vector<TensorD>{dropout_backward(ctx, weights)};
  };
  return {"dropout",
          finite_diff_check({{"input", &input}}, loss, analytic, 1e-5, 1e-4)};
}

SuiteResult check_concat(Rng& rng) {
  TensorD a = random_tensor({1, 2, 4, 4}, rng);
  TensorD b = random_tensor({1, 3, 4, 4}, rng);
  const TensorD weights = random_tensor({1, 5, 4, 4}, rng);

  auto loss = [&] { return weighted_sum(concat_channels(a, b), weights); };
  auto analytic = [&] {
    auto [ga, gb] = split_channels(weights, a.dim(1));
    return std::vector<TensorD>{ga, gb};
  };
  return {"concat_channels",
          finite_diff_check({{"a", &a}, {"b", &b}}, loss, analytic, 1e-5,
                            1e-4)};
}

SuiteResult check_composed_unet_bce(Rng& rng) {
  UNetConfig config;
  config.depth = 1;
  config.base_filters = 4;
  config.in_channels = 2;
  config.n_classes = 2;
  config.dropout_rate = 0.07f;
  config.use_batchnorm = true;
  config.input_size = 8;

  UNetModel<double> model = build_unet<double>(config, 7);
  const TensorD batch = random_tensor({2, 2, 8, 8}, rng);
  const std::uint64_t mask_seed = rng.next_u64();

  // Random one-hot targets.
  TensorD targets({2, 2, 8, 8});
  for (int n = 0; n < 2; ++n)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const int cls = static_cast<int>(rng.below(2));
        targets.at(n, cls, y, x) = 1.0;
      }

  auto loss = [&] {
    Rng mask_rng(mask_seed);
    auto [probs, trace] = unet_forward(model, batch, Mode::train, mask_rng);
    return bce_loss(probs, targets).loss;
  };
  auto analytic = [&] {
    Rng mask_rng(mask_seed);
    auto [probs, trace] = unet_forward(model, batch, Mode::train, mask_rng);
    BceResult<double> bce = bce_loss(probs, targets);
    GradMap<double> grads = unet_backward(model, trace, bce.grad_probs);
    std::vector<TensorD> out;
    for (const std::string& name : model.param_names)
      out.push_back(grads.at(name));
    return out;
  };

  std::vector<std::pair<std::string, TensorD*>> points;
  for (const std::string& name : model.param_names)
    points.emplace_back(name, &model.params.at(name));
  return {"unet_bce_composed",
          finite_diff_check(points, loss, analytic, 1e-5, 1e-3)};
}

}  // namespace

std::vector<SuiteResult> run_gradcheck_suite() {
  Rng rng(0x5EEDull);
  std::vector<SuiteResult> results;
  results.push_back(check_conv2d(rng));
  results.push_back(check_conv_transpose2d(rng));
  results.push_back(check_maxpool2d(rng));
  results.push_back(check_batchnorm2d(rng));
  results.push_back(check_relu(rng));
  results.push_back(check_sigmoid(rng));
  results.push_back(check_dropout(rng));
  results.push_back(check_concat(rng));
  results.push_back(check_composed_unet_bce(rng));
  return results;
}

bool suite_passed(const std::vector<SuiteResult>& results) {
  for (const SuiteResult& r : results)
    if (!r.report.passed) return false;
  return true;
}

}  // namespace tseg
