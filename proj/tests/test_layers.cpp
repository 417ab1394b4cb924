#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tseg/gradcheck.hpp"
#include "tseg/gradcheck_suite.hpp"
#include "tseg/layers.hpp"

using namespace tseg;

namespace {

TensorD rand_tensor(std::vector<int> shape, Rng& rng) {
  TensorD t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("tensor shape/data invariant") {
  CHECK_NOTHROW(TensorD({2, 3}, std::vector<double>(6, 0.0)));
  CHECK_THROWS_AS(TensorD({2, 3}, std::vector<double>(5, 0.0)),
                  std::invalid_argument);
  CHECK_THROWS_AS(TensorD({0, 3}), std::invalid_argument);
  TensorD t({2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(t.numel() == 4);
  CHECK(t.at(1, 0) == 3.0);
}

TEST_CASE("conv2d scalar scaling") {
  TensorD input = TensorD::full({1, 1, 3, 3}, 1.0);
  ConvParams<double> p{TensorD({1, 1, 1, 1}, {2.0}), TensorD({1}), 1,
                       Padding::same};
  auto [out, ctx] = conv2d_forward(input, p);
  CHECK(out.shape() == std::vector<int>{1, 1, 3, 3});
  for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 2.0);
}

TEST_CASE("conv2d valid sums the window") {
  TensorD input({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  ConvParams<double> p{TensorD::full({1, 1, 2, 2}, 1.0), TensorD({1}), 1,
                       Padding::valid};
  auto [out, ctx] = conv2d_forward(input, p);
  CHECK(out.shape() == std::vector<int>{1, 1, 1, 1});
  CHECK(out[0] == doctest::Approx(10.0));
}

TEST_CASE("conv2d rejects channel mismatch with a diagnostic") {
  TensorD input({1, 3, 4, 4});
  ConvParams<double> p{TensorD({2, 4, 3, 3}), TensorD({2}), 1, Padding::same};
  CHECK_THROWS_WITH_AS(conv2d_forward(input, p),
                       doctest::Contains("input channels (3)"),
                       std::invalid_argument);
}

TEST_CASE("conv2d same padding preserves spatial dims across sizes") {
  Rng rng(11);
  for (int size : {1, 2, 3, 5, 8, 12}) {
    for (int k : {1, 3, 5}) {
      TensorD input = rand_tensor({1, 2, size, size}, rng);
      ConvParams<double> p{rand_tensor({3, 2, k, k}, rng),
                           rand_tensor({3}, rng), 1, Padding::same};
      auto [out, ctx] = conv2d_forward(input, p);
      CHECK(out.dim(2) == size);
      CHECK(out.dim(3) == size);
    }
  }
}

TEST_CASE("conv_transpose2d doubles spatial dims with kernel 2 stride 2") {
  Rng rng(3);
  TensorD input = rand_tensor({1, 1, 2, 2}, rng);
  ConvParams<double> p{rand_tensor({1, 1, 2, 2}, rng), TensorD({1}), 2,
                       Padding::valid};
  auto [out, ctx] = conv_transpose2d_forward(input, p);
  CHECK(out.shape() == std::vector<int>{1, 1, 4, 4});

  // Composed with maxpool(2) it restores the original dims.
  auto [pooled, pctx] = maxpool2d_forward(out, 2);
  CHECK(pooled.shape() == input.shape());
}

TEST_CASE("conv_transpose2d broadcasts a scalar through the kernel") {
  TensorD input({1, 1, 1, 1}, {3.0});
  ConvParams<double> p{TensorD({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0}),
                       TensorD({1}), 2, Padding::valid};
  auto [out, ctx] = conv_transpose2d_forward(input, p);
  CHECK(out.vec() == std::vector<double>{3.0, 6.0, 9.0, 12.0});
}

TEST_CASE("conv_transpose2d rejects non-positive stride") {
  TensorD input({1, 1, 2, 2});
  ConvParams<double> p{TensorD({1, 1, 2, 2}), TensorD({1}), 0, Padding::valid};
  CHECK_THROWS_AS(conv_transpose2d_forward(input, p), std::invalid_argument);
}

TEST_CASE("maxpool2d takes the window max") {
  TensorD input({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  auto [out, ctx] = maxpool2d_forward(input, 2);
  CHECK(out.numel() == 1);
  CHECK(out[0] == 4.0);
}

TEST_CASE("maxpool2d ties route gradient to the first window position") {
  TensorD input = TensorD::full({1, 1, 4, 4}, 7.0);
  auto [out, ctx] = maxpool2d_forward(input, 2);
  TensorD gout = TensorD::full(out.shape(), 1.0);
  TensorD gin = maxpool2d_backward(ctx, gout);
  for (int oy = 0; oy < 2; ++oy)
    for (int ox = 0; ox < 2; ++ox)
      for (int ky = 0; ky < 2; ++ky)
        for (int kx = 0; kx < 2; ++kx)
          CHECK(gin.at(0, 0, oy * 2 + ky, ox * 2 + kx) ==
                ((ky == 0 && kx == 0) ? 1.0 : 0.0));
}

TEST_CASE("maxpool2d rejects indivisible spatial dims naming the multiple") {
  TensorD input({1, 1, 3, 4});
  CHECK_THROWS_WITH_AS(maxpool2d_forward(input, 2),
                       doctest::Contains("multiples of the window 2"),
                       std::invalid_argument);
}

TEST_CASE("batchnorm2d train mode normalizes per channel") {
  Rng rng(5);
  TensorD input = rand_tensor({4, 3, 5, 5}, rng);
  TensorD gamma = TensorD::full({3}, 1.0);
  TensorD beta({3});
  BatchNormState<double> state;
  state.running_mean = TensorD({3});
  state.running_var = TensorD::full({3}, 1.0);

  auto [out, ctx] = batchnorm2d_forward(input, gamma, beta, state, Mode::train);
  const std::int64_t plane = 25;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (int n = 0; n < 4; ++n)
      for (std::int64_t j = 0; j < plane; ++j) {
        const double v = out[(n * 3 + c) * plane + j];
        sum += v;
        sq += v * v;
      }
    const double mean = sum / 100.0;
    const double var = sq / 100.0 - mean * mean;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-5));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
  CHECK(state.initialized);
}

TEST_CASE("batchnorm2d degenerate variance stabilized to beta") {
  TensorD input = TensorD::full({2, 2, 3, 3}, 5.0);
  TensorD gamma = TensorD::full({2}, 1.0);
  TensorD beta({2}, {0.25, -0.5});
  BatchNormState<double> state;
  state.running_mean = TensorD({2});
  state.running_var = TensorD::full({2}, 1.0);
  auto [out, ctx] = batchnorm2d_forward(input, gamma, beta, state, Mode::train);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 2; ++c)
      for (int j = 0; j < 9; ++j)
        CHECK(out[(n * 2 + c) * 9 + j] == doctest::Approx(beta[c]).epsilon(1e-9));
}

TEST_CASE("batchnorm2d eval before training is rejected") {
  TensorD input({1, 2, 4, 4});
  TensorD gamma = TensorD::full({2}, 1.0);
  TensorD beta({2});
  BatchNormState<double> state;
  state.running_mean = TensorD({2});
  state.running_var = TensorD::full({2}, 1.0);
  CHECK_THROWS_WITH_AS(
      batchnorm2d_forward(input, gamma, beta, state, Mode::eval),
      doctest::Contains("uninitialized"), std::runtime_error);
}

TEST_CASE("relu basics") {
  TensorD input({3}, {-1.0, 0.0, 2.0});
  auto [out, ctx] = relu_forward(input);
  CHECK(out.vec() == std::vector<double>{0.0, 0.0, 2.0});

  TensorD negatives = TensorD::full({4}, -2.0);
  auto [out2, ctx2] = relu_forward(negatives);
  TensorD gin = relu_backward(ctx2, TensorD::full({4}, 1.0));
  for (std::int64_t i = 0; i < 4; ++i) {
    CHECK(out2[i] == 0.0);
    CHECK(gin[i] == 0.0);
  }
}

TEST_CASE("sigmoid midpoint, saturation and symmetry") {
  TensorD input({5}, {0.0, 1e9, -1e9, 3.5, -3.5});
  auto [out, ctx] = sigmoid_forward(input);
  CHECK(out[0] == 0.5);
  // strictly inside (0, 1) even at extreme magnitudes, no NaN/Inf
  for (std::int64_t i = 0; i < 5; ++i) {
    CHECK(out[i] > 0.0);
    CHECK(out[i] < 1.0);
    CHECK(std::isfinite(out[i]));
  }
  CHECK(out[1] > 0.999999);
  CHECK(out[2] < 1e-6);
  CHECK(out[3] == doctest::Approx(1.0 - out[4]).epsilon(1e-12));
}

TEST_CASE("dropout identity cases") {
  Rng rng(9);
  TensorD input = rand_tensor({1, 1, 4, 4}, rng);

  Rng r1(1);
  auto [out_rate0, c0] = dropout_forward(input, 0.0, Mode::train, r1);
  CHECK(out_rate0.vec() == input.vec());

  Rng r2(1);
  auto [out_eval, c1] = dropout_forward(input, 0.9, Mode::eval, r2);
  CHECK(out_eval.vec() == input.vec());

  CHECK_THROWS_AS(dropout_forward(input, 1.0, Mode::train, r2),
                  std::invalid_argument);
}

TEST_CASE("dropout statistics at rate 0.07") {
  TensorD input = TensorD::full({1000000}, 1.0);
  Rng rng(42);
  auto [out, ctx] = dropout_forward(input, 0.07, Mode::train, rng);
  std::int64_t zeros = 0;
  double sum = 0.0;
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    if (out[i] == 0.0) ++zeros;
    sum += out[i];
  }
  const double zero_fraction = static_cast<double>(zeros) / 1e6;
  CHECK(zero_fraction > 0.065);  // 0.07 +- 0.005
  CHECK(zero_fraction < 0.075);
  const double mean = sum / 1e6;
  CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("dropout with the same rng state is bit-identical") {
  Rng data_rng(77);
  TensorD input = rand_tensor({1, 2, 8, 8}, data_rng);
  Rng a(123), b(123);
  auto [out_a, ctx_a] = dropout_forward(input, 0.3, Mode::train, a);
  auto [out_b, ctx_b] = dropout_forward(input, 0.3, Mode::train, b);
  CHECK(out_a.vec() == out_b.vec());
}

TEST_CASE("concat_channels shape, round trip and linear gradient") {
  Rng rng(21);
  TensorD a = rand_tensor({1, 2, 4, 4}, rng);
  TensorD b = rand_tensor({1, 3, 4, 4}, rng);
  TensorD joined = concat_channels(a, b);
  CHECK(joined.shape() == std::vector<int>{1, 5, 4, 4});

  auto [a2, b2] = split_channels(joined, 2);
  CHECK(a2.vec() == a.vec());
  CHECK(b2.vec() == b.vec());

  // gradient of sum w.r.t. each input is all ones
  auto [ga, gb] = split_channels(TensorD::full({1, 5, 4, 4}, 1.0), 2);
  for (std::int64_t i = 0; i < ga.numel(); ++i) CHECK(ga[i] == 1.0);
  for (std::int64_t i = 0; i < gb.numel(); ++i) CHECK(gb[i] == 1.0);

  TensorD c({1, 2, 5, 5});
  CHECK_THROWS_AS(concat_channels(a, c), std::invalid_argument);
}

TEST_CASE("finite_diff_check exact on a linear op") {
  TensorD x({4}, {0.3, -0.7, 1.1, 0.0});
  auto loss = [&] {
    double acc = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i) acc += 3.0 * x[i];
    return acc;
  };
  auto analytic = [&] { return std::vector<TensorD>{TensorD::full({4}, 3.0)}; };
  const GradCheckReport report =
      finite_diff_check({{"x", &x}}, loss, analytic, 1e-5, 1e-4);
  CHECK(report.passed);
  CHECK(report.entries[0].max_rel_err < 1e-8);
}

TEST_CASE("finite_diff_check catches a corrupted backward") {
  Rng rng(31);
  TensorD input = rand_tensor({1, 1, 4, 4}, rng);
  ConvParams<double> p{rand_tensor({2, 1, 3, 3}, rng), rand_tensor({2}, rng),
                       1, Padding::same};
  auto loss = [&] {
    auto [out, ctx] = conv2d_forward(input, p);
    double acc = 0.0;
    for (std::int64_t i = 0; i < out.numel(); ++i) acc += out[i];
    return acc;
  };
  auto analytic = [&] {
    auto [out, ctx] = conv2d_forward(input, p);
    ConvGrads<double> g =
        conv2d_backward(ctx, p, TensorD::full(out.shape(), 1.0));
    for (std::int64_t i = 0; i < g.input.numel(); ++i) g.input[i] *= 1.01;
    return std::vector<TensorD>{g.input};
  };
  const GradCheckReport report =
      finite_diff_check({{"input", &input}}, loss, analytic, 1e-5, 1e-4);
  CHECK_FALSE(report.passed);
}

TEST_CASE("finite_diff_check reports non-finite analytic gradients") {
  TensorD x({2}, {1.0, 2.0});
  auto loss = [&] { return x[0] + x[1]; };
  auto analytic = [&] {
    TensorD g({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
    return std::vector<TensorD>{g};
  };
  const GradCheckReport report =
      finite_diff_check({{"x", &x}}, loss, analytic, 1e-5, 1e-4);
  CHECK_FALSE(report.passed);
  CHECK_FALSE(report.entries[0].finite);
  CHECK(report.entries[0].worst_index == 1);
}

TEST_CASE("full gradient-check suite passes") {
  const auto results = run_gradcheck_suite();
  CHECK(results.size() == 9);
  for (const SuiteResult& r : results) {
    INFO(r.op, ": ", r.report.summary());
    CHECK(r.report.passed);
  }
}

TEST_CASE("forward ops are deterministic for a fixed rng state") {
  Rng data_rng(55);
  TensorD input = rand_tensor({2, 3, 8, 8}, data_rng);
  ConvParams<double> p{rand_tensor({4, 3, 3, 3}, data_rng),
                       rand_tensor({4}, data_rng), 1, Padding::same};
  auto out1 = conv2d_forward(input, p).first;
  auto out2 = conv2d_forward(input, p).first;
  CHECK(out1.vec() == out2.vec());
}
