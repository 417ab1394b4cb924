#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "tseg/gradcheck.hpp"
#include "tseg/metrics.hpp"
#include "tseg/optim.hpp"
#include "tseg/rng.hpp"

using namespace tseg;

namespace {

MaskGrid random_mask(int h, int w, int classes, Rng& rng) {
  MaskGrid m({h, w});
  for (std::int64_t i = 0; i < m.numel(); ++i)
    m[i] = static_cast<std::uint8_t>(rng.below(classes));
  return m;
}

// Independent oracle: double loop, dice as 2*|inter| / (|pred_c| + |true_c|).
double brute_force_dice(const MaskGrid& pred, const MaskGrid& truth, int c) {
  std::int64_t inter = 0, pred_c = 0, true_c = 0;
  for (int y = 0; y < pred.dim(0); ++y)
    for (int x = 0; x < pred.dim(1); ++x) {
      const bool p = pred.at(y, x) == c;
      const bool t = truth.at(y, x) == c;
      if (p) ++pred_c;
      if (t) ++true_c;
      if (p && t) ++inter;
    }
  if (pred_c + true_c == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) /
         static_cast<double>(pred_c + true_c);
}

double brute_force_accuracy(const MaskGrid& pred, const MaskGrid& truth) {
  std::int64_t agree = 0;
  for (int y = 0; y < pred.dim(0); ++y)
    for (int x = 0; x < pred.dim(1); ++x)
      if (pred.at(y, x) == truth.at(y, x)) ++agree;
  return static_cast<double>(agree) /
         static_cast<double>(pred.dim(0) * pred.dim(1));
}

}  // namespace

TEST_CASE("bce closed-form values") {
  // perfect prediction: loss ~ 0 at the clamp
  TensorD p1({1}, {1.0}), y1({1}, {1.0});
  CHECK(bce_loss(p1, y1).loss == doctest::Approx(0.0).epsilon(1e-6));

  // y=1, p=0.5 -> ln 2
  TensorD p2({1}, {0.5});
  CHECK(bce_loss(p2, y1).loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // y=0, p->1: clamped, loss = -log(1e-7) ~ 16.1
  TensorD p3({1}, {1.0}), y3({1}, {0.0});
  CHECK(bce_loss(p3, y3).loss ==
        doctest::Approx(-std::log(kBceClamp)).epsilon(1e-9));
  CHECK(bce_loss(p3, y3).loss > 16.0);
}

TEST_CASE("bce rejects non-binary targets") {
  TensorD p({2}, {0.5, 0.5});
  TensorD y({2}, {1.0, 0.5});
  CHECK_THROWS_WITH_AS(bce_loss(p, y), doctest::Contains("0 or 1"),
                       std::invalid_argument);
  TensorD y2({1}, {1.0});
  CHECK_THROWS_AS(bce_loss(p, y2), std::invalid_argument);
}

TEST_CASE("bce gradient matches finite differences away from the clamp") {
  Rng rng(17);
  TensorD probs({40});
  TensorD targets({40});
  for (std::int64_t i = 0; i < 40; ++i) {
    probs[i] = rng.uniform(0.1, 0.9);
    targets[i] = static_cast<double>(rng.below(2));
  }
  auto loss = [&] { return bce_loss(probs, targets).loss; };
  auto analytic = [&] {
    return std::vector<TensorD>{bce_loss(probs, targets).grad_probs};
  };
  const GradCheckReport report =
      finite_diff_check({{"probs", &probs}}, loss, analytic, 1e-5, 1e-6);
  CHECK(report.passed);
}

TEST_CASE("adam fixed point on zero gradients") {
  std::map<std::string, TensorD> params;
  params.emplace("w", TensorD({3}, {1.0, -2.0, 0.5}));
  std::map<std::string, TensorD> grads;
  grads.emplace("w", TensorD({3}));
  AdamState<double> state = AdamState<double>::init(params, AdamConfig{});
  adam_step(params, grads, state);
  CHECK(params.at("w").vec() == std::vector<double>{1.0, -2.0, 0.5});
  CHECK(state.t == 1);
}

TEST_CASE("adam first step moves by ~alpha") {
  std::map<std::string, TensorD> params;
  params.emplace("w", TensorD({1}, {1.0}));
  std::map<std::string, TensorD> grads;
  grads.emplace("w", TensorD({1}, {1.0}));
  AdamConfig cfg;
  cfg.alpha = 0.1;
  AdamState<double> state = AdamState<double>::init(params, cfg);
  adam_step(params, grads, state);
  // m_hat = v_hat = 1 after bias correction, so the step is alpha/(1+eps)
  CHECK(params.at("w")[0] == doctest::Approx(0.9).epsilon(1e-7));
}

TEST_CASE("adam updates are odd in the gradient") {
  auto run_step = [](double g) {
    std::map<std::string, TensorD> params;
    params.emplace("w", TensorD({1}, {0.37}));
    std::map<std::string, TensorD> grads;
    grads.emplace("w", TensorD({1}, {g}));
    AdamState<double> state = AdamState<double>::init(params, AdamConfig{});
    adam_step(params, grads, state);
    return params.at("w")[0] - 0.37;
  };
  for (double g : {0.3, -1.7, 2.5}) {
    CHECK(run_step(g) == -run_step(-g));
  }
}

TEST_CASE("adam refuses non-finite gradients") {
  std::map<std::string, TensorD> params;
  params.emplace("w", TensorD({1}, {1.0}));
  std::map<std::string, TensorD> grads;
  grads.emplace("w", TensorD({1}, {std::nan("")}));
  AdamState<double> state = AdamState<double>::init(params, AdamConfig{});
  CHECK_THROWS_WITH_AS(adam_step(params, grads, state),
                       doctest::Contains("non-finite"), std::runtime_error);
  CHECK(params.at("w")[0] == 1.0);  // untouched
  CHECK(state.t == 0);
}

TEST_CASE("adam trajectory on theta^2 matches an independent recurrence") {
  // Implementation under test.
  std::map<std::string, TensorD> params;
  params.emplace("theta", TensorD({1}, {1.0}));
  AdamConfig cfg;
  cfg.alpha = 0.1;
  AdamState<double> state = AdamState<double>::init(params, cfg);

  // Independent scalar reference, written out directly.
  double theta_ref = 1.0, m_ref = 0.0, v_ref = 0.0;
  for (int t = 1; t <= 100; ++t) {
    std::map<std::string, TensorD> grads;
    grads.emplace("theta", TensorD({1}, {2.0 * params.at("theta")[0]}));
    adam_step(params, grads, state);

    const double g = 2.0 * theta_ref;
    m_ref = 0.9 * m_ref + 0.1 * g;
    v_ref = 0.999 * v_ref + 0.001 * g * g;
    const double m_hat = m_ref / (1.0 - std::pow(0.9, t));
    const double v_hat = v_ref / (1.0 - std::pow(0.999, t));
    theta_ref -= 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8);

    CHECK(std::abs(params.at("theta")[0] - theta_ref) < 1e-12);
  }
}

TEST_CASE("dice boundary cases") {
  MaskGrid a({2, 2}, {0, 1, 2, 3});
  CHECK(dice_coefficient(a, a, 0) == 1.0);
  CHECK(macro_dice(a, a, 4) == 1.0);

  MaskGrid pred({2, 2}, {1, 1, 1, 1});
  MaskGrid truth({2, 2}, {0, 0, 0, 0});
  CHECK(dice_coefficient(pred, truth, 1) == 0.0);
  CHECK(dice_coefficient(pred, truth, 0) == 0.0);

  // absent from both -> 1.0
  CHECK(dice_coefficient(pred, truth, 3) == 1.0);
}

TEST_CASE("dice direct arithmetic: TP=2 FP=1 FN=1 -> 2/3") {
  MaskGrid pred({2, 2}, {1, 1, 1, 0});
  MaskGrid truth({2, 2}, {1, 1, 0, 1});
  const ConfusionCounts c = confusion(pred, truth, 1);
  CHECK(c.tp == 2);
  CHECK(c.fp == 1);
  CHECK(c.fn == 1);
  CHECK(dice_coefficient(pred, truth, 1) == doctest::Approx(4.0 / 6.0));
}

TEST_CASE("confusion counts partition the pixels") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    MaskGrid pred = random_mask(16, 16, 4, rng);
    MaskGrid truth = random_mask(16, 16, 4, rng);
    for (int c = 0; c < 4; ++c) {
      const ConfusionCounts counts = confusion(pred, truth, c);
      CHECK(counts.total() == 256);
      CHECK(dice_from_counts(counts) ==
            doctest::Approx(brute_force_dice(pred, truth, c)).epsilon(1e-15));
    }
    CHECK(pixel_accuracy(pred, truth) ==
          doctest::Approx(brute_force_accuracy(pred, truth)).epsilon(1e-15));
  }
}

TEST_CASE("all-same and complementary masks") {
  MaskGrid all_c = MaskGrid::full({4, 4}, 2);
  const ConfusionCounts counts = confusion(all_c, all_c, 2);
  CHECK(counts.tp == 16);
  CHECK(counts.fp == 0);
  CHECK(counts.fn == 0);
  CHECK(counts.tn == 0);

  MaskGrid none_c = MaskGrid::full({4, 4}, 1);
  const ConfusionCounts counts2 = confusion(all_c, none_c, 2);
  CHECK(counts2.fp == 16);
  CHECK(counts2.tp == 0);
  CHECK(counts2.fn == 0);

  CHECK(pixel_accuracy(all_c, all_c) == 1.0);
  CHECK(pixel_accuracy(all_c, none_c) == 0.0);
  MaskGrid three_of_four({2, 2}, {1, 1, 1, 0});
  MaskGrid truth({2, 2}, {1, 1, 1, 3});
  CHECK(pixel_accuracy(three_of_four, truth) == 0.75);
}

TEST_CASE("dice is symmetric and relabeling-invariant") {
  Rng rng(31);
  const std::array<int, 4> perm = {2, 0, 3, 1};
  for (int trial = 0; trial < 10; ++trial) {
    MaskGrid pred = random_mask(12, 12, 4, rng);
    MaskGrid truth = random_mask(12, 12, 4, rng);
    MaskGrid pred_p({12, 12}), truth_p({12, 12});
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
      pred_p[i] = static_cast<std::uint8_t>(perm[pred[i]]);
      truth_p[i] = static_cast<std::uint8_t>(perm[truth[i]]);
    }
    for (int c = 0; c < 4; ++c) {
      CHECK(dice_coefficient(pred, truth, c) ==
            dice_coefficient(truth, pred, c));
      CHECK(dice_coefficient(pred, truth, c) ==
            dice_coefficient(pred_p, truth_p, perm[c]));
    }
    const double md = macro_dice(pred, truth, 4);
    CHECK(md == doctest::Approx(macro_dice(pred_p, truth_p, 4)).epsilon(1e-15));
    CHECK(md >= 0.0);
    CHECK(md <= 1.0);
  }
}

TEST_CASE("class_assign argmax with low-index tie break") {
  // one-hot probabilities pick the hot index
  TensorF one_hot({3, 2, 2});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) one_hot[(2ll) * 4 + y * 2 + x] = 1.0f;
  MaskGrid m = class_assign(one_hot);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(m[i] == 2);

  // uniform probabilities -> class 0 everywhere
  TensorF uniform = TensorF::full({4, 2, 2}, 0.25f);
  MaskGrid mu = class_assign(uniform);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(mu[i] == 0);

  // common positive scaling does not change the argmax
  Rng rng(7);
  TensorF probs({4, 8, 8});
  for (std::int64_t i = 0; i < probs.numel(); ++i)
    probs[i] = static_cast<float>(rng.uniform(0.0, 1.0));
  TensorF scaled(probs.shape());
  for (std::int64_t i = 0; i < probs.numel(); ++i)
    scaled[i] = probs[i] * 0.125f;  // exact in binary floating point
  CHECK(class_assign(probs).vec() == class_assign(scaled).vec());
}
