#include "tseg/noise.hpp"

#include <cmath>

#include "tseg/common.hpp"
#include "tseg/rng.hpp"

namespace tseg {
namespace {

double lattice(std::uint64_t seed, std::int64_t xi, std::int64_t yi) {
  std::uint64_t h = Rng::mix64(seed ^ static_cast<std::uint64_t>(xi) *
                                          0x8DA6B343D03F0B2Bull);
  h = Rng::mix64(h ^ static_cast<std::uint64_t>(yi) * 0xD8163841E8F8F0ABull);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

double single_octave(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto xi = static_cast<std::int64_t>(fx);
  const auto yi = static_cast<std::int64_t>(fy);
  const double tx = fade(x - fx), ty = fade(y - fy);
  const double v00 = lattice(seed, xi, yi);
  const double v10 = lattice(seed, xi + 1, yi);
  const double v01 = lattice(seed, xi, yi + 1);
  const double v11 = lattice(seed, xi + 1, yi + 1);
  const double top = v00 + (v10 - v00) * tx;
  const double bottom = v01 + (v11 - v01) * tx;
  return top + (bottom - top) * ty;
}

}  // namespace

double value_noise(std::uint64_t seed, double x, double y, int octaves) {
  check_arg(octaves >= 1, cat("value_noise: octaves must be >= 1, got ",
                              octaves));
  double sum = 0.0, amplitude = 1.0, total = 0.0, frequency = 1.0;
  for (int o = 0; o < octaves; ++o) {
    const std::uint64_t octave_seed =
        Rng::mix64(seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(o));
    sum += amplitude * single_octave(octave_seed, x * frequency, y * frequency);
    total += amplitude;
    amplitude *= 0.5;
    frequency *= 2.0;
  }
  return sum / total;
}

}  // namespace tseg
