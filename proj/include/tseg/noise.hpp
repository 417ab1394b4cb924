#pragma once

#include <cstdint>

namespace tseg {

// Multi-octave value noise in [0, 1]. Lattice values are hashed from
// (seed, octave, cell), interpolated with a quintic fade; octave o is sampled
// at frequency 2^o with amplitude 0.5^o and the sum is normalized. Pure
// integer hashing plus IEEE arithmetic, so identical inputs give identical
// outputs on every platform.
double value_noise(std::uint64_t seed, double x, double y, int octaves);

}  // namespace tseg
