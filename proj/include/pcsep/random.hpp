#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace pcsep {

using Rng = std::mt19937_64;

// Independent stream for a (seed, path...) tuple, e.g. (seed, iteration, item).
// Streams depend only on the tuple, never on the order they are requested in.
Rng derive_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline double normal(Rng& rng, double mean, double stddev) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace pcsep
