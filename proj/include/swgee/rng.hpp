#pragma once

#include <cstdint>
#include <random>

namespace swgee::rng {

/// splitmix64 finalizer. Used both as a mixer for stream derivation and as
/// the seeding primitive, so stream identity depends only on the key path,
/// never on draw order elsewhere in the program.
inline std::uint64_t mix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Derive a child key from (key, index). Chaining calls gives a tree of
/// independent streams addressed by integer paths.
inline std::uint64_t derive(std::uint64_t key, std::uint64_t index) {
  return mix(key ^ mix(index ^ 0xA0761D6478BD642Full));
}

/// Engine for one (master seed, path...) stream.
inline std::mt19937_64 stream(std::uint64_t master,
                              std::initializer_list<std::uint64_t> path) {
  std::uint64_t k = mix(master);
  for (std::uint64_t p : path) k = derive(k, p);
  return std::mt19937_64(k);
}

// The standard distributions are implementation-defined; these small draws
// keep every byte of output identical across toolchains.

inline double uniform01(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline bool bernoulli(std::mt19937_64& g, double p) {
  return uniform01(g) < p;
}

/// Uniform on {lo, ..., hi} via rejection on the top bits.
inline std::int64_t uniform_int(std::mt19937_64& g, std::int64_t lo,
                                std::int64_t hi) {
  const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
  if (range == 0) return static_cast<std::int64_t>(g());  // full 2^64 span
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % range);
  std::uint64_t x;
  do {
    x = g();
  } while (x >= limit);
  return lo + static_cast<std::int64_t>(x % range);
}

}  // namespace swgee::rng
