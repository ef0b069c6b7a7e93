#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ctds {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent child seeds from a master seed.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Child seed number `index` of `master`. Fixed rule: replicates, folds and
// imputation draws all derive their seeds through this.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  return n01(rng);
}

inline double uniform01(Rng& rng) {
  // (0, 1): never exactly zero, safe under log().
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double v = u(rng);
  while (v <= 0.0) v = u(rng);
  return v;
}

inline double exponential(Rng& rng, double rate) {
  return -std::log(uniform01(rng)) / rate;
}

}  // namespace ctds
