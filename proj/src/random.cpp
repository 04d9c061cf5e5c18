// SPDX-License-Identifier: Apache-2.0

#include "icvl/random.hpp"

namespace icvl {

Matrix random_normal(std::size_t rows, std::size_t dims, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, dims);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

Matrix random_uniform(std::size_t rows, std::size_t dims, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, dims);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

std::uint64_t fnv1a(std::string_view text, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

// splitmix64 finaliser
std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) { return mix(base ^ fnv1a(tag)); }

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return mix(base ^ mix(index + 0x632be59bd9b4e019ULL));
}

}  // namespace icvl
