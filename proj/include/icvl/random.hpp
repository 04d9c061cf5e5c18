// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "icvl/matrix.hpp"

namespace icvl {

using Rng = std::mt19937_64;

/// Gaussian matrix with the given standard deviation.
Matrix random_normal(std::size_t rows, std::size_t dims, double stddev, Rng& rng);
Matrix random_uniform(std::size_t rows, std::size_t dims, double lo, double hi, Rng& rng);

/// Derives an independent stream seed from a base seed and a tag, so that
/// per-video or per-tensor generators do not depend on call order.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view text, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace icvl
