#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace stochdom {

using Rng = std::mt19937_64;

/// Engine for stream `stream` of base seed `seed`. Distinct streams of the
/// same seed are decorrelated through a splitmix64 finalizer.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

/// FNV-1a of a label, stable across runs and platforms; used to derive
/// per-method stream ids.
std::uint64_t stable_hash(std::string_view label);

}  // namespace stochdom
