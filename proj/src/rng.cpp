#include "stochdom/rng.hpp"

namespace stochdom {

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  const std::uint64_t mixed = splitmix64(splitmix64(seed) ^ splitmix64(~stream));
  std::seed_seq seq{static_cast<std::uint32_t>(mixed),
                    static_cast<std::uint32_t>(mixed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

std::uint64_t stable_hash(std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace stochdom
