#include "copnet/rng.hpp"

#include <cmath>

#include "copnet/common.hpp"

namespace copnet {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

RngState::RngState(std::uint64_t seed) : seed_(seed), key_(mix64(seed + kGolden)) {}

RngState::RngState(std::uint64_t key, int) : seed_(key), key_(key) {}

RngState RngState::split(std::string_view label) const {
  return RngState(mix64(key_ ^ fnv1a(label)), 0);
}

RngState RngState::split(std::string_view label, std::uint64_t index) const {
  return RngState(mix64((key_ ^ fnv1a(label)) + index * kGolden), 0);
}

std::uint64_t RngState::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double RngState::uniform() {
  // 53-bit mantissa shifted into (0, 1): min 2^-54, max 1 - 2^-54.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t RngState::uniform_int(std::uint64_t bound) {
  if (bound == 0) throw ContractError("uniform_int: bound must be positive");
  return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(next_u64()) * bound) >> 64);
}

double RngState::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double RngState::gumbel() { return -std::log(-std::log(uniform())); }

}  // namespace copnet
