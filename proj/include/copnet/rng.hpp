#pragma once

#include <cstdint>
#include <string_view>

namespace copnet {

// Counter-based deterministic random stream. The stream is a pure function of
// (key, counter), so identical seeds and call sequences reproduce bit-identical
// output on every platform. Child streams made by split() depend only on the
// parent key and the label, never on how far the parent has advanced.
class RngState {
 public:
  explicit RngState(std::uint64_t seed);

  // Independent child stream derived from a label.
  RngState split(std::string_view label) const;
  // Indexed variant for families of streams (per epoch, per cell, ...).
  RngState split(std::string_view label, std::uint64_t index) const;

  std::uint64_t next_u64();

  // Uniform on (0, 1), both endpoints excluded.
  double uniform();
  // Uniform integer in [0, bound); bound must be positive.
  std::uint64_t uniform_int(std::uint64_t bound);
  // Standard normal via Box-Muller (two uniforms per draw, no caching).
  double normal();
  // Standard Gumbel(0,1): -log(-log(u)).
  double gumbel();

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  RngState(std::uint64_t key, int);  // internal: key already mixed

  std::uint64_t seed_ = 0;     // as given by the user (for reporting)
  std::uint64_t key_ = 0;      // mixed stream key
  std::uint64_t counter_ = 0;  // draws consumed
};

}  // namespace copnet
