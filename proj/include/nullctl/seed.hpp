#pragma once

/// Seed derivation and a portable random stream.

#include <cstdint>
#include <random>
#include <string_view>

namespace nullctl {

/// child = splitmix64(master XOR fnv1a64(label)), then one more splitmix64
/// round over the result combined with the label length. Stable across
/// platforms and releases; rerunning with the same master reproduces every
/// child. Throws ValidationError on an empty label.
std::uint64_t seed_split(std::uint64_t master, std::string_view label);

std::uint64_t fnv1a64(std::string_view bytes);

/// mt19937_64 plus distribution code written out here, so streams do not
/// depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace nullctl
