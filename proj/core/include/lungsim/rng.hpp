#pragma once

#include <cstdint>

// Deterministic, platform-independent random streams. Standard-library
// distributions are implementation-defined, so uniform doubles are built
// from raw 64-bit output directly. Streams are keyed by (seed, id, tag) so
// per-element draws do not depend on evaluation order.

namespace lungsim::rng {

inline constexpr std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Stream {
 public:
  Stream(std::uint64_t seed, std::uint64_t id, std::uint64_t tag) {
    // Mix the three keys through two rounds so that nearby ids decorrelate.
    std::uint64_t s = seed;
    state_ = splitmix64(s) ^ (id * 0xd1342543de82ef95ull);
    state_ ^= splitmix64(state_) + (tag * 0x2545f4914f6cdd1dull);
    (void)next();
  }

  std::uint64_t next() { return splitmix64(state_); }

  // Uniform in [0, 1).
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; used where 1/u must stay finite.
  double uniform01_open_low() { return 1.0 - uniform01(); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

 private:
  std::uint64_t state_;
};

}  // namespace lungsim::rng
