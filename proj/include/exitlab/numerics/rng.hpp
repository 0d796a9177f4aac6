#pragma once

#include <cstdint>
#include <string_view>

namespace exitlab {

// 64-bit FNV-1a; used to derive stream keys from parameter names.
std::uint64_t fnv1a64(std::string_view text, std::uint64_t basis = 0xcbf29ce484222325ULL);

std::uint64_t splitmix64(std::uint64_t x);

// Counter-based generator: the i-th draw is a pure function of (key, i), so a
// stream derived from (seed, name) never depends on what other streams drew.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}
  CounterRng(std::uint64_t seed, std::string_view stream_name)
      : key_(splitmix64(seed ^ fnv1a64(stream_name))) {}

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller (no cached second value, keeps draws
  // a function of the counter alone).
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace exitlab
