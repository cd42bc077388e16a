#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>

#include "pint/errors.hpp"

namespace pint {

// Counter-based generator: the i-th draw is a pure function of (key, i).
// split() derives independent child streams, so any component of an
// experiment can be replayed from the root seed plus a path of stream ids.
class CounterRng {
 public:
  CounterRng() = default;
  explicit CounterRng(std::uint64_t seed) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}
  CounterRng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  std::uint64_t next_u64() { return mix(key_ + mix(counter_++ + 0x9e3779b97f4a7c15ULL)); }

  // Uniform in [0, 1), 53 bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ContractError("CounterRng::below: n must be positive");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  // Uniform integer in [lo, hi].
  std::int64_t between(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  // Standard normal via Box-Muller; uses exactly two draws per call.
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  [[nodiscard]] CounterRng split(std::uint64_t stream) const {
    return CounterRng(mix(key_ ^ mix(stream + 0xbb67ae8584caa73bULL)), 0);
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  std::string to_hex() const {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%016llx:%016llx", static_cast<unsigned long long>(key_),
                  static_cast<unsigned long long>(counter_));
    return buf;
  }

  static CounterRng from_hex(const std::string& s) {
    unsigned long long k = 0, c = 0;
    if (std::sscanf(s.c_str(), "%16llx:%16llx", &k, &c) != 2)
      throw FormatError("bad rng state '" + s + "'");
    return CounterRng(k, c);
  }

  bool operator==(const CounterRng&) const = default;

 private:
  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace pint
