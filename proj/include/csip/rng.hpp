#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <string_view>

namespace csip {

// Deterministic, platform-independent random streams.  splitmix64 core with
// stream derivation from (seed, tag) so independent call sites never share or
// reorder draws.  No std:: distributions: those are implementation-defined and
// would break bit-identical reproducibility across toolchains.
class RngStream {
public:
  explicit RngStream(std::uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ull) {}

  static RngStream derive(std::uint64_t seed, std::string_view tag) {
    // FNV-1a over the tag, mixed with the seed through one splitmix round.
    std::uint64_t h = 1469598103934665603ull;
    for (char c : tag) {
      h ^= static_cast<std::uint8_t>(c);
      h *= 1099511628211ull;
    }
    RngStream r(seed);
    r.state_ += h;
    r.next_u64();
    return r;
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1) with 53-bit mantissa.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * next_double(); }

  std::uint64_t next_below(std::uint64_t n) {
    // Rejection-free is unnecessary here; modulo bias at n << 2^64 is ~1e-15.
    return next_u64() % n;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_double(), u2 = next_double();
    while (u1 <= 1e-300) u1 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  std::complex<double> normal_complex() { return {normal(), normal()}; }

  // Uniform on the closed unit disk.
  std::complex<double> unit_disk() {
    double r = std::sqrt(next_double());
    double a = 6.283185307179586476925286766559 * next_double();
    return {r * std::cos(a), r * std::sin(a)};
  }

private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

} // namespace csip
