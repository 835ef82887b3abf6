#pragma once

// Counter-based random streams (Philox4x32-10). A stream is identified by
// (seed, purpose tag, index) and is a pure function of that triple, so
// sample paths can be generated in any order or on any number of threads.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace rbdsde {

enum class StreamTag : std::uint32_t {
  kForwardB = 0x42,
  kBackwardW = 0x57,
  kStartLaw = 0x53,
  kSampling = 0x5a,
  kProperty = 0x50,
};

class PhiloxStream {
 public:
  PhiloxStream(std::uint64_t seed, StreamTag tag, std::uint64_t index) {
    const std::uint64_t k = mix(seed ^ (static_cast<std::uint64_t>(tag) * 0x9e3779b97f4a7c15ULL));
    key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
    counter_ = {static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0u, 0u};
  }

  std::uint32_t next_u32() {
    if (pos_ == 4) {
      block_ = philox(counter_, key_);
      if (++counter_[2] == 0) ++counter_[3];
      pos_ = 0;
    }
    return block_[pos_++];
  }

  /// Uniform on the open interval (0, 1) with 53 bits of resolution.
  double uniform() {
    const std::uint64_t hi = next_u32() >> 5;  // 27 bits
    const std::uint64_t lo = next_u32() >> 6;  // 26 bits
    return (static_cast<double>((hi << 26) | lo) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal by Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Gamma(shape, 1) by Marsaglia-Tsang.
  double gamma(double shape) {
    if (shape < 1.0) return gamma(shape + 1.0) * std::pow(uniform(), 1.0 / shape);
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

 private:
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static Block philox(Block ctr, Key key) {
    constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
    constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
      key[0] += kW0;
      key[1] += kW1;
    }
    return ctr;
  }

  Key key_{};
  Block counter_{};
  Block block_{};
  int pos_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rbdsde
