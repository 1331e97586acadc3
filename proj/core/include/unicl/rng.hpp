#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace unicl {

// SplitMix64: tiny, fast, and fully portable. Used for every random draw in
// the library so artifacts are bit-reproducible across runs and platforms
// (std::normal_distribution is implementation-defined, so it is avoided).
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in (0, 1].
  double next_unit() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double next_range(double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
};

// Standard normal via Box-Muller on top of SplitMix64.
class GaussianRng {
 public:
  explicit GaussianRng(std::uint64_t seed) : u_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = u_.next_unit();
    const double u2 = u_.next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  SplitMix64 u_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Deterministic derivation of sub-stream seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  SplitMix64 s(seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
  return s.next_u64();
}

}  // namespace unicl
