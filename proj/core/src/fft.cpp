#include "unicl/fft.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>

namespace unicl::fft {

namespace {

constexpr double kPi = std::numbers::pi;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place iterative radix-2, size must be a power of two.
void fft_pow2(Cvec& a, bool conjugate) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / static_cast<double>(len) * (conjugate ? 1.0 : -1.0);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const auto u = a[i + j];
        const auto v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// Chirp factor exp(sign * i * pi * m^2 / n), with m^2 reduced mod 2n to keep
// the angle small.
std::complex<double> chirp(std::uint64_t m, std::uint64_t n, double sign) {
  const std::uint64_t r = (m * m) % (2 * n);
  const double ang = sign * kPi * static_cast<double>(r) / static_cast<double>(n);
  return {std::cos(ang), std::sin(ang)};
}

Cvec bluestein(const Cvec& x) {
  const std::size_t n = x.size();
  const std::size_t L = next_pow2(2 * n - 1);

  Cvec a(L), b(L);
  for (std::size_t t = 0; t < n; ++t) a[t] = x[t] * chirp(t, n, -1.0);
  b[0] = chirp(0, n, 1.0);
  for (std::size_t m = 1; m < n; ++m) b[m] = b[L - m] = chirp(m, n, 1.0);

  fft_pow2(a, false);
  fft_pow2(b, false);
  for (std::size_t i = 0; i < L; ++i) a[i] *= b[i];
  fft_pow2(a, true);

  Cvec out(n);
  const double inv = 1.0 / static_cast<double>(L);
  for (std::size_t k = 0; k < n; ++k) out[k] = a[k] * inv * chirp(k, n, -1.0);
  return out;
}

}  // namespace

Cvec dft(const Cvec& x) {
  const std::size_t n = x.size();
  if (n <= 1) return x;
  if (is_pow2(n)) {
    Cvec a = x;
    fft_pow2(a, false);
    return a;
  }
  return bluestein(x);
}

Cvec idft_unnormalized(const Cvec& x) {
  Cvec c(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) c[i] = std::conj(x[i]);
  Cvec y = dft(c);
  for (auto& v : y) v = std::conj(v);
  return y;
}

Cvec dft_real(std::span<const double> x) {
  Cvec c(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) c[i] = {x[i], 0.0};
  return dft(c);
}

std::vector<double> half_amplitudes(std::span<const double> x) {
  const Cvec spec = dft_real(x);
  const std::size_t half = x.size() / 2;
  std::vector<double> amps(half);
  for (std::size_t k = 1; k <= half; ++k) amps[k - 1] = std::abs(spec[k]);
  return amps;
}

}  // namespace unicl::fft
