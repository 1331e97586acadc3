#pragma once

#include <complex>
#include <span>
#include <vector>

namespace unicl::fft {

using Cvec = std::vector<std::complex<double>>;

// Forward transform, any length n >= 1:
//   X[k] = sum_t x[t] * exp(-2*pi*i*k*t/n)
// Radix-2 Cooley-Tukey for powers of two, Bluestein otherwise, so every
// length runs in O(n log n).
Cvec dft(const Cvec& x);

// Unnormalized inverse: sum_k X[k] * exp(+2*pi*i*k*t/n). Divide by n to
// invert dft().
Cvec idft_unnormalized(const Cvec& x);

Cvec dft_real(std::span<const double> x);

// |X[k]| for k = 1 .. floor(n/2) (zero frequency removed, conjugate half
// dropped).
std::vector<double> half_amplitudes(std::span<const double> x);

}  // namespace unicl::fft
