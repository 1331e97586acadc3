#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "unicl/tensor.hpp"

namespace unicl {

// Amplitude spectrum |F(x)| over the first half of the DFT, zero frequency
// removed: length floor(T/2).
struct Spectrum {
  Vec amplitudes;
  std::size_t source_length = 0;
};

// Frequency-decay weights for the diversity loss. alpha[0] = 1 and alpha is
// non-increasing: alpha_k = exp(-gamma * (k-1) / half_len).
struct DecayVector {
  Vec alpha;
  double rate = 0.0;
};

Spectrum amplitude_spectrum(std::span<const double> x);

// Squared L2 distance between the amplitude spectra of two equal-length
// series.
double spectral_distance(std::span<const double> x, std::span<const double> z);

// Softmax(|F(x)| / tau); entries sum to one.
Vec spectrum_pmf(std::span<const double> x, double tau);

DecayVector make_decay(std::size_t half_len, double gamma);

// Jensen-Shannon divergence (natural log) between the renormalized
// decay-weighted PMFs; result lies in [0, ln 2].
double weighted_js(std::span<const double> p, std::span<const double> q,
                   const DecayVector& alpha);

// Time-domain reconstruction of the DC component plus the `count` lowest
// frequency components of x. Linear in x.
Vec extract_low_freq(std::span<const double> x, std::size_t count);

// Helpers shared with the differentiable loss path.
Vec softmax(std::span<const double> v, double temp);
double js_divergence(std::span<const double> p, std::span<const double> q);

}  // namespace unicl
