#include "unicl/spectral.hpp"

#include <algorithm>
#include <cmath>

#include "unicl/errors.hpp"
#include "unicl/fft.hpp"

namespace unicl {

Spectrum amplitude_spectrum(std::span<const double> x) {
  if (x.size() < 2) throw DimensionError("amplitude_spectrum: need T >= 2");
  return Spectrum{fft::half_amplitudes(x), x.size()};
}

double spectral_distance(std::span<const double> x, std::span<const double> z) {
  if (x.size() != z.size())
    throw DimensionError("spectral_distance: length mismatch");
  const Vec ax = fft::half_amplitudes(x);
  const Vec az = fft::half_amplitudes(z);
  double s = 0.0;
  for (std::size_t k = 0; k < ax.size(); ++k) {
    const double d = ax[k] - az[k];
    s += d * d;
  }
  return s;
}

Vec softmax(std::span<const double> v, double temp) {
  Vec out(v.size());
  double mx = -1e300;
  for (double e : v) mx = std::max(mx, e / temp);
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] / temp - mx);
    sum += out[i];
  }
  for (double& e : out) e /= sum;
  return out;
}

Vec spectrum_pmf(std::span<const double> x, double tau) {
  if (tau <= 0.0) throw ConfigError("spectrum_pmf: tau must be positive");
  return softmax(fft::half_amplitudes(x), tau);
}

DecayVector make_decay(std::size_t half_len, double gamma) {
  if (half_len < 1) throw DimensionError("make_decay: half_len must be >= 1");
  DecayVector d;
  d.rate = gamma;
  d.alpha.resize(half_len);
  for (std::size_t k = 0; k < half_len; ++k)
    d.alpha[k] = std::exp(-gamma * static_cast<double>(k) /
                          static_cast<double>(half_len));
  return d;
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) js += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) js += 0.5 * q[i] * std::log(q[i] / m);
  }
  return js;
}

double weighted_js(std::span<const double> p, std::span<const double> q,
                   const DecayVector& alpha) {
  if (p.size() != q.size() || p.size() != alpha.alpha.size())
    throw DimensionError("weighted_js: length mismatch");
  Vec wp(p.size()), wq(q.size());
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    wp[i] = alpha.alpha[i] * p[i];
    wq[i] = alpha.alpha[i] * q[i];
    sp += wp[i];
    sq += wq[i];
  }
  if (sp <= 0.0 || sq <= 0.0)
    throw NumericError("weighted_js: zero total mass after weighting");
  for (std::size_t i = 0; i < p.size(); ++i) {
    wp[i] /= sp;
    wq[i] /= sq;
  }
  return js_divergence(wp, wq);
}

Vec extract_low_freq(std::span<const double> x, std::size_t count) {
  const std::size_t n = x.size();
  if (n < 2) throw DimensionError("extract_low_freq: need T >= 2");
  if (count > n / 2)
    throw DimensionError("extract_low_freq: count exceeds floor(T/2)");
  fft::Cvec spec = fft::dft_real(x);
  // Keep DC and the `count` lowest conjugate pairs, zero the rest. The
  // Nyquist bin (T even, count = T/2) has no conjugate partner and enters
  // once.
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t mirror = (n - k) % n;
    const bool keep = k == 0 || k <= count || mirror <= count;
    if (!keep) spec[k] = {0.0, 0.0};
  }
  fft::Cvec back = fft::idft_unnormalized(spec);
  Vec out(n);
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t t = 0; t < n; ++t) out[t] = back[t].real() * inv;
  return out;
}

}  // namespace unicl
