// Copyright 2026 The fdnfit Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Octave-band room-acoustic parameters: Schroeder energy decay, T30, C50 and
// the reference/estimate comparison statistics.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fdnfit/common.hpp"
#include "fdnfit/geq.hpp"

namespace fdnfit {

struct OctaveBandSet {
  std::vector<double> centers_hz{125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0};
  double edge_ratio = 1.4142135623730951;

  std::size_t size() const noexcept { return centers_hz.size(); }
  double lower_edge(std::size_t b) const { return centers_hz[b] / edge_ratio; }
  double upper_edge(std::size_t b) const { return centers_hz[b] * edge_ratio; }

  void validate(double fs) const {
    for (std::size_t b = 0; b < size(); ++b)
      if (!(lower_edge(b) > 0.0 && upper_edge(b) < 0.5 * fs))
        throw ConfigurationError("octave band " + std::to_string(centers_hz[b]) +
                                 " Hz does not fit below Nyquist");
  }
};

// ---------------------------------------------------------------------------
// Octave filterbank
// ---------------------------------------------------------------------------

/// 4th-order Butterworth bandpass (2nd-order lowpass prototype), as two
/// biquads with zeros at z = 1 and z = -1. Edges are prewarped, so the gain
/// is exactly -3 dB at f_lo and f_hi and 0 dB at the mapped center.
inline std::array<BiquadCoeffs<double>, 2> butterworth_bandpass(double f_lo, double f_hi, double fs) {
  using C = std::complex<double>;
  const double wl = 2.0 * fs * std::tan(kPi * f_lo / fs);
  const double wh = 2.0 * fs * std::tan(kPi * f_hi / fs);
  const double bw = wh - wl;
  const double w0sq = wl * wh;
  std::array<BiquadCoeffs<double>, 2> out{};
  const C proto[2] = {C(-1.0, 1.0) / std::sqrt(2.0), C(-1.0, -1.0) / std::sqrt(2.0)};
  for (int i = 0; i < 2; ++i) {
    // s^2 - p bw s + w0^2 = 0; keep the root in the upper half plane so each
    // section gets one conjugate pair after the real-coefficient fold.
    const C p = proto[i] * bw;
    const C disc = std::sqrt(p * p - 4.0 * w0sq);
    const C s = (p + disc) / 2.0;
    const C s_alt = (p - disc) / 2.0;
    const C pole_s = i == 0 ? s : s_alt;
    const C z = (2.0 * fs + pole_s) / (2.0 * fs - pole_s);
    out[i] = {1.0, 0.0, -1.0, 1.0, -2.0 * z.real(), std::norm(z)};
  }
  // Unit magnitude at the image of the analog center sqrt(wl wh).
  const double wc = 2.0 * std::atan(std::sqrt(w0sq) / (2.0 * fs));
  const C e1 = std::polar(1.0, -wc), e2 = e1 * e1;
  C h(1.0, 0.0);
  for (const auto& c : out) h *= section_response(c, e1, e2);
  const double g = 1.0 / std::sqrt(std::abs(h));
  for (auto& c : out) {
    c.b0 *= g;
    c.b2 *= g;
  }
  return out;
}

/// Zero-phase (forward-backward) filtering with zero padding on both sides.
inline std::vector<double> filtfilt(const std::array<BiquadCoeffs<double>, 2>& sections,
                                    std::span<const double> x, std::size_t pad) {
  std::vector<double> y(x.size() + 2 * pad, 0.0);
  std::copy(x.begin(), x.end(), y.begin() + static_cast<std::ptrdiff_t>(pad));
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& c : sections) {
      Biquad bq(c);
      for (double& v : y) v = bq.process(v);
    }
    std::reverse(y.begin(), y.end());
  }
  return {y.begin() + static_cast<std::ptrdiff_t>(pad),
          y.begin() + static_cast<std::ptrdiff_t>(pad + x.size())};
}

inline std::vector<AudioBuffer> octave_filterbank(const AudioBuffer& h, const OctaveBandSet& bands = {}) {
  bands.validate(h.sample_rate);
  std::vector<AudioBuffer> out;
  for (std::size_t b = 0; b < bands.size(); ++b) {
    const double lo = bands.lower_edge(b), hi = bands.upper_edge(b);
    const auto sections = butterworth_bandpass(lo, hi, h.sample_rate);
    // Long enough for the lowest band's ringing to die out.
    const auto pad = static_cast<std::size_t>(std::ceil(20.0 * h.sample_rate / lo));
    out.emplace_back(filtfilt(sections, h.samples, pad), h.sample_rate);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decay and clarity
// ---------------------------------------------------------------------------

/// Schroeder backward integral in dB, 0 dB at t = 0.
inline std::vector<double> schroeder_edc(std::span<const double> h) {
  std::vector<double> edc(h.size());
  long double acc = 0.0L;
  for (std::size_t i = h.size(); i-- > 0;) {
    acc += static_cast<long double>(h[i]) * h[i];
    edc[i] = static_cast<double>(acc);
  }
  const double total = edc.empty() ? 0.0 : edc[0];
  if (!(total > 0.0)) throw UndefinedMetric("energy decay curve of a zero-energy signal");
  for (double& v : edc) v = v > 0.0 ? 10.0 * std::log10(v / total) : -std::numeric_limits<double>::infinity();
  return edc;
}

/// Least-squares line through the EDC between -5 and -35 dB; -60 / slope.
inline double estimate_t30(std::span<const double> edc, double fs = kSampleRate) {
  constexpr double kUpper = -5.0, kLower = -35.0;
  std::size_t first = edc.size(), last = edc.size();
  for (std::size_t i = 0; i < edc.size(); ++i)
    if (edc[i] <= kUpper) {
      first = i;
      break;
    }
  for (std::size_t i = first; i < edc.size(); ++i)
    if (edc[i] < kLower) {
      last = i;
      break;
    }
  if (first >= edc.size() || last >= edc.size())
    throw InsufficientDecay("energy decay curve does not reach -35 dB");
  const std::size_t n = last - first;
  if (n < 2) throw InsufficientDecay("too few samples in the -5..-35 dB range");
  double st = 0.0, sy = 0.0;
  for (std::size_t i = first; i < last; ++i) {
    st += static_cast<double>(i);
    sy += edc[i];
  }
  const double mt = st / static_cast<double>(n), my = sy / static_cast<double>(n);
  double stt = 0.0, sty = 0.0;
  for (std::size_t i = first; i < last; ++i) {
    const double dt = static_cast<double>(i) - mt;
    stt += dt * dt;
    sty += dt * (edc[i] - my);
  }
  const double slope_per_s = sty / stt * fs;
  if (!(slope_per_s < 0.0)) throw InsufficientDecay("energy decay curve is not decaying");
  return -60.0 / slope_per_s;
}

struct ClarityResult {
  double db = 0.0;
  bool infinite = false;  // no energy after 50 ms
};

/// 10 log10(early / late) with the 50 ms boundary.
inline ClarityResult estimate_c50(std::span<const double> h, double fs = kSampleRate) {
  const auto split = static_cast<std::size_t>(std::lround(0.05 * fs));
  if (h.size() <= split) throw UndefinedMetric("C50 needs more than 50 ms of signal");
  const double early = energy(h.first(split));
  const double late = energy(h.subspan(split));
  if (late == 0.0) {
    if (early == 0.0) throw UndefinedMetric("C50 of a zero-energy signal");
    return {std::numeric_limits<double>::infinity(), true};
  }
  if (early == 0.0) return {-std::numeric_limits<double>::infinity(), false};
  return {10.0 * std::log10(early / late), false};
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

struct Correlation {
  double value = std::numeric_limits<double>::quiet_NaN();
  bool zero_variance = false;
  bool undefined = false;
};

/// Pearson correlation clamped to [-1, 1]. Constant inputs give 1.0 with the
/// zero-variance flag when the vectors are equal, otherwise undefined.
inline Correlation pearson(std::span<const double> x, std::span<const double> y) {
  Correlation r;
  if (x.size() != y.size() || x.size() < 2) {
    r.undefined = true;
    return r;
  }
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    r.zero_variance = true;
    if (std::equal(x.begin(), x.end(), y.begin())) {
      r.value = 1.0;
    } else {
      r.undefined = true;
    }
    return r;
  }
  r.value = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  return r;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct BandMetrics {
  double center_hz = 0.0;
  std::optional<double> t30_ref, t30_est;  // seconds; empty when insufficient decay
  ClarityResult c50_ref, c50_est;
  bool t30_valid() const { return t30_ref.has_value() && t30_est.has_value(); }
  bool c50_valid() const { return !c50_ref.infinite && !c50_est.infinite &&
                                  std::isfinite(c50_ref.db) && std::isfinite(c50_est.db); }
};

struct AcousticReport {
  std::vector<BandMetrics> bands;
  double t30_mape_percent = std::numeric_limits<double>::quiet_NaN();
  double c50_mae_db = std::numeric_limits<double>::quiet_NaN();
  Correlation t30_pcc, c50_pcc;
  std::vector<std::string> flags;

  std::size_t valid_t30_bands() const {
    return static_cast<std::size_t>(std::count_if(bands.begin(), bands.end(),
                                                  [](const BandMetrics& b) { return b.t30_valid(); }));
  }
};

struct BandAnalysis {
  std::optional<double> t30;
  ClarityResult c50;
};

inline std::vector<BandAnalysis> analyze_bands(const AudioBuffer& h, const OctaveBandSet& bands = {}) {
  std::vector<BandAnalysis> out;
  for (const auto& band : octave_filterbank(h, bands)) {
    BandAnalysis a;
    try {
      a.t30 = estimate_t30(schroeder_edc(band.samples), h.sample_rate);
    } catch (const UndefinedMetric&) {
    }
    try {
      a.c50 = estimate_c50(band.samples, h.sample_rate);
    } catch (const UndefinedMetric&) {
      a.c50.infinite = true;
    }
    out.push_back(a);
  }
  return out;
}

/// Per-band T30 and C50 of both responses and their MAPE / MAE / PCC. Bands
/// where either response lacks the decay range are excluded and flagged.
inline AcousticReport compare_metrics(const AudioBuffer& ref, const AudioBuffer& est,
                                      const OctaveBandSet& bands = {}) {
  const auto ra = analyze_bands(ref, bands);
  const auto ea = analyze_bands(est, bands);
  AcousticReport rep;
  std::vector<double> t_ref, t_est, c_ref, c_est;
  double ape = 0.0, ae = 0.0;
  for (std::size_t b = 0; b < bands.size(); ++b) {
    BandMetrics m;
    m.center_hz = bands.centers_hz[b];
    m.t30_ref = ra[b].t30;
    m.t30_est = ea[b].t30;
    m.c50_ref = ra[b].c50;
    m.c50_est = ea[b].c50;
    const std::string tag = std::to_string(static_cast<long>(m.center_hz)) + " Hz";
    if (m.t30_valid()) {
      t_ref.push_back(*m.t30_ref);
      t_est.push_back(*m.t30_est);
      ape += std::abs(*m.t30_est - *m.t30_ref) / *m.t30_ref;
    } else {
      rep.flags.push_back("insufficient_decay:" + tag);
    }
    if (m.c50_valid()) {
      c_ref.push_back(m.c50_ref.db);
      c_est.push_back(m.c50_est.db);
      ae += std::abs(m.c50_est.db - m.c50_ref.db);
    } else {
      rep.flags.push_back("c50_undefined:" + tag);
    }
    rep.bands.push_back(m);
  }
  if (!t_ref.empty()) rep.t30_mape_percent = 100.0 * ape / static_cast<double>(t_ref.size());
  if (!c_ref.empty()) rep.c50_mae_db = ae / static_cast<double>(c_ref.size());
  rep.t30_pcc = pearson(t_ref, t_est);
  rep.c50_pcc = pearson(c_ref, c_est);
  if (rep.t30_pcc.zero_variance) rep.flags.push_back("t30_pcc_zero_variance");
  if (rep.c50_pcc.zero_variance) rep.flags.push_back("c50_pcc_zero_variance");
  if (rep.t30_pcc.undefined) rep.flags.push_back("t30_pcc_undefined");
  if (rep.c50_pcc.undefined) rep.flags.push_back("c50_pcc_undefined");
  return rep;
}

}  // namespace fdnfit
