// Copyright 2026 The fdnfit Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// One-octave graphic equalizer built from second-order sections:
// a low shelf, nine peaking stages and a high shelf (J = 11). Command gains
// are assigned directly to the section gains; the dc gain stage is 0 dB.

#pragma once

#include <array>
#include <complex>
#include <span>
#include <vector>

#include "fdnfit/common.hpp"

namespace fdnfit {


enum class SectionKind { LowShelf, Peaking, HighShelf };

struct SectionSpec {
  SectionKind kind;
  double freq_hz;
  double q;  // peaking quality factor; unused by shelves
};

struct GeqDesign {
  static constexpr std::size_t kStages = 11;

  double sample_rate = kSampleRate;
  std::array<double, 9> peaking_centers{62.5, 125.0, 250.0, 500.0, 1000.0,
                                        2000.0, 4000.0, 8000.0, 16000.0};
  double low_shelf_hz = 44.0;
  double high_shelf_hz = 22600.0;
  double peaking_q = 1.4142135623730951;  // one-octave bandwidth

  std::size_t stage_count() const noexcept { return kStages; }

  /// Stage order: low shelf, peaking stages (ascending), high shelf.
  std::vector<SectionSpec> sections() const {
    std::vector<SectionSpec> s;
    s.reserve(kStages);
    s.push_back({SectionKind::LowShelf, low_shelf_hz, 0.0});
    for (double fc : peaking_centers) s.push_back({SectionKind::Peaking, fc, peaking_q});
    s.push_back({SectionKind::HighShelf, high_shelf_hz, 0.0});
    return s;
  }

  void validate() const {
    const double nyq = 0.5 * sample_rate;
    auto check = [nyq](double f) {
      if (!(f > 0.0 && f < nyq))
        throw ConfigurationError("GEQ frequency " + std::to_string(f) +
                                 " Hz outside (0, Nyquist)");
    };
    check(low_shelf_hz);
    check(high_shelf_hz);
    double prev = 0.0;
    for (double f : peaking_centers) {
      check(f);
      if (f <= prev) throw ConfigurationError("GEQ peaking centers must increase");
      prev = f;
    }
    if (!(peaking_q > 0.0)) throw ConfigurationError("GEQ peaking Q must be positive");
  }
};

// ---------------------------------------------------------------------------
// Section coefficients
// ---------------------------------------------------------------------------

/// Value with one forward-mode derivative; enough to differentiate the
/// section coefficients with respect to the command gain.
struct Dual {
  double v = 0.0;
  double d = 0.0;
};
inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator/(Dual a, Dual b) {
  return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)};
}
inline Dual operator*(double s, Dual a) { return {s * a.v, s * a.d}; }
inline Dual operator+(Dual a, double s) { return {a.v + s, a.d}; }
inline Dual operator-(Dual a, double s) { return {a.v - s, a.d}; }
inline Dual sqrt(Dual a) {
  const double r = std::sqrt(a.v);
  return {r, a.d / (2.0 * r)};
}

template <class T>
struct BiquadCoeffs {
  T b0, b1, b2, a0, a1, a2;
};

/// Audio-EQ-cookbook section with linear amplitude `amp` = 10^(gain_db/40).
/// Shelves use slope 1, which keeps cut-only shelves monotone.
template <class T>
BiquadCoeffs<T> section_coeffs(const SectionSpec& spec, double fs, T amp) {
  using std::sqrt;
  const double w0 = 2.0 * kPi * spec.freq_hz / fs;
  const double cw = std::cos(w0);
  const double sw = std::sin(w0);
  switch (spec.kind) {
    case SectionKind::Peaking: {
      const double alpha = sw / (2.0 * spec.q);
      T aa = alpha * amp;
      T ad = alpha * (T{1.0} / amp);
      return {aa + 1.0, T{-2.0 * cw}, T{1.0} - aa, ad + 1.0, T{-2.0 * cw}, T{1.0} - ad};
    }
    case SectionKind::LowShelf: {
      const double alpha = sw / std::sqrt(2.0);
      T sq = 2.0 * alpha * sqrt(amp);
      T ap = amp + 1.0, am = amp - 1.0;
      return {amp * (ap - cw * am + sq), 2.0 * (amp * (am - cw * ap)),
              amp * (ap - cw * am - sq), ap + cw * am + sq,
              -2.0 * (am + cw * ap), ap + cw * am - sq};
    }
    case SectionKind::HighShelf: {
      const double alpha = sw / std::sqrt(2.0);
      T sq = 2.0 * alpha * sqrt(amp);
      T ap = amp + 1.0, am = amp - 1.0;
      return {amp * (ap + cw * am + sq), -2.0 * (amp * (am + cw * ap)),
              amp * (ap + cw * am - sq), ap - cw * am + sq,
              2.0 * (am - cw * ap), ap - cw * am - sq};
    }
  }
  throw std::logic_error("unknown section kind");
}

// Mixed double/Dual helpers used by section_coeffs<Dual>.
inline Dual operator*(Dual a, double s) { return {a.v * s, a.d * s}; }
inline Dual operator-(double s, Dual a) { return {s - a.v, -a.d}; }
inline Dual operator+(double s, Dual a) { return {s + a.v, a.d}; }

inline double gain_db_to_amp(double gain_db) { return std::pow(10.0, gain_db / 40.0); }

/// Section coefficients and their derivatives with respect to gain in dB.
inline BiquadCoeffs<Dual> section_coeffs_with_gain_derivative(const SectionSpec& spec,
                                                              double fs, double gain_db) {
  const double amp = gain_db_to_amp(gain_db);
  return section_coeffs(spec, fs, Dual{amp, amp * std::log(10.0) / 40.0});
}

/// N(z)/D(z) at z^-1 = e1, z^-2 = e2.
template <class T>
cplx section_response(const BiquadCoeffs<T>& c, cplx e1, cplx e2);

template <>
inline cplx section_response(const BiquadCoeffs<double>& c, cplx e1, cplx e2) {
  const cplx num = c.b0 + c.b1 * e1 + c.b2 * e2;
  const cplx den = c.a0 + c.a1 * e1 + c.a2 * e2;
  return num / den;
}

/// Response and d(response)/d(gain_db) of a section whose coefficients were
/// produced by section_coeffs_with_gain_derivative.
inline std::pair<cplx, cplx> section_response_and_derivative(const BiquadCoeffs<Dual>& c,
                                                             cplx e1, cplx e2) {
  const cplx num = c.b0.v + c.b1.v * e1 + c.b2.v * e2;
  const cplx den = c.a0.v + c.a1.v * e1 + c.a2.v * e2;
  const cplx dnum = c.b0.d + c.b1.d * e1 + c.b2.d * e2;
  const cplx dden = c.a0.d + c.a1.d * e1 + c.a2.d * e2;
  const cplx inv = 1.0 / den;
  const cplx h = num * inv;
  return {h, (dnum - h * dden) * inv};
}

inline BiquadCoeffs<double> values(const BiquadCoeffs<Dual>& c) {
  return {c.b0.v, c.b1.v, c.b2.v, c.a0.v, c.a1.v, c.a2.v};
}

// ---------------------------------------------------------------------------
// Frequency response
// ---------------------------------------------------------------------------

/// Complex response of the full GEQ (product of all sections, dc stage 0 dB)
/// at each frequency of `freq_grid` (Hz). Sections with exactly 0 dB gain are
/// the identity.
inline std::vector<cplx> geq_response(const GeqDesign& design,
                                      std::span<const double> command_gains_db,
                                      std::span<const double> freq_grid) {
  const auto specs = design.sections();
  if (command_gains_db.size() != specs.size())
    throw InvalidParameter("geq_response: expected " + std::to_string(specs.size()) +
                           " command gains");
  if (!all_finite(command_gains_db)) throw InvalidParameter("geq_response: non-finite gain");
  std::vector<BiquadCoeffs<double>> coeffs;
  for (std::size_t j = 0; j < specs.size(); ++j)
    coeffs.push_back(section_coeffs(specs[j], design.sample_rate,
                                    gain_db_to_amp(command_gains_db[j])));
  std::vector<cplx> out(freq_grid.size(), cplx(1.0, 0.0));
  for (std::size_t k = 0; k < freq_grid.size(); ++k) {
    const double w = 2.0 * kPi * freq_grid[k] / design.sample_rate;
    const cplx e1 = std::polar(1.0, -w);
    const cplx e2 = e1 * e1;
    cplx h(1.0, 0.0);
    for (std::size_t j = 0; j < specs.size(); ++j) {
      if (command_gains_db[j] == 0.0) continue;
      h *= section_response(coeffs[j], e1, e2);
    }
    out[k] = h;
  }
  return out;
}

/// Frequencies (Hz) of the k = 0..M/2 bins of an M-point DFT.
inline std::vector<double> dft_bin_frequencies(std::size_t fft_length, double fs) {
  std::vector<double> f(fft_length / 2 + 1);
  for (std::size_t k = 0; k < f.size(); ++k)
    f[k] = fs * static_cast<double>(k) / static_cast<double>(fft_length);
  return f;
}

// ---------------------------------------------------------------------------
// Time-domain realization
// ---------------------------------------------------------------------------

/// Transposed direct-form II biquad.
class Biquad {
 public:
  Biquad() = default;
  explicit Biquad(const BiquadCoeffs<double>& c)
      : b0_(c.b0 / c.a0), b1_(c.b1 / c.a0), b2_(c.b2 / c.a0), a1_(c.a1 / c.a0),
        a2_(c.a2 / c.a0) {}

  double process(double x) {
    const double y = b0_ * x + s1_;
    s1_ = b1_ * x - a1_ * y + s2_;
    s2_ = b2_ * x - a2_ * y;
    return y;
  }

  void reset() { s1_ = s2_ = 0.0; }

 private:
  double b0_ = 1.0, b1_ = 0.0, b2_ = 0.0, a1_ = 0.0, a2_ = 0.0;
  double s1_ = 0.0, s2_ = 0.0;
};

/// Cascade of the GEQ sections for one signal path.
class GeqFilter {
 public:
  GeqFilter() = default;
  GeqFilter(const GeqDesign& design, std::span<const double> command_gains_db) {
    const auto specs = design.sections();
    for (std::size_t j = 0; j < specs.size(); ++j) {
      if (command_gains_db[j] == 0.0) continue;
      stages_.emplace_back(section_coeffs(specs[j], design.sample_rate,
                                          gain_db_to_amp(command_gains_db[j])));
    }
  }

  double process(double x) {
    for (auto& s : stages_) x = s.process(x);
    return x;
  }

 private:
  std::vector<Biquad> stages_;
};

}  // namespace fdnfit
