// Copyright 2026 The fdnfit Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <complex>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fdnfit {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kSampleRate = 48000.0;

using cplx = std::complex<double>;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite or malformed parameter values.
class InvalidParameter : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration (spectral set, filterbank sizes, CLI config).
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

/// Singular per-bin solve or a diverging recursion.
class NumericalInstability : public Error {
 public:
  using Error::Error;
};

/// Metric cannot be computed from the given signal (zero energy, ...).
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

/// Energy-decay curve never reaches the lower end of the fit range.
class InsufficientDecay : public UndefinedMetric {
 public:
  using UndefinedMetric::UndefinedMetric;
};

/// File system and file-format failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Warnings
// ---------------------------------------------------------------------------

using WarningSink = std::function<void(const std::string&)>;

inline WarningSink& warning_sink() {
  static WarningSink sink = [](const std::string& msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}

inline void warn(const std::string& msg) {
  if (warning_sink()) warning_sink()(msg);
}

/// Installs a sink for the lifetime of the guard, restoring the previous one.
class ScopedWarningSink {
 public:
  explicit ScopedWarningSink(WarningSink sink)
      : previous_(std::exchange(warning_sink(), std::move(sink))) {}
  ~ScopedWarningSink() { warning_sink() = std::move(previous_); }
  ScopedWarningSink(const ScopedWarningSink&) = delete;
  ScopedWarningSink& operator=(const ScopedWarningSink&) = delete;

 private:
  WarningSink previous_;
};

// ---------------------------------------------------------------------------
// AudioBuffer
// ---------------------------------------------------------------------------

/// Mono real-valued signal with its sample rate.
struct AudioBuffer {
  std::vector<double> samples;
  double sample_rate = kSampleRate;

  AudioBuffer() = default;
  explicit AudioBuffer(std::vector<double> s, double fs = kSampleRate)
      : samples(std::move(s)), sample_rate(fs) {}
  AudioBuffer(std::size_t n, double fs) : samples(n, 0.0), sample_rate(fs) {}

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  double& operator[](std::size_t i) { return samples[i]; }
  double operator[](std::size_t i) const { return samples[i]; }
  std::span<const double> view() const noexcept { return samples; }
};

inline double energy(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

inline double peak_abs(std::span<const double> x) {
  double p = 0.0;
  for (double v : x) p = std::max(p, std::abs(v));
  return p;
}

inline bool all_finite(std::span<const double> x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace fdnfit
