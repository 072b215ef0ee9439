// Copyright 2026 The fdnfit Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Mel-log spectrograms, the multi-resolution spectral distance, the mixing
// matrix density penalty and their gradients.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <span>
#include <string>
#include <vector>

#include "fdnfit/common.hpp"
#include "fdnfit/fft.hpp"

namespace fdnfit {

/// One STFT resolution.
struct SpectralConfig {
  std::size_t n_fft = 1024;
  std::size_t n_hop = 256;
  std::size_t n_mel = 64;

  std::size_t bins() const noexcept { return n_fft / 2 + 1; }

  void validate() const {
    if (n_fft < 2) throw ConfigurationError("n_fft must be at least 2");
    if (n_hop == 0 || n_hop > n_fft)
      throw ConfigurationError("n_hop must lie in [1, n_fft], got " + std::to_string(n_hop));
    if (n_mel == 0 || n_mel > bins())
      throw ConfigurationError("n_mel = " + std::to_string(n_mel) + " exceeds the " +
                               std::to_string(bins()) + " bins of a " +
                               std::to_string(n_fft) + "-point FFT");
  }

  bool operator==(const SpectralConfig&) const = default;
};

using SpectralConfigSet = std::vector<SpectralConfig>;

inline SpectralConfigSet default_spectral_set() {
  return {{2048, 512, 128}, {1024, 256, 64}, {512, 128, 32}};
}

struct LossWeights {
  double lambda_sparsity = 1.0;
  double epsilon = 1e-8;

  void validate() const {
    if (!(lambda_sparsity >= 0.0) || !std::isfinite(lambda_sparsity))
      throw ConfigurationError("lambda_sparsity must be non-negative");
    if (!(epsilon > 0.0) || !std::isfinite(epsilon))
      throw ConfigurationError("epsilon must be positive");
  }
};

// ---------------------------------------------------------------------------
// Mel filterbank
// ---------------------------------------------------------------------------

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Symmetric Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n < 2) return w;
  for (std::size_t i = 0; i <= (n - 1) / 2; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(n - 1));
    w[n - 1 - i] = w[i];
  }
  return w;
}

/// Center frequencies (Hz) of the n_mel triangular filters.
inline std::vector<double> mel_center_frequencies(std::size_t n_mel, double fs) {
  const double top = hz_to_mel(0.5 * fs);
  std::vector<double> c(n_mel);
  for (std::size_t i = 0; i < n_mel; ++i)
    c[i] = mel_to_hz(top * static_cast<double>(i + 1) / static_cast<double>(n_mel + 1));
  return c;
}

/// Triangular filters on the HTK mel scale (m = 2595 log10(1 + f/700)),
/// n_mel + 2 edges equally spaced in mel from 0 Hz to Nyquist, unit peak.
inline Eigen::MatrixXd mel_filterbank(const SpectralConfig& cfg, double fs) {
  cfg.validate();
  const std::size_t nb = cfg.bins();
  const double top = hz_to_mel(0.5 * fs);
  std::vector<double> edges(cfg.n_mel + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(cfg.n_mel + 1));
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(cfg.n_mel),
                                            static_cast<Eigen::Index>(nb));
  for (std::size_t m = 0; m < cfg.n_mel; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < nb; ++k) {
      const double f = fs * static_cast<double>(k) / static_cast<double>(cfg.n_fft);
      const double rise = (f - lo) / (mid - lo);
      const double fall = (hi - f) / (hi - mid);
      w(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) =
          std::max(0.0, std::min(rise, fall));
    }
  }
  return w;
}

/// 1 + floor((len - n_fft) / n_hop) for len >= n_fft, otherwise a single
/// zero-padded frame.
inline std::size_t frame_count(std::size_t len, const SpectralConfig& cfg) {
  if (len < cfg.n_fft) return 1;
  return 1 + (len - cfg.n_fft) / cfg.n_hop;
}

// ---------------------------------------------------------------------------
// Mel-log spectrogram
// ---------------------------------------------------------------------------

/// 10 log10(M |STFT{y}|^2 + eps) for one resolution, with its adjoint.
/// Frames start at multiples of n_hop with no centering and no edge padding.
class MelSpectrogram {
 public:
  MelSpectrogram(const SpectralConfig& cfg, double fs, double eps)
      : cfg_(cfg), fs_(fs), eps_(eps), window_(hann_window(cfg.n_fft)) {
    cfg_.validate();
    if (!(eps > 0.0)) throw ConfigurationError("epsilon must be positive");
    const Eigen::MatrixXd dense = mel_filterbank(cfg_, fs_);
    for (Eigen::Index m = 0; m < dense.rows(); ++m) {
      Row r;
      Eigen::Index first = -1, last = -1;
      for (Eigen::Index k = 0; k < dense.cols(); ++k)
        if (dense(m, k) > 0.0) {
          if (first < 0) first = k;
          last = k;
        }
      if (first >= 0) {
        r.first = static_cast<std::size_t>(first);
        for (Eigen::Index k = first; k <= last; ++k) r.weights.push_back(dense(m, k));
      }
      rows_.push_back(std::move(r));
    }
  }

  const SpectralConfig& config() const noexcept { return cfg_; }
  double epsilon() const noexcept { return eps_; }

  /// n_mel x frames.
  Eigen::MatrixXd compute(std::span<const double> y) const {
    const std::size_t frames = frame_count(y.size(), cfg_);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(cfg_.n_mel), static_cast<Eigen::Index>(frames));
    std::vector<double> frame(cfg_.n_fft);
    std::vector<cplx> spec(cfg_.bins());
    std::vector<double> power(cfg_.bins());
    for (std::size_t t = 0; t < frames; ++t) {
      load_frame(y, t, frame);
      fft::rfft(frame, spec);
      for (std::size_t k = 0; k < spec.size(); ++k) power[k] = std::norm(spec[k]);
      for (std::size_t m = 0; m < cfg_.n_mel; ++m)
        out(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(t)) =
            10.0 * std::log10(project(m, power) + eps_);
    }
    return out;
  }

  /// Adds the pullback of `y_bar` (dL/dY, n_mel x frames) to `grad` (same
  /// length as y).
  void backward(std::span<const double> y, const Eigen::MatrixXd& y_bar,
                std::span<double> grad) const {
    const std::size_t frames = frame_count(y.size(), cfg_);
    const std::size_t nb = cfg_.bins();
    const double dlog = 10.0 / std::log(10.0);
    std::vector<double> frame(cfg_.n_fft), frame_bar(cfg_.n_fft);
    std::vector<cplx> spec(nb), spec_bar(nb);
    std::vector<double> power(nb), power_bar(nb);
    for (std::size_t t = 0; t < frames; ++t) {
      load_frame(y, t, frame);
      fft::rfft(frame, spec);
      for (std::size_t k = 0; k < nb; ++k) power[k] = std::norm(spec[k]);
      std::fill(power_bar.begin(), power_bar.end(), 0.0);
      for (std::size_t m = 0; m < cfg_.n_mel; ++m) {
        const double yb = y_bar(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(t));
        if (yb == 0.0) continue;
        const double pb = yb * dlog / (project(m, power) + eps_);
        const Row& r = rows_[m];
        for (std::size_t i = 0; i < r.weights.size(); ++i) power_bar[r.first + i] += r.weights[i] * pb;
      }
      // |X|^2 -> X, then the real-input DFT adjoint via an inverse transform.
      for (std::size_t k = 0; k < nb; ++k) {
        cplx xb = 2.0 * power_bar[k] * spec[k];
        const bool edge = k == 0 || (cfg_.n_fft % 2 == 0 && k == nb - 1);
        spec_bar[k] = edge ? xb : 0.5 * xb;
      }
      fft::irfft(spec_bar, frame_bar);
      const double n = static_cast<double>(cfg_.n_fft);
      const std::size_t start = t * cfg_.n_hop;
      for (std::size_t i = 0; i < cfg_.n_fft && start + i < y.size(); ++i)
        grad[start + i] += n * frame_bar[i] * window_[i];
    }
  }

 private:
  struct Row {
    std::size_t first = 0;
    std::vector<double> weights;
  };

  void load_frame(std::span<const double> y, std::size_t t, std::vector<double>& frame) const {
    const std::size_t start = t * cfg_.n_hop;
    for (std::size_t i = 0; i < cfg_.n_fft; ++i)
      frame[i] = start + i < y.size() ? y[start + i] * window_[i] : 0.0;
  }

  double project(std::size_t m, const std::vector<double>& power) const {
    const Row& r = rows_[m];
    double acc = 0.0;
    for (std::size_t i = 0; i < r.weights.size(); ++i) acc += r.weights[i] * power[r.first + i];
    return acc;
  }

  SpectralConfig cfg_;
  double fs_;
  double eps_;
  std::vector<double> window_;
  std::vector<Row> rows_;
};

inline Eigen::MatrixXd mel_log_spec(const AudioBuffer& y, const SpectralConfig& cfg,
                                    double eps = 1e-8) {
  if (y.empty()) throw InvalidParameter("mel_log_spec: empty signal");
  return MelSpectrogram(cfg, y.sample_rate, eps).compute(y.samples);
}

// ---------------------------------------------------------------------------
// Multi-resolution distance
// ---------------------------------------------------------------------------

inline SpectralConfigSet sorted_by_fft_size(SpectralConfigSet set) {
  std::stable_sort(set.begin(), set.end(),
                   [](const SpectralConfig& a, const SpectralConfig& b) { return a.n_fft < b.n_fft; });
  return set;
}

/// Mean over resolutions of the per-cell mean squared difference of the
/// mel-log spectrograms. Holds the target spectrograms between calls.
class MultiResolutionLoss {
 public:
  MultiResolutionLoss(const SpectralConfigSet& set, double fs, double eps) {
    if (set.empty()) throw ConfigurationError("spectral configuration set is empty");
    for (const auto& cfg : sorted_by_fft_size(set)) specs_.emplace_back(cfg, fs, eps);
  }

  std::size_t resolutions() const noexcept { return specs_.size(); }
  const MelSpectrogram& resolution(std::size_t r) const { return specs_[r]; }

  void set_target(std::vector<double> y) {
    target_ = std::move(y);
    target_len_ = 0;
    target_specs_.clear();
  }

  const std::vector<double>& target() const noexcept { return target_; }

  /// Returns the total and fills `per_resolution` (in n_fft order). When
  /// `grad` is non-null it receives dL/dy_hat, sized like y_hat.
  double evaluate(std::span<const double> y_hat, std::vector<double>* per_resolution = nullptr,
                  std::vector<double>* grad = nullptr) {
    const std::size_t len = std::max(target_.size(), y_hat.size());
    if (len == 0) throw InvalidParameter("multires_loss: empty signals");
    refresh_target(len);
    std::vector<double> padded(y_hat.begin(), y_hat.end());
    padded.resize(len, 0.0);
    std::vector<double> full_grad;
    if (grad) full_grad.assign(len, 0.0);
    if (per_resolution) per_resolution->assign(specs_.size(), 0.0);
    const double inv_r = 1.0 / static_cast<double>(specs_.size());
    double total = 0.0;
    for (std::size_t r = 0; r < specs_.size(); ++r) {
      const Eigen::MatrixXd est = specs_[r].compute(padded);
      const Eigen::MatrixXd diff = est - target_specs_[r];
      const double cells = static_cast<double>(diff.size());
      const double lr = diff.squaredNorm() / cells;
      if (per_resolution) (*per_resolution)[r] = lr;
      total += lr;
      if (grad) {
        const Eigen::MatrixXd y_bar = (2.0 * inv_r / cells) * diff;
        specs_[r].backward(padded, y_bar, full_grad);
      }
    }
    if (grad) {
      full_grad.resize(y_hat.size());
      *grad = std::move(full_grad);
    }
    return total * inv_r;
  }

 private:
  void refresh_target(std::size_t len) {
    if (len == target_len_ && !target_specs_.empty()) return;
    std::vector<double> padded = target_;
    padded.resize(len, 0.0);
    target_specs_.clear();
    for (const auto& s : specs_) target_specs_.push_back(s.compute(padded));
    target_len_ = len;
  }

  std::vector<MelSpectrogram> specs_;
  std::vector<double> target_;
  std::size_t target_len_ = 0;
  std::vector<Eigen::MatrixXd> target_specs_;
};

/// Signals of unequal length are compared after zero-padding the shorter one.
inline double multires_loss(const AudioBuffer& y, const AudioBuffer& y_hat,
                            const SpectralConfigSet& set, double eps = 1e-8) {
  if (y.sample_rate != y_hat.sample_rate)
    throw InvalidParameter("multires_loss: sample rates differ");
  MultiResolutionLoss loss(set, y.sample_rate, eps);
  loss.set_target(y.samples);
  return loss.evaluate(y_hat.samples);
}

// ---------------------------------------------------------------------------
// Mixing matrix density
// ---------------------------------------------------------------------------

/// (N sqrt(N) - sum |U_ij|) / (N (sqrt(N) - 1)); 0 for maximally dense
/// orthogonal matrices, 1 for permutations.
inline double sparsity_loss(const Eigen::MatrixXd& u) {
  if (u.rows() != u.cols() || u.rows() < 2) throw InvalidParameter("sparsity_loss: U must be square, N >= 2");
  const double n = static_cast<double>(u.rows());
  const double sn = std::sqrt(n);
  return (n * sn - u.cwiseAbs().sum()) / (n * (sn - 1.0));
}

/// d sparsity_loss / dU (subgradient 0 at exact zeros).
inline Eigen::MatrixXd sparsity_loss_grad(const Eigen::MatrixXd& u) {
  const double n = static_cast<double>(u.rows());
  const double scale = -1.0 / (n * (std::sqrt(n) - 1.0));
  return u.unaryExpr([scale](double v) { return v > 0.0 ? scale : (v < 0.0 ? -scale : 0.0); });
}

struct LossBreakdown {
  std::vector<double> spectral_per_resolution;  // ascending n_fft
  double spectral = 0.0;                        // L_Y
  double sparsity = 0.0;                        // L_U
  double total = 0.0;
};

/// L_Y + lambda L_U.
inline LossBreakdown total_loss(const AudioBuffer& y, const AudioBuffer& y_hat,
                                const Eigen::MatrixXd& u, const SpectralConfigSet& set,
                                const LossWeights& weights) {
  weights.validate();
  if (y.sample_rate != y_hat.sample_rate) throw InvalidParameter("total_loss: sample rates differ");
  MultiResolutionLoss loss(set, y.sample_rate, weights.epsilon);
  loss.set_target(y.samples);
  LossBreakdown out;
  out.spectral = loss.evaluate(y_hat.samples, &out.spectral_per_resolution);
  out.sparsity = sparsity_loss(u);
  out.total = out.spectral + weights.lambda_sparsity * out.sparsity;
  return out;
}

}  // namespace fdnfit
