// Copyright 2026 The fdnfit Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Reverse-mode gradients through realize -> frequency sampling -> inverse FFT
// -> (optional convolution with a dry signal) -> spectral + density loss, and
// the AdamW fit loop built on them.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fdnfit/audio_io.hpp"
#include "fdnfit/common.hpp"
#include "fdnfit/fdn.hpp"
#include "fdnfit/fft.hpp"
#include "fdnfit/spectral.hpp"

namespace fdnfit {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct LrSchedule {
  enum class Kind { Constant, Cosine, Step };
  Kind kind = Kind::Cosine;
  double factor = 0.5;      // step decay multiplier
  std::size_t every = 500;  // step decay period

  double at(double base, std::size_t step, std::size_t max_steps) const {
    switch (kind) {
      case Kind::Constant: return base;
      case Kind::Cosine: {
        const double t = static_cast<double>(step) / static_cast<double>(std::max<std::size_t>(max_steps, 1));
        return base * 0.5 * (1.0 + std::cos(kPi * std::min(t, 1.0)));
      }
      case Kind::Step:
        return base * std::pow(factor, static_cast<double>(step / std::max<std::size_t>(every, 1)));
    }
    return base;
  }
};

struct FitConfig {
  std::size_t max_steps = 2000;
  double lr = 0.05;
  LrSchedule lr_schedule;
  double weight_decay = 1e-4;
  std::size_t patience = 200;
  std::uint64_t seed = 0;
  LossWeights loss_weights;
  SpectralConfigSet spectral_set = default_spectral_set();
  std::size_t fft_length = std::size_t{1} << 18;

  void validate() const {
    if (max_steps < 1) throw ConfigurationError("max_steps must be at least 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigurationError("lr must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigurationError("weight_decay must be non-negative");
    if (patience < 1) throw ConfigurationError("patience must be at least 1");
    if (lr_schedule.kind == LrSchedule::Kind::Step &&
        (lr_schedule.every == 0 || !(lr_schedule.factor > 0.0)))
      throw ConfigurationError("step decay needs every >= 1 and factor > 0");
    loss_weights.validate();
    if (spectral_set.empty()) throw ConfigurationError("spectral configuration set is empty");
    for (const auto& s : spectral_set) s.validate();
    if (!is_power_of_two(fft_length))
      throw ConfigurationError("fft_length must be a power of two");
  }
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Stable starting point: p_U ~ N(0, 0.1^2), p_T = 0, p_gamma = 4
/// (about -0.16 dB per stage), b, c ~ N(0, 1/N), g = 0.5.
inline FdnRawParams default_initialization(std::uint64_t seed, std::size_t lines = 8,
                                           std::size_t stages = GeqDesign::kStages) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> mixing(0.0, 0.1);
  std::normal_distribution<double> gains(0.0, 1.0 / std::sqrt(static_cast<double>(lines)));
  FdnRawParams p = FdnRawParams::zeros(lines, stages);
  for (Eigen::Index r = 0; r < p.p_U.rows(); ++r)
    for (Eigen::Index c = 0; c < p.p_U.cols(); ++c) p.p_U(r, c) = mixing(rng);
  p.p_gamma.setConstant(4.0);
  for (Eigen::Index i = 0; i < p.b.size(); ++i) p.b(i) = gains(rng);
  for (Eigen::Index i = 0; i < p.c.size(); ++i) p.c(i) = gains(rng);
  p.g = 0.5;
  return p;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct OptimizerState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::size_t step = 0;

  static OptimizerState for_params(const FdnRawParams& p) {
    return {std::vector<double>(p.size(), 0.0), std::vector<double>(p.size(), 0.0), 0};
  }
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One AdamW update: bias-corrected Adam step plus decoupled decay
/// -lr * weight_decay * theta.
inline void adamw_step(OptimizerState& state, FdnRawParams& raw, const FdnRawParams& grads,
                       double lr, double weight_decay, const AdamHyper& h = {}) {
  std::vector<double> theta = raw.flatten();
  const std::vector<double> g = grads.flatten();
  if (g.size() != theta.size() || state.first_moment.size() != theta.size() ||
      state.second_moment.size() != theta.size())
    throw InvalidParameter("adamw_step: shape mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = h.beta1 * m + (1.0 - h.beta1) * g[i];
    v = h.beta2 * v + (1.0 - h.beta2) * g[i] * g[i];
    const double update = (m / c1) / (std::sqrt(v / c2) + h.eps);
    theta[i] -= lr * weight_decay * theta[i] + lr * update;
  }
  raw.assign(theta);
}

// ---------------------------------------------------------------------------
// Differentiable objective
// ---------------------------------------------------------------------------

enum class FitMode { Rir, Signal };

/// Loss of a parameter set against one target, with exact gradients.
/// Rir mode compares the synthesized M-sample response with the target
/// response; signal mode convolves the dry input with it first.
class FitProblem {
 public:
  FitProblem(AudioBuffer target, std::optional<AudioBuffer> dry, const FitConfig& cfg,
             DelayVector delays = {}, GeqDesign geq = {})
      : cfg_(cfg),
        delays_(std::move(delays)),
        geq_(std::move(geq)),
        sampler_(cfg.fft_length, delays_, geq_),
        loss_(cfg.spectral_set, target.sample_rate, cfg.loss_weights.epsilon),
        mode_(dry ? FitMode::Signal : FitMode::Rir) {
    cfg_.validate();
    if (target.empty()) throw InvalidParameter("fit target is empty");
    if (target.sample_rate != geq_.sample_rate)
      throw InvalidParameter("target sample rate differs from the FDN sample rate");
    if (dry) {
      if (dry->empty()) throw InvalidParameter("dry signal is empty");
      if (dry->sample_rate != target.sample_rate)
        throw InvalidParameter("dry and target sample rates differ");
      dry_ = std::move(dry->samples);
    }
    loss_.set_target(std::move(target.samples));
  }

  FitMode mode() const noexcept { return mode_; }
  const FitConfig& config() const noexcept { return cfg_; }
  const DelayVector& delays() const noexcept { return delays_; }
  const GeqDesign& geq() const noexcept { return geq_; }
  std::size_t fft_length() const noexcept { return cfg_.fft_length; }

  FdnSystem realize_system(const FdnRawParams& raw) const { return realize(raw, delays_, geq_); }

  /// Synthesized impulse response of `raw` (M samples).
  AudioBuffer impulse_response(const FdnRawParams& raw) const {
    const FdnSystem sys = realize_system(raw);
    return synthesize_rir(sampler_.forward(sys), cfg_.fft_length, geq_.sample_rate);
  }

  /// Model output compared against the target.
  std::vector<double> output(const FdnRawParams& raw) const {
    AudioBuffer h = impulse_response(raw);
    if (mode_ == FitMode::Rir) return std::move(h.samples);
    return fft_convolve(dry_, h.samples);
  }

  /// Loss terms; when `grad` is given it receives dL/draw.
  LossBreakdown evaluate(const FdnRawParams& raw, FdnRawParams* grad = nullptr) {
    const FdnSystem sys = realize_system(raw);
    const std::size_t m = cfg_.fft_length;
    const auto spectrum = sampler_.forward(sys);
    std::vector<double> h(m);
    fft::irfft(spectrum, h);
    std::vector<double> y_hat = mode_ == FitMode::Rir ? h : fft_convolve(dry_, h);

    LossBreakdown out;
    std::vector<double> y_bar;
    out.spectral = loss_.evaluate(y_hat, &out.spectral_per_resolution, grad ? &y_bar : nullptr);
    out.sparsity = sparsity_loss(sys.U);
    out.total = out.spectral + cfg_.loss_weights.lambda_sparsity * out.sparsity;
    if (!std::isfinite(out.total)) throw NumericalInstability("loss is not finite");
    if (!grad) return out;

    // y_hat -> h
    std::vector<double> h_bar = mode_ == FitMode::Rir ? std::move(y_bar) : fft_correlate(y_bar, dry_, m);
    // h = irfft(H) -> H
    std::vector<cplx> spec_bar = fft::rfft(h_bar);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t k = 0; k < spec_bar.size(); ++k) {
      if (k == 0 || k == spec_bar.size() - 1)
        spec_bar[k] = cplx(spec_bar[k].real() * inv_m, 0.0);
      else
        spec_bar[k] *= 2.0 * inv_m;
    }
    SystemGradient sg = sampler_.backward(sys, spec_bar);
    sg.U += cfg_.loss_weights.lambda_sparsity * sparsity_loss_grad(sys.U);
    *grad = pull_back_activations(raw, sg);
    return out;
  }

  /// Chains system-field gradients through the activations and the
  /// orthogonal map.
  static FdnRawParams pull_back_activations(const FdnRawParams& raw, const SystemGradient& sg) {
    FdnRawParams g = FdnRawParams::zeros(raw.lines(), raw.stages());
    for (Eigen::Index j = 0; j < raw.p_T.size(); ++j) {
      const double t = std::tanh(raw.p_T(j));
      g.p_T(j) = sg.tone_db[static_cast<std::size_t>(j)] * kToneRangeDb * (1.0 - t * t);
    }
    const double db_per_log = 20.0 / std::log(10.0);
    for (Eigen::Index j = 0; j < raw.p_gamma.rows(); ++j)
      for (Eigen::Index i = 0; i < raw.p_gamma.cols(); ++i)
        g.p_gamma(j, i) = sg.atten_db(j, i) * db_per_log * sigmoid(-raw.p_gamma(j, i));
    const Eigen::MatrixXd s = skew_from_upper(raw.p_U);
    const Eigen::MatrixXd s_bar = expm_pullback(s, sg.U);
    for (Eigen::Index r = 0; r < s.rows(); ++r)
      for (Eigen::Index c = r + 1; c < s.cols(); ++c) g.p_U(r, c) = s_bar(r, c) - s_bar(c, r);
    g.b = sg.b;
    g.c = sg.c;
    g.g = sg.g;
    return g;
  }

 private:
  FitConfig cfg_;
  DelayVector delays_;
  GeqDesign geq_;
  TransferFunctionSampler sampler_;
  MultiResolutionLoss loss_;
  FitMode mode_;
  std::vector<double> dry_;
};

// ---------------------------------------------------------------------------
// Fit loop
// ---------------------------------------------------------------------------

struct TrajectoryRow {
  std::size_t step = 0;
  double spectral = 0.0;
  double sparsity = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

struct FitResult {
  FdnRawParams best;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
  std::vector<TrajectoryRow> trajectory;
  std::vector<double> best_so_far;
  bool stopped_by_patience = false;
  bool no_improvement = false;  // best loss was the initial one
};

/// AdamW on the objective from `init`, keeping the lowest-loss parameters.
/// Stops after max_steps evaluations or `patience` steps without improvement.
inline FitResult fit(FitProblem& problem, FdnRawParams init) {
  const FitConfig& cfg = problem.config();
  FitResult res;
  FdnRawParams raw = std::move(init);
  OptimizerState state = OptimizerState::for_params(raw);
  std::size_t since_best = 0;
  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    const double lr = cfg.lr_schedule.at(cfg.lr, step, cfg.max_steps);
    FdnRawParams grad;
    const LossBreakdown lb = problem.evaluate(raw, &grad);
    res.trajectory.push_back({step, lb.spectral, lb.sparsity, lb.total, lr});
    if (lb.total < res.best_loss) {
      res.best_loss = lb.total;
      res.best = raw;
      res.best_step = step;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      res.best_so_far.push_back(res.best_loss);
      res.stopped_by_patience = true;
      break;
    }
    res.best_so_far.push_back(res.best_loss);
    if (step + 1 < cfg.max_steps) adamw_step(state, raw, grad, lr, cfg.weight_decay);
  }
  res.no_improvement = res.trajectory.size() > 1 && res.best_step == 0;
  if (res.no_improvement) warn("fit: loss never decreased below its initial value");
  return res;
}

inline FitResult fit(const AudioBuffer& target, const std::optional<AudioBuffer>& dry,
                     const FitConfig& cfg) {
  FitProblem problem(target, dry, cfg);
  return fit(problem, default_initialization(cfg.seed));
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

struct CoordinateCheck {
  Tensor tensor;
  std::size_t index;
  double analytic;
  double numeric;
  double rel_error;
};

struct GradientCheckResult {
  double max_rel_error = 0.0;
  std::vector<CoordinateCheck> coordinates;
};

/// Coordinates that influence the loss (the strictly lower triangle and the
/// diagonal of p_U do not).
inline std::vector<std::pair<Tensor, std::size_t>> active_coordinates(const FdnRawParams& raw) {
  std::vector<std::pair<Tensor, std::size_t>> out;
  const std::size_t n = raw.lines();
  for (Tensor t : FdnRawParams::kTensors)
    for (std::size_t i = 0; i < raw.tensor_size(t); ++i) {
      if (t == Tensor::Mixing && i % n <= i / n) continue;
      out.emplace_back(t, i);
    }
  return out;
}

/// Central finite differences on `samples` seeded coordinates, at least one
/// per tensor. Relative error is |a - f| / max(|a|, |f|, 1e-6 max|grad|).
inline GradientCheckResult finite_diff_check(FitProblem& problem, const FdnRawParams& raw,
                                             double step = 1e-4, std::size_t samples = 64,
                                             std::uint64_t seed = 0) {
  FdnRawParams grad;
  problem.evaluate(raw, &grad);
  double scale = 0.0;
  for (double v : grad.flatten()) scale = std::max(scale, std::abs(v));
  const double floor = 1e-6 * scale;

  auto active = active_coordinates(raw);
  std::mt19937_64 rng(seed);
  std::vector<std::pair<Tensor, std::size_t>> chosen;
  for (Tensor t : FdnRawParams::kTensors) {
    if (chosen.size() >= samples) break;
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < active.size(); ++k)
      if (active[k].first == t) idx.push_back(k);
    if (idx.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
    const std::size_t k = idx[pick(rng)];
    chosen.push_back(active[k]);
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(k));
  }
  std::shuffle(active.begin(), active.end(), rng);
  for (std::size_t k = 0; chosen.size() < samples && k < active.size(); ++k) chosen.push_back(active[k]);

  GradientCheckResult res;
  for (const auto& [t, i] : chosen) {
    FdnRawParams plus = raw, minus = raw;
    plus.at(t, i) += step;
    minus.at(t, i) -= step;
    const double fp = problem.evaluate(plus).total;
    const double fm = problem.evaluate(minus).total;
    const double numeric = (fp - fm) / (2.0 * step);
    const double analytic = grad.at(t, i);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    const double rel = denom > 0.0 ? std::abs(analytic - numeric) / denom : 0.0;
    res.coordinates.push_back({t, i, analytic, numeric, rel});
    res.max_rel_error = std::max(res.max_rel_error, rel);
  }
  return res;
}

/// Parameters of a generic well-decaying random FDN, used by the gradient
/// check and tests.
inline FdnRawParams random_params(std::uint64_t seed, std::size_t lines = 8,
                                  std::size_t stages = GeqDesign::kStages,
                                  double atten_center = 1.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  FdnRawParams p = FdnRawParams::zeros(lines, stages);
  const double gain_sd = 1.0 / std::sqrt(static_cast<double>(lines));
  for (Eigen::Index j = 0; j < p.p_T.size(); ++j) p.p_T(j) = 0.5 * unit(rng);
  for (Eigen::Index r = 0; r < p.p_U.rows(); ++r)
    for (Eigen::Index c = 0; c < p.p_U.cols(); ++c) p.p_U(r, c) = unit(rng);
  for (Eigen::Index j = 0; j < p.p_gamma.rows(); ++j)
    for (Eigen::Index i = 0; i < p.p_gamma.cols(); ++i)
      p.p_gamma(j, i) = atten_center + 0.5 * unit(rng);
  for (Eigen::Index i = 0; i < p.b.size(); ++i) p.b(i) = gain_sd * unit(rng);
  for (Eigen::Index i = 0; i < p.c.size(); ++i) p.c(i) = gain_sd * unit(rng);
  p.g = 0.5 * unit(rng);
  return p;
}

}  // namespace fdnfit
