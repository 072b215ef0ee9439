// Copyright 2026 The fdnfit Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Command implementations behind the fdnfit executable. Exit codes:
// 0 ok, 1 check failure, 2 usage error, 3 numerical error.

#pragma once

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fdnfit/fdnfit.hpp"

namespace fdnfit::cli {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsage = 2, kNumerical = 3 };

namespace detail {

namespace fs = std::filesystem;

struct UsageError : Error {
  using Error::Error;
};

inline void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " file not found: " + path);
}

inline CliConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  require_file(path, "config");
  try {
    return config_from_json(read_json_file(path));
  } catch (const ConfigurationError& e) {
    throw UsageError(path + ": " + e.what());
  }
}

inline fs::path sibling(const fs::path& base, const std::string& suffix) {
  fs::path p = base;
  p.replace_extension();
  p += suffix;
  return p;
}

/// Runs `body`, mapping library errors to exit codes with `stage` in the
/// message.
template <class F>
int guarded(const std::string& command, F&& body) {
  std::string stage = "setup";
  try {
    return body(stage);
  } catch (const UsageError& e) {
    std::cerr << command << ": " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigurationError& e) {
    std::cerr << command << ": " << stage << ": " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << command << ": " << stage << ": " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalInstability& e) {
    std::cerr << command << ": " << stage << ": numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const UndefinedMetric& e) {
    std::cerr << command << ": " << stage << ": " << e.what() << '\n';
    return kNumerical;
  } catch (const InvalidParameter& e) {
    std::cerr << command << ": " << stage << ": " << e.what() << '\n';
    return kUsage;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitArgs {
  std::string target, dry, wet, out, config, trajectory, ir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_steps, fft_length;
};

inline int cmd_fit(const FitArgs& a) {
  return detail::guarded("fit", [&](std::string& stage) {
    const bool rir_mode = !a.target.empty();
    const bool signal_mode = !a.dry.empty() || !a.wet.empty();
    if (rir_mode == signal_mode)
      throw detail::UsageError("give either --target or both --dry and --wet");
    if (signal_mode && (a.dry.empty() || a.wet.empty()))
      throw detail::UsageError("signal mode needs both --dry and --wet");
    if (a.out.empty()) throw detail::UsageError("--out is required");
    if (rir_mode) detail::require_file(a.target, "target");
    if (signal_mode) {
      detail::require_file(a.dry, "dry");
      detail::require_file(a.wet, "wet");
    }
    stage = "config";
    CliConfig cfg = detail::load_config(a.config);
    if (a.seed) cfg.fit.seed = *a.seed;
    if (a.max_steps) cfg.fit.max_steps = *a.max_steps;
    if (a.fft_length) cfg.fit.fft_length = *a.fft_length;
    cfg.fit.validate();

    stage = "reading input";
    AudioBuffer target;
    std::optional<AudioBuffer> dry;
    if (rir_mode) {
      target = preprocess_rir(read_wav(a.target), cfg.onset_db);
    } else {
      target = read_wav(a.wet);
      dry = read_wav(a.dry);
    }

    stage = "optimization";
    FitProblem problem(std::move(target), std::move(dry), cfg.fit);
    const FitResult res = fit(problem, default_initialization(cfg.fit.seed));

    stage = "writing output";
    const detail::fs::path out(a.out);
    const auto traj = a.trajectory.empty() ? detail::sibling(out, ".trajectory.csv")
                                           : detail::fs::path(a.trajectory);
    const auto ir = a.ir.empty() ? detail::sibling(out, ".rir.wav") : detail::fs::path(a.ir);
    write_params(out, {res.best, problem.delays(), problem.geq().sample_rate});
    write_text_atomically(traj, trajectory_csv(res.trajectory));
    write_wav(ir, problem.impulse_response(res.best));

    std::cout.precision(10);
    std::cout << "fit: " << res.trajectory.size() << " steps, initial loss "
              << res.trajectory.front().total << ", best loss " << res.best_loss << " at step "
              << res.best_step << (res.stopped_by_patience ? " (patience)" : "") << '\n'
              << "fit: wrote " << out.string() << ", " << traj.string() << ", " << ir.string()
              << '\n';
    return int{kOk};
  });
}

// ---------------------------------------------------------------------------
// render
// ---------------------------------------------------------------------------

struct RenderArgs {
  std::string params, input, out, ir, config;
  std::string mode = "fs";
  std::optional<std::size_t> fft_length;
};

inline int cmd_render(const RenderArgs& a) {
  return detail::guarded("render", [&](std::string& stage) {
    if (a.mode != "td" && a.mode != "fs") throw detail::UsageError("--mode must be td or fs");
    detail::require_file(a.params, "params");
    detail::require_file(a.input, "input");
    stage = "config";
    CliConfig cfg = detail::load_config(a.config);
    if (a.fft_length) cfg.fit.fft_length = *a.fft_length;
    cfg.fit.validate();
    const std::size_t m = cfg.fit.fft_length;

    stage = "reading params";
    const ParamsDocument doc = read_params(a.params);
    GeqDesign geq;
    geq.sample_rate = doc.sample_rate;
    const FdnSystem sys = realize(doc.raw, doc.delays, geq);
    stage = "reading input";
    const AudioBuffer x = read_wav(a.input, doc.sample_rate);
    if (x.empty()) throw detail::UsageError("input is empty");

    stage = "rendering";
    std::optional<AudioBuffer> rir;
    if (a.mode == "fs" || !a.ir.empty()) rir = synthesize(sys, m);
    const std::size_t out_len = x.size() + m - 1;
    AudioBuffer y = a.mode == "fs" ? convolve(x, *rir) : render_time_domain(sys, x, out_len);

    stage = "writing output";
    write_wav(a.out, y);
    if (!a.ir.empty()) write_wav(a.ir, *rir);
    std::cout << "render: wrote " << a.out << " (" << y.size() << " samples, mode " << a.mode << ")\n";
    return int{kOk};
  });
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string reference, estimate, out, csv, config;
  std::optional<std::size_t> fft_length;
};

inline int cmd_eval(const EvalArgs& a) {
  return detail::guarded("eval", [&](std::string& stage) {
    detail::require_file(a.reference, "reference");
    detail::require_file(a.estimate, "estimate");
    if (a.out.empty()) throw detail::UsageError("--out is required");
    stage = "config";
    CliConfig cfg = detail::load_config(a.config);
    if (a.fft_length) cfg.fit.fft_length = *a.fft_length;
    cfg.fit.validate();

    stage = "reading reference";
    const AudioBuffer ref = preprocess_rir(read_wav(a.reference), cfg.onset_db);

    stage = "reading estimate";
    AudioBuffer est_raw;
    std::optional<Eigen::MatrixXd> mixing;
    if (detail::fs::path(a.estimate).extension() == ".json") {
      const ParamsDocument doc = read_params(a.estimate);
      FitProblem problem(ref, std::nullopt, cfg.fit, doc.delays);
      est_raw = problem.impulse_response(doc.raw);
      mixing = problem.realize_system(doc.raw).U;
    } else {
      est_raw = read_wav(a.estimate);
    }

    stage = "loss";
    json loss;
    {
      MultiResolutionLoss ml(cfg.fit.spectral_set, ref.sample_rate, cfg.fit.loss_weights.epsilon);
      ml.set_target(ref.samples);
      LossBreakdown lb;
      lb.spectral = ml.evaluate(est_raw.samples, &lb.spectral_per_resolution);
      if (mixing) {
        lb.sparsity = sparsity_loss(*mixing);
        lb.total = lb.spectral + cfg.fit.loss_weights.lambda_sparsity * lb.sparsity;
        loss = to_json(lb, cfg.fit.spectral_set);
      } else {
        loss = to_json(lb, cfg.fit.spectral_set);
        loss["L_U"] = nullptr;
        loss["total"] = nullptr;
      }
    }

    stage = "metrics";
    const AudioBuffer est = preprocess_rir(est_raw, cfg.onset_db);
    const AcousticReport report = compare_metrics(ref, est);
    json j = to_json(report);
    j["loss"] = loss;

    stage = "writing output";
    write_json_file(a.out, j);
    if (!a.csv.empty()) write_text_atomically(a.csv, report_csv(report));
    std::cout.precision(6);
    std::cout << "eval: T30 MAPE " << report.t30_mape_percent << " %, C50 MAE "
              << report.c50_mae_db << " dB over " << report.valid_t30_bands() << " bands\n";
    if (report.valid_t30_bands() == 0) {
      std::cerr << "eval: metrics: insufficient decay in every octave band\n";
      return int{kNumerical};
    }
    return int{kOk};
  });
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 0;
  long samples = 64;
  std::size_t fft_length = std::size_t{1} << 16;
  double step = 1e-4;
  double tolerance = 1e-3;
};

/// Compares analytic and finite-difference gradients on a random system
/// fitted against the response of another random system.
inline int cmd_gradcheck(const GradcheckArgs& a) {
  return detail::guarded("gradcheck", [&](std::string& stage) {
    if (a.samples <= 0) throw detail::UsageError("--samples must be positive");
    if (!(a.step > 0.0)) throw detail::UsageError("--step must be positive");
    stage = "setup";
    FitConfig cfg;
    cfg.fft_length = a.fft_length;
    cfg.validate();
    FitProblem target_gen(AudioBuffer(std::vector<double>(1, 1.0)), std::nullopt, cfg);
    AudioBuffer target = target_gen.impulse_response(random_params(a.seed + 1));
    FitProblem problem(std::move(target), std::nullopt, cfg);
    stage = "gradient check";
    const auto res = finite_diff_check(problem, random_params(a.seed), a.step,
                                       static_cast<std::size_t>(a.samples), a.seed);
    std::cout.precision(6);
    std::cout << "gradcheck: " << res.coordinates.size()
              << " coordinates, worst relative error " << std::scientific << res.max_rel_error
              << std::defaultfloat << '\n';
    return res.max_rel_error < a.tolerance ? int{kOk} : int{kCheckFailed};
  });
}

// ---------------------------------------------------------------------------
// spectrogram
// ---------------------------------------------------------------------------

struct SpectrogramArgs {
  std::string input, params, out, config;
  SpectralConfig spec{2048, 512, 128};
};

inline int cmd_spectrogram(const SpectrogramArgs& a) {
  return detail::guarded("spectrogram", [&](std::string& stage) {
    if (a.input.empty() == a.params.empty())
      throw detail::UsageError("give exactly one of --input and --params");
    if (!a.input.empty()) detail::require_file(a.input, "input");
    if (!a.params.empty()) detail::require_file(a.params, "params");
    stage = "config";
    CliConfig cfg = detail::load_config(a.config);
    a.spec.validate();
    stage = "reading input";
    AudioBuffer y;
    if (!a.input.empty()) {
      y = read_wav(a.input);
    } else {
      const ParamsDocument doc = read_params(a.params);
      GeqDesign geq;
      geq.sample_rate = doc.sample_rate;
      y = synthesize(realize(doc.raw, doc.delays, geq), cfg.fit.fft_length);
    }
    stage = "writing output";
    export_spectrogram(y, a.spec, a.out, cfg.fit.loss_weights.epsilon);
    std::cout << "spectrogram: wrote " << a.out << '\n';
    return int{kOk};
  });
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv) {
  CLI::App app{"Differentiable FDN reverberation: fit, render and evaluate"};
  app.require_subcommand(1);

  FitArgs fa;
  auto* fit_cmd = app.add_subcommand("fit", "fit FDN parameters to a target");
  fit_cmd->add_option("--target", fa.target, "target impulse response (WAV)");
  fit_cmd->add_option("--dry", fa.dry, "dry source signal (WAV), signal mode");
  fit_cmd->add_option("--wet", fa.wet, "reverberant signal (WAV), signal mode");
  fit_cmd->add_option("--out", fa.out, "output parameter file (JSON)");
  fit_cmd->add_option("--config", fa.config, "configuration file (JSON)");
  fit_cmd->add_option("--seed", fa.seed, "initialization seed");
  fit_cmd->add_option("--max-steps", fa.max_steps, "optimization steps");
  fit_cmd->add_option("--fft-length", fa.fft_length, "frequency-sampling length M");
  fit_cmd->add_option("--trajectory", fa.trajectory, "loss trajectory CSV");
  fit_cmd->add_option("--ir", fa.ir, "synthesized impulse response WAV");

  RenderArgs ra;
  auto* render_cmd = app.add_subcommand("render", "reverberate a signal with fitted parameters");
  render_cmd->add_option("--params", ra.params, "parameter file (JSON)")->required();
  render_cmd->add_option("--input", ra.input, "dry input (WAV)")->required();
  render_cmd->add_option("--out", ra.out, "reverberant output (WAV)")->required();
  render_cmd->add_option("--ir", ra.ir, "also write the impulse response (WAV)");
  render_cmd->add_option("--mode", ra.mode, "td (recursion) or fs (frequency sampling)");
  render_cmd->add_option("--config", ra.config, "configuration file (JSON)");
  render_cmd->add_option("--fft-length", ra.fft_length, "frequency-sampling length M");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "octave-band T30/C50 comparison");
  eval_cmd->add_option("--reference", ea.reference, "reference impulse response (WAV)")->required();
  eval_cmd->add_option("--estimate", ea.estimate, "estimate (WAV or parameter JSON)")->required();
  eval_cmd->add_option("--out", ea.out, "report (JSON)")->required();
  eval_cmd->add_option("--csv", ea.csv, "report (CSV)");
  eval_cmd->add_option("--config", ea.config, "configuration file (JSON)");
  eval_cmd->add_option("--fft-length", ea.fft_length, "frequency-sampling length M");

  GradcheckArgs ga;
  auto* grad_cmd = app.add_subcommand("gradcheck", "verify gradients by finite differences");
  grad_cmd->add_option("--seed", ga.seed, "random system seed");
  grad_cmd->add_option("--samples", ga.samples, "number of coordinates");
  grad_cmd->add_option("--fft-length", ga.fft_length, "frequency-sampling length M");
  grad_cmd->add_option("--step", ga.step, "finite-difference step");

  SpectrogramArgs sa;
  auto* spec_cmd = app.add_subcommand("spectrogram", "export a mel-log spectrogram as CSV");
  spec_cmd->add_option("--input", sa.input, "signal (WAV)");
  spec_cmd->add_option("--params", sa.params, "parameter file; exports the synthesized response");
  spec_cmd->add_option("--out", sa.out, "output CSV")->required();
  spec_cmd->add_option("--n-fft", sa.spec.n_fft, "FFT size");
  spec_cmd->add_option("--hop", sa.spec.n_hop, "hop size");
  spec_cmd->add_option("--n-mel", sa.spec.n_mel, "mel bands");
  spec_cmd->add_option("--config", sa.config, "configuration file (JSON)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }

  if (*fit_cmd) return cmd_fit(fa);
  if (*render_cmd) return cmd_render(ra);
  if (*eval_cmd) return cmd_eval(ea);
  if (*grad_cmd) return cmd_gradcheck(ga);
  if (*spec_cmd) return cmd_spectrogram(sa);
  return kUsage;
}

}  // namespace fdnfit::cli
