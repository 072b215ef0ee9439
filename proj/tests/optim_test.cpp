// Copyright 2026 The fdnfit Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <set>

#include "fdnfit/optim.hpp"
#include "test_util.hpp"

namespace fdnfit {
namespace {

FitConfig small_config(std::size_t log2_m = 13) {
  FitConfig cfg;
  cfg.fft_length = std::size_t{1} << log2_m;
  cfg.max_steps = 20;
  return cfg;
}

AudioBuffer rir_of(const FdnRawParams& p, const FitConfig& cfg) {
  FitProblem gen(AudioBuffer(std::vector<double>{1.0}), std::nullopt, cfg);
  return gen.impulse_response(p);
}

FdnRawParams filled(double v) {
  FdnRawParams p = FdnRawParams::zeros(8, GeqDesign::kStages);
  std::vector<double> theta(p.size(), v);
  p.assign(theta);
  return p;
}

TEST(AdamW, ZeroGradientZeroDecayIsIdentity) {
  FdnRawParams p = random_params(1);
  const auto before = p.flatten();
  OptimizerState s = OptimizerState::for_params(p);
  for (int k = 0; k < 5; ++k) adamw_step(s, p, filled(0.0), 0.05, 0.0);
  EXPECT_EQ(p.flatten(), before);
  EXPECT_EQ(s.step, 5u);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  FdnRawParams p = random_params(2);
  const auto before = p.flatten();
  FdnRawParams g = random_params(3);  // arbitrary signs and magnitudes
  const auto gv = g.flatten();
  OptimizerState s = OptimizerState::for_params(p);
  adamw_step(s, p, g, 0.01, 0.0);
  const auto after = p.flatten();
  for (std::size_t i = 0; i < after.size(); ++i) {
    if (gv[i] == 0.0) {
      EXPECT_EQ(after[i], before[i]);
      continue;
    }
    const double expected = -0.01 * std::abs(gv[i]) / (std::abs(gv[i]) + 1e-8) * (gv[i] > 0 ? 1 : -1);
    EXPECT_NEAR(after[i] - before[i], expected, 1e-15);
    EXPECT_NEAR(std::abs(after[i] - before[i]), 0.01, 0.01 * 1e-8 / std::abs(gv[i]) + 1e-15);
  }
}

TEST(AdamW, DecoupledDecayScalesParameters) {
  FdnRawParams p = random_params(4);
  const auto before = p.flatten();
  OptimizerState s = OptimizerState::for_params(p);
  const double lr = 0.1;
  for (int k = 0; k < 3; ++k) adamw_step(s, p, filled(0.0), lr, 0.01);
  const auto after = p.flatten();
  const double scale = std::pow(1.0 - lr * 0.01, 3);
  for (std::size_t i = 0; i < after.size(); ++i) EXPECT_NEAR(after[i], before[i] * scale, 1e-15);
}

TEST(AdamW, ShapeMismatchThrows) {
  FdnRawParams p = random_params(1);
  OptimizerState s = OptimizerState::for_params(FdnRawParams::zeros(4, GeqDesign::kStages));
  EXPECT_THROW(adamw_step(s, p, filled(0.0), 0.1, 0.0), InvalidParameter);
}

TEST(Schedule, Shapes) {
  LrSchedule c;
  EXPECT_EQ(c.at(0.05, 0, 100), 0.05);
  EXPECT_NEAR(c.at(0.05, 50, 100), 0.025, 1e-15);
  EXPECT_NEAR(c.at(0.05, 100, 100), 0.0, 1e-15);
  LrSchedule k{LrSchedule::Kind::Constant};
  EXPECT_EQ(k.at(0.05, 77, 100), 0.05);
  LrSchedule s{LrSchedule::Kind::Step, 0.5, 10};
  EXPECT_EQ(s.at(0.08, 9, 100), 0.08);
  EXPECT_EQ(s.at(0.08, 10, 100), 0.04);
  EXPECT_EQ(s.at(0.08, 25, 100), 0.02);
}

TEST(Config, Validation) {
  FitConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.max_steps = 0;
  EXPECT_THROW(cfg.validate(), ConfigurationError);
  cfg = {};
  cfg.lr = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigurationError);
  cfg = {};
  cfg.fft_length = 1000;
  EXPECT_THROW(cfg.validate(), ConfigurationError);
}

TEST(Initialization, DocumentedDistribution) {
  const FdnRawParams p = default_initialization(0);
  EXPECT_TRUE(p.p_T.isZero());
  EXPECT_TRUE((p.p_gamma.array() == 4.0).all());
  EXPECT_EQ(p.g, 0.5);
  // p_gamma = 4 is about 0.982 linear gain per stage.
  EXPECT_NEAR(std::pow(10.0, attenuation_db(4.0) / 20.0), 0.982, 5e-4);
  EXPECT_EQ(default_initialization(0).flatten(), p.flatten());
  EXPECT_NE(default_initialization(1).flatten(), p.flatten());
}

TEST(Gradient, StationaryAtSelfTarget) {
  FitConfig cfg = small_config();
  cfg.loss_weights.lambda_sparsity = 0.0;
  const FdnRawParams truth = testing::fast_decay_params(5);
  const AudioBuffer dry(testing::random_signal(3000, 6));
  FitProblem gen(AudioBuffer(std::vector<double>{1.0}), std::nullopt, cfg);
  const AudioBuffer wet(fft_convolve(dry.samples, gen.impulse_response(truth).samples));
  FitProblem p(wet, dry, cfg);
  FdnRawParams g_min, g_init;
  EXPECT_EQ(p.evaluate(truth, &g_min).total, 0.0);
  p.evaluate(default_initialization(0), &g_init);
  auto norm = [](const FdnRawParams& g) {
    double s = 0.0;
    for (double v : g.flatten()) s += v * v;
    return std::sqrt(s);
  };
  ASSERT_GT(norm(g_init), 0.0);
  EXPECT_LT(norm(g_min), 1e-6 * norm(g_init));
}

TEST(Gradient, DirectGainWithoutLoopOutput) {
  FitConfig cfg = small_config();
  cfg.loss_weights.lambda_sparsity = 0.0;
  FdnRawParams p = testing::fast_decay_params(7);
  p.c.setZero();
  FitProblem prob(rir_of(testing::fast_decay_params(8), cfg), std::nullopt, cfg);
  FdnRawParams grad;
  prob.evaluate(p, &grad);
  const double h = 1e-4;
  FdnRawParams plus = p, minus = p;
  plus.g += h;
  minus.g -= h;
  const double fd = (prob.evaluate(plus).total - prob.evaluate(minus).total) / (2 * h);
  EXPECT_LT(std::abs(fd - grad.g) / std::abs(fd), 1e-6) << fd << " " << grad.g;
}

TEST(Gradient, RandomSystemMatchesFiniteDifferences) {
  FitConfig cfg = small_config(14);
  FitProblem prob(rir_of(random_params(11), cfg), std::nullopt, cfg);
  const auto res = finite_diff_check(prob, random_params(10), 1e-4, 64, 3);
  ASSERT_EQ(res.coordinates.size(), 64u);
  std::set<Tensor> seen;
  for (const auto& c : res.coordinates) seen.insert(c.tensor);
  EXPECT_EQ(seen.size(), 6u);
  EXPECT_LT(res.max_rel_error, 1e-3);
}

TEST(Gradient, SignalModeMatchesFiniteDifferences) {
  FitConfig cfg = small_config();
  const AudioBuffer dry(testing::random_signal(2000, 12));
  const AudioBuffer wet(fft_convolve(dry.samples, rir_of(random_params(13), cfg).samples));
  FitProblem prob(wet, dry, cfg);
  EXPECT_EQ(prob.mode(), FitMode::Signal);
  EXPECT_LT(finite_diff_check(prob, random_params(14), 1e-4, 30, 4).max_rel_error, 1e-3);
}

TEST(Gradient, StepSweepHasMinimumBelowTolerance) {
  FitConfig cfg = small_config(14);
  FitProblem prob(rir_of(random_params(16), cfg), std::nullopt, cfg);
  double best = std::numeric_limits<double>::infinity();
  for (double h : {1e-3, 1e-4, 1e-5}) {
    const double e = finite_diff_check(prob, random_params(15), h, 24, 5).max_rel_error;
    best = std::min(best, e);
  }
  EXPECT_LT(best, 1e-3);
}

TEST(Fit, SelfFitRecoversToneTarget) {
  // Target: the same-seed initialization with a different tone correction.
  FitConfig cfg = small_config();
  cfg.max_steps = 1000;
  cfg.lr = 0.002;  // small steps keep the shared mixing structure intact
  cfg.weight_decay = 0.0;
  cfg.loss_weights.lambda_sparsity = 0.0;
  FdnRawParams truth = default_initialization(cfg.seed);
  for (Eigen::Index j = 0; j < truth.p_T.size(); ++j) truth.p_T(j) = 0.1 * std::sin(1.0 + static_cast<double>(j));
  FitProblem p(rir_of(truth, cfg), std::nullopt, cfg);
  const FitResult r = fit(p, default_initialization(cfg.seed));
  ASSERT_EQ(r.trajectory.size(), cfg.max_steps);
  EXPECT_LE(r.best_loss, 1e-4 * r.trajectory.front().total)
      << r.best_loss << " vs initial " << r.trajectory.front().total;
}

TEST(Fit, TrajectoryBookkeepingAndDeterminism) {
  FitConfig cfg = small_config();
  cfg.max_steps = 15;
  const AudioBuffer target = rir_of(testing::fast_decay_params(20), cfg);
  FitProblem p1(target, std::nullopt, cfg), p2(target, std::nullopt, cfg);
  const FitResult a = fit(p1, default_initialization(cfg.seed));
  const FitResult b = fit(p2, default_initialization(cfg.seed));
  ASSERT_EQ(a.trajectory.size(), 15u);
  ASSERT_EQ(b.trajectory.size(), 15u);
  for (std::size_t i = 0; i < a.trajectory.size(); ++i) {
    EXPECT_EQ(a.trajectory[i].step, i);
    EXPECT_EQ(a.trajectory[i].total, b.trajectory[i].total);
    EXPECT_EQ(a.trajectory[i].lr, b.trajectory[i].lr);
    EXPECT_NEAR(a.trajectory[i].total,
                a.trajectory[i].spectral + cfg.loss_weights.lambda_sparsity * a.trajectory[i].sparsity,
                1e-12 * a.trajectory[i].total);
  }
  EXPECT_EQ(a.best.flatten(), b.best.flatten());
  EXPECT_LT(a.best_step, cfg.max_steps);
  for (std::size_t i = 1; i < a.best_so_far.size(); ++i) EXPECT_LE(a.best_so_far[i], a.best_so_far[i - 1]);
  double min_total = std::numeric_limits<double>::infinity();
  for (const auto& r : a.trajectory) min_total = std::min(min_total, r.total);
  EXPECT_EQ(a.best_loss, min_total);
  EXPECT_EQ(p1.evaluate(a.best).total, a.best_loss);
  EXPECT_LT(a.best_loss, a.trajectory.front().total);
}

TEST(Fit, PatienceStopsEarly) {
  // Starting at the exact optimum, weight decay can only make things worse.
  FitConfig cfg = small_config();
  cfg.max_steps = 200;
  cfg.patience = 3;
  cfg.loss_weights.lambda_sparsity = 0.0;
  const FdnRawParams truth = default_initialization(0);
  FitProblem p(rir_of(truth, cfg), std::nullopt, cfg);
  ScopedWarningSink quiet([](const std::string&) {});
  const FitResult r = fit(p, truth);
  EXPECT_TRUE(r.stopped_by_patience);
  EXPECT_EQ(r.trajectory.size(), r.best_step + cfg.patience + 1);
  EXPECT_EQ(r.best_so_far.size(), r.trajectory.size());
}

TEST(Fit, NoImprovementIsFlagged) {
  FitConfig cfg = small_config();
  cfg.max_steps = 5;
  cfg.loss_weights.lambda_sparsity = 0.0;
  const FdnRawParams truth = default_initialization(0);
  FitProblem p(rir_of(truth, cfg), std::nullopt, cfg);
  std::vector<std::string> warnings;
  ScopedWarningSink sink([&](const std::string& m) { warnings.push_back(m); });
  const FitResult r = fit(p, truth);
  EXPECT_TRUE(r.no_improvement);
  EXPECT_EQ(r.best_step, 0u);
  EXPECT_EQ(r.best_loss, 0.0);
  EXPECT_EQ(warnings.size(), 1u);
}

}  // namespace
}  // namespace fdnfit
