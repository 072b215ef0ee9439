// Copyright 2026 The fdnfit Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include "fdnfit/fft.hpp"
#include "fdnfit/geq.hpp"
#include "test_util.hpp"

namespace fdnfit {
namespace {

std::vector<double> log_grid(std::size_t n, double lo, double hi) {
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i)
    f[i] = lo * std::pow(hi / lo, static_cast<double>(i) / static_cast<double>(n - 1));
  return f;
}

TEST(Geq, StageLayout) {
  const auto s = GeqDesign{}.sections();
  ASSERT_EQ(s.size(), 11u);
  EXPECT_EQ(s.front().kind, SectionKind::LowShelf);
  EXPECT_EQ(s.back().kind, SectionKind::HighShelf);
  EXPECT_DOUBLE_EQ(s[1].freq_hz, 62.5);
  EXPECT_DOUBLE_EQ(s[9].freq_hz, 16000.0);
}

TEST(Geq, ZeroGainsAreExactlyUnity) {
  const std::vector<double> gains(11, 0.0);
  const auto f = dft_bin_frequencies(256, kSampleRate);
  for (const auto& h : geq_response(GeqDesign{}, gains, f)) {
    EXPECT_EQ(h.real(), 1.0);
    EXPECT_EQ(h.imag(), 0.0);
  }
}

TEST(Geq, PeakingCutHitsCommandGainAtCenter) {
  std::vector<double> gains(11, 0.0);
  gains[5] = -6.0;  // 1 kHz
  const std::vector<double> f{1000.0};
  EXPECT_NEAR(std::abs(geq_response(GeqDesign{}, gains, f)[0]), std::pow(10.0, -6.0 / 20.0), 1e-9);
}

TEST(Geq, ShelvesReachCommandGainAtTheirPlateau) {
  std::vector<double> gains(11, 0.0);
  gains[0] = -9.0;
  std::vector<double> f{0.0};
  EXPECT_NEAR(std::abs(geq_response(GeqDesign{}, gains, f)[0]), std::pow(10.0, -9.0 / 20.0), 1e-10);
  gains[0] = 0.0;
  gains[10] = -4.0;
  f = {0.5 * kSampleRate};
  EXPECT_NEAR(std::abs(geq_response(GeqDesign{}, gains, f)[0]), std::pow(10.0, -4.0 / 20.0), 1e-12);
}

TEST(Geq, CutOnlyGainsNeverAmplify) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> g(-12.0, 0.0);
  const auto f = log_grid(2000, 1.0, 23999.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> gains(11);
    for (double& v : gains) v = g(rng);
    for (const auto& h : geq_response(GeqDesign{}, gains, f)) EXPECT_LE(std::abs(h), 1.0 + 1e-12);
  }
}

TEST(Geq, GainDerivativeMatchesFiniteDifferences) {
  const auto specs = GeqDesign{}.sections();
  const cplx e1 = std::polar(1.0, -0.05), e2 = e1 * e1;
  for (const auto& spec : specs) {
    for (double g0 : {-7.5, -0.3, 4.0}) {
      const auto [h, dh] = section_response_and_derivative(
          section_coeffs_with_gain_derivative(spec, kSampleRate, g0), e1, e2);
      const double step = 1e-5;
      auto eval = [&](double g) {
        return section_response(section_coeffs(spec, kSampleRate, gain_db_to_amp(g)), e1, e2);
      };
      const cplx fd = (eval(g0 + step) - eval(g0 - step)) / (2.0 * step);
      EXPECT_NEAR(std::abs(h - eval(g0)), 0.0, 1e-14);
      EXPECT_LT(std::abs(dh - fd), 1e-7 * std::max(1.0, std::abs(fd))) << spec.freq_hz << " Hz, " << g0 << " dB";
    }
  }
}

TEST(Geq, TimeDomainCascadeMatchesFrequencyResponse) {
  std::vector<double> gains{-3.0, -1.0, -2.5, -0.5, -4.0, -1.5, -2.0, -3.5, -0.7, -1.2, -6.0};
  GeqFilter filt(GeqDesign{}, gains);
  const std::size_t n = 1 << 16;
  std::vector<double> h(n);
  for (std::size_t t = 0; t < n; ++t) h[t] = filt.process(t == 0 ? 1.0 : 0.0);
  const auto spec = fft::rfft(h);
  const auto ref = geq_response(GeqDesign{}, gains, dft_bin_frequencies(n, kSampleRate));
  double worst = 0.0;
  for (std::size_t k = 0; k < spec.size(); ++k) worst = std::max(worst, std::abs(spec[k] - ref[k]));
  EXPECT_LT(worst, 1e-9);
}

TEST(Geq, RejectsNonFiniteGains) {
  std::vector<double> gains(11, 0.0);
  gains[3] = std::nan("");
  const std::vector<double> f{100.0};
  EXPECT_THROW(geq_response(GeqDesign{}, gains, f), InvalidParameter);
}

}  // namespace
}  // namespace fdnfit
