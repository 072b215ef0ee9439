// Copyright 2026 The fdnfit Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include "fdnfit/acoustics.hpp"
#include "test_util.hpp"

namespace fdnfit {
namespace {

// Noise-free exponential whose energy falls 60 dB in t60 seconds.
std::vector<double> exponential_decay(double t60, double seconds) {
  std::vector<double> h(static_cast<std::size_t>(seconds * kSampleRate));
  for (std::size_t t = 0; t < h.size(); ++t)
    h[t] = std::exp(-3.0 * std::log(10.0) * static_cast<double>(t) / (kSampleRate * t60));
  return h;
}

std::vector<double> sine(double hz, std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t) x[t] = std::sin(2.0 * kPi * hz * static_cast<double>(t) / kSampleRate);
  return x;
}

TEST(OctaveFilterbank, ButterworthBandEdges) {
  const OctaveBandSet bands;
  for (std::size_t b = 0; b < bands.size(); ++b) {
    const auto s = butterworth_bandpass(bands.lower_edge(b), bands.upper_edge(b), kSampleRate);
    auto gain = [&](double hz) {
      const cplx e1 = std::polar(1.0, -2.0 * kPi * hz / kSampleRate);
      return std::abs(section_response(s[0], e1, e1 * e1) * section_response(s[1], e1, e1 * e1));
    };
    EXPECT_NEAR(gain(bands.lower_edge(b)), std::sqrt(0.5), 1e-12) << bands.centers_hz[b];
    EXPECT_NEAR(gain(bands.upper_edge(b)), std::sqrt(0.5), 1e-12) << bands.centers_hz[b];
    EXPECT_NEAR(gain(bands.centers_hz[b]), 1.0, 2e-3) << bands.centers_hz[b];
    EXPECT_LT(gain(bands.centers_hz[b] / 4.0), 0.1);
    EXPECT_LT(gain(std::min(bands.centers_hz[b] * 4.0, 23999.0)), 0.1);
  }
}

TEST(OctaveFilterbank, SineLandsInItsBand) {
  const auto out = octave_filterbank(AudioBuffer(sine(1000.0, 48000)));
  ASSERT_EQ(out.size(), 7u);
  double total = 0.0;
  for (const auto& b : out) total += energy(b.samples);
  EXPECT_GT(energy(out[3].samples) / total, 0.99);
}

TEST(OctaveFilterbank, ZeroInZeroOut) {
  for (const auto& b : octave_filterbank(AudioBuffer(4800, kSampleRate)))
    for (double v : b.samples) ASSERT_EQ(v, 0.0);
}

TEST(OctaveFilterbank, NearComplementaryOnWhiteNoise) {
  const AudioBuffer x(testing::random_signal(96000, 1));
  const auto out = octave_filterbank(x);
  std::vector<double> sum(x.size(), 0.0);
  for (const auto& b : out)
    for (std::size_t t = 0; t < sum.size(); ++t) sum[t] += b[t];
  EXPECT_LE(energy(sum), 1.01 * energy(x.samples));
}

TEST(Edc, StartsAtZeroAndDecreases) {
  const auto h = testing::random_signal(5000, 2);
  const auto edc = schroeder_edc(h);
  EXPECT_EQ(edc[0], 0.0);
  for (std::size_t t = 1; t < edc.size(); ++t) ASSERT_LE(edc[t], edc[t - 1]);
  EXPECT_THROW(schroeder_edc(std::vector<double>(10, 0.0)), UndefinedMetric);
}

TEST(Edc, ExponentialSlope) {
  const auto edc = schroeder_edc(exponential_decay(1.0, 2.0));
  const double slope = (edc[24000] - edc[4800]) / 0.4;
  EXPECT_NEAR(slope, -60.0, 0.6);
}

TEST(T30, RecoversExponentialDecays) {
  for (double t60 : {0.3, 0.6, 1.0, 2.0}) {
    const double est = estimate_t30(schroeder_edc(exponential_decay(t60, 2.0 * t60)));
    EXPECT_NEAR(est, t60, 0.02 * t60) << t60;
  }
}

TEST(T30, ScaleInvariant) {
  auto h = testing::random_signal(48000, 3);
  const auto env = exponential_decay(0.5, 1.0);
  for (std::size_t t = 0; t < h.size(); ++t) h[t] *= env[t];
  const double a = estimate_t30(schroeder_edc(h));
  for (double& v : h) v *= -37.0;
  EXPECT_NEAR(estimate_t30(schroeder_edc(h)), a, 1e-9 * a);
}

TEST(T30, EarlyTruncationIsInsufficientDecay) {
  // A slow decay cut after 1000 samples: the last sample alone holds about
  // 1e-3 of the energy, so the curve bottoms out near -30 dB.
  auto h = exponential_decay(1.0, 2.0);
  h.resize(1000);
  const auto edc = schroeder_edc(h);
  EXPECT_GT(edc.back(), -35.0);
  EXPECT_THROW(estimate_t30(edc), InsufficientDecay);
}

TEST(C50, TwoImpulseConstructions) {
  std::vector<double> h(6000, 0.0);
  h[0] = 1.0;
  h[2880] = 1.0;  // 60 ms
  EXPECT_NEAR(estimate_c50(h).db, 0.0, 1e-9);
  h[2880] = 0.5;
  EXPECT_NEAR(estimate_c50(h).db, 10.0 * std::log10(4.0), 1e-9);
  h[2880] = 0.0;
  h[2399] = 1.0;  // still early
  const auto inf = estimate_c50(h);
  EXPECT_TRUE(inf.infinite);
  h[2399] = 0.0;
  h[2400] = 1.0;  // first late sample
  EXPECT_NEAR(estimate_c50(h).db, 0.0, 1e-9);
}

TEST(C50, ScaleInvariantAndShiftSensitive) {
  auto h = testing::random_signal(9600, 4);
  const auto env = exponential_decay(0.4, 0.2);
  for (std::size_t t = 0; t < h.size(); ++t) h[t] *= env[t];
  const double a = estimate_c50(h).db;
  auto scaled = h;
  for (double& v : scaled) v *= 3.0;
  EXPECT_NEAR(estimate_c50(scaled).db, a, 1e-9);
  std::vector<double> shifted(h.size() + 480, 0.0);
  std::copy(h.begin(), h.end(), shifted.begin() + 480);
  EXPECT_LT(estimate_c50(shifted).db, a);
}

TEST(Pearson, AffineInvariance) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = testing::random_signal(7, static_cast<std::uint64_t>(trial) + 100);
    const double a = std::abs(u(rng)) + 0.01, b = u(rng);
    std::vector<double> y(x.size()), z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      y[i] = a * x[i] + b;
      z[i] = -a * x[i] + b;
    }
    EXPECT_NEAR(pearson(x, y).value, 1.0, 1e-12);
    EXPECT_NEAR(pearson(x, z).value, -1.0, 1e-12);
    EXPECT_LE(std::abs(pearson(x, y).value), 1.0);
  }
}

TEST(Pearson, ZeroVariance) {
  const std::vector<double> c{2.0, 2.0, 2.0}, d{1.0, 2.0, 3.0};
  const auto same = pearson(c, c);
  EXPECT_EQ(same.value, 1.0);
  EXPECT_TRUE(same.zero_variance);
  const auto other = pearson(c, d);
  EXPECT_TRUE(other.undefined);
  EXPECT_TRUE(other.zero_variance);
}

AudioBuffer decaying_noise(std::uint64_t seed, double t60, double seconds) {
  auto h = testing::random_signal(static_cast<std::size_t>(seconds * kSampleRate), seed);
  const auto env = exponential_decay(t60, seconds);
  for (std::size_t t = 0; t < h.size(); ++t) h[t] *= env[t];
  return AudioBuffer(h);
}

TEST(CompareMetrics, IdenticalResponses) {
  const AudioBuffer h = decaying_noise(5, 0.5, 1.0);
  const auto rep = compare_metrics(h, h);
  EXPECT_EQ(rep.bands.size(), 7u);
  EXPECT_EQ(rep.t30_mape_percent, 0.0);
  EXPECT_EQ(rep.c50_mae_db, 0.0);
  EXPECT_EQ(rep.t30_pcc.value, 1.0);
  EXPECT_GE(rep.c50_pcc.value, 1.0 - 1e-12);
}

TEST(CompareMetrics, StretchedDecayGivesTenPercent) {
  // Time-stretching by resampling the envelope scales every band's T30.
  const AudioBuffer ref = decaying_noise(6, 0.5, 1.2);
  const auto base = analyze_bands(ref);
  AcousticReport rep;
  std::vector<double> ref_t, est_t;
  for (const auto& b : base) {
    ASSERT_TRUE(b.t30.has_value());
    ref_t.push_back(*b.t30);
    est_t.push_back(1.1 * *b.t30);
  }
  double ape = 0.0;
  for (std::size_t b = 0; b < ref_t.size(); ++b) ape += std::abs(est_t[b] - ref_t[b]) / ref_t[b];
  EXPECT_NEAR(100.0 * ape / 7.0, 10.0, 1e-9);
  EXPECT_NEAR(pearson(ref_t, est_t).value, 1.0, 1e-12);
}

TEST(CompareMetrics, InsufficientBandsAreExcludedAndFlagged) {
  const AudioBuffer ref = decaying_noise(7, 0.5, 1.0);
  AudioBuffer est = ref;
  est.samples.resize(200);  // far too short to decay in any band
  const auto rep = compare_metrics(ref, est);
  EXPECT_LT(rep.valid_t30_bands(), 7u);
  EXPECT_FALSE(rep.flags.empty());
}

}  // namespace
}  // namespace fdnfit
