// Copyright 2026 The fdnfit Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <fstream>

#include "fdnfit/audio_io.hpp"
#include "test_util.hpp"

namespace fdnfit {
namespace {

using testing::TempDir;

void put(std::string& s, std::uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

// Minimal PCM writer for test fixtures.
void write_pcm(const std::filesystem::path& path, const std::vector<std::int32_t>& frames,
               int bits, int channels, std::uint32_t rate) {
  const int bytes = bits / 8;
  const auto data = static_cast<std::uint32_t>(frames.size() * bytes);
  std::string s = "RIFF";
  put(s, 36 + data, 4);
  s += "WAVEfmt ";
  put(s, 16, 4);
  put(s, 1, 2);
  put(s, static_cast<std::uint32_t>(channels), 2);
  put(s, rate, 4);
  put(s, rate * static_cast<std::uint32_t>(bytes * channels), 4);
  put(s, static_cast<std::uint32_t>(bytes * channels), 2);
  put(s, static_cast<std::uint32_t>(bits), 2);
  s += "data";
  put(s, data, 4);
  for (auto v : frames) put(s, static_cast<std::uint32_t>(v), bytes);
  std::ofstream(path, std::ios::binary) << s;
}

TEST(Wav, Float32RoundTripIsBitExact) {
  TempDir dir("wav");
  std::vector<double> x = testing::random_signal(1000, 1, 0.3);
  for (double& v : x) v = static_cast<float>(v);
  write_wav(dir / "a.wav", AudioBuffer(x));
  const AudioBuffer y = read_wav(dir / "a.wav");
  EXPECT_EQ(y.sample_rate, 48000.0);
  ASSERT_EQ(y.samples, x);
}

TEST(Wav, PcmScaling) {
  TempDir dir("wav");
  write_pcm(dir / "p16.wav", {32767, -32768, 0, 16384}, 16, 1, 48000);
  const AudioBuffer a = read_wav(dir / "p16.wav");
  ASSERT_EQ(a.size(), 4u);
  EXPECT_EQ(a[0], 32767.0 / 32768.0);
  EXPECT_EQ(a[1], -1.0);
  EXPECT_EQ(a[3], 0.5);
  write_pcm(dir / "p24.wav", {0x7FFFFF, -0x800000, 0x400000}, 24, 1, 48000);
  const AudioBuffer b = read_wav(dir / "p24.wav");
  EXPECT_EQ(b[0], 8388607.0 / 8388608.0);
  EXPECT_EQ(b[1], -1.0);
  EXPECT_EQ(b[2], 0.5);
}

TEST(Wav, MultichannelKeepsFirstChannelWithWarning) {
  TempDir dir("wav");
  write_pcm(dir / "st.wav", {16384, -16384, 8192, -8192}, 16, 2, 48000);
  std::vector<std::string> warnings;
  ScopedWarningSink sink([&](const std::string& m) { warnings.push_back(m); });
  const AudioBuffer a = read_wav(dir / "st.wav");
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0], 0.5);
  EXPECT_EQ(a[1], 0.25);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Wav, WrongSampleRateNamesExpectedRate) {
  TempDir dir("wav");
  write_pcm(dir / "cd.wav", {1, 2, 3}, 16, 1, 44100);
  try {
    read_wav(dir / "cd.wav");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("48000"), std::string::npos) << e.what();
  }
}

TEST(Wav, MalformedInputs) {
  TempDir dir("wav");
  std::ofstream(dir / "junk.wav") << "this is not audio";
  EXPECT_THROW(read_wav(dir / "junk.wav"), IoError);
  EXPECT_THROW(read_wav(dir / "missing.wav"), IoError);
  write_pcm(dir / "p8.wav", {1, 2}, 8, 1, 48000);
  EXPECT_THROW(read_wav(dir / "p8.wav"), IoError);
}

TEST(Wav, WriteIsAtomic) {
  TempDir dir("wav");
  write_wav(dir / "a.wav", AudioBuffer(std::vector<double>(10, 0.1)));
  write_wav(dir / "a.wav", AudioBuffer(std::vector<double>(20, 0.2)));
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) {
    (void)e;
    ++files;
  }
  EXPECT_EQ(files, 1u);
  EXPECT_EQ(read_wav(dir / "a.wav").size(), 20u);
}

TEST(Preprocess, MovesOnsetToZeroAndNormalizes) {
  std::vector<double> h(1000, 0.0);
  h[500] = 0.25;
  const AudioBuffer p = preprocess_rir(AudioBuffer(h));
  ASSERT_EQ(p.size(), 500u);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_NEAR(energy(p.samples), 1.0, 1e-15);
}

TEST(Preprocess, QuietPrecursorIsDiscarded) {
  std::vector<double> h(1000, 0.0);
  h[100] = 0.01;  // -40 dB
  h[300] = 1.0;
  h[301] = -0.5;
  const AudioBuffer p = preprocess_rir(AudioBuffer(h));
  EXPECT_EQ(p.size(), 700u);
  EXPECT_NEAR(p[0], 1.0 / std::sqrt(1.25), 1e-15);
  // A precursor at -19 dB counts as the onset.
  h[100] = std::pow(10.0, -19.0 / 20.0);
  EXPECT_EQ(preprocess_rir(AudioBuffer(h)).size(), 900u);
}

TEST(Preprocess, Idempotent) {
  auto h = testing::random_signal(5000, 2);
  for (std::size_t t = 0; t < h.size(); ++t) h[t] *= std::exp(-static_cast<double>(t) / 800.0);
  const AudioBuffer a = preprocess_rir(AudioBuffer(h));
  const AudioBuffer b = preprocess_rir(a);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t t = 0; t < a.size(); ++t) ASSERT_NEAR(a[t], b[t], 1e-12);
  EXPECT_NEAR(energy(b.samples), 1.0, 1e-9);
}

TEST(Preprocess, ZeroEnergyIsAnError) {
  EXPECT_THROW(preprocess_rir(AudioBuffer(100, kSampleRate)), InvalidParameter);
}

TEST(Convolution, IdentityAndCommutativity) {
  const AudioBuffer x(testing::random_signal(300, 3)), h(testing::random_signal(77, 4));
  const AudioBuffer delta(std::vector<double>{1.0});
  const AudioBuffer y = convolve(x, delta);
  ASSERT_EQ(y.size(), x.size());
  for (std::size_t t = 0; t < x.size(); ++t) EXPECT_NEAR(y[t], x[t], 1e-12);
  const AudioBuffer a = convolve(x, h), b = convolve(h, x);
  ASSERT_EQ(a.size(), 376u);
  for (std::size_t t = 0; t < a.size(); ++t) EXPECT_NEAR(a[t], b[t], 1e-9);
  EXPECT_THROW(convolve(x, AudioBuffer()), InvalidParameter);
}

TEST(Convolution, MatchesBruteForce) {
  const auto x = testing::random_signal(256, 5), h = testing::random_signal(256, 6);
  const auto fast = fft_convolve(x, h);
  const auto slow = testing::brute_force_convolve(x, h);
  ASSERT_EQ(fast.size(), slow.size());
  for (std::size_t t = 0; t < fast.size(); ++t) EXPECT_NEAR(fast[t], slow[t], 1e-9);
}

TEST(Convolution, CorrelationIsTheAdjoint) {
  // <conv(x, h), y> == <h, corr(y, x)>
  const auto x = testing::random_signal(123, 7), h = testing::random_signal(45, 8);
  const auto y = testing::random_signal(167, 9);
  const auto c = fft_convolve(x, h);
  const auto r = fft_correlate(y, x, h.size());
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t t = 0; t < c.size(); ++t) lhs += c[t] * y[t];
  for (std::size_t t = 0; t < h.size(); ++t) rhs += h[t] * r[t];
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::abs(lhs));
}

TEST(Spectrogram, ExportAndReimport) {
  TempDir dir("spec");
  const SpectralConfig cfg{512, 128, 32};
  const AudioBuffer y(testing::random_signal(4000, 10));
  export_spectrogram(y, cfg, dir / "s.csv");
  const auto t = read_spectrogram_csv(dir / "s.csv");
  const Eigen::MatrixXd ref = mel_log_spec(y, cfg);
  ASSERT_EQ(t.values.rows(), 32);
  ASSERT_EQ(t.values.cols(), ref.cols());
  ASSERT_EQ(t.band_hz.size(), 32u);
  EXPECT_NEAR(t.frame_s[1], 128.0 / 48000.0, 1e-8 * 128.0 / 48000.0);  // printed to 10 digits
  for (Eigen::Index m = 0; m < ref.rows(); ++m)
    for (Eigen::Index c = 0; c < ref.cols(); ++c)
      ASSERT_NEAR(t.values(m, c), ref(m, c), 1e-6 * std::max(1.0, std::abs(ref(m, c))));
}

TEST(Spectrogram, SilenceIsConstant) {
  TempDir dir("spec");
  export_spectrogram(AudioBuffer(2048, kSampleRate), {512, 128, 32}, dir / "s.csv");
  const auto t = read_spectrogram_csv(dir / "s.csv");
  EXPECT_EQ(t.values.maxCoeff(), -80.0);
  EXPECT_EQ(t.values.minCoeff(), -80.0);
}

}  // namespace
}  // namespace fdnfit
