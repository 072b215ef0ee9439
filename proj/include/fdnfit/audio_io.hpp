// Copyright 2026 The fdnfit Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "fdnfit/common.hpp"
#include "fdnfit/fft.hpp"
#include "fdnfit/spectral.hpp"

namespace fdnfit {

// ---------------------------------------------------------------------------
// Atomic file output
// ---------------------------------------------------------------------------

/// Writes through a temporary file in the destination directory, then renames
/// it over `path`.
inline void write_file_atomically(const std::filesystem::path& path,
                                  const std::function<void(std::ostream&)>& body,
                                  std::ios::openmode mode = std::ios::out) {
  namespace fs = std::filesystem;
  fs::path tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid());
  {
    std::ofstream os(tmp, mode | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    body(os);
    os.flush();
    if (!os) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("failed writing " + path.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move temporary file onto " + path.string());
  }
}

inline void write_text_atomically(const std::filesystem::path& path, const std::string& text) {
  write_file_atomically(path, [&](std::ostream& os) { os << text; });
}

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

}  // namespace detail

/// Reads a RIFF/WAVE file (PCM 16/24/32-bit or IEEE float 32/64-bit). PCM is
/// scaled by 2^-(bits-1). Multichannel input keeps channel 0 with a warning.
/// A non-zero `expected_rate` is enforced.
inline AudioBuffer read_wav(const std::filesystem::path& path,
                            double expected_rate = kSampleRate) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  const std::string where = path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw IoError(where + ": not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = detail::read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size() && std::memcmp(chunk, "data", 4) != 0)
      throw IoError(where + ": truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw IoError(where + ": malformed fmt chunk");
      format = detail::read_u16(bytes.data() + body);
      channels = detail::read_u16(bytes.data() + body + 2);
      rate = detail::read_u32(bytes.data() + body + 4);
      bits = detail::read_u16(bytes.data() + body + 14);
      if (format == 0xFFFE) {
        if (size < 40) throw IoError(where + ": malformed extensible fmt chunk");
        format = detail::read_u16(bytes.data() + body + 24);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = std::min<std::size_t>(size, bytes.size() - body);
    }
    pos = body + size + (size & 1u);
  }
  if (format == 0 || channels == 0) throw IoError(where + ": missing fmt chunk");
  if (!data) throw IoError(where + ": missing data chunk");

  const bool pcm = format == 1 && (bits == 16 || bits == 24 || bits == 32);
  const bool flt = format == 3 && (bits == 32 || bits == 64);
  if (!pcm && !flt)
    throw IoError(where + ": unsupported encoding (format " + std::to_string(format) + ", " +
                  std::to_string(bits) + " bits)");
  if (expected_rate > 0.0 && static_cast<double>(rate) != expected_rate)
    throw IoError(where + ": sample rate " + std::to_string(rate) + " Hz, expected " +
                  std::to_string(static_cast<long>(expected_rate)) + " Hz");
  if (channels > 1)
    warn(where + ": " + std::to_string(channels) + " channels, using channel 0");

  const std::size_t bytes_per = bits / 8;
  const std::size_t frame = bytes_per * channels;
  const std::size_t n = data_size / frame;
  AudioBuffer out(n, static_cast<double>(rate));
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* p = data + i * frame;
    double v = 0.0;
    if (flt && bits == 32) {
      float f;
      std::uint32_t u = detail::read_u32(p);
      std::memcpy(&f, &u, 4);
      v = f;
    } else if (flt) {
      std::uint64_t u = std::uint64_t(detail::read_u32(p)) | (std::uint64_t(detail::read_u32(p + 4)) << 32);
      std::memcpy(&v, &u, 8);
    } else if (bits == 16) {
      v = static_cast<std::int16_t>(detail::read_u16(p)) / 32768.0;
    } else if (bits == 24) {
      std::int32_t s = std::int32_t(p[0]) | (std::int32_t(p[1]) << 8) | (std::int32_t(p[2]) << 16);
      if (s & 0x800000) s -= 0x1000000;
      v = s / 8388608.0;
    } else {
      v = static_cast<std::int32_t>(detail::read_u32(p)) / 2147483648.0;
    }
    out[i] = v;
  }
  if (!all_finite(out.samples)) throw IoError(where + ": non-finite samples");
  return out;
}

/// Writes a mono 32-bit float WAV file.
inline void write_wav(const std::filesystem::path& path, const AudioBuffer& buf) {
  if (!all_finite(buf.samples)) throw InvalidParameter("write_wav: non-finite samples");
  const auto rate = static_cast<std::uint32_t>(std::lround(buf.sample_rate));
  const auto data_bytes = static_cast<std::uint32_t>(buf.size() * 4);
  std::string s;
  s.reserve(44 + data_bytes);
  s += "RIFF";
  detail::put_u32(s, 36 + data_bytes);
  s += "WAVEfmt ";
  detail::put_u32(s, 16);
  detail::put_u16(s, 3);  // IEEE float
  detail::put_u16(s, 1);
  detail::put_u32(s, rate);
  detail::put_u32(s, rate * 4);
  detail::put_u16(s, 4);
  detail::put_u16(s, 32);
  s += "data";
  detail::put_u32(s, data_bytes);
  for (double v : buf.samples) {
    const float f = static_cast<float>(v);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    detail::put_u32(s, u);
  }
  write_file_atomically(path, [&](std::ostream& os) { os.write(s.data(), static_cast<std::streamsize>(s.size())); },
                        std::ios::out | std::ios::binary);
}

// ---------------------------------------------------------------------------
// RIR preprocessing and convolution
// ---------------------------------------------------------------------------

/// Removes everything before the onset (first sample within `onset_db` of the
/// peak magnitude) and scales to unit energy.
inline AudioBuffer preprocess_rir(const AudioBuffer& h, double onset_db = -20.0) {
  const double peak = peak_abs(h.samples);
  if (!(peak > 0.0)) throw InvalidParameter("preprocess_rir: zero-energy impulse response");
  const double threshold = std::pow(10.0, onset_db / 20.0) * peak;
  std::size_t onset = 0;
  while (std::abs(h[onset]) < threshold) ++onset;
  AudioBuffer out(std::vector<double>(h.samples.begin() + static_cast<std::ptrdiff_t>(onset),
                                      h.samples.end()),
                  h.sample_rate);
  const double scale = 1.0 / std::sqrt(energy(out.samples));
  for (double& v : out.samples) v *= scale;
  return out;
}

/// Linear convolution through a zero-padded FFT; length len(x)+len(h)-1.
inline std::vector<double> fft_convolve(std::span<const double> x, std::span<const double> h) {
  if (x.empty() || h.empty()) throw InvalidParameter("convolve: empty input");
  const std::size_t len = x.size() + h.size() - 1;
  const std::size_t n = next_power_of_two(len);
  std::vector<double> xp(n, 0.0), hp(n, 0.0);
  std::copy(x.begin(), x.end(), xp.begin());
  std::copy(h.begin(), h.end(), hp.begin());
  auto xs = fft::rfft(xp);
  const auto hs = fft::rfft(hp);
  for (std::size_t k = 0; k < xs.size(); ++k) xs[k] *= hs[k];
  std::vector<double> y = fft::irfft(xs, n);
  y.resize(len);
  return y;
}

/// Cross-correlation r[n] = sum_t y[t] x[t - n] for n = 0..out_len-1; the
/// adjoint of convolution with x.
inline std::vector<double> fft_correlate(std::span<const double> y, std::span<const double> x,
                                         std::size_t out_len) {
  const std::size_t n = next_power_of_two(y.size() + x.size());
  std::vector<double> yp(n, 0.0), xp(n, 0.0);
  std::copy(y.begin(), y.end(), yp.begin());
  std::copy(x.begin(), x.end(), xp.begin());
  auto ys = fft::rfft(yp);
  const auto xs = fft::rfft(xp);
  for (std::size_t k = 0; k < ys.size(); ++k) ys[k] *= std::conj(xs[k]);
  std::vector<double> r = fft::irfft(ys, n);
  r.resize(std::min(out_len, n));
  r.resize(out_len, 0.0);
  return r;
}

inline AudioBuffer convolve(const AudioBuffer& x, const AudioBuffer& h) {
  if (x.sample_rate != h.sample_rate) throw InvalidParameter("convolve: sample rates differ");
  return AudioBuffer(fft_convolve(x.samples, h.samples), x.sample_rate);
}

// ---------------------------------------------------------------------------
// Spectrogram export
// ---------------------------------------------------------------------------

struct SpectrogramTable {
  std::vector<double> band_hz;   // rows
  std::vector<double> frame_s;   // columns
  Eigen::MatrixXd values;        // rows x columns, dB
};

/// CSV with a header row of frame start times (s) and one row per mel band
/// led by the band center frequency (Hz).
inline void export_spectrogram(const AudioBuffer& y, const SpectralConfig& cfg,
                               const std::filesystem::path& path, double eps = 1e-8) {
  const Eigen::MatrixXd spec = mel_log_spec(y, cfg, eps);
  const auto centers = mel_center_frequencies(cfg.n_mel, y.sample_rate);
  std::ostringstream os;
  os.precision(9);
  os << "band_hz\\frame_s";
  for (Eigen::Index t = 0; t < spec.cols(); ++t)
    os << ',' << static_cast<double>(t) * static_cast<double>(cfg.n_hop) / y.sample_rate;
  os << '\n';
  for (Eigen::Index m = 0; m < spec.rows(); ++m) {
    os << centers[static_cast<std::size_t>(m)];
    for (Eigen::Index t = 0; t < spec.cols(); ++t) os << ',' << spec(m, t);
    os << '\n';
  }
  write_text_atomically(path, os.str());
}

inline SpectrogramTable read_spectrogram_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  std::string line;
  if (!std::getline(is, line)) throw IoError(path.string() + ": empty spectrogram file");
  SpectrogramTable t;
  auto header = split(line);
  for (std::size_t i = 1; i < header.size(); ++i) t.frame_s.push_back(std::stod(header[i]));
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != header.size()) throw IoError(path.string() + ": ragged spectrogram row");
    t.band_hz.push_back(std::stod(cells[0]));
    std::vector<double> r;
    for (std::size_t i = 1; i < cells.size(); ++i) r.push_back(std::stod(cells[i]));
    rows.push_back(std::move(r));
  }
  t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.frame_s.size()));
  for (std::size_t m = 0; m < rows.size(); ++m)
    for (std::size_t k = 0; k < rows[m].size(); ++k)
      t.values(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) = rows[m][k];
  return t;
}

}  // namespace fdnfit
