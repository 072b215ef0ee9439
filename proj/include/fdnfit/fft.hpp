// Copyright 2026 The fdnfit Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <fftw3.h>

#include <complex>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "fdnfit/common.hpp"

namespace fdnfit::fft {

using cplx = std::complex<double>;

namespace detail {

// FFTW planning is not thread-safe; execution with the new-array interface
// is. Plans use FFTW_ESTIMATE so the chosen algorithm never depends on timing.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan forward(std::size_t n) { return get(n, true); }
  fftw_plan inverse(std::size_t n) { return get(n, false); }

  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

 private:
  fftw_plan get(std::size_t n, bool fwd) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto key = std::make_pair(n, fwd);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::vector<double> re(n);
    std::vector<cplx> sp(n / 2 + 1);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    fftw_plan plan =
        fwd ? fftw_plan_dft_r2c_1d(static_cast<int>(n), re.data(),
                                   reinterpret_cast<fftw_complex*>(sp.data()), flags)
            : fftw_plan_dft_c2r_1d(static_cast<int>(n),
                                   reinterpret_cast<fftw_complex*>(sp.data()),
                                   re.data(), flags);
    plans_.emplace(key, plan);
    return plan;
  }

  std::mutex mutex_;
  std::map<std::pair<std::size_t, bool>, fftw_plan> plans_;
};

}  // namespace detail

/// Unnormalized real-to-complex DFT; `out` holds n/2+1 bins.
inline void rfft(std::span<const double> in, std::span<cplx> out) {
  const std::size_t n = in.size();
  if (out.size() != n / 2 + 1) throw std::invalid_argument("rfft: output size");
  fftw_plan plan = detail::PlanCache::instance().forward(n);
  fftw_execute_dft_r2c(plan, const_cast<double*>(in.data()),
                       reinterpret_cast<fftw_complex*>(out.data()));
}

inline std::vector<cplx> rfft(std::span<const double> in) {
  std::vector<cplx> out(in.size() / 2 + 1);
  rfft(in, out);
  return out;
}

/// Inverse of rfft including the 1/n factor. The imaginary parts of the DC
/// and Nyquist bins are ignored.
inline void irfft(std::span<const cplx> in, std::span<double> out) {
  const std::size_t n = out.size();
  if (in.size() != n / 2 + 1) throw std::invalid_argument("irfft: input size");
  std::vector<cplx> scratch(in.begin(), in.end());
  scratch.front().imag(0.0);
  if (n % 2 == 0) scratch.back().imag(0.0);
  fftw_plan plan = detail::PlanCache::instance().inverse(n);
  fftw_execute_dft_c2r(plan, reinterpret_cast<fftw_complex*>(scratch.data()),
                       out.data());
  const double scale = 1.0 / static_cast<double>(n);
  for (double& v : out) v *= scale;
}

inline std::vector<double> irfft(std::span<const cplx> in, std::size_t n) {
  std::vector<double> out(n);
  irfft(in, out);
  return out;
}

/// e^{+j 2 pi q / n} for q = 0..n-1, so that z_k^m = table[(k*m) mod n].
class UnitCircleTable {
 public:
  explicit UnitCircleTable(std::size_t n) : n_(n), table_(n) {
    for (std::size_t q = 0; q < n; ++q) {
      const double w = 2.0 * kPi * static_cast<double>(q) / static_cast<double>(n);
      table_[q] = cplx(std::cos(w), std::sin(w));
    }
  }

  std::size_t size() const noexcept { return n_; }

  /// e^{j 2 pi k p / n} for any signed integer power p.
  cplx power(std::size_t k, long long p) const {
    const long long n = static_cast<long long>(n_);
    long long q = (static_cast<long long>(k % n_) * (p % n)) % n;
    if (q < 0) q += n;
    return table_[static_cast<std::size_t>(q)];
  }

 private:
  std::size_t n_;
  std::vector<cplx> table_;
};

}  // namespace fdnfit::fft
