// Copyright 2026 The fdnfit Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Feedback delay network
//
//   H(z) = T(z) (c^T [D_m(z)^-1 - U Gamma(z)]^-1 b + g z^-m_d)
//
// realized by frequency sampling on the M-point DFT grid, plus a
// sample-by-sample renderer of the same recursion.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <complex>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fdnfit/common.hpp"
#include "fdnfit/expm.hpp"
#include "fdnfit/fft.hpp"
#include "fdnfit/geq.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fdnfit {

// ---------------------------------------------------------------------------
// Structure
// ---------------------------------------------------------------------------

/// Fixed delay-line lengths and the direct-path delay, in samples.
struct DelayVector {
  std::vector<long> m{809, 877, 937, 1049, 1151, 1249, 1373, 1499};
  long direct = 2;

  std::size_t size() const noexcept { return m.size(); }
  long max() const { return *std::max_element(m.begin(), m.end()); }
  long min() const { return *std::min_element(m.begin(), m.end()); }

  void validate() const {
    if (m.empty()) throw ConfigurationError("delay vector is empty");
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i] <= 0) throw ConfigurationError("delay lengths must be positive");
      if (i > 0 && m[i] <= m[i - 1])
        throw ConfigurationError("delay lengths must be strictly increasing");
      for (std::size_t k = 0; k < i; ++k)
        if (std::gcd(m[i], m[k]) != 1)
          throw ConfigurationError("delay lengths " + std::to_string(m[k]) + " and " +
                                   std::to_string(m[i]) + " are not coprime");
    }
    if (direct < 0) throw ConfigurationError("direct delay must be non-negative");
  }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Identifies one of the six learnable tensors.
enum class Tensor { ToneGains, Mixing, Attenuation, InputGains, OutputGains, DirectGain };

inline const char* tensor_name(Tensor t) {
  switch (t) {
    case Tensor::ToneGains: return "p_T";
    case Tensor::Mixing: return "p_U";
    case Tensor::Attenuation: return "p_gamma";
    case Tensor::InputGains: return "b";
    case Tensor::OutputGains: return "c";
    case Tensor::DirectGain: return "g";
  }
  return "?";
}

/// Unconstrained learnable parameters. Also used for gradients and optimizer
/// moments, which share the same shapes.
struct FdnRawParams {
  Eigen::VectorXd p_T;      // J
  Eigen::MatrixXd p_U;      // N x N
  Eigen::MatrixXd p_gamma;  // J x N
  Eigen::VectorXd b;        // N
  Eigen::VectorXd c;        // N
  double g = 0.0;

  static FdnRawParams zeros(std::size_t lines, std::size_t stages) {
    const auto n = static_cast<Eigen::Index>(lines);
    const auto j = static_cast<Eigen::Index>(stages);
    FdnRawParams p;
    p.p_T = Eigen::VectorXd::Zero(j);
    p.p_U = Eigen::MatrixXd::Zero(n, n);
    p.p_gamma = Eigen::MatrixXd::Zero(j, n);
    p.b = Eigen::VectorXd::Zero(n);
    p.c = Eigen::VectorXd::Zero(n);
    p.g = 0.0;
    return p;
  }

  std::size_t lines() const noexcept { return static_cast<std::size_t>(b.size()); }
  std::size_t stages() const noexcept { return static_cast<std::size_t>(p_T.size()); }

  std::size_t tensor_size(Tensor t) const {
    switch (t) {
      case Tensor::ToneGains: return static_cast<std::size_t>(p_T.size());
      case Tensor::Mixing: return static_cast<std::size_t>(p_U.size());
      case Tensor::Attenuation: return static_cast<std::size_t>(p_gamma.size());
      case Tensor::InputGains: return static_cast<std::size_t>(b.size());
      case Tensor::OutputGains: return static_cast<std::size_t>(c.size());
      case Tensor::DirectGain: return 1;
    }
    return 0;
  }

  /// Row-major element access within one tensor.
  double& at(Tensor t, std::size_t i) {
    switch (t) {
      case Tensor::ToneGains: return p_T(static_cast<Eigen::Index>(i));
      case Tensor::Mixing: {
        const auto n = p_U.cols();
        return p_U(static_cast<Eigen::Index>(i) / n, static_cast<Eigen::Index>(i) % n);
      }
      case Tensor::Attenuation: {
        const auto n = p_gamma.cols();
        return p_gamma(static_cast<Eigen::Index>(i) / n, static_cast<Eigen::Index>(i) % n);
      }
      case Tensor::InputGains: return b(static_cast<Eigen::Index>(i));
      case Tensor::OutputGains: return c(static_cast<Eigen::Index>(i));
      case Tensor::DirectGain: return g;
    }
    throw std::logic_error("unknown tensor");
  }
  double at(Tensor t, std::size_t i) const { return const_cast<FdnRawParams&>(*this).at(t, i); }

  static constexpr Tensor kTensors[] = {Tensor::ToneGains,  Tensor::Mixing,
                                        Tensor::Attenuation, Tensor::InputGains,
                                        Tensor::OutputGains, Tensor::DirectGain};

  std::size_t size() const {
    std::size_t s = 0;
    for (Tensor t : kTensors) s += tensor_size(t);
    return s;
  }

  /// Flat layout: p_T, p_U, p_gamma (row-major), b, c, g.
  std::vector<double> flatten() const {
    std::vector<double> v;
    v.reserve(size());
    for (Tensor t : kTensors)
      for (std::size_t i = 0; i < tensor_size(t); ++i) v.push_back(at(t, i));
    return v;
  }

  void assign(std::span<const double> flat) {
    if (flat.size() != size()) throw InvalidParameter("parameter vector size mismatch");
    std::size_t k = 0;
    for (Tensor t : kTensors)
      for (std::size_t i = 0; i < tensor_size(t); ++i) at(t, i) = flat[k++];
  }

  void validate(std::size_t lines, std::size_t stages) const {
    const auto n = static_cast<Eigen::Index>(lines);
    const auto j = static_cast<Eigen::Index>(stages);
    if (p_T.size() != j || p_U.rows() != n || p_U.cols() != n || p_gamma.rows() != j ||
        p_gamma.cols() != n || b.size() != n || c.size() != n)
      throw InvalidParameter("parameter shapes do not match N=" + std::to_string(lines) +
                             ", J=" + std::to_string(stages));
    if (!p_T.allFinite() || !p_U.allFinite() || !p_gamma.allFinite() || !b.allFinite() ||
        !c.allFinite() || !std::isfinite(g))
      throw InvalidParameter("parameters contain non-finite values");
  }
};

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

inline constexpr double kToneRangeDb = 12.0;

/// 12 tanh(p): tone command gains in (-12, 12) dB.
inline std::vector<double> realize_tone_gains(std::span<const double> p_T) {
  if (!all_finite(p_T)) throw InvalidParameter("tone pre-activations must be finite");
  std::vector<double> out(p_T.size());
  for (std::size_t i = 0; i < p_T.size(); ++i) out[i] = kToneRangeDb * std::tanh(p_T[i]);
  return out;
}

/// log(sigmoid(p)) without overflow.
inline double log_sigmoid(double p) {
  return p < 0.0 ? p - std::log1p(std::exp(p)) : -std::log1p(std::exp(-p));
}

inline double sigmoid(double p) {
  if (p >= 0.0) return 1.0 / (1.0 + std::exp(-p));
  const double e = std::exp(p);
  return e / (1.0 + e);
}

inline double attenuation_db(double p) { return 20.0 / std::log(10.0) * log_sigmoid(p); }

/// 20 log10(sigmoid(p)) elementwise: per-stage cut in (-inf, 0) dB.
inline Eigen::MatrixXd realize_attenuation_gains(const Eigen::MatrixXd& p_gamma) {
  if (!p_gamma.allFinite()) throw InvalidParameter("attenuation pre-activations must be finite");
  return p_gamma.unaryExpr([](double p) { return attenuation_db(p); });
}

/// Skew-symmetric generator triu(p, 1) - triu(p, 1)^T.
inline Eigen::MatrixXd skew_from_upper(const Eigen::MatrixXd& p) {
  Eigen::MatrixXd up = p.triangularView<Eigen::StrictlyUpper>();
  return up - up.transpose();
}

/// Orthogonal mixing matrix exp(triu(p) - triu(p)^T).
inline Eigen::MatrixXd orthogonal_map(const Eigen::MatrixXd& p_U) {
  if (p_U.rows() != p_U.cols()) throw InvalidParameter("p_U must be square");
  if (!p_U.allFinite()) throw InvalidParameter("p_U must be finite");
  return expm(skew_from_upper(p_U));
}

// ---------------------------------------------------------------------------
// Realized system
// ---------------------------------------------------------------------------

struct FdnSystem {
  Eigen::MatrixXd U;
  std::vector<double> tone_gains_db;  // J
  Eigen::MatrixXd atten_gains_db;     // J x N
  Eigen::VectorXd b;
  Eigen::VectorXd c;
  double g = 0.0;
  DelayVector delays;
  GeqDesign geq;

  std::size_t lines() const noexcept { return delays.size(); }
  std::size_t stages() const noexcept { return geq.stage_count(); }

  void validate() const {
    delays.validate();
    geq.validate();
    const auto n = static_cast<Eigen::Index>(lines());
    const auto j = static_cast<Eigen::Index>(stages());
    if (U.rows() != n || U.cols() != n || b.size() != n || c.size() != n ||
        atten_gains_db.rows() != j || atten_gains_db.cols() != n ||
        tone_gains_db.size() != stages())
      throw InvalidParameter("FDN system shapes are inconsistent");
    const double orth = (U.transpose() * U - Eigen::MatrixXd::Identity(n, n)).norm();
    if (!(orth < 1e-10)) throw InvalidParameter("mixing matrix is not orthogonal");
    if (!(atten_gains_db.array() < 0.0).all())
      throw InvalidParameter("attenuation gains must be strictly below 0 dB");
  }
};

inline FdnSystem realize(const FdnRawParams& raw, const DelayVector& delays = {},
                         const GeqDesign& geq = {}) {
  raw.validate(delays.size(), geq.stage_count());
  FdnSystem sys;
  sys.U = orthogonal_map(raw.p_U);
  sys.tone_gains_db = realize_tone_gains(std::span(raw.p_T.data(), raw.p_T.size()));
  sys.atten_gains_db = realize_attenuation_gains(raw.p_gamma);
  sys.b = raw.b;
  sys.c = raw.c;
  sys.g = raw.g;
  sys.delays = delays;
  sys.geq = geq;
  sys.validate();
  return sys;
}

// ---------------------------------------------------------------------------
// Per-bin solver
// ---------------------------------------------------------------------------

namespace detail {

/// In-place LU with partial pivoting of a row-major n x n complex matrix.
/// Returns the smallest pivot magnitude.
inline double lu_factor(cplx* a, int n, int* piv) {
  double min_pivot = std::numeric_limits<double>::infinity();
  for (int k = 0; k < n; ++k) {
    int p = k;
    double best = std::abs(a[k * n + k]);
    for (int i = k + 1; i < n; ++i) {
      const double v = std::abs(a[i * n + k]);
      if (v > best) {
        best = v;
        p = i;
      }
    }
    piv[k] = p;
    if (p != k)
      for (int j = 0; j < n; ++j) std::swap(a[k * n + j], a[p * n + j]);
    min_pivot = std::min(min_pivot, best);
    if (best == 0.0) continue;
    const cplx inv = 1.0 / a[k * n + k];
    for (int i = k + 1; i < n; ++i) {
      const cplx l = a[i * n + k] * inv;
      a[i * n + k] = l;
      for (int j = k + 1; j < n; ++j) a[i * n + j] -= l * a[k * n + j];
    }
  }
  return min_pivot;
}

/// Solves A x = rhs in place given lu_factor output.
inline void lu_solve(const cplx* lu, const int* piv, int n, cplx* x) {
  for (int k = 0; k < n; ++k) std::swap(x[k], x[piv[k]]);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < i; ++j) x[i] -= lu[i * n + j] * x[j];
  for (int i = n - 1; i >= 0; --i) {
    for (int j = i + 1; j < n; ++j) x[i] -= lu[i * n + j] * x[j];
    x[i] /= lu[i * n + i];
  }
}

/// Solves A^H x = rhs in place given lu_factor output (P A = L U).
inline void lu_solve_adjoint(const cplx* lu, const int* piv, int n, cplx* x) {
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) x[i] -= std::conj(lu[j * n + i]) * x[j];
    x[i] /= std::conj(lu[i * n + i]);
  }
  for (int i = n - 1; i >= 0; --i)
    for (int j = i + 1; j < n; ++j) x[i] -= std::conj(lu[j * n + i]) * x[j];
  for (int k = n - 1; k >= 0; --k) std::swap(x[k], x[piv[k]]);
}

// Fixed bin partition shared by all reductions, independent of thread count.
inline constexpr std::size_t kBinChunk = 1024;

}  // namespace detail

/// Derivatives of a scalar loss with respect to the realized system fields.
struct SystemGradient {
  Eigen::MatrixXd U;             // N x N
  std::vector<double> tone_db;   // J
  Eigen::MatrixXd atten_db;      // J x N
  Eigen::VectorXd b;
  Eigen::VectorXd c;
  double g = 0.0;

  static SystemGradient zeros(std::size_t lines, std::size_t stages) {
    const auto n = static_cast<Eigen::Index>(lines);
    const auto j = static_cast<Eigen::Index>(stages);
    SystemGradient s;
    s.U = Eigen::MatrixXd::Zero(n, n);
    s.tone_db.assign(stages, 0.0);
    s.atten_db = Eigen::MatrixXd::Zero(j, n);
    s.b = Eigen::VectorXd::Zero(n);
    s.c = Eigen::VectorXd::Zero(n);
    return s;
  }

  SystemGradient& operator+=(const SystemGradient& o) {
    U += o.U;
    for (std::size_t i = 0; i < tone_db.size(); ++i) tone_db[i] += o.tone_db[i];
    atten_db += o.atten_db;
    b += o.b;
    c += o.c;
    g += o.g;
    return *this;
  }
};

/// Frequency-sampled evaluation of the FDN transfer function on the M-point
/// DFT grid, with its adjoint. Bins are independent; reductions over bins use
/// a fixed chunking so results do not depend on the number of threads.
class TransferFunctionSampler {
 public:
  TransferFunctionSampler(std::size_t fft_length, const DelayVector& delays,
                          const GeqDesign& geq = {})
      : m_(fft_length), delays_(delays), geq_(geq), specs_(geq.sections()), table_(fft_length) {
    if (!is_power_of_two(fft_length))
      throw ConfigurationError("FFT length must be a power of two, got " +
                               std::to_string(fft_length));
    delays_.validate();
    if (static_cast<long>(fft_length) <= delays_.max())
      throw ConfigurationError("FFT length " + std::to_string(fft_length) +
                               " must exceed the longest delay " +
                               std::to_string(delays_.max()));
  }

  std::size_t fft_length() const noexcept { return m_; }
  std::size_t bins() const noexcept { return m_ / 2 + 1; }
  const DelayVector& delays() const noexcept { return delays_; }
  const GeqDesign& geq() const noexcept { return geq_; }

  /// H[k] for k = 0..M/2.
  std::vector<cplx> forward(const FdnSystem& sys) const {
    check_system(sys);
    const Prepared prep = prepare(sys);
    std::vector<cplx> h(bins());
    const std::size_t nchunks = chunk_count();
    std::vector<long> failed(nchunks, -1);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::ptrdiff_t ch = 0; ch < static_cast<std::ptrdiff_t>(nchunks); ++ch) {
      Workspace ws(lines());
      const auto [lo, hi] = chunk_range(static_cast<std::size_t>(ch));
      for (std::size_t k = lo; k < hi; ++k) {
        if (!evaluate_bin(prep, k, ws, nullptr)) {
          failed[ch] = static_cast<long>(k);
          break;
        }
        h[k] = ws.H;
      }
    }
    raise_if_failed(failed);
    return h;
  }

  /// Pulls the cotangent dL/dH (complex, Re(conj(Hbar) dH) convention) back to
  /// the system fields.
  SystemGradient backward(const FdnSystem& sys, std::span<const cplx> h_bar) const {
    check_system(sys);
    if (h_bar.size() != bins()) throw InvalidParameter("cotangent size mismatch");
    const Prepared prep = prepare(sys);
    const std::size_t nchunks = chunk_count();
    std::vector<SystemGradient> partial(nchunks, SystemGradient::zeros(lines(), stages()));
    std::vector<long> failed(nchunks, -1);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::ptrdiff_t ch = 0; ch < static_cast<std::ptrdiff_t>(nchunks); ++ch) {
      Workspace ws(lines());
      const auto [lo, hi] = chunk_range(static_cast<std::size_t>(ch));
      for (std::size_t k = lo; k < hi; ++k) {
        if (!evaluate_bin(prep, k, ws, &ws)) {
          failed[ch] = static_cast<long>(k);
          break;
        }
        accumulate_bin(prep, ws, h_bar[k], partial[static_cast<std::size_t>(ch)]);
      }
    }
    raise_if_failed(failed);
    SystemGradient total = SystemGradient::zeros(lines(), stages());
    for (const auto& p : partial) total += p;
    return total;
  }

 private:
  struct Prepared {
    const FdnSystem* sys;
    std::vector<BiquadCoeffs<Dual>> tone;   // J
    std::vector<BiquadCoeffs<Dual>> atten;  // J * N, index j * N + i
    std::vector<bool> tone_identity;
    std::vector<bool> atten_identity;
  };

  struct Workspace {
    explicit Workspace(std::size_t n)
        : n(n), K(n * n), piv(n), x(n), lambda(n), gamma(n), zm(n),
          s_atten(n * GeqDesign::kStages), ds_atten(n * GeqDesign::kStages),
          s_tone(GeqDesign::kStages), ds_tone(GeqDesign::kStages) {}
    std::size_t n;
    std::vector<cplx> K;
    std::vector<int> piv;
    std::vector<cplx> x, lambda, gamma, zm;
    std::vector<cplx> s_atten, ds_atten, s_tone, ds_tone;
    cplx T, F, H, zd;
  };

  std::size_t lines() const noexcept { return delays_.size(); }
  std::size_t stages() const noexcept { return specs_.size(); }

  std::size_t chunk_count() const { return (bins() + detail::kBinChunk - 1) / detail::kBinChunk; }
  std::pair<std::size_t, std::size_t> chunk_range(std::size_t ch) const {
    const std::size_t lo = ch * detail::kBinChunk;
    return {lo, std::min(bins(), lo + detail::kBinChunk)};
  }

  void check_system(const FdnSystem& sys) const {
    if (sys.delays.m != delays_.m || sys.delays.direct != delays_.direct)
      throw InvalidParameter("system delays differ from the sampler's");
    if (sys.geq.sample_rate != geq_.sample_rate || sys.stages() != stages())
      throw InvalidParameter("system GEQ differs from the sampler's");
  }

  Prepared prepare(const FdnSystem& sys) const {
    Prepared p{&sys, {}, {}, {}, {}};
    const double fs = geq_.sample_rate;
    for (std::size_t j = 0; j < stages(); ++j) {
      p.tone.push_back(section_coeffs_with_gain_derivative(specs_[j], fs, sys.tone_gains_db[j]));
      p.tone_identity.push_back(sys.tone_gains_db[j] == 0.0);
      for (std::size_t i = 0; i < lines(); ++i) {
        const double gdb =
            sys.atten_gains_db(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
        p.atten.push_back(section_coeffs_with_gain_derivative(specs_[j], fs, gdb));
        p.atten_identity.push_back(gdb == 0.0);
      }
    }
    return p;
  }

  // Forward evaluation of bin k. With `deriv` set, also stores per-section
  // responses and gain derivatives for the adjoint pass.
  bool evaluate_bin(const Prepared& p, std::size_t k, Workspace& ws, Workspace* deriv) const {
    const FdnSystem& sys = *p.sys;
    const std::size_t n = lines();
    const std::size_t nj = stages();
    const cplx e1 = table_.power(k, -1);
    const cplx e2 = table_.power(k, -2);
    ws.zd = table_.power(k, -delays_.direct);

    auto section = [&](const BiquadCoeffs<Dual>& c, bool identity, cplx& s, cplx* ds) {
      if (deriv) {
        auto [h, dh] = section_response_and_derivative(c, e1, e2);
        s = identity ? cplx(1.0, 0.0) : h;
        *ds = dh;
      } else {
        s = identity ? cplx(1.0, 0.0) : section_response(values(c), e1, e2);
      }
    };

    ws.T = cplx(1.0, 0.0);
    for (std::size_t j = 0; j < nj; ++j) {
      cplx s;
      section(p.tone[j], p.tone_identity[j], s, deriv ? &ws.ds_tone[j] : nullptr);
      ws.s_tone[j] = s;
      ws.T *= s;
    }
    for (std::size_t i = 0; i < n; ++i) {
      cplx gam(1.0, 0.0);
      for (std::size_t j = 0; j < nj; ++j) {
        cplx s;
        const std::size_t idx = j * n + i;
        section(p.atten[idx], p.atten_identity[idx], s,
                deriv ? &ws.ds_atten[i * nj + j] : nullptr);
        ws.s_atten[i * nj + j] = s;
        gam *= s;
      }
      ws.gamma[i] = gam;
      ws.zm[i] = table_.power(k, delays_.m[i]);
    }
    // K = D_m(z)^-1 - U Gamma(z)
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c)
        ws.K[r * n + c] = -sys.U(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) *
                          ws.gamma[c];
    for (std::size_t r = 0; r < n; ++r) ws.K[r * n + r] += ws.zm[r];
    const double min_pivot = detail::lu_factor(ws.K.data(), static_cast<int>(n), ws.piv.data());
    if (!(min_pivot > 1e-13)) return false;
    for (std::size_t i = 0; i < n; ++i) ws.x[i] = sys.b(static_cast<Eigen::Index>(i));
    detail::lu_solve(ws.K.data(), ws.piv.data(), static_cast<int>(n), ws.x.data());
    cplx f = sys.g * ws.zd;
    for (std::size_t i = 0; i < n; ++i) f += sys.c(static_cast<Eigen::Index>(i)) * ws.x[i];
    ws.F = f;
    ws.H = ws.T * f;
    return true;
  }

  void accumulate_bin(const Prepared& p, Workspace& ws, cplx h_bar, SystemGradient& out) const {
    const FdnSystem& sys = *p.sys;
    const std::size_t n = lines();
    const std::size_t nj = stages();
    const cplx t_bar = h_bar * std::conj(ws.F);
    const cplx f_bar = h_bar * std::conj(ws.T);

    out.g += std::real(std::conj(f_bar) * ws.zd);
    for (std::size_t i = 0; i < n; ++i) {
      out.c(static_cast<Eigen::Index>(i)) += std::real(std::conj(f_bar) * ws.x[i]);
      ws.lambda[i] = f_bar * sys.c(static_cast<Eigen::Index>(i));
    }
    detail::lu_solve_adjoint(ws.K.data(), ws.piv.data(), static_cast<int>(n), ws.lambda.data());
    for (std::size_t a = 0; a < n; ++a) {
      out.b(static_cast<Eigen::Index>(a)) += ws.lambda[a].real();
      const cplx cl = std::conj(ws.lambda[a]);
      for (std::size_t bcol = 0; bcol < n; ++bcol)
        out.U(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(bcol)) +=
            std::real(cl * ws.gamma[bcol] * ws.x[bcol]);
    }

    // d/dG of a product of sections: prefix * ds_j * suffix.
    auto product_pullback = [nj](const cplx* s, const cplx* ds, cplx cot, auto&& sink) {
      cplx prefix[GeqDesign::kStages + 1];
      cplx suffix[GeqDesign::kStages + 1];
      prefix[0] = cplx(1.0, 0.0);
      for (std::size_t j = 0; j < nj; ++j) prefix[j + 1] = prefix[j] * s[j];
      suffix[nj] = cplx(1.0, 0.0);
      for (std::size_t j = nj; j-- > 0;) suffix[j] = suffix[j + 1] * s[j];
      const cplx cc = std::conj(cot);
      for (std::size_t j = 0; j < nj; ++j) sink(j, std::real(cc * prefix[j] * ds[j] * suffix[j + 1]));
    };

    product_pullback(ws.s_tone.data(), ws.ds_tone.data(), t_bar,
                     [&](std::size_t j, double v) { out.tone_db[j] += v; });
    for (std::size_t bcol = 0; bcol < n; ++bcol) {
      cplx ut_lambda(0.0, 0.0);
      for (std::size_t a = 0; a < n; ++a)
        ut_lambda += sys.U(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(bcol)) *
                     ws.lambda[a];
      const cplx gamma_bar = ut_lambda * std::conj(ws.x[bcol]);
      product_pullback(&ws.s_atten[bcol * nj], &ws.ds_atten[bcol * nj], gamma_bar,
                       [&](std::size_t j, double v) {
                         out.atten_db(static_cast<Eigen::Index>(j),
                                      static_cast<Eigen::Index>(bcol)) += v;
                       });
    }
  }

  void raise_if_failed(const std::vector<long>& failed) const {
    for (long k : failed)
      if (k >= 0)
        throw NumericalInstability("singular feedback system at frequency bin " +
                                   std::to_string(k) + " of " + std::to_string(bins()));
  }

  std::size_t m_;
  DelayVector delays_;
  GeqDesign geq_;
  std::vector<SectionSpec> specs_;
  fft::UnitCircleTable table_;
};

/// H[k] = T(z_k)(c^T x + g z_k^-m_d), (D_m(z_k)^-1 - A(z_k)) x = b, k = 0..M/2.
inline std::vector<cplx> sample_transfer_function(const FdnSystem& sys, std::size_t fft_length) {
  return TransferFunctionSampler(fft_length, sys.delays, sys.geq).forward(sys);
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

/// Fraction of total energy held by the last `fraction` of the signal.
inline double tail_energy_ratio(std::span<const double> h, double fraction = 0.05) {
  const double total = energy(h);
  if (total <= 0.0) return 0.0;
  const auto start = static_cast<std::size_t>(std::floor((1.0 - fraction) * static_cast<double>(h.size())));
  return energy(h.subspan(start)) / total;
}

/// Real M-sample impulse response from the half spectrum H[0..M/2].
inline AudioBuffer synthesize_rir(std::span<const cplx> h, std::size_t fft_length,
                                  double fs = kSampleRate) {
  if (h.size() != fft_length / 2 + 1)
    throw InvalidParameter("synthesize_rir: spectrum has " + std::to_string(h.size()) +
                           " bins, expected " + std::to_string(fft_length / 2 + 1));
  AudioBuffer out(fft_length, fs);
  fft::irfft(h, out.samples);
  return out;
}

/// Frequency-sampled impulse response of `sys`, warning when the last 5% of
/// the response still holds more than -60 dB of its energy (time aliasing).
inline AudioBuffer synthesize(const FdnSystem& sys, std::size_t fft_length) {
  const auto h = sample_transfer_function(sys, fft_length);
  AudioBuffer rir = synthesize_rir(h, fft_length, sys.geq.sample_rate);
  if (tail_energy_ratio(rir.samples) > 1e-6)
    warn("synthesized response has not decayed by -60 dB within " +
         std::to_string(fft_length) + " samples; expect time aliasing");
  return rir;
}

// ---------------------------------------------------------------------------
// Time-domain rendering
// ---------------------------------------------------------------------------

/// Sample-by-sample rendering of the FDN recursion: delay-line outputs pass
/// through their attenuation GEQs, are mixed by U and re-enter the lines
/// together with b x[n]; the output tap c^T plus the direct path g x[n - m_d]
/// goes through the tone GEQ.
inline AudioBuffer render_time_domain(const FdnSystem& sys, const AudioBuffer& x,
                                      std::size_t out_len) {
  sys.validate();
  const std::size_t n = sys.lines();
  const std::size_t nj = sys.stages();
  std::vector<GeqFilter> atten;
  std::vector<double> gains(nj);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < nj; ++j)
      gains[j] = sys.atten_gains_db(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
    atten.emplace_back(sys.geq, gains);
  }
  GeqFilter tone(sys.geq, sys.tone_gains_db);

  std::vector<std::vector<double>> lines(n);
  for (std::size_t i = 0; i < n; ++i) lines[i].assign(static_cast<std::size_t>(sys.delays.m[i]), 0.0);
  std::vector<std::size_t> pos(n, 0);
  std::vector<double> direct(static_cast<std::size_t>(sys.delays.direct) + 1, 0.0);
  std::size_t dpos = 0;

  const double in_peak = peak_abs(x.samples);
  const double limit = 1e6 * in_peak;
  std::vector<double> out_taps(n), filtered(n);
  AudioBuffer y(out_len, x.sample_rate);
  for (std::size_t t = 0; t < out_len; ++t) {
    const double in = t < x.size() ? x[t] : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      out_taps[i] = lines[i][pos[i]];
      filtered[i] = atten[i].process(out_taps[i]);
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += sys.c(static_cast<Eigen::Index>(i)) * out_taps[i];
    direct[dpos] = in;
    const std::size_t dlen = direct.size();
    acc += sys.g * direct[(dpos + 1) % dlen];
    dpos = (dpos + 1) % dlen;
    for (std::size_t r = 0; r < n; ++r) {
      double v = sys.b(static_cast<Eigen::Index>(r)) * in;
      for (std::size_t col = 0; col < n; ++col)
        v += sys.U(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col)) * filtered[col];
      lines[r][pos[r]] = v;
      pos[r] = (pos[r] + 1) % lines[r].size();
    }
    const double out = tone.process(acc);
    if (!std::isfinite(out) || std::abs(out) > limit) {
      if (in_peak > 0.0 || out != 0.0)
        throw NumericalInstability("time-domain rendering diverged at sample " +
                                   std::to_string(t));
    }
    y[t] = out;
  }
  return y;
}

}  // namespace fdnfit
