// Copyright 2026 The fdnfit Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace fdnfit {

/// Matrix exponential by scaling and squaring with a [13/13] Pade approximant
/// (Higham 2005).
inline Eigen::MatrixXd expm(const Eigen::MatrixXd& a) {
  static constexpr double b[] = {64764752532480000.0,
                                 32382376266240000.0,
                                 7771770303897600.0,
                                 1187353796428800.0,
                                 129060195264000.0,
                                 10559470521600.0,
                                 670442572800.0,
                                 33522128640.0,
                                 1323241920.0,
                                 40840800.0,
                                 960960.0,
                                 16380.0,
                                 182.0,
                                 1.0};
  constexpr double theta13 = 5.371920351148152;

  const Eigen::Index n = a.rows();
  const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
  int s = 0;
  if (norm1 > theta13) s = static_cast<int>(std::ceil(std::log2(norm1 / theta13)));
  const Eigen::MatrixXd x = a / std::ldexp(1.0, s);

  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd x2 = x * x;
  const Eigen::MatrixXd x4 = x2 * x2;
  const Eigen::MatrixXd x6 = x4 * x2;
  const Eigen::MatrixXd u =
      x * (x6 * (b[13] * x6 + b[11] * x4 + b[9] * x2) + b[7] * x6 + b[5] * x4 +
           b[3] * x2 + b[1] * id);
  const Eigen::MatrixXd v = x6 * (b[12] * x6 + b[10] * x4 + b[8] * x2) + b[6] * x6 +
                            b[4] * x4 + b[2] * x2 + b[0] * id;
  Eigen::MatrixXd r = (v - u).partialPivLu().solve(v + u);
  for (int i = 0; i < s; ++i) r = r * r;
  return r;
}

/// Frechet derivative L(A, E) = d/dt expm(A + tE) at t = 0, read off the
/// upper-right block of expm([[A, E], [0, A]]).
inline Eigen::MatrixXd expm_frechet(const Eigen::MatrixXd& a, const Eigen::MatrixXd& e) {
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = a;
  block.topRightCorner(n, n) = e;
  block.bottomRightCorner(n, n) = a;
  return expm(block).topRightCorner(n, n);
}

/// Pullback of a cotangent G on expm(A) to a cotangent on A:
/// <G, L(A, E)> = <L(A^T, G), E>.
inline Eigen::MatrixXd expm_pullback(const Eigen::MatrixXd& a, const Eigen::MatrixXd& g) {
  return expm_frechet(a.transpose(), g);
}

}  // namespace fdnfit
