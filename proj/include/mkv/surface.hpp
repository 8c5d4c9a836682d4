#pragma once

// Closed-form asymptotic log-likelihood surfaces of the linear mean-field
// model (unit diffusion).

#include <cmath>
#include <cstddef>

#include <Eigen/Dense>

#include "mkv/errors.hpp"
#include "mkv/theta.hpp"

namespace mkv {

/// Mean-field contrast -[(theta1 + theta2) - (theta1_0 + theta2_0)]^2 / (4 (theta1_0 + theta2_0)).
/// Zero on the whole ridge theta1 + theta2 = theta1_0 + theta2_0.
inline double asymptotic_contrast_linear(const Theta& theta, const Theta& theta0) {
  theta.require_dim(2);
  theta0.require_dim(2);
  const double s0 = theta0[0] + theta0[1];
  if (!(s0 > 0.0)) throw DomainError("contrast needs theta1_0 + theta2_0 > 0");
  const double gap = (theta[0] + theta[1]) - s0;
  return -(gap * gap) / (4.0 * s0);
}

/// Stationary covariance of the N-particle linear system, the solution of
/// A S + S A^T = I with A = (theta1 + theta2) I - (theta2 / N) J. A acts as
/// theta1 on the all-ones direction and as theta1 + theta2 on its orthogonal
/// complement, so S = diag * I + offdiag * (J - I).
struct IpsInvariantCovariance {
  std::size_t n = 1;
  double diagonal = 0.0;
  double off_diagonal = 0.0;

  Eigen::MatrixXd dense() const {
    const auto m = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd s = Eigen::MatrixXd::Constant(m, m, off_diagonal);
    s.diagonal().setConstant(diagonal);
    return s;
  }
};

inline IpsInvariantCovariance ips_invariant_covariance_linear(const Theta& theta0, std::size_t n) {
  theta0.require_dim(2);
  if (n < 1) throw ValidationError("need at least one particle");
  const double along_ones = theta0[0];
  const double across = theta0[0] + theta0[1];
  if (!(along_ones > 0.0) || (n > 1 && !(across > 0.0))) {
    throw DomainError("drift matrix is not positive definite (need theta1_0 > 0 and theta1_0 + theta2_0 > 0)");
  }
  const double nn = static_cast<double>(n);
  // S = s_par P + s_perp (I - P), P = J / N
  const double s_par = 1.0 / (2.0 * along_ones);
  const double s_perp = n > 1 ? 1.0 / (2.0 * across) : 0.0;
  IpsInvariantCovariance cov;
  cov.n = n;
  cov.off_diagonal = (s_par - s_perp) / nn;
  cov.diagonal = s_perp + cov.off_diagonal;
  return cov;
}

/// Stationary moments C1 = E[x_i^2], C2 = E[x_i (x_i - xbar)], C3 = E[(x_i - xbar)^2].
struct IpsMoments {
  double c1 = 0.0;
  double c2 = 0.0;
  double c3 = 0.0;
};

inline IpsMoments ips_moments_linear(const Theta& theta0, std::size_t n) {
  const IpsInvariantCovariance cov = ips_invariant_covariance_linear(theta0, n);
  const double nn = static_cast<double>(n);
  const double row_sum = cov.diagonal + (nn - 1.0) * cov.off_diagonal;  // sum_j S_ij
  const double total = nn * row_sum;                                    // sum_jk S_jk
  IpsMoments m;
  m.c1 = cov.diagonal;
  m.c2 = cov.diagonal - row_sum / nn;
  m.c3 = cov.diagonal - 2.0 * row_sum / nn + total / (nn * nn);
  return m;
}

/// Asymptotic log-likelihood of one particle of the N-particle system:
///   -1/2 d1^2 C1 - d1 d2 C2 - 1/2 d2^2 C3,  d = theta - theta0.
inline double asymptotic_loglik_ips_linear(const Theta& theta, const Theta& theta0, std::size_t n) {
  theta.require_dim(2);
  const IpsMoments m = ips_moments_linear(theta0, n);
  const double d1 = theta[0] - theta0[0];
  const double d2 = theta[1] - theta0[1];
  return -0.5 * d1 * d1 * m.c1 - d1 * d2 * m.c2 - 0.5 * d2 * d2 * m.c3;
}

/// Hessian in theta (constant): -[[C1, C2], [C2, C3]].
inline Eigen::Matrix2d asymptotic_loglik_ips_linear_hessian(const Theta& theta0, std::size_t n) {
  const IpsMoments m = ips_moments_linear(theta0, n);
  Eigen::Matrix2d h;
  h << -m.c1, -m.c2, -m.c2, -m.c3;
  return h;
}

}  // namespace mkv
