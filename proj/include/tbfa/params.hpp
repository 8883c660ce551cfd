#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "tbfa/common.hpp"
#include "tbfa/linalg.hpp"

namespace tbfa {

constexpr double kDefaultEta = 0.005;
constexpr double kNuMin = 0.5;
constexpr double kNuMax = 1e6;

// Full parameter set {W, C, Psi_c, R, Psi_r, nu}.  gaussian == true treats
// nu as +infinity (tau identically 1), which recovers the Gaussian bilinear
// factor model; with d_r == 1 that further degenerates to plain (t)FA.
struct TbfaParams {
  Matrix W;       // d_c x d_r mean
  Matrix C;       // d_c x q_c column loadings (q_c may be 0)
  Vector psi_c;   // diagonal of Psi_c, length d_c
  Matrix R;       // d_r x q_r row loadings
  Vector psi_r;   // diagonal of Psi_r, length d_r
  double nu = 10.0;
  bool gaussian = false;

  Index d_c() const { return W.rows(); }
  Index d_r() const { return W.cols(); }
  Index q_c() const { return C.cols(); }
  Index q_r() const { return R.cols(); }

  void validate() const {
    require_dims(C.rows() == d_c() && R.rows() == d_r(),
                 "TbfaParams: loading row counts do not match W");
    require_dims(psi_c.size() == d_c() && psi_r.size() == d_r(),
                 "TbfaParams: uniqueness lengths do not match W");
    require(psi_c.minCoeff() > 0.0 && psi_r.minCoeff() > 0.0,
            "TbfaParams: uniquenesses must be positive");
    if (!gaussian) {
      require(nu > 0.0, "TbfaParams: nu must be positive");
    }
  }
};

// Largest factor count for which the model has fewer free parameters than an
// unstructured covariance: floor(d + (1 - sqrt(1+8d))/2).
inline Index max_factors(Index d) {
  require(d >= 1, "max_factors: dimension must be >= 1");
  const double v = d + (1.0 - std::sqrt(1.0 + 8.0 * static_cast<double>(d))) / 2.0;
  return static_cast<Index>(std::floor(v + 1e-12));
}

// Free-parameter count under the identification constraints (triangular
// loadings, psi_{c,1} pinned); gaussian mode drops nu.
inline Index free_param_count(Index d_c, Index d_r, Index q_c, Index q_r,
                              bool gaussian = false) {
  require(d_c >= 1 && d_r >= 1 && q_c >= 0 && q_r >= 0,
          "free_param_count: invalid dimensions");
  const Index D = d_c * (q_c + 1) - q_c * (q_c - 1) / 2 + d_r * (q_r + 1) -
                  q_r * (q_r - 1) / 2 + d_c * d_r + 1;
  return gaussian ? D - 1 : D;
}

// Cached derived quantities.  The Sigma inverses are applied through the
// Woodbury identity (Psi^{-1} - Psi^{-1} L M^{-1} L' Psi^{-1}) so nothing
// d x d is factorized; dense Sigma factorization is built on request for
// small-dimension consumers (densities, Fisher blocks, generators).
struct DerivedState {
  Vector psi_c_inv, psi_r_inv;
  Matrix pc_C;  // Psi_c^{-1} C
  Matrix pr_R;  // Psi_r^{-1} R
  Matrix m_c, m_r;
  CovFactorization m_c_f, m_r_f;
  double log_det_sigma_c = 0.0, log_det_sigma_r = 0.0;

  // Sigma_c^{-1} A for a d_c x k block.
  Matrix sigma_c_solve(const Matrix& a) const {
    Matrix out = psi_c_inv.asDiagonal() * a;
    if (pc_C.cols() > 0) out.noalias() -= pc_C * m_c_f.solve(pc_C.transpose() * a);
    return out;
  }
  // A Sigma_r^{-1} for a k x d_r block.
  Matrix sigma_r_solve_right(const Matrix& a) const {
    Matrix out = a * psi_r_inv.asDiagonal();
    if (pr_R.cols() > 0) out.noalias() -= (a * pr_R) * m_r_f.solve(pr_R.transpose());
    return out;
  }

  // tr{Sigma_c^{-1} A Sigma_r^{-1} A'} without materializing either d x d
  // product: <Sigma_c^{-1} A, A Sigma_r^{-1}>_F.
  double mahalanobis(const Matrix& a) const {
    return (sigma_c_solve(a).array() * sigma_r_solve_right(a).array()).sum();
  }

  Matrix sigma_c_dense(const TbfaParams& p) const {
    Matrix s = p.C * p.C.transpose();
    s += Matrix(p.psi_c.asDiagonal());
    return s;
  }
  Matrix sigma_r_dense(const TbfaParams& p) const {
    Matrix s = p.R * p.R.transpose();
    s += Matrix(p.psi_r.asDiagonal());
    return s;
  }
};

inline DerivedState derive(const TbfaParams& p) {
  p.validate();
  DerivedState d;
  d.psi_c_inv = p.psi_c.cwiseInverse();
  d.psi_r_inv = p.psi_r.cwiseInverse();
  d.pc_C = d.psi_c_inv.asDiagonal() * p.C;
  d.pr_R = d.psi_r_inv.asDiagonal() * p.R;
  d.m_c = Matrix::Identity(p.q_c(), p.q_c());
  d.m_c.noalias() += p.C.transpose() * d.pc_C;
  d.m_r = Matrix::Identity(p.q_r(), p.q_r());
  d.m_r.noalias() += p.R.transpose() * d.pr_R;
  try {
    d.m_c_f = factorize_spd(d.m_c);
    d.m_r_f = factorize_spd(d.m_r);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("derive: corrupt parameters: ") + e.what());
  }
  // |Sigma| = |Psi| |I + L' Psi^{-1} L| by the determinant lemma.
  d.log_det_sigma_c = p.psi_c.array().log().sum() + d.m_c_f.log_det;
  d.log_det_sigma_r = p.psi_r.array().log().sum() + d.m_r_f.log_det;
  return d;
}

// Observationally equivalent canonical form: loadings rotated lower
// triangular with nonnegative leading diagonal (QR of the leading block),
// then the scale a = psi_c[0] transferred across sides so psi_{c,1} = 1.
// Sigma_r (x) Sigma_c and the likelihood are unchanged.
inline Matrix triangularize_loading(const Matrix& loading, bool* degenerate) {
  const Index d = loading.rows(), q = loading.cols();
  if (q == 0) return loading;
  Matrix lead = loading.topRows(std::min(q, d));
  Eigen::HouseholderQR<Matrix> qr(lead.transpose());
  Matrix qfull = qr.householderQ();
  Matrix rotated = loading * qfull;
  // Enforce nonnegative diagonal by column sign flips; zero out the entries
  // that are exact zeros of the rotation up to roundoff.
  for (Index j = 0; j < q; ++j) {
    if (j < d && rotated(j, j) < 0.0) rotated.col(j) = -rotated.col(j);
    for (Index i = 0; i < std::min(j, d); ++i) rotated(i, j) = 0.0;
  }
  if (degenerate != nullptr) {
    for (Index j = 0; j < std::min(q, d); ++j) {
      if (std::abs(rotated(j, j)) < 1e-12 * (1.0 + loading.norm())) *degenerate = true;
    }
  }
  return rotated;
}

inline TbfaParams identify(const TbfaParams& p, bool* degenerate = nullptr) {
  p.validate();
  if (degenerate != nullptr) *degenerate = false;
  TbfaParams out = p;
  out.C = triangularize_loading(p.C, degenerate);
  out.R = triangularize_loading(p.R, degenerate);
  const double a = out.psi_c(0);
  const double root = std::sqrt(a);
  out.C /= root;
  out.psi_c /= a;
  out.R *= root;
  out.psi_r *= a;
  return out;
}

}  // namespace tbfa
