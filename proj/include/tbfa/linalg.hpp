#pragma once

#include <cmath>

#include "tbfa/common.hpp"

namespace tbfa {

// Lower-triangular Cholesky factorization of an SPD matrix, with the
// log-determinant cached.  Every covariance in this model is SPD by
// construction, so a failed pivot signals upstream corruption and we fail
// fast instead of regularizing.
struct CovFactorization {
  Matrix matrix;
  Matrix lower_factor;
  double log_det = 0.0;

  Index dim() const { return matrix.rows(); }

  // L^{-1} B via forward substitution.
  Matrix solve_lower(const Matrix& b) const {
    return lower_factor.triangularView<Eigen::Lower>().solve(b);
  }

  // Sigma^{-1} B.
  Matrix solve(const Matrix& b) const {
    Matrix y = solve_lower(b);
    lower_factor.transpose().triangularView<Eigen::Upper>().solveInPlace(y);
    return y;
  }

  Matrix inverse() const {
    return solve(Matrix::Identity(dim(), dim()));
  }
};

inline CovFactorization factorize_spd(const Matrix& m) {
  require_dims(m.rows() == m.cols(), "factorize_spd: matrix must be square");
  CovFactorization f;
  f.matrix = m;
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("factorize_spd: Cholesky failed (matrix not SPD)");
  }
  f.lower_factor = llt.matrixL();
  double log_det = 0.0;
  for (Index i = 0; i < m.rows(); ++i) {
    const double pivot = f.lower_factor(i, i);
    if (!std::isfinite(pivot)) {
      throw NumericalError("factorize_spd: non-finite pivot at index " +
                           std::to_string(i));
    }
    // pivot here is sqrt of the elimination pivot; 1e-150 <-> pivot 1e-300.
    if (!(pivot > 1e-150)) {
      throw NumericalError("factorize_spd: pivot underflow at index " +
                           std::to_string(i));
    }
    log_det += std::log(pivot);
  }
  f.log_det = 2.0 * log_det;
  return f;
}

// tr{Sigma_c^{-1} (X-W) Sigma_r^{-1} (X-W)'} via triangular solves:
// equals ||L_c^{-1} (X-W) L_r^{-T}||_F^2.
inline double mahalanobis(const Matrix& x, const Matrix& w,
                          const CovFactorization& col_cov,
                          const CovFactorization& row_cov) {
  require_dims(x.rows() == w.rows() && x.cols() == w.cols(),
               "mahalanobis: x and w shapes differ");
  require_dims(col_cov.dim() == x.rows() && row_cov.dim() == x.cols(),
               "mahalanobis: covariance dims do not match data");
  Matrix y = col_cov.solve_lower(x - w);            // L_c^{-1} A
  Matrix z = row_cov.solve_lower(y.transpose());    // L_r^{-1} A' L_c^{-T}
  return z.squaredNorm();
}

inline Matrix kronecker(const Matrix& a, const Matrix& b) {
  Matrix k(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      k.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return k;
}

// Column-major vectorization.
inline Vector vec(const Matrix& a) {
  return Eigen::Map<const Vector>(a.data(), a.size());
}

}  // namespace tbfa
