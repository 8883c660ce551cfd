#pragma once

#include <cmath>

#include "tbfa/common.hpp"
#include "tbfa/linalg.hpp"
#include "tbfa/rng.hpp"

namespace tbfa {

// Marsaglia-Tsang squeeze-rejection; shapes below 1 are boosted via the
// Gamma(shape+1) * U^{1/shape} identity, so small nu/2 works.
inline double sample_gamma(double shape, double rate, RngStream& rng) {
  require(shape > 0.0 && rate > 0.0, "sample_gamma: shape and rate must be positive");
  double boost = 1.0;
  if (shape < 1.0) {
    boost = std::pow(rng.uniform01(), 1.0 / shape);
    shape += 1.0;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform01();
    if (u < 1.0 - 0.0331 * x * x * x * x) return boost * d * v / rate;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
      return boost * d * v / rate;
  }
}

// mean + L_c E L_r' with E iid standard normal; vec of the draw has
// covariance row_cov (x) col_cov.  Entries of E are drawn column-major so the
// stream layout is fixed.
inline Matrix sample_matrix_normal(const Matrix& mean,
                                   const CovFactorization& col_cov,
                                   const CovFactorization& row_cov,
                                   RngStream& rng) {
  require_dims(col_cov.dim() == mean.rows() && row_cov.dim() == mean.cols(),
               "sample_matrix_normal: covariance dims do not match mean");
  Matrix e(mean.rows(), mean.cols());
  for (Index j = 0; j < e.cols(); ++j)
    for (Index i = 0; i < e.rows(); ++i) e(i, j) = rng.normal();
  return mean + col_cov.lower_factor * e * row_cov.lower_factor.transpose();
}

// Shared log-density core: both the matrix-variate t density and the model
// log-likelihood evaluate through this, so they agree to rounding.
inline double mt_log_density_core(double delta, double log_det_col,
                                  double log_det_row, double nu, Index d_c,
                                  Index d_r) {
  const double D = static_cast<double>(d_c * d_r);
  return std::lgamma(0.5 * (nu + D)) - std::lgamma(0.5 * nu) -
         0.5 * D * std::log(M_PI * nu) - 0.5 * d_r * log_det_col -
         0.5 * d_c * log_det_row - 0.5 * (nu + D) * std::log1p(delta / nu);
}

inline double matrix_normal_log_density_core(double delta, double log_det_col,
                                             double log_det_row, Index d_c,
                                             Index d_r) {
  const double D = static_cast<double>(d_c * d_r);
  return -0.5 * D * std::log(2.0 * M_PI) - 0.5 * d_r * log_det_col -
         0.5 * d_c * log_det_row - 0.5 * delta;
}

inline double mt_log_density(const Matrix& x, const Matrix& w,
                             const CovFactorization& col_cov,
                             const CovFactorization& row_cov, double nu) {
  require(nu > 0.0, "mt_log_density: nu must be positive");
  const double delta = mahalanobis(x, w, col_cov, row_cov);
  return mt_log_density_core(delta, col_cov.log_det, row_cov.log_det, nu,
                             x.rows(), x.cols());
}

inline double matrix_normal_log_density(const Matrix& x, const Matrix& w,
                                        const CovFactorization& col_cov,
                                        const CovFactorization& row_cov) {
  const double delta = mahalanobis(x, w, col_cov, row_cov);
  return matrix_normal_log_density_core(delta, col_cov.log_det,
                                        row_cov.log_det, x.rows(), x.cols());
}

// Hierarchical draw: tau ~ Gamma(nu/2, nu/2), then matrix normal with column
// covariance Sigma_c / tau.
inline Matrix sample_mt(const Matrix& w, const CovFactorization& col_cov,
                        const CovFactorization& row_cov, double nu,
                        RngStream& rng) {
  require(nu > 0.0, "sample_mt: nu must be positive");
  const double tau = sample_gamma(0.5 * nu, 0.5 * nu, rng);
  Matrix e(w.rows(), w.cols());
  for (Index j = 0; j < e.cols(); ++j)
    for (Index i = 0; i < e.rows(); ++i) e(i, j) = rng.normal();
  return w + (col_cov.lower_factor / std::sqrt(tau)) * e *
                 row_cov.lower_factor.transpose();
}

}  // namespace tbfa
