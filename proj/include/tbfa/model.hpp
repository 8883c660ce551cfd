#pragma once

#include <cmath>
#include <vector>

#include "tbfa/common.hpp"
#include "tbfa/dataset.hpp"
#include "tbfa/distributions.hpp"
#include "tbfa/params.hpp"

namespace tbfa {

inline double log_likelihood_one(const TbfaParams& p, const DerivedState& d,
                                 const Matrix& x) {
  require_dims(x.rows() == p.d_c() && x.cols() == p.d_r(),
               "log_likelihood: observation shape mismatch");
  const double delta = d.mahalanobis(x - p.W);
  if (p.gaussian) {
    return matrix_normal_log_density_core(delta, d.log_det_sigma_c,
                                          d.log_det_sigma_r, p.d_c(), p.d_r());
  }
  return mt_log_density_core(delta, d.log_det_sigma_c, d.log_det_sigma_r,
                             p.nu, p.d_c(), p.d_r());
}

// Observed-data log-likelihood with every constant term retained, so values
// are comparable across factor dimensions and against the density functions.
inline double log_likelihood(const TbfaParams& p, const MatrixDataset& data) {
  require_dims(p.d_c() == data.d_c && p.d_r() == data.d_r,
               "log_likelihood: parameter/data shape mismatch");
  const DerivedState d = derive(p);
  double total = 0.0;
  for (const Matrix& x : data.observations) total += log_likelihood_one(p, d, x);
  return total;
}

// Posterior mean of the latent factor matrix:
// E(Z|X) = M_c^{-1} C' Psi_c^{-1} (X - W) Psi_r^{-1} R M_r^{-1}.
inline Matrix factor_scores(const TbfaParams& p, const DerivedState& d,
                            const Matrix& x) {
  require_dims(x.rows() == p.d_c() && x.cols() == p.d_r(),
               "factor_scores: observation shape mismatch");
  const Matrix centered = x - p.W;
  return d.m_c_f.solve(d.pc_C.transpose() * centered * d.pr_R) *
         d.m_r_f.inverse();
}

inline Matrix factor_scores(const TbfaParams& p, const Matrix& x) {
  return factor_scores(p, derive(p), x);
}

// E[tau_n | X_n] = (nu + d_c d_r)/(nu + delta_n); small weights flag
// outlying observations.  Gaussian mode degenerates to all-ones.
inline std::vector<double> tau_weights(const TbfaParams& p,
                                       const MatrixDataset& data) {
  require_dims(p.d_c() == data.d_c && p.d_r() == data.d_r,
               "tau_weights: parameter/data shape mismatch");
  const DerivedState d = derive(p);
  const double D = static_cast<double>(p.d_c() * p.d_r());
  std::vector<double> w;
  w.reserve(data.observations.size());
  for (const Matrix& x : data.observations) {
    if (p.gaussian) {
      w.push_back(1.0);
    } else {
      w.push_back((p.nu + D) / (p.nu + d.mahalanobis(x - p.W)));
    }
  }
  return w;
}

inline double varimax_criterion(const Matrix& loading) {
  const double d = static_cast<double>(loading.rows());
  double value = 0.0;
  for (Index j = 0; j < loading.cols(); ++j) {
    const auto col2 = loading.col(j).array().square();
    value += col2.square().sum() - col2.sum() * col2.sum() / d;
  }
  return value;
}

// Iterative pairwise (Jacobi-style) varimax rotation; stops once a full
// sweep improves the criterion by less than 1e-8.
inline Matrix varimax(const Matrix& loading) {
  require(loading.cols() >= 1, "varimax: need at least one column");
  Matrix lam = loading;
  const Index d = lam.rows(), q = lam.cols();
  if (q == 1) return lam;
  double previous = varimax_criterion(lam);
  for (int sweep = 0; sweep < 200; ++sweep) {
    for (Index a = 0; a + 1 < q; ++a) {
      for (Index b = a + 1; b < q; ++b) {
        const Vector u = lam.col(a).array().square().matrix() -
                         lam.col(b).array().square().matrix();
        const Vector v = 2.0 * (lam.col(a).array() * lam.col(b).array()).matrix();
        const double A = u.sum(), B = v.sum();
        const double Cq = u.squaredNorm() - v.squaredNorm();
        const double Dq = 2.0 * u.dot(v);
        const double num = Dq - 2.0 * A * B / d;
        const double den = Cq - (A * A - B * B) / d;
        const double phi = 0.25 * std::atan2(num, den);
        if (std::abs(phi) < 1e-14) continue;
        const double c = std::cos(phi), s = std::sin(phi);
        const Vector ca = lam.col(a);
        lam.col(a) = c * ca + s * lam.col(b);
        lam.col(b) = -s * ca + c * lam.col(b).eval();
      }
    }
    const double current = varimax_criterion(lam);
    if (current - previous < 1e-8) break;
    previous = current;
  }
  return lam;
}

}  // namespace tbfa
