#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tbfa/common.hpp"
#include "tbfa/dataset.hpp"
#include "tbfa/model.hpp"
#include "tbfa/params.hpp"
#include "tbfa/rng.hpp"
#include "tbfa/special_functions.hpp"

namespace tbfa {

enum class Algorithm { Ecme, Aecm, PxEcme, PxAecm };

inline const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::Ecme: return "ecme";
    case Algorithm::Aecm: return "aecm";
    case Algorithm::PxEcme: return "px-ecme";
    case Algorithm::PxAecm: return "px-aecm";
  }
  throw UsageError("algorithm_name: unknown algorithm tag");
}

inline Algorithm parse_algorithm(const std::string& name) {
  if (name == "ecme") return Algorithm::Ecme;
  if (name == "aecm") return Algorithm::Aecm;
  if (name == "px-ecme") return Algorithm::PxEcme;
  if (name == "px-aecm") return Algorithm::PxAecm;
  throw UsageError("unknown algorithm '" + name +
                   "' (expected ecme, aecm, px-ecme, or px-aecm)");
}

struct FitConfig {
  Algorithm algorithm = Algorithm::PxAecm;
  double tol = 1e-8;       // relative log-likelihood change threshold
  int t_max = 1000;        // iteration cap
  double eta = kDefaultEta;
  double nu_min = kNuMin;
  double nu_max = kNuMax;
  bool gaussian_mode = false;
  std::optional<TbfaParams> init;  // start here instead of the random recipe
  std::uint64_t seed = 0;

  void validate() const {
    require(tol > 0.0, "FitConfig: tol must be positive");
    require(t_max >= 1, "FitConfig: t_max must be at least 1");
    require(eta > 0.0, "FitConfig: eta must be positive");
    require(nu_min < nu_max && nu_min > 0.0,
            "FitConfig: need 0 < nu_min < nu_max");
  }
};

struct FitResult {
  TbfaParams params;                 // identified form
  std::vector<double> loglik_trace;  // entry 0 is the starting value
  int iterations = 0;
  double elapsed_seconds = 0.0;
  bool converged = false;
  bool nu_saturated = false;  // last nu solve pinned at a bracket endpoint
  std::vector<double> final_tau;

  double log_likelihood() const {
    return loglik_trace.empty() ? std::nan("") : loglik_trace.back();
  }
};

// Observer invoked after each conditional-maximization step with the current
// full parameter set; used by tests that check stepwise likelihood ascent.
using StepProbe =
    std::function<void(const std::string& step, const TbfaParams& params)>;

namespace detail {

inline Matrix random_orthonormal(Index d, Index q, RngStream& rng) {
  if (q == 0) return Matrix(d, 0);
  Matrix g(d, q);
  for (Index j = 0; j < q; ++j)
    for (Index i = 0; i < d; ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(d, q);
}

}  // namespace detail

// Random starting point: W at the sample mean, loadings with random
// orthonormal columns on the overall variance scale, uniquenesses at half the
// per-row / per-column variances (floored), nu at a mid-range value.
inline TbfaParams initialize(const MatrixDataset& data, Index q_c, Index q_r,
                             const FitConfig& config, RngStream& rng) {
  require(data.n() >= 1, "initialize: dataset is empty");
  const Index d_c = data.d_c, d_r = data.d_r;
  const double n = static_cast<double>(data.n());

  Matrix mean = Matrix::Zero(d_c, d_r);
  for (const Matrix& x : data.observations) mean += x;
  mean /= n;
  Matrix var = Matrix::Zero(d_c, d_r);
  for (const Matrix& x : data.observations)
    var += (x - mean).array().square().matrix();
  var /= n;
  const double scale = std::sqrt(var.mean());

  TbfaParams p;
  p.W = mean;
  p.C = detail::random_orthonormal(d_c, q_c, rng) * scale;
  p.R = detail::random_orthonormal(d_r, q_r, rng) * scale;
  p.psi_c = (0.5 * var.rowwise().mean()).cwiseMax(config.eta);
  p.psi_r = (0.5 * var.colwise().mean().transpose()).cwiseMax(config.eta);
  p.nu = 10.0;
  p.gaussian = config.gaussian_mode;
  return p;
}

// Weighted mean of the observations under the current robustness weights.
inline Matrix ecme_update_W(const MatrixDataset& data,
                            const std::vector<double>& tau) {
  require_dims(tau.size() == static_cast<std::size_t>(data.n()),
               "ecme_update_W: weight count does not match dataset");
  Matrix acc = Matrix::Zero(data.d_c, data.d_r);
  double total = 0.0;
  for (Index n = 0; n < data.n(); ++n) {
    const double t = tau[static_cast<std::size_t>(n)];
    require(t > 0.0, "ecme_update_W: weights must be positive");
    acc += t * data.observations[static_cast<std::size_t>(n)];
    total += t;
  }
  return acc / total;
}

// Weighted column scatter S_c = (1/(N d_r)) sum_n tau_n (X_n - W) Sigma_r^{-1}
// (X_n - W)'.  W and Sigma_r are taken from `p`.
inline Matrix robust_col_cov(const MatrixDataset& data, const TbfaParams& p,
                             const std::vector<double>& tau) {
  require_dims(tau.size() == static_cast<std::size_t>(data.n()),
               "robust_col_cov: weight count does not match dataset");
  const DerivedState d = derive(p);
  Matrix s = Matrix::Zero(data.d_c, data.d_c);
  for (Index n = 0; n < data.n(); ++n) {
    const Matrix a = data.observations[static_cast<std::size_t>(n)] - p.W;
    s.noalias() +=
        tau[static_cast<std::size_t>(n)] * (d.sigma_r_solve_right(a) * a.transpose());
  }
  s = 0.5 * (s + s.transpose()).eval();
  return s / (static_cast<double>(data.n()) * static_cast<double>(data.d_r));
}

// Row-side mirror: S_r = (1/(N d_c)) sum_n tau_n (X_n - W)' Sigma_c^{-1}
// (X_n - W), with Sigma_c taken from `p` (the freshly updated column side).
inline Matrix robust_row_cov(const MatrixDataset& data, const TbfaParams& p,
                             const std::vector<double>& tau) {
  require_dims(tau.size() == static_cast<std::size_t>(data.n()),
               "robust_row_cov: weight count does not match dataset");
  const DerivedState d = derive(p);
  Matrix s = Matrix::Zero(data.d_r, data.d_r);
  for (Index n = 0; n < data.n(); ++n) {
    const Matrix a = data.observations[static_cast<std::size_t>(n)] - p.W;
    s.noalias() +=
        tau[static_cast<std::size_t>(n)] * (a.transpose() * d.sigma_c_solve(a));
  }
  s = 0.5 * (s + s.transpose()).eval();
  return s / (static_cast<double>(data.n()) * static_cast<double>(data.d_c));
}

// Closed-form loading update.  Eigendecompose the Psi-normalized scatter
// S~ = Psi^{-1/2} S Psi^{-1/2}; keep the leading eigenpairs whose eigenvalue
// exceeds 1 (at most q of them), and set
//   loading = Psi^{1/2} U_q' (Lambda_q' - I)^{1/2},
// zeroing any remaining columns.  Returns the loading and the retained count.
inline std::pair<Matrix, Index> update_loadings_eigen(const Matrix& s,
                                                      const Vector& psi,
                                                      Index q) {
  const Index d = s.rows();
  require_dims(s.cols() == d && psi.size() == d && q >= 0 && q <= d,
               "update_loadings_eigen: inconsistent shapes");
  Matrix loading = Matrix::Zero(d, q);
  if (q == 0) return {loading, 0};

  const Vector inv_root = psi.cwiseSqrt().cwiseInverse();
  Matrix sn = inv_root.asDiagonal() * s * inv_root.asDiagonal();
  sn = 0.5 * (sn + sn.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sn);
  require(eig.info() == Eigen::Success,
          "update_loadings_eigen: eigendecomposition failed");

  // Eigen sorts ascending; walk the top q from the largest down.
  const Vector root = psi.cwiseSqrt();
  Index q_prime = 0;
  for (Index k = 0; k < q; ++k) {
    const Index idx = d - 1 - k;
    const double lambda = eig.eigenvalues()(idx);
    if (lambda < 1.0) break;
    loading.col(k) =
        root.asDiagonal() * eig.eigenvectors().col(idx) * std::sqrt(lambda - 1.0);
    ++q_prime;
  }
  return {loading, q_prime};
}

// One ascending sweep of coordinate-wise uniqueness updates.  Works on the
// Psi-normalized scatter; the running inverse of
//   B_i = sum_{k<i} omega_k e_k e_k' + I + C* C*'
// is kept current with rank-one (Sherman-Morrison) corrections.
inline Vector update_psi_sequential(const Matrix& s, const Matrix& loading,
                                    const Vector& psi_old, double eta) {
  const Index d = s.rows();
  require_dims(s.cols() == d && psi_old.size() == d && loading.rows() == d,
               "update_psi_sequential: inconsistent shapes");
  require(psi_old.minCoeff() > 0.0 && eta > 0.0,
          "update_psi_sequential: need positive uniquenesses and floor");

  const Vector inv_root = psi_old.cwiseSqrt().cwiseInverse();
  Matrix sn = inv_root.asDiagonal() * s * inv_root.asDiagonal();
  sn = 0.5 * (sn + sn.transpose()).eval();

  // (I + C* C*')^{-1} = I - C* (I + C*'C*)^{-1} C*'.
  Matrix b_inv = Matrix::Identity(d, d);
  if (loading.cols() > 0) {
    const Matrix cn = inv_root.asDiagonal() * loading;
    Matrix core = Matrix::Identity(loading.cols(), loading.cols());
    core.noalias() += cn.transpose() * cn;
    b_inv.noalias() -= cn * core.llt().solve(cn.transpose());
  }

  Vector psi_new(d);
  for (Index i = 0; i < d; ++i) {
    const Vector b = b_inv.col(i);
    const double bii = b(i);
    const double quad = b.dot(sn * b);
    psi_new(i) =
        std::max(((quad - bii) / (bii * bii) + 1.0) * psi_old(i), eta);
    if (i + 1 < d) {
      const double omega = psi_new(i) / psi_old(i) - 1.0;
      b_inv.noalias() -= (omega / (1.0 + omega * bii)) * (b * b.transpose());
    }
  }
  return psi_new;
}

struct NuSolution {
  double value = 0.0;
  bool saturated = false;  // no sign change inside the bracket
};

namespace detail {

// Bisection for a continuous g that is positive at small nu and negative at
// large nu when a root exists.  Without a sign change, return the endpoint on
// the higher-likelihood side (g > 0 means the likelihood still increases).
template <typename G>
NuSolution bisect_nu(const G& g, double lo, double hi) {
  const double g_lo = g(lo);
  const double g_hi = g(hi);
  if (g_lo == 0.0) return {lo, false};
  if (g_hi == 0.0) return {hi, false};
  if (!(g_lo > 0.0 && g_hi < 0.0)) return {g_hi > 0.0 ? hi : lo, true};
  double a = lo, b = hi;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (a + b);
    if (b - a < 1e-12 * mid) return {mid, false};
    if (g(mid) > 0.0)
      a = mid;
    else
      b = mid;
  }
  return {0.5 * (a + b), false};
}

}  // namespace detail

// Degrees-of-freedom update that maximizes the observed-data log-likelihood
// given the other parameters: root of
//   -digamma(nu/2) + ln(nu/2) + 1 + digamma((nu+D)/2) - ln((nu+D)/2)
//   + mean_n[ ln((nu+D)/(nu+delta_n)) - (nu+D)/(nu+delta_n) ] = 0.
inline NuSolution solve_nu_ecme(const std::vector<double>& deltas, Index big_d,
                                double nu_min = kNuMin,
                                double nu_max = kNuMax) {
  require(!deltas.empty(), "solve_nu_ecme: no delta values");
  const double d = static_cast<double>(big_d);
  const auto g = [&](double nu) {
    double avg = 0.0;
    for (const double delta : deltas) {
      const double w = (nu + d) / (nu + delta);
      avg += std::log(w) - w;
    }
    avg /= static_cast<double>(deltas.size());
    return -digamma(0.5 * nu) + std::log(0.5 * nu) + 1.0 +
           digamma(0.5 * (nu + d)) - std::log(0.5 * (nu + d)) + avg;
  };
  return detail::bisect_nu(g, nu_min, nu_max);
}

namespace detail {

// Degrees-of-freedom update from the complete-data objective: the weight
// summary mean_n(ln tau_n - tau_n) is held fixed at the E-step values.
inline NuSolution solve_nu_aecm(const std::vector<double>& tau, Index big_d,
                                double nu_min, double nu_max) {
  const double d = static_cast<double>(big_d);
  double avg = 0.0;
  for (const double t : tau) avg += std::log(t) - t;
  avg /= static_cast<double>(tau.size());
  const auto g = [&](double nu) {
    return -digamma(0.5 * nu) + std::log(0.5 * nu) + 1.0 +
           digamma(0.5 * (nu + d)) - std::log(0.5 * (nu + d)) + avg;
  };
  return bisect_nu(g, nu_min, nu_max);
}

// Expanded-model variant: the scale factor alpha enters the log term, and the
// fixed summary is mean_n(E[ln tau_n | X_n] - tau_n/alpha).
inline NuSolution solve_nu_expanded(double avg, double alpha, double nu_min,
                                    double nu_max) {
  const auto g = [&](double nu) {
    return -digamma(0.5 * nu) + std::log(nu / (2.0 * alpha)) + 1.0 + avg;
  };
  return bisect_nu(g, nu_min, nu_max);
}

inline void emit(const StepProbe& probe, const char* step,
                 const TbfaParams& p) {
  if (probe) probe(step, p);
}

// One iteration of the eigendecomposition-based algorithm.  `px` rescales
// both scatters by N / sum(tau), which folds the expanded-model scale back
// into the updates.  Returns the new log-likelihood.
inline std::pair<double, bool> ecme_iteration(const MatrixDataset& data,
                                              TbfaParams& p,
                                              const FitConfig& config, bool px,
                                              const StepProbe& probe) {
  const Index d_c = p.d_c(), d_r = p.d_r();
  const double big_d = static_cast<double>(d_c * d_r);
  const Index n = data.n();
  const auto& obs = data.observations;

  // E-step: robustness weights at the current parameters.
  const DerivedState d0 = derive(p);
  std::vector<double> tau(static_cast<std::size_t>(n), 1.0);
  double sum_tau = static_cast<double>(n);
  if (!p.gaussian) {
    sum_tau = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double delta =
          d0.mahalanobis(obs[static_cast<std::size_t>(i)] - p.W);
      tau[static_cast<std::size_t>(i)] = (p.nu + big_d) / (p.nu + delta);
      sum_tau += tau[static_cast<std::size_t>(i)];
    }
  }

  // Mean.
  p.W = ecme_update_W(data, tau);
  emit(probe, "mean", p);

  // Column side: scatter, loading eigendecomposition, sequential uniqueness.
  Matrix s_c = robust_col_cov(data, p, tau);
  if (px) s_c *= static_cast<double>(n) / sum_tau;
  auto [c_new, qc_kept] = update_loadings_eigen(s_c, p.psi_c, p.q_c());
  (void)qc_kept;
  p.psi_c = update_psi_sequential(s_c, c_new, p.psi_c, config.eta);
  p.C = std::move(c_new);
  emit(probe, "column-covariance", p);

  // Row side, against the just-updated column covariance.
  Matrix s_r = robust_row_cov(data, p, tau);
  if (px) s_r *= static_cast<double>(n) / sum_tau;
  auto [r_new, qr_kept] = update_loadings_eigen(s_r, p.psi_r, p.q_r());
  (void)qr_kept;
  p.psi_r = update_psi_sequential(s_r, r_new, p.psi_r, config.eta);
  p.R = std::move(r_new);
  emit(probe, "row-covariance", p);

  // Degrees of freedom against the actual likelihood, then the new value.
  const DerivedState d1 = derive(p);
  std::vector<double> deltas(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    deltas[static_cast<std::size_t>(i)] =
        d1.mahalanobis(obs[static_cast<std::size_t>(i)] - p.W);
  bool saturated = false;
  if (!p.gaussian) {
    const NuSolution sol =
        solve_nu_ecme(deltas, d_c * d_r, config.nu_min, config.nu_max);
    p.nu = sol.value;
    saturated = sol.saturated;
    emit(probe, "dof", p);
  }

  double loglik = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double delta = deltas[static_cast<std::size_t>(i)];
    loglik += p.gaussian
                  ? matrix_normal_log_density_core(
                        delta, d1.log_det_sigma_c, d1.log_det_sigma_r, d_c, d_r)
                  : mt_log_density_core(delta, d1.log_det_sigma_c,
                                        d1.log_det_sigma_r, p.nu, d_c, d_r);
  }
  return {loglik, saturated};
}

// One iteration of the three-cycle algorithm.  Every cycle refreshes the
// robustness weights with the newest parameters.  With `px` the weights carry
// the expanded scale alpha = mean(tau); the column-side estimates live in the
// expanded frame until the reduction at the end of the iteration.
inline std::pair<double, bool> aecm_iteration(const MatrixDataset& data,
                                              TbfaParams& p,
                                              const FitConfig& config, bool px,
                                              const StepProbe& probe) {
  const Index d_c = p.d_c(), d_r = p.d_r();
  const double big_d = static_cast<double>(d_c * d_r);
  const Index n = data.n();
  const double n_real = static_cast<double>(n);
  const auto& obs = data.observations;
  const double nu_entry = p.nu;

  // Cycle 1 E-step (the expanded scale is 1 on entry).
  const DerivedState d0 = derive(p);
  std::vector<double> delta0(static_cast<std::size_t>(n), 0.0);
  std::vector<double> tau(static_cast<std::size_t>(n), 1.0);
  double sum_tau = n_real;
  if (!p.gaussian) {
    sum_tau = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double delta =
          d0.mahalanobis(obs[static_cast<std::size_t>(i)] - p.W);
      delta0[static_cast<std::size_t>(i)] = delta;
      tau[static_cast<std::size_t>(i)] = (p.nu + big_d) / (p.nu + delta);
      sum_tau += tau[static_cast<std::size_t>(i)];
    }
  }
  const double alpha = px ? sum_tau / n_real : 1.0;

  // Cycle 1 CM-step: mean and degrees of freedom.
  p.W = ecme_update_W(data, tau);
  bool saturated = false;
  if (!p.gaussian) {
    NuSolution sol;
    if (px) {
      double avg = 0.0;
      for (Index i = 0; i < n; ++i) {
        const double elog =
            digamma(0.5 * (nu_entry + big_d)) -
            std::log(0.5 * (nu_entry + delta0[static_cast<std::size_t>(i)]));
        avg += elog - tau[static_cast<std::size_t>(i)] / alpha;
      }
      sol = solve_nu_expanded(avg / n_real, alpha, config.nu_min,
                              config.nu_max);
    } else {
      sol = solve_nu_aecm(tau, d_c * d_r, config.nu_min, config.nu_max);
    }
    p.nu = sol.value;
    saturated = sol.saturated;
  }
  emit(probe, "mean-dof", p);

  // Cycle 2: refresh weights at the new mean and dof, then update the column
  // loading and uniquenesses from the latent-row-component moments.
  std::vector<double> tau2(static_cast<std::size_t>(n), 1.0);
  if (!p.gaussian) {
    for (Index i = 0; i < n; ++i) {
      const double delta =
          d0.mahalanobis(obs[static_cast<std::size_t>(i)] - p.W);
      tau2[static_cast<std::size_t>(i)] =
          px ? alpha * (p.nu + big_d) / (p.nu + alpha * delta)
             : (p.nu + big_d) / (p.nu + delta);
    }
  }
  Matrix g1 = Matrix::Zero(d_c, p.q_c());
  Matrix g2 = Matrix::Zero(p.q_c(), p.q_c());
  Vector diag1 = Vector::Zero(d_c);
  for (Index i = 0; i < n; ++i) {
    const double t = tau2[static_cast<std::size_t>(i)];
    const Matrix a = obs[static_cast<std::size_t>(i)] - p.W;
    const Matrix v = d0.sigma_r_solve_right(a);
    diag1 += t * (v.array() * a.array()).rowwise().sum().matrix();
    if (p.q_c() > 0) {
      const Matrix e = d0.m_c_f.solve(d0.pc_C.transpose() * a);
      g1.noalias() += t * (v * e.transpose());
      g2.noalias() += t * (d0.sigma_r_solve_right(e) * e.transpose());
    }
  }
  Matrix c_star(d_c, p.q_c());
  if (p.q_c() > 0) {
    g2.noalias() +=
        n_real * static_cast<double>(d_r) * d0.m_c_f.inverse();
    g2 = 0.5 * (g2 + g2.transpose()).eval();
    c_star = factorize_spd(g2).solve(g1.transpose()).transpose();
  }
  Vector psi_c_new =
      ((diag1 - (g1.array() * c_star.array()).rowwise().sum().matrix()) /
       (n_real * static_cast<double>(d_r)) / alpha)
          .cwiseMax(config.eta);
  // Expanded-frame column parameters used by cycle 3.
  const Matrix c_exp = c_star;
  const Vector psi_c_exp = alpha * psi_c_new;
  if (probe) {
    TbfaParams reduced = p;
    reduced.C = c_star / std::sqrt(alpha);
    reduced.psi_c = psi_c_new;
    probe("column-covariance", reduced);
  }

  // Cycle 3: weights refreshed once more against the new column covariance,
  // then the row side is updated from the latent-column-component moments.
  TbfaParams p_exp = p;
  p_exp.C = c_exp;
  p_exp.psi_c = psi_c_exp;
  const DerivedState d2 = derive(p_exp);
  std::vector<double> tau3(static_cast<std::size_t>(n), 1.0);
  Matrix h1 = Matrix::Zero(d_r, p.q_r());
  Matrix h2 = Matrix::Zero(p.q_r(), p.q_r());
  Vector diag2 = Vector::Zero(d_r);
  for (Index i = 0; i < n; ++i) {
    const Matrix a = obs[static_cast<std::size_t>(i)] - p.W;
    double t = 1.0;
    if (!p.gaussian) {
      const double delta = d2.mahalanobis(a);
      t = px ? alpha * (p.nu + big_d) / (p.nu + alpha * delta)
             : (p.nu + big_d) / (p.nu + delta);
    }
    tau3[static_cast<std::size_t>(i)] = t;
    const Matrix u = d2.sigma_c_solve(a);
    diag2 +=
        t * (u.array() * a.array()).colwise().sum().matrix().transpose();
    if (p.q_r() > 0) {
      const Matrix f =
          d2.m_r_f.solve((a * d2.pr_R).transpose()).transpose();
      h1.noalias() += t * (u.transpose() * f);
      h2.noalias() += t * (f.transpose() * d2.sigma_c_solve(f));
    }
  }
  Matrix r_star(d_r, p.q_r());
  if (p.q_r() > 0) {
    h2.noalias() +=
        n_real * static_cast<double>(d_c) * d2.m_r_f.inverse();
    h2 = 0.5 * (h2 + h2.transpose()).eval();
    r_star = factorize_spd(h2).solve(h1.transpose()).transpose();
  }
  Vector psi_r_new =
      ((diag2 - (h1.array() * r_star.array()).rowwise().sum().matrix()) /
       (n_real * static_cast<double>(d_c)))
          .cwiseMax(config.eta);

  // Reduce the expanded column parameters back to the original frame.
  p.C = c_star / std::sqrt(alpha);
  p.psi_c = std::move(psi_c_new);
  p.R = std::move(r_star);
  p.psi_r = std::move(psi_r_new);
  emit(probe, "row-covariance", p);

  return {log_likelihood(p, data), saturated};
}

}  // namespace detail

inline FitResult fit(const MatrixDataset& data, Index q_c, Index q_r,
                     const FitConfig& config, const StepProbe& probe = {}) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  data.validate();
  require(data.n() >= 1, "fit: dataset is empty");
  require(q_c >= 0 && q_c <= max_factors(data.d_c),
          "fit: q_c outside the identifiable range for d_c");
  require(q_r >= 0 && q_r <= max_factors(data.d_r),
          "fit: q_r outside the identifiable range for d_r");

  TbfaParams p;
  if (config.init.has_value()) {
    p = *config.init;
    p.gaussian = config.gaussian_mode;
    p.validate();
    require_dims(p.d_c() == data.d_c && p.d_r() == data.d_r &&
                     p.q_c() == q_c && p.q_r() == q_r,
                 "fit: supplied initial parameters do not match data/q");
  } else {
    RngStream rng(config.seed);
    p = initialize(data, q_c, q_r, config, rng);
  }

  const bool px = config.algorithm == Algorithm::PxEcme ||
                  config.algorithm == Algorithm::PxAecm;
  const bool eigen_family = config.algorithm == Algorithm::Ecme ||
                            config.algorithm == Algorithm::PxEcme;

  FitResult out;
  double prev = log_likelihood(p, data);
  out.loglik_trace.push_back(prev);
  for (int t = 1; t <= config.t_max; ++t) {
    const auto [loglik, saturated] =
        eigen_family ? detail::ecme_iteration(data, p, config, px, probe)
                     : detail::aecm_iteration(data, p, config, px, probe);
    if (!std::isfinite(loglik))
      throw NumericalError("fit: log-likelihood became non-finite at iteration " +
                           std::to_string(t));
    out.loglik_trace.push_back(loglik);
    out.iterations = t;
    out.nu_saturated = saturated;
    if (std::abs(1.0 - prev / loglik) < config.tol) {
      out.converged = true;
      break;
    }
    prev = loglik;
  }

  out.params = identify(p);
  out.final_tau = tau_weights(out.params, data);
  out.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return out;
}

inline FitResult fit_ecme(const MatrixDataset& data, Index q_c, Index q_r,
                          const FitConfig& config, const StepProbe& probe = {}) {
  FitConfig cfg = config;
  cfg.algorithm = Algorithm::Ecme;
  return fit(data, q_c, q_r, cfg, probe);
}

inline FitResult fit_aecm(const MatrixDataset& data, Index q_c, Index q_r,
                          const FitConfig& config, const StepProbe& probe = {}) {
  FitConfig cfg = config;
  cfg.algorithm = Algorithm::Aecm;
  return fit(data, q_c, q_r, cfg, probe);
}

inline FitResult fit_px_ecme(const MatrixDataset& data, Index q_c, Index q_r,
                             const FitConfig& config,
                             const StepProbe& probe = {}) {
  FitConfig cfg = config;
  cfg.algorithm = Algorithm::PxEcme;
  return fit(data, q_c, q_r, cfg, probe);
}

inline FitResult fit_px_aecm(const MatrixDataset& data, Index q_c, Index q_r,
                             const FitConfig& config,
                             const StepProbe& probe = {}) {
  FitConfig cfg = config;
  cfg.algorithm = Algorithm::PxAecm;
  return fit(data, q_c, q_r, cfg, probe);
}

}  // namespace tbfa
