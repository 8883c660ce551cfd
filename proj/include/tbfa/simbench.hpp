#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tbfa/common.hpp"
#include "tbfa/dataset.hpp"
#include "tbfa/distributions.hpp"
#include "tbfa/estimation.hpp"
#include "tbfa/inference.hpp"
#include "tbfa/linalg.hpp"
#include "tbfa/params.hpp"
#include "tbfa/rng.hpp"

namespace tbfa {

// ---------------------------------------------------------------------------
// Dataset recipes
// ---------------------------------------------------------------------------

enum class GeneratorKind { Data1, Data2, Data3, TbfaAccuracy };

inline const char* generator_kind_name(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::Data1: return "data1";
    case GeneratorKind::Data2: return "data2";
    case GeneratorKind::Data3: return "data3";
    case GeneratorKind::TbfaAccuracy: return "accuracy";
  }
  return "?";
}

inline GeneratorKind parse_generator_kind(const std::string& name) {
  if (name == "data1") return GeneratorKind::Data1;
  if (name == "data2") return GeneratorKind::Data2;
  if (name == "data3") return GeneratorKind::Data3;
  if (name == "accuracy") return GeneratorKind::TbfaAccuracy;
  throw UsageError("unknown dataset kind: " + name +
                   " (expected data1, data2, data3, or accuracy)");
}

struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::Data1;
  Index n = 0;  // 0 selects the recipe's default sample size
  std::optional<Index> d_c_override;  // desk-scaled data3 runs
  std::optional<TbfaParams> params_override;
};

inline Vector linspace(double a, double b, Index n) {
  require(n >= 1, "linspace: need at least one point");
  Vector v(n);
  if (n == 1) {
    v(0) = a;
    return v;
  }
  for (Index i = 0; i < n; ++i)
    v(i) = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

// Exact parameter block behind the estimation-accuracy experiment: a 5x5
// two-factor-per-side t model with heavy tails (nu = 3).
inline TbfaParams accuracy_truth() {
  TbfaParams p;
  p.W = Matrix::Zero(5, 5);
  p.C = Matrix(5, 2);
  p.C << -1.03, 3.47,
         -0.78, -4.39,
         -1.35, 6.99,
         -1.05, -3.44,
         -2.10, -2.83;
  p.R = Matrix(5, 2);
  p.R << -1.12, -2.15,
         -1.40, -5.44,
         -1.45, -4.71,
         -1.54, 6.28,
         -1.15, 2.04;
  p.psi_c = Vector(5);
  p.psi_c << 0.1, 0.2, 0.3, 0.4, 0.5;
  p.psi_r = Vector(5);
  p.psi_r << 0.2, 0.3, 0.4, 0.5, 0.6;
  p.nu = 3.0;
  p.gaussian = false;
  return p;
}

// Expands a recipe to concrete ground-truth parameters.  The matrix-normal
// recipes draw fresh random column-orthonormal loadings from the stream; the
// accuracy recipe is a fixed block and consumes nothing.
inline TbfaParams generator_truth(const GeneratorSpec& spec, RngStream& rng) {
  if (spec.params_override.has_value()) {
    TbfaParams p = *spec.params_override;
    p.validate();
    return p;
  }
  if (spec.kind == GeneratorKind::TbfaAccuracy) return accuracy_truth();

  Index d_c = 10, d_r = 10;
  if (spec.kind == GeneratorKind::Data3) {
    d_c = spec.d_c_override.value_or(2000);
    d_r = 10;
  }
  require(d_c >= 4 && d_r >= 4, "generator_truth: dimensions too small");
  const Index q = 3;
  Vector l_c(q), l_r(q);
  l_c << std::sqrt(5.0), std::sqrt(4.5), std::sqrt(4.0);
  l_r << std::sqrt(10.0), std::sqrt(9.0), std::sqrt(8.0);

  TbfaParams p;
  p.W = Matrix::Zero(d_c, d_r);
  p.C = detail::random_orthonormal(d_c, q, rng) * l_c.asDiagonal();
  p.R = detail::random_orthonormal(d_r, q, rng) * l_r.asDiagonal();
  if (spec.kind == GeneratorKind::Data2) {
    p.psi_c = linspace(0.05, 0.1, d_c);
    p.psi_r = linspace(0.1, 0.2, d_r);
  } else {
    p.psi_c = linspace(0.5, 1.0, d_c);
    p.psi_r = linspace(1.0, 2.0, d_r);
  }
  p.nu = 10.0;
  p.gaussian = true;  // these recipes are matrix-normal
  return p;
}

inline Index generator_default_n(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::Data1:
    case GeneratorKind::Data2: return 500;
    case GeneratorKind::Data3: return 100;
    case GeneratorKind::TbfaAccuracy: return 500;
  }
  return 500;
}

inline std::pair<MatrixDataset, TbfaParams> generate(const GeneratorSpec& spec,
                                                     RngStream& rng) {
  const TbfaParams truth = generator_truth(spec, rng);
  const Index n = spec.n > 0 ? spec.n : generator_default_n(spec.kind);
  Matrix sigma_c = truth.C * truth.C.transpose();
  sigma_c += Matrix(truth.psi_c.asDiagonal());
  Matrix sigma_r = truth.R * truth.R.transpose();
  sigma_r += Matrix(truth.psi_r.asDiagonal());
  const CovFactorization f_c = factorize_spd(sigma_c);
  const CovFactorization f_r = factorize_spd(sigma_r);

  MatrixDataset ds;
  ds.d_c = truth.d_c();
  ds.d_r = truth.d_r();
  ds.observations.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    ds.observations.push_back(
        truth.gaussian ? sample_matrix_normal(truth.W, f_c, f_r, rng)
                       : sample_mt(truth.W, f_c, f_r, truth.nu, rng));
  }
  return {std::move(ds), truth};
}

// ---------------------------------------------------------------------------
// Outlier injection
// ---------------------------------------------------------------------------

enum class OutlierFamily { FC, OC, FC_OC };
enum class OutlierSituation { I, II, III, IV };

inline const char* outlier_family_name(OutlierFamily f) {
  switch (f) {
    case OutlierFamily::FC: return "FC";
    case OutlierFamily::OC: return "OC";
    case OutlierFamily::FC_OC: return "FC+OC";
  }
  return "?";
}

inline OutlierFamily parse_outlier_family(const std::string& name) {
  if (name == "FC" || name == "fc") return OutlierFamily::FC;
  if (name == "OC" || name == "oc") return OutlierFamily::OC;
  if (name == "FC+OC" || name == "FC_OC" || name == "fc+oc" || name == "fc_oc")
    return OutlierFamily::FC_OC;
  throw UsageError("unknown outlier family: " + name);
}

inline const char* outlier_situation_name(OutlierSituation s) {
  switch (s) {
    case OutlierSituation::I: return "I";
    case OutlierSituation::II: return "II";
    case OutlierSituation::III: return "III";
    case OutlierSituation::IV: return "IV";
  }
  return "?";
}

inline OutlierSituation parse_outlier_situation(const std::string& name) {
  if (name == "I" || name == "i" || name == "1") return OutlierSituation::I;
  if (name == "II" || name == "ii" || name == "2") return OutlierSituation::II;
  if (name == "III" || name == "iii" || name == "3")
    return OutlierSituation::III;
  if (name == "IV" || name == "iv" || name == "4") return OutlierSituation::IV;
  throw UsageError("unknown outlier situation: " + name);
}

// Entrywise uniform magnitude range for the contamination block.
inline std::pair<double, double> situation_bounds(OutlierSituation s) {
  switch (s) {
    case OutlierSituation::I: return {-100.0, 100.0};
    case OutlierSituation::II: return {-10000.0, 10000.0};
    case OutlierSituation::III: return {100.0, 110.0};
    case OutlierSituation::IV: return {10000.0, 11000.0};
  }
  return {0.0, 0.0};
}

struct OutlierSpec {
  OutlierFamily family = OutlierFamily::FC;
  OutlierSituation situation = OutlierSituation::I;
  double proportion = 0.0;  // outlier share of the combined sample
};

// Appended count making the outlier share of the combined set equal p.
inline Index outlier_count(Index n, double proportion) {
  require(proportion >= 0.0 && proportion < 0.5,
          "outlier proportion must lie in [0, 0.5)");
  return static_cast<Index>(
      std::llround(static_cast<double>(n) * proportion / (1.0 - proportion)));
}

namespace detail {

// Columns spanning the orthogonal complement of a loading's column space.
inline Matrix orthogonal_complement(const Matrix& loading) {
  const Index d = loading.rows(), q = loading.cols();
  require_dims(q < d, "orthogonal complement is empty");
  Eigen::HouseholderQR<Matrix> qr(loading);
  const Matrix full_q = qr.householderQ() * Matrix::Identity(d, d);
  return full_q.rightCols(d - q);
}

}  // namespace detail

// Appends round(N p/(1-p)) contaminated observations: clean draws from the
// truth model plus a bilinear disturbance confined to the factor-component
// subspace (FC), its orthogonal complement (OC), or both.  Labels every
// observation "clean" or "outlier".
inline MatrixDataset inject_outliers(const MatrixDataset& data,
                                     const TbfaParams& truth,
                                     const OutlierSpec& spec, RngStream& rng) {
  data.validate();
  truth.validate();
  require_dims(data.d_c == truth.d_c() && data.d_r == truth.d_r(),
               "inject_outliers: truth/data shape mismatch");
  if (spec.proportion == 0.0) return data;
  const Index m = outlier_count(data.n(), spec.proportion);
  const auto [lo, hi] = situation_bounds(spec.situation);
  const Index d_c = data.d_c, d_r = data.d_r;
  const Index q_c = truth.q_c(), q_r = truth.q_r();

  Matrix c_perp, r_perp;
  if (spec.family != OutlierFamily::FC) {
    c_perp = detail::orthogonal_complement(truth.C);
    r_perp = detail::orthogonal_complement(truth.R);
  }

  Matrix sigma_c = truth.C * truth.C.transpose();
  sigma_c += Matrix(truth.psi_c.asDiagonal());
  Matrix sigma_r = truth.R * truth.R.transpose();
  sigma_r += Matrix(truth.psi_r.asDiagonal());
  const CovFactorization f_c = factorize_spd(sigma_c);
  const CovFactorization f_r = factorize_spd(sigma_r);

  MatrixDataset out = data;
  if (out.labels.empty())
    out.labels.assign(static_cast<std::size_t>(out.n()), "clean");

  const auto uniform_block = [&](Index rows, Index cols) {
    Matrix u(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) u(i, j) = rng.uniform(lo, hi);
    return u;
  };

  for (Index k = 0; k < m; ++k) {
    Matrix x = truth.gaussian ? sample_matrix_normal(truth.W, f_c, f_r, rng)
                              : sample_mt(truth.W, f_c, f_r, truth.nu, rng);
    switch (spec.family) {
      case OutlierFamily::FC:
        x.noalias() += truth.C * uniform_block(q_c, q_r) * truth.R.transpose();
        break;
      case OutlierFamily::OC:
        x.noalias() +=
            c_perp * uniform_block(d_c - q_c, d_r - q_r) * r_perp.transpose();
        break;
      case OutlierFamily::FC_OC: {
        Matrix c_o(d_c, d_c), r_o(d_r, d_r);
        c_o << truth.C, c_perp;
        r_o << truth.R, r_perp;
        x.noalias() += c_o * uniform_block(d_c, d_r) * r_o.transpose();
        break;
      }
    }
    out.observations.push_back(std::move(x));
    out.labels.push_back("outlier");
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// || Sigma_hat - Sigma ||_F / || Sigma ||_F on the Kronecker-product scale
// matrices.  When both sides share factor shapes the norm is computed through
// Kronecker trace identities (nothing product-sized is formed); mismatched
// factorizations (vectorized refits) fall back to dense products.
inline double rel_cov_error(const TbfaParams& truth, const TbfaParams& est) {
  truth.validate();
  est.validate();
  require_dims(truth.d_c() * truth.d_r() == est.d_c() * est.d_r(),
               "rel_cov_error: product dimensions differ");
  const auto dense_sigma = [](const Matrix& load, const Vector& psi) {
    Matrix s = load * load.transpose();
    s += Matrix(psi.asDiagonal());
    return s;
  };
  const Matrix tc = dense_sigma(truth.C, truth.psi_c);
  const Matrix tr_ = dense_sigma(truth.R, truth.psi_r);
  const Matrix ec = dense_sigma(est.C, est.psi_c);
  const Matrix er = dense_sigma(est.R, est.psi_r);

  if (truth.d_c() == est.d_c() && truth.d_r() == est.d_r()) {
    const double t2 = tr_.squaredNorm() * tc.squaredNorm();
    const double e2 = er.squaredNorm() * ec.squaredNorm();
    const double cross = (tr_.array() * er.array()).sum() *
                         (tc.array() * ec.array()).sum();
    const double num2 = std::max(t2 + e2 - 2.0 * cross, 0.0);
    return std::sqrt(num2 / t2);
  }
  const Matrix kt = kronecker(tr_, tc);
  const Matrix ke = kronecker(er, ec);
  return (ke - kt).norm() / kt.norm();
}

// Posterior-weight separation between labeled outliers and clean points:
// heavy contamination should drag the outliers' tau far below the clean bulk.
struct TauSeparation {
  double outlier_mean = std::numeric_limits<double>::quiet_NaN();
  double clean_p10 = std::numeric_limits<double>::quiet_NaN();
  Index outliers = 0, clean = 0;
  bool separated = false;
};

inline TauSeparation tau_separation(const std::vector<double>& tau,
                                    const std::vector<std::string>& labels) {
  require_dims(tau.size() == labels.size(),
               "tau_separation: weight/label count mismatch");
  TauSeparation out;
  std::vector<double> clean;
  double outlier_sum = 0.0;
  for (std::size_t i = 0; i < tau.size(); ++i) {
    if (labels[i] == "outlier") {
      outlier_sum += tau[i];
      ++out.outliers;
    } else {
      clean.push_back(tau[i]);
      ++out.clean;
    }
  }
  require(out.outliers > 0 && out.clean > 0,
          "tau_separation: needs both clean and outlier observations");
  out.outlier_mean = outlier_sum / static_cast<double>(out.outliers);
  std::sort(clean.begin(), clean.end());
  const std::size_t idx = static_cast<std::size_t>(
      std::floor(0.1 * static_cast<double>(clean.size() - 1)));
  out.clean_p10 = clean[idx];
  out.separated = out.outlier_mean < out.clean_p10;
  return out;
}

// ---------------------------------------------------------------------------
// Study runners
// ---------------------------------------------------------------------------

enum class FitMethod { Tbfa, Bfa, Tfa, Fa };

inline const char* fit_method_name(FitMethod m) {
  switch (m) {
    case FitMethod::Tbfa: return "tbfa";
    case FitMethod::Bfa: return "bfa";
    case FitMethod::Tfa: return "tfa";
    case FitMethod::Fa: return "fa";
  }
  return "?";
}

inline FitMethod parse_fit_method(const std::string& name) {
  if (name == "tbfa") return FitMethod::Tbfa;
  if (name == "bfa") return FitMethod::Bfa;
  if (name == "tfa") return FitMethod::Tfa;
  if (name == "fa") return FitMethod::Fa;
  throw UsageError("unknown fit method: " + name);
}

struct RobustnessCell {
  OutlierFamily family = OutlierFamily::FC;
  OutlierSituation situation = OutlierSituation::I;
  FitMethod method = FitMethod::Tbfa;
  double proportion = 0.0;
  double mean_rel_err = std::numeric_limits<double>::quiet_NaN();
  Index reps_used = 0;
  Index reps_failed = 0;
};

struct RobustnessResult {
  Index n = 0;
  Index reps = 0;
  std::vector<RobustnessCell> cells;
};

// Contamination sweep: matrix-normal base data (the convergence benchmark's
// 10x10 three-factor recipe), outliers injected per cell, then each method
// refits and the Kronecker covariance error is averaged over repetitions.
// Every repetition shares one contaminated dataset across methods.
inline RobustnessResult robustness_study(
    const std::vector<double>& p_values,
    const std::vector<OutlierFamily>& families,
    const std::vector<OutlierSituation>& situations,
    const std::vector<FitMethod>& methods, Index reps, Index n,
    const FitConfig& base, const RngStream& rng) {
  require(reps >= 1 && n >= 10, "robustness_study: too few reps/observations");
  require(!p_values.empty() && !families.empty() && !situations.empty() &&
              !methods.empty(),
          "robustness_study: empty sweep");
  RobustnessResult result;
  result.n = n;
  result.reps = reps;
  const RngStream root = rng.child(0x0b57);

  for (std::size_t fi = 0; fi < families.size(); ++fi) {
    for (std::size_t si = 0; si < situations.size(); ++si) {
      for (std::size_t pi = 0; pi < p_values.size(); ++pi) {
        std::vector<double> sums(methods.size(), 0.0);
        std::vector<Index> used(methods.size(), 0), failed(methods.size(), 0);
        const RngStream cell =
            root.child(fi * 64 + si).child(static_cast<std::uint64_t>(pi));
        for (Index rep = 0; rep < reps; ++rep) {
          const RngStream rs = cell.child(static_cast<std::uint64_t>(rep));
          RngStream gen_rng = rs.child(1);
          GeneratorSpec gspec;
          gspec.kind = GeneratorKind::Data1;
          gspec.n = n;
          auto [data, truth] = generate(gspec, gen_rng);
          OutlierSpec ospec{families[fi], situations[si], p_values[pi]};
          RngStream inj_rng = rs.child(2);
          const MatrixDataset poisoned =
              inject_outliers(data, truth, ospec, inj_rng);
          const MatrixDataset vec_data = vectorized(poisoned);
          for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            FitConfig cfg = base;
            cfg.seed = rs.child(16 + mi).seed();
            cfg.gaussian_mode = methods[mi] == FitMethod::Bfa ||
                                methods[mi] == FitMethod::Fa;
            const bool vectorized_method = methods[mi] == FitMethod::Tfa ||
                                           methods[mi] == FitMethod::Fa;
            try {
              const FitResult fr =
                  vectorized_method
                      ? fit(vec_data, truth.q_c() * truth.q_r(), 0, cfg)
                      : fit(poisoned, truth.q_c(), truth.q_r(), cfg);
              sums[mi] += rel_cov_error(truth, fr.params);
              ++used[mi];
            } catch (const std::exception&) {
              ++failed[mi];
            }
          }
        }
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
          RobustnessCell c;
          c.family = families[fi];
          c.situation = situations[si];
          c.method = methods[mi];
          c.proportion = p_values[pi];
          c.reps_used = used[mi];
          c.reps_failed = failed[mi];
          if (used[mi] > 0)
            c.mean_rel_err = sums[mi] / static_cast<double>(used[mi]);
          result.cells.push_back(c);
        }
      }
    }
  }
  return result;
}

struct AccuracyRun {
  Index n = 0;
  Index reps = 0;
};

inline std::vector<AccuracyRun> desk_accuracy_runs() {
  return {{100, 100}, {500, 100}, {5000, 25}};
}

struct AccuracyRow {
  std::string label;
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double estd = std::numeric_limits<double>::quiet_NaN();
  double imse = std::numeric_limits<double>::quiet_NaN();
};

struct AccuracyTable {
  Index n = 0;
  Index reps_requested = 0;
  Index reps_used = 0;   // successful fits
  Index imse_used = 0;   // fits whose information matrix inverted cleanly
  std::vector<AccuracyRow> rows;
};

struct AccuracyResult {
  TbfaParams truth;  // identified frame, the comparison target
  ParamLayout layout;
  std::vector<AccuracyTable> tables;
};

// Repetition study on the fixed heavy-tailed 5x5 truth: per sample size,
// draws fresh data, refits at the true factor counts, and aggregates RMSE
// against the identified truth, the empirical spread of the estimates, and
// the mean information-based standard error.
inline AccuracyResult accuracy_study(const std::vector<AccuracyRun>& runs,
                                     const FitConfig& base,
                                     const RngStream& rng) {
  require(!runs.empty(), "accuracy_study: no runs");
  AccuracyResult result;
  result.truth = identify(accuracy_truth());
  result.layout = ParamLayout::make(result.truth);
  const Vector theta_true = pack_coordinates(result.truth, result.layout);
  const Index np = result.layout.size();
  const RngStream root = rng.child(0xacc0);

  for (const AccuracyRun& run : runs) {
    require(run.n >= 20 && run.reps >= 2, "accuracy_study: run too small");
    AccuracyTable table;
    table.n = run.n;
    table.reps_requested = run.reps;
    const RngStream run_stream = root.child(static_cast<std::uint64_t>(run.n));
    std::vector<Vector> estimates;
    Vector se_sum = Vector::Zero(np);
    for (Index rep = 0; rep < run.reps; ++rep) {
      const RngStream rs = run_stream.child(static_cast<std::uint64_t>(rep));
      RngStream gen_rng = rs.child(1);
      GeneratorSpec gspec;
      gspec.kind = GeneratorKind::TbfaAccuracy;
      gspec.n = run.n;
      auto [data, truth] = generate(gspec, gen_rng);
      (void)truth;
      FitConfig cfg = base;
      cfg.seed = rs.child(2).seed();
      FitResult fr;
      try {
        fr = fit(data, result.truth.q_c(), result.truth.q_r(), cfg);
      } catch (const std::exception&) {
        continue;
      }
      estimates.push_back(pack_coordinates(fr.params, result.layout));
      try {
        const StandardErrors se =
            standard_errors(fr.params, run.n, result.layout);
        se_sum += se.values;
        ++table.imse_used;
      } catch (const std::exception&) {
      }
    }
    table.reps_used = static_cast<Index>(estimates.size());
    require(table.reps_used >= 2, "accuracy_study: nearly all fits failed");

    for (Index k = 0; k < np; ++k) {
      AccuracyRow row;
      row.label = result.layout.label(k);
      double sq_dev = 0.0, mean = 0.0;
      for (const Vector& est : estimates) {
        sq_dev += (est(k) - theta_true(k)) * (est(k) - theta_true(k));
        mean += est(k);
      }
      const double count = static_cast<double>(table.reps_used);
      mean /= count;
      row.rmse = std::sqrt(sq_dev / count);
      double var = 0.0;
      for (const Vector& est : estimates)
        var += (est(k) - mean) * (est(k) - mean);
      row.estd = std::sqrt(var / (count - 1.0));
      if (table.imse_used > 0)
        row.imse = se_sum(k) / static_cast<double>(table.imse_used);
      table.rows.push_back(row);
    }
    result.tables.push_back(std::move(table));
  }
  return result;
}

struct ConvergenceTrace {
  std::string dataset;
  Algorithm algorithm = Algorithm::Ecme;
  std::vector<double> loglik;   // entry 0 is the shared starting value
  std::vector<double> seconds;  // cumulative wall time, aligned with loglik
  Index iterations = 0;
  bool converged = false;
};

struct ConvergenceResult {
  std::vector<ConvergenceTrace> traces;
};

// Runs each algorithm from one shared initialization per dataset and records
// the likelihood path against iteration count and wall time.
inline ConvergenceResult convergence_study(
    const std::vector<std::pair<std::string, MatrixDataset>>& datasets,
    Index q_c, Index q_r, const std::vector<Algorithm>& algorithms,
    const FitConfig& base, const RngStream& rng) {
  require(!datasets.empty() && !algorithms.empty(),
          "convergence_study: empty inputs");
  ConvergenceResult result;
  const RngStream root = rng.child(0xc0);
  for (std::size_t di = 0; di < datasets.size(); ++di) {
    const MatrixDataset& data = datasets[di].second;
    RngStream init_rng = root.child(di).child(1);
    const TbfaParams start = initialize(data, q_c, q_r, base, init_rng);
    for (const Algorithm alg : algorithms) {
      FitConfig cfg = base;
      cfg.algorithm = alg;
      cfg.init = start;
      std::vector<double> step_times;
      const auto t0 = std::chrono::steady_clock::now();
      const StepProbe probe = [&step_times, t0](const std::string&,
                                                const TbfaParams&) {
        step_times.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                          t0)
                .count());
      };
      const FitResult fr = fit(data, q_c, q_r, cfg, probe);
      ConvergenceTrace trace;
      trace.dataset = datasets[di].first;
      trace.algorithm = alg;
      trace.loglik = fr.loglik_trace;
      trace.iterations = fr.iterations;
      trace.converged = fr.converged;
      trace.seconds.assign(1, 0.0);
      if (fr.iterations > 0 && !step_times.empty()) {
        const std::size_t per_iter =
            step_times.size() / static_cast<std::size_t>(fr.iterations);
        for (Index it = 1; it <= fr.iterations; ++it)
          trace.seconds.push_back(
              step_times[static_cast<std::size_t>(it) * per_iter - 1]);
      }
      result.traces.push_back(std::move(trace));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Table emission (RFC-4180 CSV; higher-level JSON wrapping lives in the CLI)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace detail

inline std::string robustness_csv(const RobustnessResult& r) {
  std::string out = "method,family,situation,p,relerr,relerr_x100\r\n";
  for (const RobustnessCell& c : r.cells) {
    out += std::string(fit_method_name(c.method)) + "," +
           outlier_family_name(c.family) + "," +
           outlier_situation_name(c.situation) + "," +
           detail::csv_num(c.proportion) + "," +
           detail::csv_num(c.mean_rel_err) + "," +
           detail::csv_num(100.0 * c.mean_rel_err) + "\r\n";
  }
  return out;
}

inline std::string accuracy_csv(const AccuracyResult& r) {
  std::string out = "n,parameter,rmse,estd,imse\r\n";
  for (const AccuracyTable& t : r.tables)
    for (const AccuracyRow& row : t.rows)
      out += std::to_string(t.n) + "," + row.label + "," +
             detail::csv_num(row.rmse) + "," + detail::csv_num(row.estd) +
             "," + detail::csv_num(row.imse) + "\r\n";
  return out;
}

inline std::string convergence_csv(const ConvergenceResult& r) {
  std::string out = "dataset,algorithm,iteration,loglik,seconds\r\n";
  for (const ConvergenceTrace& t : r.traces)
    for (std::size_t i = 0; i < t.loglik.size(); ++i)
      out += t.dataset + "," + algorithm_name(t.algorithm) + "," +
             std::to_string(i) + "," + detail::csv_num(t.loglik[i]) + "," +
             detail::csv_num(i < t.seconds.size() ? t.seconds[i]
                                                  : t.seconds.back()) +
             "\r\n";
  return out;
}

}  // namespace tbfa
