// Shared helpers for the unit tests: dense-algebra oracles that recompute
// library quantities through an independent code path (vectorized covariance
// built explicitly, Eigen's own solvers, std::lgamma), finite-difference
// gradients, small random model factories, and a subprocess runner for the
// command-line binary.
#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include <Eigen/Cholesky>

#include "tbfa/estimation.hpp"
#include "tbfa/inference.hpp"
#include "tbfa/model.hpp"
#include "tbfa/rng.hpp"

namespace support {

using tbfa::Index;
using tbfa::Matrix;
using tbfa::MatrixDataset;
using tbfa::ParamLayout;
using tbfa::RngStream;
using tbfa::TbfaParams;
using tbfa::Vector;

// Dense Kronecker product, written out index by index.
inline Matrix kron_dense(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

inline Vector vec_dense(const Matrix& m) {
  Vector out(m.rows() * m.cols());
  Index k = 0;
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) out(k++) = m(i, j);
  return out;
}

inline Matrix sigma_dense(const Matrix& loading, const Vector& psi) {
  Matrix s = loading * loading.transpose();
  s.diagonal() += psi;
  return s;
}

// Multivariate t log density evaluated from scratch on the vectorized
// observation with an explicitly assembled d_r*d_c covariance.
inline double dense_mvt_log_density(const TbfaParams& p, const Matrix& x) {
  const Matrix sigma = kron_dense(sigma_dense(p.R, p.psi_r),
                                  sigma_dense(p.C, p.psi_c));
  const Vector e = vec_dense(x) - vec_dense(p.W);
  const Eigen::LLT<Matrix> llt(sigma);
  const double d = static_cast<double>(sigma.rows());
  const Vector half = llt.matrixL().solve(e);
  const double delta = half.squaredNorm();
  double log_det = 0.0;
  for (Index i = 0; i < sigma.rows(); ++i)
    log_det += 2.0 * std::log(llt.matrixL()(i, i));
  const double nu = p.nu;
  return std::lgamma(0.5 * (nu + d)) - std::lgamma(0.5 * nu) -
         0.5 * d * std::log(nu * std::numbers::pi) - 0.5 * log_det -
         0.5 * (nu + d) * std::log1p(delta / nu);
}

inline double dense_mvn_log_density(const TbfaParams& p, const Matrix& x) {
  const Matrix sigma = kron_dense(sigma_dense(p.R, p.psi_r),
                                  sigma_dense(p.C, p.psi_c));
  const Vector e = vec_dense(x) - vec_dense(p.W);
  const Eigen::LLT<Matrix> llt(sigma);
  const double d = static_cast<double>(sigma.rows());
  const Vector half = llt.matrixL().solve(e);
  double log_det = 0.0;
  for (Index i = 0; i < sigma.rows(); ++i)
    log_det += 2.0 * std::log(llt.matrixL()(i, i));
  return -0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * log_det -
         0.5 * half.squaredNorm();
}

// Random parameter set with loadings in (-1,1), uniquenesses in [0.4, 1.5).
inline TbfaParams random_params(RngStream& rng, Index d_c, Index d_r, Index q_c,
                                Index q_r, double nu) {
  TbfaParams p;
  p.W = Matrix::NullaryExpr(d_c, d_r, [&] { return rng.uniform(-1.0, 1.0); });
  p.C = Matrix::NullaryExpr(d_c, q_c, [&] { return rng.uniform(-1.0, 1.0); });
  p.R = Matrix::NullaryExpr(d_r, q_r, [&] { return rng.uniform(-1.0, 1.0); });
  p.psi_c = Vector::NullaryExpr(d_c, [&] { return rng.uniform(0.4, 1.5); });
  p.psi_r = Vector::NullaryExpr(d_r, [&] { return rng.uniform(0.4, 1.5); });
  p.nu = nu;
  return p;
}

inline MatrixDataset random_dataset(RngStream& rng, const TbfaParams& p,
                                    Index n) {
  const tbfa::DerivedState ds = tbfa::derive(p);
  const tbfa::CovFactorization fc =
      tbfa::factorize_spd(ds.sigma_c_dense(p));
  const tbfa::CovFactorization fr =
      tbfa::factorize_spd(ds.sigma_r_dense(p));
  MatrixDataset data;
  data.d_c = p.d_c();
  data.d_r = p.d_r();
  for (Index i = 0; i < n; ++i) {
    data.observations.push_back(tbfa::sample_mt(p.W, fc, fr, p.nu, rng));
    data.labels.push_back("obs" + std::to_string(i + 1));
  }
  return data;
}

// Central finite differences of an arbitrary scalar function of the
// parameters, over the free coordinates of a layout.
template <typename F>
Vector finite_difference_gradient(const TbfaParams& p, const ParamLayout& lay,
                                  F&& f) {
  Vector g(lay.size());
  for (Index k = 0; k < lay.size(); ++k) {
    const tbfa::Coordinate& c = lay.coords[static_cast<std::size_t>(k)];
    const double v = tbfa::coordinate_value(p, c);
    const double h = std::max(1e-6, 1e-6 * std::abs(v));
    TbfaParams plus = p, minus = p;
    tbfa::set_coordinate(plus, c, v + h);
    tbfa::set_coordinate(minus, c, v - h);
    g(k) = (f(plus) - f(minus)) / (2.0 * h);
  }
  return g;
}

// --- subprocess runner for the CLI binary -----------------------------------

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

inline std::filesystem::path fresh_dir(const std::string& tag) {
  static int counter = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("tbfa_test_" + tag + "_" + std::to_string(++counter) +
                    "_" + std::to_string(static_cast<unsigned>(::getpid())));
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline CliResult run_cli(const std::string& args) {
  const auto dir = fresh_dir("cli");
  const auto out_path = dir / "stdout.txt";
  const auto err_path = dir / "stderr.txt";
  const std::string cmd = std::string(TBFA_CLI_PATH) + " " + args + " > " +
                          out_path.string() + " 2> " + err_path.string();
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = (raw >= 0 && WIFEXITED(raw)) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  std::filesystem::remove_all(dir);
  return r;
}

}  // namespace support
