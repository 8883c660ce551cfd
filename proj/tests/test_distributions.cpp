#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "support.hpp"
#include "tbfa/distributions.hpp"

using tbfa::CovFactorization;
using tbfa::Index;
using tbfa::Matrix;
using tbfa::RngStream;
using tbfa::Vector;

namespace {

Matrix random_spd(RngStream& rng, Index d) {
  Matrix a = Matrix::NullaryExpr(d, d, [&] { return rng.normal(); });
  Matrix s = a * a.transpose();
  s.diagonal().array() += 0.5;
  return s;
}

// Regularized lower incomplete gamma via adaptive Simpson on the density;
// plenty for a KS comparison at 1e-6 accuracy.
double gamma_cdf_numeric(double x, double shape, double rate) {
  if (x <= 0.0) return 0.0;
  const double scale_x = rate * x;
  const auto log_pdf = [&](double t) {
    return (shape - 1.0) * std::log(t) - t - std::lgamma(shape);
  };
  // integrate exp(log_pdf) over (0, scale_x) with a fine fixed grid
  const int n = 20000;
  const double h = scale_x / n;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double a = i * h, b = (i + 1) * h;
    const double m = 0.5 * (a + b);
    double fa = a > 0.0 ? std::exp(log_pdf(a)) : 0.0;
    if (a == 0.0 && shape >= 1.0)
      fa = shape == 1.0 ? std::exp(log_pdf(1e-300)) : 0.0;
    const double fb = std::exp(log_pdf(b));
    const double fm = std::exp(log_pdf(m));
    acc += (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  }
  return std::min(acc, 1.0);
}

// Student-t CDF by integrating the density from 0 outward.
double student_t_cdf_numeric(double x, double nu) {
  const double c = std::exp(std::lgamma(0.5 * (nu + 1.0)) -
                            std::lgamma(0.5 * nu)) /
                   std::sqrt(nu * std::numbers::pi);
  const auto pdf = [&](double t) {
    return c * std::pow(1.0 + t * t / nu, -0.5 * (nu + 1.0));
  };
  const double lo = std::min(0.0, x), hi = std::max(0.0, x);
  const int n = 20000;
  const double h = (hi - lo) / n;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double a = lo + i * h, b = a + h;
    acc += h / 6.0 * (pdf(a) + 4.0 * pdf(0.5 * (a + b)) + pdf(b));
  }
  return x >= 0.0 ? 0.5 + acc : 0.5 - acc;
}

}  // namespace

TEST_CASE("gamma sampling matches first and second moments") {
  RngStream rng(101);
  const int n = 100000;

  double mean = 0.0;
  for (int i = 0; i < n; ++i) mean += tbfa::sample_gamma(2.0, 2.0, rng);
  mean /= n;
  CHECK(mean == Catch::Approx(1.0).margin(0.02));

  double m = 0.0, s = 0.0;
  std::vector<double> draws(n);
  for (int i = 0; i < n; ++i) draws[i] = tbfa::sample_gamma(3.0, 1.5, rng);
  for (double d : draws) m += d;
  m /= n;
  for (double d : draws) s += (d - m) * (d - m);
  s /= n - 1;
  CHECK(s == Catch::Approx(3.0 / (1.5 * 1.5)).epsilon(0.05));
}

TEST_CASE("gamma sampling passes a KS test against the numeric CDF") {
  RngStream rng(102);
  const int n = 10000;
  std::vector<double> draws(n);
  for (int i = 0; i < n; ++i) draws[i] = tbfa::sample_gamma(1.7, 0.9, rng);
  std::sort(draws.begin(), draws.end());
  double ks = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = gamma_cdf_numeric(draws[i], 1.7, 0.9);
    ks = std::max(ks, std::abs(f - (i + 1.0) / n));
    ks = std::max(ks, std::abs(f - static_cast<double>(i) / n));
  }
  // 1% critical value of the one-sample KS statistic: 1.63 / sqrt(n)
  CHECK(ks < 1.63 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("gamma sampling handles shape below one and rejects bad arguments") {
  RngStream rng(103);
  double mean = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) mean += tbfa::sample_gamma(0.4, 2.0, rng);
  mean /= n;
  CHECK(mean == Catch::Approx(0.2).margin(0.01));
  CHECK_THROWS_AS(tbfa::sample_gamma(0.0, 1.0, rng), tbfa::DomainError);
  CHECK_THROWS_AS(tbfa::sample_gamma(1.0, -1.0, rng), tbfa::DomainError);
}

TEST_CASE("matrix normal draws reproduce mean and Kronecker covariance") {
  RngStream rng(104);
  const Matrix sc = random_spd(rng, 2);
  const Matrix sr = random_spd(rng, 2);
  const CovFactorization fc = tbfa::factorize_spd(sc);
  const CovFactorization fr = tbfa::factorize_spd(sr);
  Matrix mean(2, 2);
  mean << 1.0, -2.0, 0.5, 3.0;

  const int n = 100000;
  Vector acc = Vector::Zero(4);
  Matrix cov = Matrix::Zero(4, 4);
  for (int i = 0; i < n; ++i) {
    const Matrix x = tbfa::sample_matrix_normal(mean, fc, fr, rng);
    const Vector v = tbfa::vec(x);
    acc += v;
    const Vector e = v - tbfa::vec(mean);
    cov += e * e.transpose();
  }
  acc /= n;
  cov /= n;

  const Matrix target = tbfa::kronecker(sr, sc);
  // mean within 3 standard errors per entry
  for (Index k = 0; k < 4; ++k) {
    const double se = std::sqrt(target(k, k) / n);
    CHECK(std::abs(acc(k) - tbfa::vec(mean)(k)) < 3.5 * se);
  }
  CHECK((cov - target).norm() <= 0.05 * target.norm());
}

TEST_CASE("matrix t log density: 1x1 Cauchy closed form") {
  const CovFactorization unit = tbfa::factorize_spd(Matrix::Identity(1, 1));
  const Matrix z = Matrix::Zero(1, 1);
  const double got = tbfa::mt_log_density(z, z, unit, unit, 1.0);
  CHECK(got == Catch::Approx(-std::log(std::numbers::pi)).margin(1e-12));
}

TEST_CASE("matrix t log density equals the vectorized multivariate t") {
  RngStream rng(105);
  for (int rep = 0; rep < 20; ++rep) {
    const Index d_c = 1 + static_cast<Index>(rng.uniform(0.0, 3.0));
    const Index d_r = 1 + static_cast<Index>(rng.uniform(0.0, 3.0));
    const Matrix sc = random_spd(rng, d_c);
    const Matrix sr = random_spd(rng, d_r);
    const Matrix w =
        Matrix::NullaryExpr(d_c, d_r, [&] { return rng.normal(); });
    const Matrix x =
        Matrix::NullaryExpr(d_c, d_r, [&] { return rng.normal(); });
    const double nu = rng.uniform(1.0, 20.0);

    const double got = tbfa::mt_log_density(
        x, w, tbfa::factorize_spd(sc), tbfa::factorize_spd(sr), nu);

    // oracle: dense multivariate t on vec(x)
    const Matrix big = tbfa::kronecker(sr, sc);
    const Vector e = tbfa::vec(x - w);
    const Eigen::LLT<Matrix> llt(big);
    const double d = static_cast<double>(big.rows());
    const double delta = llt.matrixL().solve(e).squaredNorm();
    double log_det = 0.0;
    for (Index i = 0; i < big.rows(); ++i)
      log_det += 2.0 * std::log(llt.matrixL()(i, i));
    const double oracle = std::lgamma(0.5 * (nu + d)) -
                          std::lgamma(0.5 * nu) -
                          0.5 * d * std::log(nu * std::numbers::pi) -
                          0.5 * log_det -
                          0.5 * (nu + d) * std::log1p(delta / nu);
    CHECK(got == Catch::Approx(oracle).margin(1e-10));
  }
}

TEST_CASE("matrix t log density approaches the matrix normal as nu grows") {
  RngStream rng(106);
  const Matrix sc = random_spd(rng, 2);
  const Matrix sr = random_spd(rng, 3);
  const CovFactorization fc = tbfa::factorize_spd(sc);
  const CovFactorization fr = tbfa::factorize_spd(sr);
  const Matrix w = Matrix::NullaryExpr(2, 3, [&] { return rng.normal(); });
  const Matrix x = Matrix::NullaryExpr(2, 3, [&] { return rng.normal(); });

  const double t_val = tbfa::mt_log_density(x, w, fc, fr, 1e6);
  const double n_val = tbfa::matrix_normal_log_density(x, w, fc, fr);
  CHECK(t_val == Catch::Approx(n_val).margin(1e-3));
  CHECK_THROWS_AS(tbfa::mt_log_density(x, w, fc, fr, 0.0), tbfa::DomainError);
}

TEST_CASE("matrix t draws have the heavy-tailed covariance inflation") {
  RngStream rng(107);
  const Matrix sc = random_spd(rng, 2);
  const Matrix sr = random_spd(rng, 2);
  const CovFactorization fc = tbfa::factorize_spd(sc);
  const CovFactorization fr = tbfa::factorize_spd(sr);
  const Matrix w = Matrix::Zero(2, 2);
  const Matrix target = tbfa::kronecker(sr, sc);

  const int n = 100000;
  // nu = 1e6: Gaussian limit
  Matrix cov = Matrix::Zero(4, 4);
  for (int i = 0; i < n; ++i) {
    const Vector v = tbfa::vec(tbfa::sample_mt(w, fc, fr, 1e6, rng));
    cov += v * v.transpose();
  }
  cov /= n;
  CHECK((cov - target).norm() <= 0.05 * target.norm());

  // nu = 5: covariance inflated by nu/(nu-2)
  cov.setZero();
  for (int i = 0; i < n; ++i) {
    const Vector v = tbfa::vec(tbfa::sample_mt(w, fc, fr, 5.0, rng));
    cov += v * v.transpose();
  }
  cov /= n;
  const Matrix inflated = target * (5.0 / 3.0);
  CHECK((cov - inflated).norm() <= 0.05 * inflated.norm());
}

TEST_CASE("a univariate matrix t marginal passes a KS test") {
  RngStream rng(108);
  const CovFactorization unit = tbfa::factorize_spd(Matrix::Identity(1, 1));
  const Matrix z = Matrix::Zero(1, 1);
  const double nu = 6.0;
  const int n = 10000;
  std::vector<double> draws(n);
  for (int i = 0; i < n; ++i)
    draws[i] = tbfa::sample_mt(z, unit, unit, nu, rng)(0, 0);
  std::sort(draws.begin(), draws.end());
  double ks = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = student_t_cdf_numeric(draws[i], nu);
    ks = std::max(ks, std::abs(f - (i + 1.0) / n));
    ks = std::max(ks, std::abs(f - static_cast<double>(i) / n));
  }
  CHECK(ks < 1.63 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("sampling is bit-reproducible given the seed") {
  const Matrix sc = Matrix::Identity(2, 2);
  const CovFactorization fc = tbfa::factorize_spd(sc);
  RngStream a(999), b(999);
  for (int i = 0; i < 10; ++i) {
    const Matrix xa = tbfa::sample_mt(Matrix::Zero(2, 2), fc, fc, 4.0, a);
    const Matrix xb = tbfa::sample_mt(Matrix::Zero(2, 2), fc, fc, 4.0, b);
    CHECK((xa - xb).norm() == 0.0);
  }
}
