#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "support.hpp"
#include "tbfa/model.hpp"

using tbfa::Index;
using tbfa::Matrix;
using tbfa::MatrixDataset;
using tbfa::RngStream;
using tbfa::TbfaParams;
using tbfa::Vector;

TEST_CASE("log_likelihood closed-form and oracle checks") {
  SECTION("single Cauchy observation at its center") {
    TbfaParams p;
    p.W = Matrix::Zero(1, 1);
    p.C = Matrix::Zero(1, 1);
    p.psi_c = Vector::Ones(1);
    p.R = Matrix::Zero(1, 1);
    p.psi_r = Vector::Ones(1);
    p.nu = 1.0;
    MatrixDataset data;
    data.d_c = data.d_r = 1;
    data.observations.push_back(Matrix::Zero(1, 1));
    CHECK(tbfa::log_likelihood(p, data) ==
          Catch::Approx(-std::log(std::numbers::pi)).margin(1e-12));
  }

  SECTION("matches the summed dense density") {
    RngStream rng(301);
    const TbfaParams p = support::random_params(rng, 3, 4, 2, 1, 6.0);
    const MatrixDataset data = support::random_dataset(rng, p, 15);
    double oracle = 0.0;
    for (const Matrix& x : data.observations)
      oracle += support::dense_mvt_log_density(p, x);
    CHECK(tbfa::log_likelihood(p, data) ==
          Catch::Approx(oracle).margin(1e-9));
  }

  SECTION("gaussian limit") {
    RngStream rng(302);
    TbfaParams p = support::random_params(rng, 2, 3, 1, 1, 1e6);
    const MatrixDataset data = support::random_dataset(rng, p, 5);
    double oracle = 0.0;
    for (const Matrix& x : data.observations)
      oracle += support::dense_mvn_log_density(p, x);
    CHECK(tbfa::log_likelihood(p, data) ==
          Catch::Approx(oracle).margin(1e-3));

    // gaussian-mode evaluation is the exact matrix-normal likelihood
    p.gaussian = true;
    CHECK(tbfa::log_likelihood(p, data) ==
          Catch::Approx(oracle).margin(1e-9));
  }

  SECTION("shape mismatch is rejected") {
    RngStream rng(303);
    const TbfaParams p = support::random_params(rng, 3, 3, 1, 1, 5.0);
    MatrixDataset data;
    data.d_c = data.d_r = 3;
    data.observations.push_back(Matrix::Zero(2, 3));
    CHECK_THROWS_AS(tbfa::log_likelihood(p, data), tbfa::DimensionError);
  }
}

TEST_CASE("factor scores") {
  RngStream rng(304);
  const TbfaParams p = support::random_params(rng, 4, 4, 2, 2, 7.0);

  SECTION("centered input gives zero scores") {
    CHECK(tbfa::factor_scores(p, p.W).norm() == 0.0);
  }

  SECTION("zero loadings give zero scores") {
    TbfaParams z = p;
    z.C.setZero();
    const Matrix x = Matrix::NullaryExpr(4, 4, [&] { return rng.normal(); });
    CHECK(tbfa::factor_scores(z, x).norm() == 0.0);
  }

  SECTION("matches the vectorized regression formula") {
    const Matrix x = Matrix::NullaryExpr(4, 4, [&] { return rng.normal(); });
    const Matrix got = tbfa::factor_scores(p, x);

    // dense path: vec(scores) = (M_r (x) M_c)^{-1} (R (x) C)' (Psi_r (x)
    // Psi_c)^{-1} vec(x - W)
    const Matrix a = tbfa::kronecker(p.R, p.C);
    const Vector psi_big =
        tbfa::vec(Matrix(p.psi_c * p.psi_r.transpose()));
    const tbfa::DerivedState d = tbfa::derive(p);
    const Matrix m_big = tbfa::kronecker(d.m_r, d.m_c);
    const Vector rhs =
        a.transpose() * (tbfa::vec(x - p.W).cwiseQuotient(psi_big));
    const Vector vec_scores = m_big.llt().solve(rhs);

    CHECK((tbfa::vec(got) - vec_scores).norm() <= 1e-10);
  }

  SECTION("transpose symmetry") {
    const Matrix x = Matrix::NullaryExpr(4, 4, [&] { return rng.normal(); });
    TbfaParams t;
    t.W = p.W.transpose();
    t.C = p.R;
    t.psi_c = p.psi_r;
    t.R = p.C;
    t.psi_r = p.psi_c;
    t.nu = p.nu;
    const Matrix direct = tbfa::factor_scores(p, x);
    const Matrix flipped = tbfa::factor_scores(t, x.transpose());
    CHECK((flipped - direct.transpose()).norm() <= 1e-12);
  }

  SECTION("shape mismatch is rejected") {
    CHECK_THROWS_AS(tbfa::factor_scores(p, Matrix::Zero(3, 4)),
                    tbfa::DimensionError);
  }
}

TEST_CASE("tau weights") {
  // diagonal unit covariance makes delta the squared Frobenius norm
  TbfaParams p;
  p.W = Matrix::Zero(2, 3);
  p.C = Matrix::Zero(2, 1);
  p.psi_c = Vector::Ones(2);
  p.R = Matrix::Zero(3, 1);
  p.psi_r = Vector::Ones(3);
  p.nu = 4.0;
  const double big_d = 6.0;

  MatrixDataset data;
  data.d_c = 2;
  data.d_r = 3;
  data.observations.push_back(Matrix::Ones(2, 3));   // delta = 6 = d_c d_r
  data.observations.push_back(Matrix::Zero(2, 3));   // delta = 0
  Matrix far = Matrix::Ones(2, 3) * 10.0;            // delta = 600
  data.observations.push_back(far);

  const std::vector<double> w = tbfa::tau_weights(p, data);
  REQUIRE(w.size() == 3);
  CHECK(w[0] == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(w[1] == Catch::Approx((p.nu + big_d) / p.nu).epsilon(1e-12));
  // monotone decreasing in distance, bounded as documented
  CHECK(w[2] < w[0]);
  for (double v : w) {
    CHECK(v > 0.0);
    CHECK(v <= (p.nu + big_d) / p.nu + 1e-12);
  }

  // gaussian mode pins every weight to one
  TbfaParams g = p;
  g.gaussian = true;
  for (double v : tbfa::tau_weights(g, data)) CHECK(v == 1.0);
}

TEST_CASE("an inflated observation gets a far smaller tau weight") {
  RngStream rng(305);
  const TbfaParams p = support::random_params(rng, 3, 3, 1, 1, 5.0);
  MatrixDataset data = support::random_dataset(rng, p, 200);
  data.observations.push_back(p.W + (data.observations[0] - p.W) * 100.0);

  const std::vector<double> w = tbfa::tau_weights(p, data);
  std::vector<double> clean(w.begin(), w.end() - 1);
  std::sort(clean.begin(), clean.end());
  const double p1 = clean[static_cast<std::size_t>(0.01 * clean.size())];
  CHECK(w.back() < p1);
}

TEST_CASE("varimax rotation") {
  RngStream rng(306);

  SECTION("single column is only sign-adjusted") {
    const Matrix l = Matrix::NullaryExpr(6, 1, [&] { return rng.normal(); });
    const Matrix r = tbfa::varimax(l);
    CHECK(std::min((r - l).norm(), (r + l).norm()) <= 1e-12);
  }

  SECTION("perfect simple structure is a fixed point") {
    Matrix l = Matrix::Zero(6, 2);
    l.col(0).head(3).setConstant(0.9);
    l.col(1).tail(3).setConstant(0.7);
    const Matrix r = tbfa::varimax(l);
    // compare up to column permutation and sign
    const double direct =
        std::min((r - l).norm(), (r + l).norm());
    Matrix swapped(6, 2);
    swapped.col(0) = l.col(1);
    swapped.col(1) = l.col(0);
    const double permuted =
        std::min((r - swapped).norm(), (r + swapped).norm());
    CHECK(std::min(direct, permuted) <= 1e-8);
  }

  SECTION("beats a brute-force rotation grid") {
    const Matrix l = Matrix::NullaryExpr(8, 2, [&] { return rng.normal(); });
    const Matrix r = tbfa::varimax(l);
    const double best = tbfa::varimax_criterion(r);
    for (int k = 0; k < 360; ++k) {
      const double a = k * std::numbers::pi / 180.0;
      Matrix rot(2, 2);
      rot << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
      CHECK(best >= tbfa::varimax_criterion(l * rot) - 1e-10);
    }
  }
}
