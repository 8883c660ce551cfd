#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "support.hpp"
#include "tbfa/selection.hpp"
#include "tbfa/simbench.hpp"

using tbfa::Algorithm;
using tbfa::FitConfig;
using tbfa::FitResult;
using tbfa::GeneratorKind;
using tbfa::GeneratorSpec;
using tbfa::Matrix;
using tbfa::MatrixDataset;
using tbfa::RngStream;
using tbfa::TbfaParams;
using tbfa::Vector;

TEST_CASE("bic arithmetic") {
  RngStream rng(601);
  const TbfaParams p = support::random_params(rng, 3, 3, 1, 1, 5.0);

  SECTION("a single observation has no complexity penalty") {
    MatrixDataset data = support::random_dataset(rng, p, 1);
    FitResult fr;
    fr.params = p;
    fr.loglik_trace = {tbfa::log_likelihood(p, data)};
    CHECK(tbfa::bic(fr, data) ==
          Catch::Approx(-2.0 * fr.log_likelihood()).margin(1e-12));
  }

  SECTION("equal likelihoods favor the smaller parameter count") {
    MatrixDataset data = support::random_dataset(rng, p, 40);
    FitResult small;
    small.params = p;  // q_c = q_r = 1
    small.loglik_trace = {-1234.5};
    FitResult large = small;
    large.params = support::random_params(rng, 3, 3, 2, 2, 5.0);
    CHECK(tbfa::bic(small, data) < tbfa::bic(large, data));
  }

  SECTION("gaussian fits drop the tail-weight parameter from the penalty") {
    MatrixDataset data = support::random_dataset(rng, p, 40);
    FitResult heavy;
    heavy.params = p;
    heavy.loglik_trace = {-1000.0};
    FitResult gauss = heavy;
    gauss.params.gaussian = true;
    CHECK(tbfa::bic(heavy, data) - tbfa::bic(gauss, data) ==
          Catch::Approx(std::log(40.0)).margin(1e-12));
  }
}

TEST_CASE("grid selection bookkeeping") {
  GeneratorSpec spec;
  spec.kind = GeneratorKind::Data1;
  spec.n = 120;
  RngStream rng(602);
  auto [data, truth] = tbfa::generate(spec, rng);
  FitConfig cfg;
  cfg.algorithm = Algorithm::Ecme;
  cfg.tol = 1e-5;
  cfg.seed = 4;

  SECTION("singleton grid returns its only cell") {
    const tbfa::SelectionReport rep =
        tbfa::grid_select(data, {2, 2}, {2, 2}, cfg);
    REQUIRE(rep.grid.size() == 1);
    CHECK(rep.best_q_c == 2);
    CHECK(rep.best_q_r == 2);
    CHECK(rep.best().converged);
  }

  SECTION("cell count is the product of the range sizes") {
    const tbfa::SelectionReport rep =
        tbfa::grid_select(data, {1, 3}, {1, 2}, cfg);
    CHECK(rep.grid.size() == 6);
    CHECK_NOTHROW(rep.cell(3, 2));
    CHECK_THROWS_AS(rep.cell(4, 1), tbfa::DomainError);
  }

  SECTION("surface is reproducible given the seed") {
    const tbfa::SelectionReport a =
        tbfa::grid_select(data, {1, 2}, {1, 2}, cfg);
    const tbfa::SelectionReport b =
        tbfa::grid_select(data, {1, 2}, {1, 2}, cfg);
    REQUIRE(a.grid.size() == b.grid.size());
    for (std::size_t k = 0; k < a.grid.size(); ++k) {
      CHECK(a.grid[k].bic == b.grid[k].bic);
      CHECK(a.grid[k].loglik == b.grid[k].loglik);
    }
  }

  SECTION("invalid requests are rejected") {
    CHECK_THROWS_AS(tbfa::grid_select(data, {1, 7}, {1, 2}, cfg),
                    tbfa::DomainError);
    CHECK_THROWS_AS(tbfa::grid_select(data, {2, 1}, {1, 2}, cfg),
                    tbfa::DomainError);
    FitConfig with_init = cfg;
    RngStream ir(1);
    with_init.init = tbfa::initialize(data, 2, 2, cfg, ir);
    CHECK_THROWS_AS(tbfa::grid_select(data, {2, 2}, {2, 2}, with_init),
                    tbfa::DomainError);
  }
}

TEST_CASE("the surface bottoms out at the generating factor counts") {
  GeneratorSpec spec;
  spec.kind = GeneratorKind::Data1;
  spec.n = 500;
  RngStream rng(61);
  auto [data, truth] = tbfa::generate(spec, rng);
  FitConfig cfg;
  cfg.algorithm = Algorithm::Ecme;
  cfg.tol = 1e-6;
  cfg.seed = 9;

  const tbfa::SelectionReport rep =
      tbfa::grid_select(data, {1, 4}, {1, 3}, cfg);
  CHECK(rep.best_q_c == 3);
  CHECK(rep.best_q_r == 3);
  for (const tbfa::SelectionCell& c : rep.grid) {
    CHECK(c.fitted);
    if (!(c.q_c == 3 && c.q_r == 3)) CHECK(c.bic > rep.best().bic);
  }
}

TEST_CASE("recovers a smaller generating model across seeds") {
  int correct = 0;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    RngStream rng(seed * 31);
    TbfaParams t;
    t.W = Matrix::NullaryExpr(8, 6, [&] { return rng.uniform(-1.0, 1.0); });
    t.C = Matrix::NullaryExpr(8, 2, [&] { return rng.uniform(-1.0, 1.0); }) *
          1.6;
    t.R = Matrix::NullaryExpr(6, 1, [&] { return rng.uniform(-1.0, 1.0); }) *
          1.6;
    t.psi_c = Vector::NullaryExpr(8, [&] { return rng.uniform(0.5, 1.0); });
    t.psi_r = Vector::NullaryExpr(6, [&] { return rng.uniform(0.5, 1.0); });
    t.nu = 6.0;
    const MatrixDataset data = support::random_dataset(rng, t, 250);
    FitConfig cfg;
    cfg.algorithm = Algorithm::Ecme;
    cfg.tol = 1e-6;
    cfg.seed = seed;
    const tbfa::SelectionReport rep =
        tbfa::grid_select(data, {1, 3}, {1, 2}, cfg);
    if (rep.best_q_c == 2 && rep.best_q_r == 1) ++correct;
  }
  CHECK(correct >= 3);
}
