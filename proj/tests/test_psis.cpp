#include "doctest.h"

#include "hstack/psis.hpp"
#include "support.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace hstack;
using namespace hstack::testing;

TEST_CASE("GPD shape estimates") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const GpdFit g = fit_gpd_tail(gpd_sample(100000, 0.3, 1.0, seed), PsisOptions{.weak_prior = false});
    CHECK(std::abs(g.khat - 0.3) < 0.03);
    CHECK(std::abs(g.sigma - 1.0) < 0.05);
    const GpdFit e = fit_gpd_tail(gpd_sample(100000, 0.0, 2.0, seed), PsisOptions{.weak_prior = false});
    CHECK(std::abs(e.khat) < 0.05);
  }
  const GpdFit c = fit_gpd_tail(Vector::Constant(20, 0.5));
  CHECK(c.degenerate);
  CHECK(std::isinf(c.khat));
  CHECK(c.khat < 0);
  CHECK(khat_status(c.khat) == "good");
  CHECK_THROWS_AS(fit_gpd_tail(Vector::Ones(4)), ValidationError);
  CHECK(gpd_quantile(0.5, 0.0, 1.0) == doctest::Approx(std::log(2.0)));
  CHECK(gpd_quantile(0.75, 0.5, 1.0) == doctest::Approx(2.0));
}

TEST_CASE("khat status") {
  CHECK(khat_status(0.2) == "good");
  CHECK(khat_status(0.6) == "ok");
  CHECK(khat_status(0.9) == "unreliable");
  CHECK(khat_status(std::numeric_limits<double>::infinity()) == "unreliable");
}

TEST_CASE("smoothing preserves order and never exceeds the raw maximum") {
  std::mt19937_64 rng(11);
  std::student_t_distribution<double> t(2.0);
  Vector lr(400);
  for (auto& v : lr) v = 2.0 * t(rng);
  const SmoothedWeights sw = psis_smooth(lr);
  const double shift = log_sum_exp(Vector(lr.array() - lr.maxCoeff()));
  const Vector lw = sw.log_weights.array() + shift;  // undo normalization
  CHECK(lw.maxCoeff() <= 1e-12);
  for (Eigen::Index i = 0; i < lr.size(); ++i)
    for (Eigen::Index j = 0; j < lr.size(); ++j)
      if (lr(i) < lr(j)) CHECK(lw(i) <= lw(j) + 1e-12);
  CHECK(log_sum_exp(sw.log_weights) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::isfinite(sw.khat));
  CHECK_THROWS_AS(psis_smooth(Vector::Zero(9)), ValidationError);
  Vector bad = Vector::Zero(20);
  bad(3) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(psis_smooth(bad), ValidationError);
}

TEST_CASE("PSIS-LOO on a conjugate normal model") {
  const Conjugate c = conjugate_normal(5, 10000, 1);
  const PsisLoo r = psis_loo(c.loglik);
  for (int i = 0; i < 5; ++i) {
    CHECK(std::abs(r.lpd(i) - c.exact_loo(i)) < 0.02);
    CHECK(c.exact_loo(i) <= c.lppd(i));
    CHECK(r.khat(i) < kKhatOk);
  }
  CHECK(r.n_unreliable == 0);
}

TEST_CASE("PSIS-LOO trivial cases") {
  Matrix ll(50, 3);
  ll.col(0).setConstant(-1.2);
  ll.col(1).setConstant(-0.3);
  ll.col(2).setConstant(-4.0);
  const PsisLoo r = psis_loo(ll);
  CHECK(r.lpd(0) == doctest::Approx(-1.2).epsilon(1e-14));
  CHECK(r.lpd(1) == doctest::Approx(-0.3).epsilon(1e-14));
  CHECK(r.lpd(2) == doctest::Approx(-4.0).epsilon(1e-14));

  // Duplicating every draw only moves the tail size rule, so estimates agree
  // to Monte Carlo accuracy rather than bit for bit.
  const Conjugate c = conjugate_normal(5, 2000, 5);
  Matrix dup(4000, 5);
  for (Eigen::Index s = 0; s < 2000; ++s) dup.row(2 * s) = dup.row(2 * s + 1) = c.loglik.row(s);
  const PsisLoo a = psis_loo(c.loglik), b = psis_loo(dup);
  CHECK((a.lpd - b.lpd).cwiseAbs().maxCoeff() < 0.01);

  Matrix inf = ll;
  inf(0, 0) = -std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(psis_loo(inf), ValidationError);
}

TEST_CASE("psis_loo_matrix") {
  const Conjugate a = conjugate_normal(6, 500, 1), b = conjugate_normal(6, 400, 2);
  std::vector<PsisLoo> reports;
  const LpdMatrix m = psis_loo_matrix({a.loglik, b.loglik}, &reports);
  CHECK(m.n() == 6);
  CHECK(m.K() == 2);
  REQUIRE(reports.size() == 2);
  CHECK(m.values.col(1).isApprox(reports[1].lpd));
  const Conjugate c = conjugate_normal(7, 500, 3);
  try {
    psis_loo_matrix({a.loglik, c.loglik});
    FAIL("expected dimension mismatch");
  } catch (const ValidationError& e) {
    CHECK(e.code() == "dimension_mismatch");
    CHECK(std::string(e.what()).find("n=7") != std::string::npos);
  }
}

TEST_CASE("stacked LOO trivial cases") {
  Matrix v(4, 1);
  v << -1.0, -2.0, -0.5, -3.0;
  const LpdMatrix one(v);
  std::vector<SimplexWeights> w(30, SimplexWeights::Ones(4, 1));
  const StackedLoo s1 = stacked_loo(one, w);
  CHECK(s1.elpd == doctest::Approx(v.sum()).epsilon(1e-12));

  Matrix v2(3, 2);
  v2 << -1.0, -2.0, -0.5, -0.1, -3.0, -1.0;
  SimplexWeights fixed(3, 2);
  fixed << 0.3, 0.7, 0.5, 0.5, 0.9, 0.1;
  for (int S : {5, 40}) {
    const StackedLoo s2 = stacked_loo(LpdMatrix(v2), std::vector<SimplexWeights>(S, fixed));
    double expect = 0.0;
    for (int i = 0; i < 3; ++i)
      expect += std::log(fixed(i, 0) * std::exp(v2(i, 0)) + fixed(i, 1) * std::exp(v2(i, 1)));
    CHECK(s2.elpd == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK_THROWS_AS(stacked_loo(LpdMatrix(v2), std::vector<SimplexWeights>(20, SimplexWeights::Ones(2, 2))),
                  ValidationError);
}

TEST_CASE("stacked LOO is pessimistic relative to in-sample on average") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z;
  double gap = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    Matrix v(15, 2);
    for (Eigen::Index i = 0; i < 15; ++i) v.row(i) << -1.0 + 0.5 * z(rng), -1.0 + 0.5 * z(rng);
    std::vector<SimplexWeights> w;
    SimplexWeights mean = SimplexWeights::Zero(15, 2);
    for (int s = 0; s < 200; ++s) {
      SimplexWeights ws(15, 2);
      for (Eigen::Index i = 0; i < 15; ++i) {
        const double a = 1.0 / (1.0 + std::exp(-(0.3 + 1.5 * z(rng))));
        ws.row(i) << a, 1.0 - a;
      }
      mean += ws / 200.0;
      w.push_back(ws);
    }
    double in_sample = 0.0;
    for (Eigen::Index i = 0; i < 15; ++i)
      in_sample += combine_log_density(mean.row(i).transpose(), v.row(i).transpose());
    gap += in_sample - stacked_loo(LpdMatrix(v), w).elpd;
  }
  CHECK(gap / 20.0 > 0.0);
}

TEST_CASE("stacked LOO against brute-force refits") {
  CHECK(stacked_loo_refit_error(20, 8) < 0.05);
}
