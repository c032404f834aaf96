#include "doctest.h"

#include "hstack/optimize.hpp"
#include "hstack/synth.hpp"

#include <cmath>

using namespace hstack;

TEST_CASE("spike-slab generator") {
  const SpikeSlabData d = gen_spike_slab(0.01, 2000, 3);
  for (Eigen::Index i = 0; i < d.y.size(); ++i) {
    CHECK(d.y(i) >= -3.0);
    CHECK(d.y(i) <= 1.0);
    if (d.y(i) <= 0.0) CHECK(d.lpd.values(i, 0) == doctest::Approx(std::log(0.2475)));
  }
  const SpikeSlabData s = gen_spike_slab(0.5, 200, 3);
  CHECK(s.lpd.values.col(0).isApprox(s.lpd.values.col(1)));

  // Column means converge to the analytic elpd at the sqrt(n) rate.
  const double exact = model_elpds(spike_slab_scenario(0.2))(0);
  CHECK(exact == doctest::Approx(-1.7827).epsilon(1e-4));
  for (Eigen::Index n : {10000, 100000}) {
    const SpikeSlabData big = gen_spike_slab(0.2, n, 9);
    const Vector c = big.lpd.values.col(0);
    const double mean = c.mean();
    const double sd = std::sqrt((c.array() - mean).square().sum() / static_cast<double>(n - 1));
    CHECK(std::abs(mean - exact) < 3.0 * sd / std::sqrt(static_cast<double>(n)));
  }
  CHECK_THROWS_AS(gen_spike_slab(0.2, 0, 1), ValidationError);
}

TEST_CASE("Bernoulli generator") {
  const BernoulliData d = gen_bernoulli_sqrt(5000, 2);
  CHECK((d.lpd.values.col(0).array() == std::log(0.5)).all());
  for (Eigen::Index i = 0; i < 5000; ++i) {
    const double r = std::sqrt(d.x(i));
    CHECK(d.lpd.values(i, 1) == doctest::Approx(d.y(i) > 0.5 ? std::log(r) : std::log1p(-r)));
  }
  // Conditional elpd curves cross at x = 1/4 and near 0.67; model 1 wins at 0.5.
  const auto gap = [](double x) { const Vector c = bernoulli_sqrt_celpd(x); return c(0) - c(1); };
  CHECK(std::abs(gap(0.25)) < 1e-12);
  double lo = 0.5, hi = 0.95;
  for (int it = 0; it < 100; ++it) {
    const double m = 0.5 * (lo + hi);
    (gap(m) > 0 ? lo : hi) = m;
  }
  CHECK(std::abs(lo - 0.67) < 0.005);
  CHECK(gap(0.5) >= 0.0);
  CHECK(gap(0.1) < 0.0);
  CHECK(gap(0.9) < 0.0);
  const double mean2 = d.lpd.values.col(1).mean();
  CHECK(std::abs(mean2 - (-7.0 / 12.0)) < 0.03);
}

TEST_CASE("constructed cells have the chosen optimum") {
  Matrix w(3, 3);
  w << 0.6, 0.3, 0.1, 0.2, 0.2, 0.6, 1.0, 0.0, 0.0;
  const Vector p = component_probs_for(w.row(0).transpose());
  CHECK(p.sum() == doctest::Approx(1.0));
  // Population objective sum_k p_k log(l + (1 - l) w_k): stationarity on the simplex.
  const double l = std::exp(kSynthLowLogDensity);
  Vector g(3);
  for (int k = 0; k < 3; ++k) g(k) = p(k) * (1 - l) / (l + (1 - l) * w(0, k));
  CHECK(g(0) == doctest::Approx(g(1)));
  CHECK(g(1) == doctest::Approx(g(2)));

  const CellsData d = gen_cells(w, {10000, 10000, 10000}, 4);
  CHECK(d.lpd.n() == 30000);
  CHECK(d.features.num_cells() == 3);
  const StackingFit np = fit_no_pooling(d.lpd, d.features);
  CHECK((np.weights - w).cwiseAbs().maxCoeff() < 0.02);

  Matrix opp(2, 2);
  opp << 1.0, 0.0, 0.0, 1.0;
  const CellsData o = gen_cells(opp, {2000, 2000}, 5);
  const StackingFit on = fit_no_pooling(o.lpd, o.features);
  CHECK((on.weights - opp).cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("random cell weights") {
  const CellsData flat = gen_cells(4, 3, {50, 50, 50, 50}, 0.0, 7);
  for (Eigen::Index j = 0; j < 4; ++j)
    CHECK(flat.true_weights.row(j).isApprox(Vector::Constant(3, 1.0 / 3.0).transpose()));
  const CellsData d = gen_cells(5, 3, {10000, 10000, 10000, 10000, 10000}, 1.0, 7);
  CHECK(is_simplex(d.true_weights));
  const StackingFit np = fit_no_pooling(d.lpd, d.features);
  CHECK((np.weights - d.true_weights).cwiseAbs().maxCoeff() < 0.02);
  CHECK_THROWS_AS(gen_cells(1, 3, {5}, 1.0, 1), ValidationError);
  CHECK_THROWS_AS(gen_cells(2, 3, {5}, 1.0, 1), ValidationError);
}

TEST_CASE("continuous generator") {
  const CellsData d = gen_continuous(300, 3, 1.5, 2);
  CHECK(d.features.num_features() == 1);
  CHECK(d.features.features.rows() == 300);
  CHECK(is_simplex(d.true_weights));
  CHECK(d.lpd.n() == 300);
}

TEST_CASE("Neal regression generator") {
  CHECK(neal_f(0.0) == doctest::Approx(1.4));
  const NealData d = gen_neal_regression(100000, 6);
  double outliers = 0.0, var = 0.0;
  for (Eigen::Index i = 0; i < 100000; ++i) {
    outliers += d.outlier[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    const double e = d.y(i) - neal_f(d.x(i));
    var += e * e;
  }
  CHECK(std::abs(outliers / 1e5 - 0.05) < 0.003);
  CHECK(std::abs(var / 1e5 - 0.0595) < 0.05 * 0.0595);
  CHECK(std::abs(d.x.mean()) < 0.02);
}

TEST_CASE("generators are reproducible") {
  CHECK(gen_spike_slab(0.2, 100, 5).y == gen_spike_slab(0.2, 100, 5).y);
  CHECK(gen_spike_slab(0.2, 100, 5).y != gen_spike_slab(0.2, 100, 6).y);
  CHECK(gen_bernoulli_sqrt(100, 5).lpd.values == gen_bernoulli_sqrt(100, 5).lpd.values);
  CHECK(gen_cells(3, 2, {10, 10, 10}, 1.0, 5).lpd.values ==
        gen_cells(3, 2, {10, 10, 10}, 1.0, 5).lpd.values);
  CHECK(gen_neal_regression(100, 5).y == gen_neal_regression(100, 5).y);
  GenConfig c;
  c.kind = "bogus";
  CHECK_THROWS_AS(c.check(), ValidationError);
  c.kind = "cells";
  c.n_per_cell = {1, 2};
  CHECK_THROWS_AS(c.check(), ValidationError);
}
