#include "doctest.h"

#include "hstack/hier.hpp"
#include "hstack/optimize.hpp"
#include "support.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace hstack;
using namespace hstack::testing;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double lognorm(double x, double s) {
  return -0.5 * kLog2Pi - std::log(s) - 0.5 * x * x / (s * s);
}

}  // namespace

TEST_CASE("build_prior defaults and validation") {
  const PriorSpec p = build_prior(PriorKind::basic);
  CHECK(p.tau_mu == 1.0);
  CHECK(p.tau_sigma(0) == 1.0);
  CHECK(p.mu0 == 0.0);
  PriorHyper h;
  h.scale_by_num_features = 4;
  CHECK(build_prior(PriorKind::basic, h).tau_sigma(0) == doctest::Approx(0.5));
  PriorHyper bad;
  bad.tau_mu = -1.0;
  CHECK_THROWS_AS(build_prior(PriorKind::basic, bad), ValidationError);

  PriorHyper om;
  Matrix o(2, 2);
  o << 1, 2, 2, 1;
  om.omega = o;
  try {
    build_prior(PriorKind::correlated, om);
    FAIL("expected rejection");
  } catch (const ValidationError& e) {
    CHECK(e.code() == "not_positive_definite");
    CHECK(std::string(e.what()).find("-1") != std::string::npos);
  }
}

TEST_CASE("log_posterior matches a by-hand 2-point K=2 value") {
  Matrix l(2, 2);
  l << std::log(0.3), std::log(0.1), std::log(0.05), std::log(0.4);
  const StackingModel m(LpdMatrix(l), make_cell_features({1, 2}), build_prior(PriorKind::basic));
  const Vector theta = Vector::Zero(m.dim());
  const double lik = std::log(0.5 * 0.3 + 0.5 * 0.1) + std::log(0.5 * 0.05 + 0.5 * 0.4);
  const double mu = lognorm(0.0, 1.0);
  const double sigma = std::log(2.0) + lognorm(1.0, 1.0);  // Jacobian log(1) = 0
  const double z = 2.0 * lognorm(0.0, 1.0);
  CHECK(m.log_posterior(theta) == doctest::Approx(lik + mu + sigma + z).epsilon(1e-13));
}

TEST_CASE("n = 0 gives the log prior alone") {
  std::mt19937_64 rng(3);
  FeatureSet f = make_cell_features({1, 2, 3});
  const StackingModel full(LpdMatrix(random_lpd(rng, 3, 3)), f, build_prior(PriorKind::basic));
  FeatureSet f0 = f;
  f0.cells.resize(0);
  const StackingModel prior_only(LpdMatrix(Matrix(0, 3)), f0, build_prior(PriorKind::basic));
  REQUIRE(prior_only.dim() == full.dim());
  const Vector x = random_point(rng, full.dim(), 0.5);
  // Prior part of the full model = full minus its likelihood.
  const Matrix eta = full.linear_predictor(x);
  const double lik = MixtureLikelihood(full.lpd()).value(eta);
  CHECK(prior_only.log_posterior(x) == doctest::Approx(full.log_posterior(x) - lik).epsilon(1e-12));
}

TEST_CASE("MAP path alpha = mu, sigma -> 0 is unbounded without Jacobian") {
  std::mt19937_64 rng(5);
  const Matrix l = random_lpd(rng, 20, 2);
  std::vector<long> cells(20);
  for (int i = 0; i < 20; ++i) cells[static_cast<std::size_t>(i)] = i % 4;
  ModelOptions mo;
  mo.non_centered = false;
  mo.jacobian = false;
  const StackingModel m(LpdMatrix(l), make_cell_features(cells), build_prior(PriorKind::basic),
                        std::nullopt, mo);
  UnconstrainedParams p = m.zeros();
  double prev = -std::numeric_limits<double>::infinity();
  for (double ls = 0.0; ls >= -40.0; ls -= 5.0) {
    p.log_sigma.setConstant(ls);
    const double v = m.log_posterior(m.pack(p));
    CHECK(v > prev);
    prev = v;
  }
  CHECK(prev > 100.0);
}

TEST_CASE("gradient matches finite differences for every prior kind") {
  const std::vector<GradientCase> cases = gradient_cases(2024);
  CHECK(cases.size() == 100);
  for (const GradientCase& c : cases) {
    INFO(c.label);
    REQUIRE(c.finite);
    CHECK(c.rel_error < 1e-6);
  }
}

TEST_CASE("correlated prior with identity matches basic; grouped with G=1 matches basic") {
  std::mt19937_64 rng(8);
  const Matrix l = random_lpd(rng, 9, 3);
  const FeatureSet f = make_cell_features({1, 1, 2, 2, 3, 3, 4, 4, 4});
  PriorHyper h;
  h.omega = Matrix::Identity(4, 4);
  for (int centered = 0; centered < 2; ++centered) {
    ModelOptions mo;
    mo.non_centered = centered == 0;
    const StackingModel basic(LpdMatrix(l), f, build_prior(PriorKind::basic), std::nullopt, mo);
    const StackingModel corr(LpdMatrix(l), f, build_prior(PriorKind::correlated, h), std::nullopt, mo);
    const StackingModel grp(LpdMatrix(l), f, build_prior(PriorKind::grouped), std::nullopt, mo);
    REQUIRE(basic.dim() == corr.dim());
    REQUIRE(basic.dim() == grp.dim());
    for (int r = 0; r < 5; ++r) {
      const Vector x = random_point(rng, basic.dim(), 0.7);
      CHECK(corr.log_posterior(x) == doctest::Approx(basic.log_posterior(x)).epsilon(1e-12));
      CHECK(grp.log_posterior(x) == doctest::Approx(basic.log_posterior(x)).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero-one GP kernel reproduces the discrete basic prior") {
  std::mt19937_64 rng(9);
  const Matrix l = random_lpd(rng, 10, 2);
  const FeatureSet f = make_cell_features({3, 1, 2, 3, 1, 2, 5, 5, 1, 3});
  PriorHyper h;
  KernelSpec ks;
  ks.kind = KernelKind::zero_one;
  h.kernel = ks;
  const StackingModel basic(LpdMatrix(l), f, build_prior(PriorKind::basic));
  const StackingModel gp(LpdMatrix(l), f, build_prior(PriorKind::gp, h));
  REQUIRE(basic.dim() == gp.dim());
  for (int r = 0; r < 5; ++r) {
    const Vector x = random_point(rng, basic.dim(), 0.7);
    CHECK(gp.log_posterior(x) == doctest::Approx(basic.log_posterior(x)).epsilon(1e-7));
  }
}

TEST_CASE("row rescaling shifts the log posterior and keeps the gradient") {
  std::mt19937_64 rng(10);
  const Eigen::Index n = 8;
  Matrix l = random_lpd(rng, n, 3);
  const FeatureSet f = make_cell_features({1, 2, 1, 2, 1, 2, 3, 3});
  Vector t(n);
  for (Eigen::Index i = 0; i < n; ++i) t(i) = static_cast<double>(i + 1);
  const TimeWeights tw = time_reweight(t, 8.0, 0.3);
  const Vector c = random_point(rng, n, 2.0);
  Matrix l2 = l;
  l2.colwise() += c;
  const StackingModel a(LpdMatrix(l), f, build_prior(PriorKind::basic), tw);
  const StackingModel b(LpdMatrix(l2), f, build_prior(PriorKind::basic), tw);
  const Vector x = random_point(rng, a.dim(), 0.5);
  Vector ga, gb;
  const double va = a.log_posterior(x, &ga), vb = b.log_posterior(x, &gb);
  CHECK(vb - va == doctest::Approx(tw.normalized().dot(c)).epsilon(1e-10));
  CHECK((ga - gb).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("identical models give zero alpha likelihood gradient at alpha = 0") {
  Matrix l(4, 2);
  l << -1, -1, -2, -2, -0.5, -0.5, -3, -3;
  ModelOptions mo;
  mo.non_centered = false;
  const StackingModel m(LpdMatrix(l), make_cell_features({1, 1, 2, 2}),
                        build_prior(PriorKind::basic), std::nullopt, mo);
  Vector g;
  m.log_posterior(Vector::Zero(m.dim()), &g);
  const UnconstrainedParams gp = m.unpack(g);
  CHECK(gp.alpha.cwiseAbs().maxCoeff() < 1e-14);
  CHECK(gp.mu.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("time_reweight endpoints and large-gamma limit") {
  Vector t(3);
  t << 0.0, 5.0, 10.0;
  const TimeWeights tw = time_reweight(t, 10.0, 0.5);
  CHECK(tw.pi(0) == doctest::Approx(0.5));
  CHECK(tw.pi(2) == doctest::Approx(1.5));
  CHECK(tw.normalized().sum() == doctest::Approx(3.0));
  const TimeWeights big = time_reweight(t, 10.0, 1e9);
  CHECK((big.normalized().array() - 1.0).abs().maxCoeff() < 1e-8);
  Vector bad(1);
  bad << 11.0;
  CHECK_THROWS_AS(time_reweight(bad, 10.0, 0.5), ValidationError);
}

TEST_CASE("combine_predictions examples") {
  Vector ld(2);
  ld << std::log(0.2475), std::log(0.0025);
  Vector w(2);
  w << 0.755, 0.245;
  CHECK(combine_predictions(w, ld) == doctest::Approx(-1.6741).epsilon(1e-4));
  CHECK(combine_predictions(w, ld) ==
        doctest::Approx(std::log(0.755 * 0.2475 + 0.245 * 0.0025)).epsilon(1e-14));
  Vector e(2);
  e << 0.0, 1.0;
  CHECK(combine_predictions(e, ld) == ld(1));
  Vector same = Vector::Constant(2, -3.2);
  CHECK(combine_predictions(w, same) == doctest::Approx(-3.2).epsilon(1e-15));
}

TEST_CASE("fixed-sigma MAP is a stationary point of the centered posterior") {
  std::mt19937_64 rng(12);
  const Matrix l = random_lpd(rng, 30, 3);
  std::vector<long> cells(30);
  for (int i = 0; i < 30; ++i) cells[static_cast<std::size_t>(i)] = i % 5;
  const FeatureSet f = make_cell_features(cells);
  const PriorSpec pr = build_prior(PriorKind::basic);
  MapOptions mo;
  mo.include_mu_prior = true;
  const MapFit fit = fit_map(LpdMatrix(l), f, pr, Matrix::Constant(1, 2, std::log(0.8)), mo);
  CHECK(fit.converged);
  ModelOptions cm;
  cm.non_centered = false;
  const StackingModel m(LpdMatrix(l), f, pr, std::nullopt, cm);
  Vector g;
  m.log_posterior(fit.theta, &g);
  const UnconstrainedParams gp = m.unpack(g);
  const double norm = std::sqrt(gp.mu.squaredNorm() + gp.alpha.squaredNorm());
  CHECK(norm < 1e-6);
  CHECK(is_simplex(fit.weights));
}

TEST_CASE("sigma limits recover complete and no pooling") {
  std::mt19937_64 rng(13);
  const Eigen::Index n = 160;
  Matrix l(n, 2);
  std::vector<long> cells(static_cast<std::size_t>(n));
  std::normal_distribution<double> z(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 4);
    cells[static_cast<std::size_t>(i)] = c;
    const double shift = 0.8 * (c - 1.5);
    l(i, 0) = -1.0 + shift + z(rng);
    l(i, 1) = -1.0 - shift + z(rng);
  }
  const FeatureSet f = make_cell_features(cells);
  const PriorSpec pr = build_prior(PriorKind::basic);
  const StackingFit cp = fit_complete_pooling(LpdMatrix(l));
  const StackingFit np = fit_no_pooling(LpdMatrix(l), f);
  const MapFit tight = fit_map(LpdMatrix(l), f, pr, Matrix::Constant(1, 1, std::log(1e-6)));
  const MapFit loose = fit_map(LpdMatrix(l), f, pr, Matrix::Constant(1, 1, std::log(1e6)));
  for (Eigen::Index i = 0; i < n; ++i)
    CHECK((tight.weights.row(i) - cp.weights.row(0)).cwiseAbs().maxCoeff() < 1e-3);
  CHECK((loose.cell_weights - np.weights).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("hierarchical fit: J=1 matches complete pooling and linearity of w-bar") {
  std::mt19937_64 rng(21);
  const Eigen::Index n = 100;
  Matrix l(n, 2);
  std::normal_distribution<double> z(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    l(i, 0) = -1.0 + 0.7 * z(rng);
    l(i, 1) = -1.2 + 0.7 * z(rng);
  }
  const FeatureSet f = make_cell_features(std::vector<long>(static_cast<std::size_t>(n), 7));
  SamplerConfig cfg;
  cfg.seed = 11;
  cfg.threads = 4;
  HierOptions ho;
  ho.enforce_diagnostics = false;
  const WeightDraws d = fit_hierarchical(LpdMatrix(l), f, build_prior(PriorKind::basic), cfg,
                                         std::nullopt, ho);
  CHECK(d.size() == 4000);
  CHECK(is_simplex(d.mean_weights));
  const StackingFit cp = fit_complete_pooling(LpdMatrix(l));
  CHECK(std::abs(d.mean_weights(0, 0) - cp.weights(0, 0)) < 0.02);

  // Averaging per-draw combined densities equals combining with w-bar.
  const Eigen::Index i = 3;
  double avg = 0.0;
  for (Eigen::Index s = 0; s < d.size(); ++s)
    avg += d.weights_at(s).row(i).dot(l.row(i).array().exp().matrix());
  avg /= static_cast<double>(d.size());
  const double direct = d.mean_weights.row(i).dot(l.row(i).array().exp().matrix());
  CHECK(std::abs(avg - direct) < 1e-12);

  // Training inputs reproduce the training-time weights.
  const SimplexWeights pw = predict_weights(d, f);
  CHECK((pw - d.mean_weights).cwiseAbs().maxCoeff() < 1e-12);

  // Unseen cell falls back to the mean of softmax(mu).
  const FeatureSet unseen = make_cell_features({99});
  const SimplexWeights wu = predict_weights(d, unseen);
  double m0 = 0.0;
  for (Eigen::Index s = 0; s < d.size(); ++s)
    m0 += softmax_weights(d.model->effective_mu(d.draws.row(s).transpose()))(0);
  CHECK(wu(0, 0) == doctest::Approx(m0 / static_cast<double>(d.size())).epsilon(1e-12));
  CHECK_THROWS_AS(predict_weights(d, unseen, false), ValidationError);
}

TEST_CASE("prior-only run recovers the half-normal scale moments") {
  FeatureSet f = make_cell_features({1, 2, 3});
  f.cells.resize(0);
  SamplerConfig cfg;
  cfg.seed = 5;
  cfg.threads = 4;
  HierOptions ho;
  ho.enforce_diagnostics = false;
  const WeightDraws d = fit_hierarchical(LpdMatrix(Matrix(0, 2)), f,
                                         build_prior(PriorKind::basic), cfg, std::nullopt, ho);
  const Vector sig = d.draws.col(1).array().exp();
  // sigma ~ N+(0, 1): mean sqrt(2/pi), second moment 1.
  CHECK(std::abs(sig.mean() - std::sqrt(2.0 / std::numbers::pi)) < 0.05);
  CHECK(std::abs(sig.squaredNorm() / static_cast<double>(sig.size()) - 1.0) < 0.1);
}
