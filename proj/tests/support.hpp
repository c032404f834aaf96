#ifndef HSTACK_TESTS_SUPPORT_HPP
#define HSTACK_TESTS_SUPPORT_HPP

// Oracles and random instances shared by the unit tests and the acceptance run.

#include "hstack/hier.hpp"
#include "hstack/psis.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace hstack::testing {

inline Vector fd_gradient(const StackingModel& m, const Vector& x, double h = 1e-5) {
  Vector g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vector a = x, b = x;
    a(j) += h;
    b(j) -= h;
    g(j) = (m.log_posterior(a) - m.log_posterior(b)) / (2.0 * h);
  }
  return g;
}

inline Matrix random_lpd(std::mt19937_64& rng, Eigen::Index n, Eigen::Index K) {
  std::normal_distribution<double> z(0.0, 1.0);
  Matrix l(n, K);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < K; ++k) l(i, k) = -1.0 + z(rng);
  return l;
}

inline Vector random_point(std::mt19937_64& rng, Eigen::Index d, double sd) {
  std::normal_distribution<double> z(0.0, sd);
  Vector x(d);
  for (Eigen::Index j = 0; j < d; ++j) x(j) = z(rng);
  return x;
}

inline Matrix random_correlation(std::mt19937_64& rng, Eigen::Index J) {
  std::normal_distribution<double> z(0.0, 1.0);
  Matrix a(J, J + 2);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = z(rng);
  const Matrix S = a * a.transpose();
  const Vector d = S.diagonal().cwiseSqrt().cwiseInverse();
  Matrix R = d.asDiagonal() * S * d.asDiagonal();
  R.diagonal().setOnes();
  return R;
}

struct GradientCase {
  std::string label;
  double rel_error = 0.0;
  bool finite = true;
};

// 100 randomized models: every prior kind, both parameterizations, with and
// without mu_0, time weights, Jacobians and the zero-one kernel.
inline std::vector<GradientCase> gradient_cases(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> kdist(2, 4);
  std::vector<GradientCase> out;
  for (int rep = 0; rep < 10; ++rep) {
    for (int kind = 0; kind < 5; ++kind) {
      for (int centered = 0; centered < 2; ++centered) {
        const Eigen::Index K = kdist(rng);
        const Eigen::Index n = 12;
        const Matrix l = random_lpd(rng, n, K);
        std::vector<long> cells(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) cells[static_cast<std::size_t>(i)] = 10 + i % 3;
        FeatureSet f = make_cell_features(cells);
        PriorHyper h;
        const auto pk = static_cast<PriorKind>(kind);
        std::normal_distribution<double> z(0.0, 1.0);
        if (pk == PriorKind::grouped || pk == PriorKind::feature_decomposed ||
            (pk == PriorKind::gp && rep % 2 == 0)) {
          Matrix x(n, 2);
          for (Eigen::Index i = 0; i < n; ++i) {
            x(i, 0) = std::round(2.0 * z(rng)) / 2.0;
            x(i, 1) = z(rng);
          }
          if (pk == PriorKind::gp) {
            f = make_empty_features(n);
            f.features = x;
          } else {
            f.features = x;
            f.group_of_feature = {0, 1};
            if (pk == PriorKind::grouped) h.tau_sigma = Vector::Constant(3, 0.7);
          }
        }
        if (pk == PriorKind::correlated) h.omega = random_correlation(rng, 3);
        if (pk == PriorKind::gp && rep % 4 == 1) {
          KernelSpec ks;
          ks.kind = KernelKind::zero_one;
          h.kernel = ks;
        }
        h.sample_mu0 = rep % 3 == 0;
        ModelOptions mo;
        mo.non_centered = centered == 0;
        mo.jacobian = rep % 5 != 4;
        std::optional<TimeWeights> tws;
        if (rep % 2 == 1) {
          Vector t(n);
          for (Eigen::Index i = 0; i < n; ++i) t(i) = static_cast<double>(i);
          tws = time_reweight(t, static_cast<double>(n), 0.5);
        }
        const StackingModel m(LpdMatrix(l), f, build_prior(pk, h), tws, mo);
        const Vector x = random_point(rng, m.dim(), 0.6);
        Vector g;
        GradientCase c;
        c.label = to_string(pk) + (centered ? " centered" : " non-centered") + " rep " +
                  std::to_string(rep);
        const double v = m.log_posterior(x, &g);
        c.finite = std::isfinite(v) && g.allFinite();
        const Vector fd = fd_gradient(m, x);
        c.rel_error = (g - fd).norm() / std::max(1.0, fd.norm());
        out.push_back(c);
      }
    }
  }
  return out;
}

inline Vector gpd_sample(Eigen::Index n, double k, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector x(n);
  for (Eigen::Index i = 0; i < n; ++i) x(i) = gpd_quantile(u(rng), k, sigma);
  return x;
}

inline double normal_logpdf(double y, double m, double var) {
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * (y - m) * (y - m) / var;
}

// y_i ~ N(theta, 1), theta ~ N(0, 4): S posterior draws and the exact LOO.
struct Conjugate {
  LogLikDraws loglik;
  Vector exact_loo, lppd;
};

inline Conjugate conjugate_normal(int n, Eigen::Index S, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  const double tau2 = 4.0;
  Vector y(n);
  for (int i = 0; i < n; ++i) y(i) = 0.7 + z(rng);
  const double prec = 1.0 / tau2 + n, mean = y.sum() / prec;
  Conjugate c;
  c.loglik.resize(S, n);
  for (Eigen::Index s = 0; s < S; ++s) {
    const double th = mean + z(rng) / std::sqrt(prec);
    for (int i = 0; i < n; ++i) c.loglik(s, i) = normal_logpdf(y(i), th, 1.0);
  }
  c.exact_loo.resize(n);
  c.lppd.resize(n);
  for (int i = 0; i < n; ++i) {
    const double p = prec - 1.0, m = (y.sum() - y(i)) / p;
    c.exact_loo(i) = normal_logpdf(y(i), m, 1.0 / p + 1.0);
    c.lppd(i) = normal_logpdf(y(i), mean, 1.0 / prec + 1.0);
  }
  return c;
}

// Mean absolute difference between stacked_loo and n hierarchical refits,
// each predicting its held-out cell, on two alternating cells.
inline double stacked_loo_refit_error(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::vector<long> labels(static_cast<std::size_t>(n));
  Matrix v(n, 2);
  for (int i = 0; i < n; ++i) {
    labels[static_cast<std::size_t>(i)] = i % 2;
    const double shift = i % 2 == 0 ? 0.8 : -0.8;
    v.row(i) << -1.0 + shift + 0.4 * z(rng), -1.0 - shift + 0.4 * z(rng);
  }
  const PriorSpec prior = build_prior(PriorKind::basic, {});
  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.warmup = 500;
  cfg.draws_per_chain = 1000;
  cfg.seed = 3;
  HierOptions ho;
  ho.enforce_diagnostics = false;
  const WeightDraws full =
      fit_hierarchical(LpdMatrix(v), make_cell_features(labels), prior, cfg, std::nullopt, ho);
  const StackedLoo est = stacked_loo(LpdMatrix(v), full);

  double diff = 0.0;
  for (int i = 0; i < n; ++i) {
    Matrix vi(n - 1, 2);
    std::vector<long> li;
    for (int j = 0, r = 0; j < n; ++j) {
      if (j == i) continue;
      vi.row(r++) = v.row(j);
      li.push_back(labels[static_cast<std::size_t>(j)]);
    }
    cfg.seed = 100 + static_cast<std::uint64_t>(i);
    const WeightDraws fit =
        fit_hierarchical(LpdMatrix(vi), make_cell_features(li), prior, cfg, std::nullopt, ho);
    const SimplexWeights wi =
        predict_weights(fit, make_cell_features({labels[static_cast<std::size_t>(i)]}));
    diff += std::abs(est.pointwise(i) -
                     combine_log_density(wi.row(0).transpose(), v.row(i).transpose()));
  }
  return diff / n;
}

}  // namespace hstack::testing

#endif  // HSTACK_TESTS_SUPPORT_HPP
