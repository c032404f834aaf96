#include "hstack/psis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace hstack {

std::string khat_status(double khat) {
  if (std::isnan(khat)) return "unreliable";
  if (khat <= kKhatGood) return "good";
  if (khat <= kKhatOk) return "ok";
  return "unreliable";
}

double gpd_quantile(double p, double k, double sigma) {
  if (std::abs(k) < 1e-12) return -sigma * std::log1p(-p);
  return sigma * std::expm1(-k * std::log1p(-p)) / k;
}

GpdFit fit_gpd_tail(Vector x, const PsisOptions& opts) {
  const Eigen::Index N = x.size();
  if (N < 5) throw ValidationError("tail_too_small", "GPD fit needs at least 5 tail values");
  std::sort(x.data(), x.data() + N);
  GpdFit fit;
  if (x(N - 1) - x(0) <= 0.0) {
    fit.degenerate = true;
    fit.khat = -std::numeric_limits<double>::infinity();
    return fit;
  }
  // Zhang & Stephens (2009), profile grid over theta = -k / sigma.
  const double prior = 3.0;
  const Eigen::Index M = opts.min_grid + static_cast<Eigen::Index>(std::sqrt(static_cast<double>(N)));
  const auto q = static_cast<Eigen::Index>(std::floor(static_cast<double>(N) / 4.0 + 0.5));
  const double xstar = x(std::max<Eigen::Index>(q - 1, 0));
  Vector theta(M), ltheta(M);
  for (Eigen::Index j = 0; j < M; ++j) {
    theta(j) = 1.0 / x(N - 1) +
               (1.0 - std::sqrt(static_cast<double>(M) / (static_cast<double>(j + 1) - 0.5))) /
                   prior / xstar;
    double kk = 0.0;
    for (Eigen::Index i = 0; i < N; ++i) kk += std::log1p(-theta(j) * x(i));
    kk /= static_cast<double>(N);
    ltheta(j) = static_cast<double>(N) * (std::log(-theta(j) / kk) - kk - 1.0);
  }
  double theta_hat = 0.0;
  for (Eigen::Index j = 0; j < M; ++j) {
    const double w = 1.0 / (ltheta.array() - ltheta(j)).exp().sum();
    if (std::isfinite(w)) theta_hat += theta(j) * w;
  }
  double k = 0.0;
  for (Eigen::Index i = 0; i < N; ++i) k += std::log1p(-theta_hat * x(i));
  k /= static_cast<double>(N);
  fit.sigma = -k / theta_hat;
  if (opts.weak_prior) {
    const double a = 10.0, n = static_cast<double>(N);
    k = k * n / (n + a) + a * 0.5 / (n + a);
  }
  fit.khat = std::isnan(k) ? std::numeric_limits<double>::infinity() : k;
  return fit;
}

SmoothedWeights psis_smooth(const Vector& log_ratios, const PsisOptions& opts) {
  const Eigen::Index S = log_ratios.size();
  if (S < 10) throw ValidationError("too_few_draws", "PSIS needs at least 10 draws");
  if (!log_ratios.allFinite())
    throw ValidationError("non_finite", "log importance ratios must be finite");
  Vector lw = log_ratios.array() - log_ratios.maxCoeff();
  const double s = static_cast<double>(S);
  const auto tail = static_cast<Eigen::Index>(
      std::ceil(std::min(opts.tail_fraction * s, opts.tail_sqrt_mult * std::sqrt(s))));

  SmoothedWeights out;
  out.khat = std::numeric_limits<double>::infinity();
  if (tail >= 5 && tail < S) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(S));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return lw(a) < lw(b); });
    const double cutoff = lw(order[static_cast<std::size_t>(S - tail - 1)]);
    const double exp_cutoff = std::exp(cutoff);
    Vector exceed(tail);
    for (Eigen::Index t = 0; t < tail; ++t)
      exceed(t) = std::exp(lw(order[static_cast<std::size_t>(S - tail + t)])) - exp_cutoff;
    const GpdFit g = fit_gpd_tail(exceed, opts);
    out.khat = g.khat;
    if (!g.degenerate && std::isfinite(g.khat)) {
      for (Eigen::Index t = 0; t < tail; ++t) {
        const double p = (static_cast<double>(t) + 0.5) / static_cast<double>(tail);
        const double v = gpd_quantile(p, g.khat, g.sigma) + exp_cutoff;
        lw(order[static_cast<std::size_t>(S - tail + t)]) = std::log(v);
      }
      lw = lw.cwiseMin(0.0);  // truncate at the raw maximum
    }
  }
  out.log_weights = lw.array() - log_sum_exp(lw);
  return out;
}

PsisLoo psis_loo(const LogLikDraws& loglik, const PsisOptions& opts) {
  if (!loglik.allFinite())
    throw ValidationError("non_finite", "log likelihood draws must be finite");
  const Eigen::Index n = loglik.cols();
  PsisLoo out;
  out.lpd.resize(n);
  out.khat.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector ll = loglik.col(i);
    const SmoothedWeights sw = psis_smooth(-ll, opts);
    out.lpd(i) = log_sum_exp(Vector(sw.log_weights + ll));
    out.khat(i) = sw.khat;
    if (sw.khat > kKhatOk) ++out.n_unreliable;
  }
  return out;
}

LpdMatrix psis_loo_matrix(const std::vector<LogLikDraws>& models, std::vector<PsisLoo>* reports,
                          const PsisOptions& opts) {
  if (models.empty()) throw ValidationError("empty_input", "no models given");
  const Eigen::Index n = models[0].cols();
  Matrix values(n, static_cast<Eigen::Index>(models.size()));
  for (std::size_t k = 0; k < models.size(); ++k) {
    if (models[k].cols() != n) {
      std::ostringstream os;
      os << "model " << k + 1 << " has n=" << models[k].cols() << " observations, model 1 has n=" << n;
      throw ValidationError("dimension_mismatch", os.str());
    }
    PsisLoo r = psis_loo(models[k], opts);
    values.col(static_cast<Eigen::Index>(k)) = r.lpd;
    if (reports) reports->push_back(std::move(r));
  }
  return LpdMatrix(values);
}

StackedLoo stacked_loo(const LpdMatrix& lpd, const std::vector<SimplexWeights>& weights,
                       const PsisOptions& opts) {
  validate_lpd(lpd);
  const Eigen::Index n = lpd.n(), K = lpd.K();
  const auto S = static_cast<Eigen::Index>(weights.size());
  if (S == 0) throw ValidationError("empty_input", "no weight draws");
  for (const auto& w : weights)
    if (w.rows() != n || w.cols() != K) {
      std::ostringstream os;
      os << "weight draws are " << w.rows() << "x" << w.cols() << " but lpd is " << n << "x" << K;
      throw ValidationError("dimension_mismatch", os.str());
    }
  StackedLoo out;
  out.pointwise.resize(n);
  out.khat = Vector::Constant(n, -std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector ld = lpd.values.row(i).transpose();
    Vector lq(S);
    for (Eigen::Index s = 0; s < S; ++s)
      lq(s) = combine_log_density(weights[static_cast<std::size_t>(s)].row(i).transpose(), ld);
    if (S >= 10) {
      const SmoothedWeights sw = psis_smooth(-lq, opts);
      out.pointwise(i) = log_sum_exp(Vector(sw.log_weights + lq));
      out.khat(i) = sw.khat;
      if (sw.khat > kKhatOk) ++out.n_unreliable;
    } else {
      // Too few draws to smooth: plain self-normalized ratios.
      const Vector lr = -lq;
      out.pointwise(i) = log_sum_exp(Vector(lr + lq)) - log_sum_exp(lr);
    }
  }
  out.elpd = out.pointwise.sum();
  return out;
}

StackedLoo stacked_loo(const LpdMatrix& lpd, const WeightDraws& draws, const PsisOptions& opts) {
  if (!draws.model) throw ValidationError("empty_input", "weight draws carry no model");
  if (draws.model->n() != lpd.n()) {
    std::ostringstream os;
    os << "draws were fitted on n=" << draws.model->n() << " observations but lpd has n=" << lpd.n();
    throw ValidationError("dimension_mismatch", os.str());
  }
  std::vector<SimplexWeights> w;
  w.reserve(static_cast<std::size_t>(draws.size()));
  for (Eigen::Index s = 0; s < draws.size(); ++s) w.push_back(draws.weights_at(s));
  return stacked_loo(lpd, w, opts);
}

}  // namespace hstack
