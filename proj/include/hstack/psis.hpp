#ifndef HSTACK_PSIS_HPP
#define HSTACK_PSIS_HPP

#include "hstack/core.hpp"
#include "hstack/hier.hpp"

#include <string>
#include <vector>

namespace hstack {

/// Per-draw, per-observation log likelihoods of one model (S x n).
using LogLikDraws = Matrix;

struct PsisOptions {
  double tail_fraction = 0.2;  // tail size min(tail_fraction * S, tail_sqrt_mult * sqrt(S))
  double tail_sqrt_mult = 3.0;
  bool weak_prior = true;      // shrink khat toward 0.5 by 10 / (M + 10)
  int min_grid = 30;
};

/// khat <= 0.5 good, <= 0.7 ok, above that unreliable.
inline constexpr double kKhatGood = 0.5;
inline constexpr double kKhatOk = 0.7;
std::string khat_status(double khat);

struct GpdFit {
  double khat = 0.0;
  double sigma = 0.0;
  bool degenerate = false;  // constant tail: khat = -inf, no smoothing
};

/// Generalized Pareto fit to positive exceedances by the Zhang-Stephens
/// profile estimator: a grid of theta = -k/sigma candidates weighted by
/// their profile likelihood. Requires at least 5 values.
GpdFit fit_gpd_tail(Vector exceedances, const PsisOptions& opts = {});

/// GPD quantile function with location 0.
double gpd_quantile(double p, double k, double sigma);

struct SmoothedWeights {
  Vector log_weights;  // normalized so that sum(exp) = 1
  double khat = 0.0;
};

/// Pareto-smooths one vector of log importance ratios: the largest
/// M = ceil(min(0.2 S, 3 sqrt(S))) ratios are replaced by expected order
/// statistics of the fitted GPD and everything is truncated at the raw max.
SmoothedWeights psis_smooth(const Vector& log_ratios, const PsisOptions& opts = {});

struct PsisLoo {
  Vector lpd;   // log p(y_i | y_-i), length n
  Vector khat;  // length n
  int n_unreliable = 0;  // khat > 0.7
};

/// PSIS-LOO for one model from its per-draw log likelihoods.
PsisLoo psis_loo(const LogLikDraws& loglik, const PsisOptions& opts = {});

/// Assembles an LpdMatrix from one LogLikDraws per model.
LpdMatrix psis_loo_matrix(const std::vector<LogLikDraws>& models,
                          std::vector<PsisLoo>* reports = nullptr,
                          const PsisOptions& opts = {});

struct StackedLoo {
  double elpd = 0.0;
  Vector pointwise;
  Vector khat;
  int n_unreliable = 0;
};

/// LOO estimate for the stacked model: per observation, importance ratios
/// 1 / sum_k w_ks(x_i) p_{k,-i} are PSIS-smoothed and
/// elpd_i = log(sum_s r_is q_is / sum_s r_is). `weights[s]` is the n x K
/// pointwise weight matrix of draw s.
StackedLoo stacked_loo(const LpdMatrix& lpd, const std::vector<SimplexWeights>& weights,
                       const PsisOptions& opts = {});
StackedLoo stacked_loo(const LpdMatrix& lpd, const WeightDraws& draws,
                       const PsisOptions& opts = {});

}  // namespace hstack

#endif  // HSTACK_PSIS_HPP
