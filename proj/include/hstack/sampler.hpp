#ifndef HSTACK_SAMPLER_HPP
#define HSTACK_SAMPLER_HPP

#include "hstack/core.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace hstack {

/// Log density callback: returns log p(x) and writes the gradient into `grad`
/// when non-null. Must be reentrant; chains call it concurrently.
using LogDensityFn = std::function<double(const Vector& x, Vector* grad)>;

struct SamplerConfig {
  int chains = 4;
  int warmup = 1000;
  int draws_per_chain = 1000;
  std::uint64_t seed = 1;
  double target_accept = 0.8;
  int max_leapfrog = 64;
  int threads = 1;
  double init_radius = 2.0;  // chain inits jittered uniformly in +/- radius
  double divergence_threshold = 1000.0;
};

/// Throws ValidationError when the config violates its invariants.
void check_config(const SamplerConfig& cfg);

struct ChainStats {
  int divergences = 0;
  int warmup_divergences = 0;
  double mean_accept = 0.0;
  double step_size = 0.0;
  Vector inv_metric;
};

struct Diagnostics {
  std::vector<std::optional<double>> rhat;  // empty optional: fewer than 2 chains
  Vector ess_bulk;
  Vector ess_tail;
  int divergences = 0;
  int total_draws = 0;

  double max_rhat() const;
  double min_ess_bulk() const;
  double min_ess_tail() const;
};

struct SampleResult {
  std::vector<Matrix> chains;  // draws_per_chain x dim each
  std::vector<ChainStats> stats;
  Diagnostics diagnostics;

  /// Draws of all chains stacked row-wise in chain order.
  Matrix merged() const;
};

/// Hamiltonian Monte Carlo with a diagonal metric. Each transition runs a
/// leapfrog trajectory of uniformly jittered length 1..max_leapfrog.
/// Warmup is split 15% / 60% / 25%: step size only, then metric and step
/// size, then step size refinement under the final metric.
SampleResult sample(const LogDensityFn& logp, const Vector& init,
                    const SamplerConfig& cfg);

/// Split-Rhat (rank-normalized, max of bulk and folded) and rank-normalized
/// bulk / tail effective sample sizes, per parameter column.
Diagnostics diagnostics(const std::vector<Matrix>& chains);

/// Effective sample size of one or more equally long chains of a scalar
/// quantity (no splitting, no rank normalization).
double effective_sample_size(const std::vector<Vector>& chains);

/// Split-Rhat of a scalar quantity without rank normalization.
double split_rhat(const std::vector<Vector>& chains);

/// Runs `steps` leapfrog steps in place. Returns false if the log density
/// became non-finite along the way.
bool leapfrog(const LogDensityFn& logp, Vector& q, Vector& p, Vector& grad,
              double& logp_value, double step_size, int steps,
              const Vector& inv_metric);

}  // namespace hstack

#endif  // HSTACK_SAMPLER_HPP
