#ifndef HSTACK_THEORY_HPP
#define HSTACK_THEORY_HPP

#include "hstack/core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace hstack {

/// Discretized population: grid cells over (x, y) carrying data-generating
/// mass and every model's log density at the cell. `x_bin` groups cells that
/// share the same input x.
struct Scenario {
  std::string kind;
  Vector mass;         // C, sums to 1
  Matrix log_dens;     // C x K
  IndexVector x_bin;   // C, values in 0..num_x_bins-1
  Eigen::Index num_x_bins = 1;
  Vector x_values;     // representative x of each bin
  double delta = std::numeric_limits<double>::quiet_NaN();

  Eigen::Index cells() const { return mass.size(); }
  Eigen::Index K() const { return log_dens.cols(); }
  /// Throws ValidationError unless the mass sums to 1 within 1e-6 and shapes agree.
  void check() const;
};

/// y ~ uniform(-3, 1); model 1 is (1-delta) U(-4,0) + delta U(0,2), model 2
/// swaps the two components. `cells` grid cells over [-3, 1]. The input is
/// the side of zero, so pointwise selection picks a model per region.
Scenario spike_slab_scenario(double delta, Eigen::Index cells = 2000);

/// x ~ uniform(0, 1), y | x ~ Bernoulli(x). Model 1 is Bernoulli(0.5), model 2
/// is Bernoulli(sqrt(x)). Midpoint quadrature over `x_cells` with exact y-sum.
Scenario bernoulli_sqrt_scenario(Eigen::Index x_cells = 10000);

struct PiecewiseOptions {
  int K = 0;              // 0: drawn uniformly from {2, 3, 4}
  int x_pieces = 4;
  int y_pieces = 8;
  int cells_per_piece = 1;  // refinement of each constant piece
  double concentration = 0.7;  // smaller gives sharper model densities
};

/// Random piecewise-constant scenario on [0,1]^2: the input density, the
/// true conditional and each model's conditional are constant on pieces.
Scenario piecewise_scenario(std::uint64_t seed, const PiecewiseOptions& opts = {});

/// Integrated log score of a weighted mixture. `w` is 1 x K (constant) or
/// num_x_bins x K (per-input weights, including indicator selection). Returns
/// -inf when the mixture vanishes on a cell with positive mass.
double elpd_of_weights(const Scenario& sc, const Matrix& w);

/// elpd of every single model.
Vector model_elpds(const Scenario& sc);

struct SeparationReport {
  double L = 0.0;
  double epsilon = 0.0;         // joint condition: winner margin below L
  double epsilon_strong = 0.0;  // x-wise condition relative to the I_k winner
  Vector J_masses;              // Pr(J_k)
  Vector I_masses;              // Pr(I_k)
  double rho = 0.0;
  double rho_x = 0.0;
  IndexVector cell_winner;      // argmax_k p_k per cell (ties to smallest k)
  IndexVector bin_winner;       // argmax_k celpd_k per x bin
};

/// Winner regions J_k (per cell) and I_k (per input), with epsilon at L.
SeparationReport winner_partition(const Scenario& sc, double L = 0.0);

/// Winner margin log p_win - max_{k != win} log p_k per cell (+inf if K = 1).
Vector winner_margins(const Scenario& sc);

struct SeparationProfile {
  Vector L;
  Vector epsilon;
  Vector epsilon_strong;
};

SeparationProfile separation_profile(const Scenario& sc, const Vector& L_grid);

/// Population complete-pooling stacking weights (EM with cell masses as row
/// weights), 1 x K.
Vector population_stacking(const Scenario& sc);

/// elpd of selecting M_k exactly on I_k.
double pointwise_selection_elpd(const Scenario& sc);

/// softmax(n * elpd_k); for K = 2, w_1 = 1 / (1 + exp(n (elpd_2 - elpd_1))).
Vector pseudo_bma_weight(const Scenario& sc, double n);

/// Entropy-type term rho log rho + (1 - rho) log((1 - rho) / (K - 1)).
double winner_entropy_term(double rho, Eigen::Index K);
/// L (1 - rho)(1 - eps) - log K.
double gain_bound_g(double L, Eigen::Index K, double rho, double eps);
/// L (1 - rho)(1 - eps) + rho log rho + (1 - rho)(log(1 - rho) - log(K - 1)).
double gain_bound_g_star(double L, Eigen::Index K, double rho, double eps);

struct TheoremReport {
  double L = 0.0;
  SeparationReport sep;
  Vector w_stacking;
  Vector w_approx;
  double elpd_stacking = 0.0;
  double best_single_elpd = 0.0;

  // T1: near-optimality of the winner-probability weights.
  double t1_gap = 0.0;
  double t1_constant = 0.0;
  double t1_bound = 0.0;
  std::vector<int> t1_dropped;  // zero-weight models removed before checking
  bool t1_pass = false;

  // T2: zero-weight models have small winning regions.
  std::vector<int> t2_models;
  Vector t2_prob;
  Vector t2_tight;   // (1 + (e^L - 1)(1 - eps) + eps)^-1
  Vector t2_loose;   // e^-L + eps
  bool t2_pass = true;
  bool t2_tight_pass = true;

  // T3: stacking gain over the best single model.
  double t3_gain = 0.0;
  double t3_g = 0.0;
  double t3_g_star = 0.0;
  double t3_g_star_minus_eps = 0.0;
  double t3_bound = 0.0;
  bool t3_pass = false;
  bool t3_g_le_g_star = false;

  // T4: pointwise selection gain over stacking.
  double t4_selection_elpd = 0.0;
  double t4_gain = 0.0;
  double t4_neg_log_rho_x = 0.0;
  double t4_slack = 0.0;
  double t4_bound = 0.0;
  bool t4_pass = false;

  bool all_pass() const { return t1_pass && t2_pass && t3_pass && t4_pass && t3_g_le_g_star; }
};

/// Evaluates the four bound statements at margin L with explicit constants.
TheoremReport theorem_bounds(const Scenario& sc, double L);

/// Largest L with epsilon(L) = 0: the smallest winner margin over cells with
/// positive mass.
double max_separation_margin(const Scenario& sc);

}  // namespace hstack

#endif  // HSTACK_THEORY_HPP
