#ifndef HSTACK_SYNTH_HPP
#define HSTACK_SYNTH_HPP

#include "hstack/core.hpp"
#include "hstack/theory.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace hstack {

/// Scenario kinds understood by `generate`.
struct GenConfig {
  std::string kind = "spike-slab";  // spike-slab | bernoulli-sqrt | cells | continuous | neal
  double delta = 0.01;
  Eigen::Index n = 1000;
  std::uint64_t seed = 1;
  double outlier_prob = 0.05;
  int J = 4;
  int K = 2;
  std::vector<Eigen::Index> n_per_cell;  // cells: empty means n / J each
  double effect_size = 1.0;

  /// Throws ValidationError on n < 1, delta outside [0, 1] and similar.
  void check() const;
};

struct SpikeSlabData {
  Scenario scenario;
  Vector y;
  LpdMatrix lpd;  // log p_k(y_i)
};

/// y_i ~ uniform(-3, 1) scored by the two spike-and-slab models.
SpikeSlabData gen_spike_slab(double delta, Eigen::Index n, std::uint64_t seed);

struct BernoulliData {
  Scenario scenario;
  Vector x;
  Vector y;  // 0 / 1
  LpdMatrix lpd;
};

BernoulliData gen_bernoulli_sqrt(Eigen::Index n, std::uint64_t seed);

/// Conditional elpd of both Bernoulli models at x.
Vector bernoulli_sqrt_celpd(double x);

/// Constructed stacking data with a known optimum. Each observation picks a
/// component z_i from probabilities omega; model z_i scores log(1) and the
/// others log(exp(-3)), plus a row offset shared by all models. With
/// kappa = l / (1 - l), l = exp(-3), the population optimum of
/// sum_k omega_k log(l + (1 - l) w_k) is w_k = omega_k (1 + K kappa) - kappa,
/// so omega = (w + kappa) / (1 + K kappa) realizes any target w exactly.
struct CellsData {
  LpdMatrix lpd;
  FeatureSet features;
  Matrix true_weights;   // J x K (cells) or n x K (continuous)
  Matrix component_probs;
  std::vector<int> component;
};

inline constexpr double kSynthLowLogDensity = -3.0;

/// Component probabilities that make `w` the population stacking optimum.
Vector component_probs_for(const Vector& w);

/// Per-cell optimum softmax(effect_size * z_j), z_jk ~ N(0, 1) with the last
/// logit pinned at 0.
CellsData gen_cells(int J, int K, const std::vector<Eigen::Index>& n_per_cell,
                    double effect_size, std::uint64_t seed);

/// Same construction with explicit J x K target weights.
CellsData gen_cells(const Matrix& true_weights, const std::vector<Eigen::Index>& n_per_cell,
                    std::uint64_t seed);

/// One continuous input x ~ uniform(-2, 2) (a single feature column) with
/// optimum softmax over models of effect_size * sin(x + 2 pi k / K).
CellsData gen_continuous(Eigen::Index n, int K, double effect_size, std::uint64_t seed);

struct NealData {
  Vector x;
  Vector y;
  std::vector<bool> outlier;
};

double neal_f(double x);

/// x ~ N(0, 1), y = f(x) + noise with sd 0.1, or sd 1 with probability
/// `outlier_prob`.
NealData gen_neal_regression(Eigen::Index n, std::uint64_t seed, double outlier_prob = 0.05);

}  // namespace hstack

#endif  // HSTACK_SYNTH_HPP
