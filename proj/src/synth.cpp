#include "hstack/synth.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace hstack {

namespace {

// Fixed stream ids so that each generator draws from its own sequence.
enum Stream : std::uint64_t {
  kSpikeSlab = 11,
  kBernoulli = 12,
  kCellsTruth = 13,
  kCellsData = 14,
  kContinuous = 15,
  kNeal = 16,
};

double low_density() { return std::exp(kSynthLowLogDensity); }

void fill_rows(std::mt19937_64& rng, const Vector& probs, Eigen::Index rows, Matrix& lpd,
               Eigen::Index& r, std::vector<int>& component) {
  std::discrete_distribution<int> pick(probs.data(), probs.data() + probs.size());
  std::normal_distribution<double> offset(-1.0, 0.5);
  for (Eigen::Index i = 0; i < rows; ++i, ++r) {
    const int z = pick(rng);
    const double c = offset(rng);
    lpd.row(r).setConstant(c + kSynthLowLogDensity);
    lpd(r, z) = c;
    component.push_back(z);
  }
}

}  // namespace

void GenConfig::check() const {
  if (n < 1) throw ValidationError("bad_config", "n must be at least 1");
  if (!(delta >= 0.0 && delta <= 1.0)) throw ValidationError("bad_config", "delta must lie in [0, 1]");
  if (!(outlier_prob >= 0.0 && outlier_prob <= 1.0))
    throw ValidationError("bad_config", "outlier probability must lie in [0, 1]");
  if (kind == "cells") {
    if (J < 2 || K < 2) throw ValidationError("bad_config", "cells needs J >= 2 and K >= 2");
    if (!n_per_cell.empty() && static_cast<int>(n_per_cell.size()) != J) {
      std::ostringstream os;
      os << "n_per_cell has " << n_per_cell.size() << " entries but J=" << J;
      throw ValidationError("bad_config", os.str());
    }
  } else if (kind == "continuous") {
    if (K < 2) throw ValidationError("bad_config", "continuous needs K >= 2");
  } else if (kind != "spike-slab" && kind != "bernoulli-sqrt" && kind != "neal") {
    throw ValidationError("bad_config", "unknown scenario kind '" + kind + "'");
  }
  if (!(effect_size >= 0.0)) throw ValidationError("bad_config", "effect size must be non-negative");
}

SpikeSlabData gen_spike_slab(double delta, Eigen::Index n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("bad_config", "n must be at least 1");
  SpikeSlabData d;
  d.scenario = spike_slab_scenario(delta);
  std::mt19937_64 rng(stream_seed(seed, kSpikeSlab));
  std::uniform_real_distribution<double> u(-3.0, 1.0);
  d.y.resize(n);
  Matrix v(n, 2);
  const double left1 = std::log((1.0 - delta) / 4.0), right1 = std::log(delta / 2.0);
  const double left2 = std::log(delta / 4.0), right2 = std::log((1.0 - delta) / 2.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double y = u(rng);
    d.y(i) = y;
    v(i, 0) = y <= 0.0 ? left1 : right1;
    v(i, 1) = y <= 0.0 ? left2 : right2;
  }
  d.lpd = LpdMatrix(std::move(v));
  return d;
}

Vector bernoulli_sqrt_celpd(double x) {
  const double r = std::sqrt(x);
  Vector c(2);
  c(0) = std::log(0.5);
  c(1) = x * std::log(r) + (1.0 - x) * std::log1p(-r);
  return c;
}

BernoulliData gen_bernoulli_sqrt(Eigen::Index n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("bad_config", "n must be at least 1");
  BernoulliData d;
  d.scenario = bernoulli_sqrt_scenario();
  std::mt19937_64 rng(stream_seed(seed, kBernoulli));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  d.x.resize(n);
  d.y.resize(n);
  Matrix v(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = u(rng);
    const bool y = u(rng) < x;
    const double r = std::sqrt(x);
    d.x(i) = x;
    d.y(i) = y ? 1.0 : 0.0;
    v(i, 0) = std::log(0.5);
    v(i, 1) = y ? std::log(r) : std::log1p(-r);
  }
  d.lpd = LpdMatrix(std::move(v));
  return d;
}

Vector component_probs_for(const Vector& w) {
  if (!is_simplex(w.transpose(), 1e-9))
    throw ValidationError("not_simplex", "target weights must lie on the simplex");
  const double l = low_density(), kappa = l / (1.0 - l);
  return (w.array() + kappa) / (1.0 + static_cast<double>(w.size()) * kappa);
}

CellsData gen_cells(const Matrix& true_weights, const std::vector<Eigen::Index>& n_per_cell,
                    std::uint64_t seed) {
  const Eigen::Index J = true_weights.rows(), K = true_weights.cols();
  if (J < 1 || K < 2) throw ValidationError("bad_config", "need at least one cell and two models");
  if (static_cast<Eigen::Index>(n_per_cell.size()) != J) {
    std::ostringstream os;
    os << "n_per_cell has " << n_per_cell.size() << " entries but there are " << J << " cells";
    throw ValidationError("dimension_mismatch", os.str());
  }
  Eigen::Index n = 0;
  for (Eigen::Index c : n_per_cell) {
    if (c < 1) throw ValidationError("bad_config", "every cell needs at least one observation");
    n += c;
  }
  CellsData d;
  d.true_weights = true_weights;
  d.component_probs.resize(J, K);
  for (Eigen::Index j = 0; j < J; ++j)
    d.component_probs.row(j) = component_probs_for(true_weights.row(j).transpose()).transpose();

  std::mt19937_64 rng(stream_seed(seed, kCellsData));
  Matrix v(n, K);
  std::vector<long> labels;
  labels.reserve(static_cast<std::size_t>(n));
  Eigen::Index r = 0;
  for (Eigen::Index j = 0; j < J; ++j) {
    const Eigen::Index nj = n_per_cell[static_cast<std::size_t>(j)];
    fill_rows(rng, d.component_probs.row(j).transpose(), nj, v, r, d.component);
    labels.insert(labels.end(), static_cast<std::size_t>(nj), static_cast<long>(j));
  }
  d.lpd = LpdMatrix(std::move(v));
  d.features = make_cell_features(labels);
  return d;
}

CellsData gen_cells(int J, int K, const std::vector<Eigen::Index>& n_per_cell,
                    double effect_size, std::uint64_t seed) {
  if (J < 2 || K < 2) throw ValidationError("bad_config", "gen_cells needs J >= 2 and K >= 2");
  std::mt19937_64 rng(stream_seed(seed, kCellsTruth));
  std::normal_distribution<double> z;
  Matrix w(J, K);
  for (int j = 0; j < J; ++j) {
    Vector eta(K - 1);
    for (int k = 0; k + 1 < K; ++k) eta(k) = effect_size * z(rng);
    w.row(j) = softmax_weights(eta).transpose();
  }
  return gen_cells(w, n_per_cell, seed);
}

CellsData gen_continuous(Eigen::Index n, int K, double effect_size, std::uint64_t seed) {
  if (n < 1 || K < 2) throw ValidationError("bad_config", "gen_continuous needs n >= 1 and K >= 2");
  std::mt19937_64 rng(stream_seed(seed, kContinuous));
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  CellsData d;
  d.true_weights.resize(n, K);
  d.component_probs.resize(n, K);
  Matrix x(n, 1), v(n, K);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = u(rng);
    Vector eta(K);
    for (int k = 0; k < K; ++k)
      eta(k) = effect_size * std::sin(x(i, 0) + 2.0 * std::numbers::pi * k / K);
    const Vector w = softmax_weights(Vector(eta.head(K - 1).array() - eta(K - 1)));
    d.true_weights.row(i) = w.transpose();
    d.component_probs.row(i) = component_probs_for(w).transpose();
    fill_rows(rng, d.component_probs.row(i).transpose(), 1, v, r, d.component);
  }
  d.lpd = LpdMatrix(std::move(v));
  d.features.features = std::move(x);
  return d;
}

double neal_f(double x) {
  return 0.3 + 0.4 * x + 0.5 * std::sin(2.7 * x) + 1.1 / (1.0 + x * x);
}

NealData gen_neal_regression(Eigen::Index n, std::uint64_t seed, double outlier_prob) {
  if (n < 1) throw ValidationError("bad_config", "n must be at least 1");
  if (!(outlier_prob >= 0.0 && outlier_prob <= 1.0))
    throw ValidationError("bad_config", "outlier probability must lie in [0, 1]");
  std::mt19937_64 rng(stream_seed(seed, kNeal));
  std::normal_distribution<double> z;
  std::bernoulli_distribution out(outlier_prob);
  NealData d;
  d.x.resize(n);
  d.y.resize(n);
  d.outlier.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    d.x(i) = z(rng);
    const bool o = out(rng);
    d.outlier[static_cast<std::size_t>(i)] = o;
    d.y(i) = neal_f(d.x(i)) + (o ? 1.0 : 0.1) * z(rng);
  }
  return d;
}

}  // namespace hstack
