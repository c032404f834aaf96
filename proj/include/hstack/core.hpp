#ifndef HSTACK_CORE_HPP
#define HSTACK_CORE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hstack {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IndexVector = Eigen::VectorXi;

/// Simplex-valued weights: one row per observation (or cell), K columns.
using SimplexWeights = Matrix;

/// Raised for malformed user input. `code` is a short machine-readable tag
/// ("dimension_mismatch", "non_finite", "empty_cell", ...).
class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

/// Raised when a sampler run fails its convergence checks.
class DiagnosticError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pointwise leave-one-out log predictive densities, n observations by K
/// models, in nats.
struct LpdMatrix {
  Matrix values;
  std::vector<std::string> obs_ids;

  LpdMatrix() = default;
  explicit LpdMatrix(Matrix v, std::vector<std::string> ids = {});

  Eigen::Index n() const { return values.rows(); }
  Eigen::Index K() const { return values.cols(); }
};

/// Per-observation inputs on which the stacking weights may vary.
///
/// `cells` holds 0-based discrete cell indices (empty when the input has no
/// discrete part); `cell_labels[j]` is the user-facing label of cell j.
/// `features` holds the continuous features f_m(x_i) column-wise.
struct FeatureSet {
  IndexVector cells;
  std::vector<long> cell_labels;
  Matrix features;
  std::vector<int> group_of_feature;  // 0-based, empty if ungrouped
  bool standardized = false;
  Vector medians;  // rectification centres, one per raw input dimension
  Vector scales;   // column scales applied by standardization
  std::vector<bool> constant_column;

  Eigen::Index n() const {
    return cells.size() > 0 ? cells.size() : features.rows();
  }
  bool has_cells() const { return cells.size() > 0; }
  int num_cells() const { return static_cast<int>(cell_labels.size()); }
  Eigen::Index num_features() const { return features.cols(); }
};

/// SplitMix64 finalizer.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent RNG seed for stream `stream` of a user seed.
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 1));
}

/// Builds a FeatureSet with only a discrete cell index. Labels are relabeled
/// to 0..J-1 in sorted order.
FeatureSet make_cell_features(const std::vector<long>& labels);

/// Empty feature set for n observations (complete pooling design).
FeatureSet make_empty_features(Eigen::Index n);

/// Numerically stable log(sum(exp(x))).
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.size() == 0) return -std::numeric_limits<Scalar>::infinity();
  const Scalar m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

/// Softmax with the last model pinned at zero: maps K-1 unconstrained log
/// odds to a point on the K-simplex.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax_weights(
    const Eigen::MatrixBase<Derived>& alpha) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index km1 = alpha.size();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> w(km1 + 1);
  Scalar m = Scalar(0);
  for (Eigen::Index k = 0; k < km1; ++k) m = std::max(m, Scalar(alpha(k)));
  Scalar total = Scalar(0);
  for (Eigen::Index k = 0; k < km1; ++k) {
    w(k) = std::exp(Scalar(alpha(k)) - m);
    total += w(k);
  }
  w(km1) = std::exp(-m);
  total += w(km1);
  return w / total;
}

/// Mixture log density log(sum_k w_k exp(ld_k)).
template <typename DerivedW, typename DerivedL>
typename DerivedL::Scalar combine_log_density(
    const Eigen::MatrixBase<DerivedW>& w,
    const Eigen::MatrixBase<DerivedL>& log_densities) {
  using Scalar = typename DerivedL::Scalar;
  Scalar m = -std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index k = 0; k < w.size(); ++k)
    if (w(k) > 0) m = std::max(m, Scalar(log_densities(k)));
  if (!std::isfinite(m)) return m;
  Scalar s = Scalar(0);
  for (Eigen::Index k = 0; k < w.size(); ++k)
    if (w(k) > 0) s += w(k) * std::exp(log_densities(k) - m);
  return m + std::log(s);
}

/// True when every row is a probability vector within `tol`.
bool is_simplex(const Matrix& w, double tol = 1e-10);

/// Options for the coordinate-wise rectified-linear feature map.
struct RectifyOptions {
  bool standardize = false;
  std::optional<Vector> medians;  // reuse training medians at prediction
  std::optional<Vector> scales;   // reuse training scales at prediction
};

/// Maps each continuous input column x_d to the pair
/// ((x_d - med_d)_+, (med_d - x_d)_+). Both columns are nonnegative, their
/// difference reconstructs x_d - med_d, and they never overlap in support.
FeatureSet rectify_features(const Matrix& x, const RectifyOptions& opts = {});

/// Checks an (lpd, features) pair for consistency. Returns the pair with the
/// cell index relabeled to 0..J-1; applying it twice is a no-op.
std::pair<LpdMatrix, FeatureSet> validate(const LpdMatrix& lpd,
                                          const FeatureSet& feats);

/// Checks an LpdMatrix on its own (finite entries, at least one row/column).
void validate_lpd(const LpdMatrix& lpd);

/// Design matrix [one-hot(cell) | features] used by the additive weight model.
Matrix design_matrix(const FeatureSet& feats);

/// Cached mixture log likelihood sum_i pi_i log(sum_k softmax(eta_i)_k p_ik)
/// with eta_iK = 0. Densities are stored row-shifted for stability.
class MixtureLikelihood {
 public:
  MixtureLikelihood() = default;
  MixtureLikelihood(const Matrix& lpd, Vector row_weights = Vector());

  Eigen::Index n() const { return dens_.rows(); }
  Eigen::Index K() const { return dens_.cols(); }
  const Vector& row_weights() const { return pi_; }

  /// Value at linear predictors eta (n x (K-1)).
  double value(const Matrix& eta) const;

  /// Value and d/d eta, written into `grad` (n x (K-1)).
  double value_and_gradient(const Matrix& eta, Matrix& grad) const;

  /// Row i Hessian block d^2/d eta_i d eta_i ((K-1) x (K-1)), weighted.
  Matrix row_hessian(const Matrix& eta, Eigen::Index i) const;

 private:
  Matrix dens_;      // exp(lpd - rowmax)
  Vector row_max_;   // rowmax of lpd
  Vector pi_;        // per-row weights
  double offset_ = 0.0;  // sum_i pi_i rowmax_i
};

}  // namespace hstack

#endif  // HSTACK_CORE_HPP
