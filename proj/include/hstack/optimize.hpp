#ifndef HSTACK_OPTIMIZE_HPP
#define HSTACK_OPTIMIZE_HPP

#include "hstack/core.hpp"

#include <functional>
#include <string>
#include <vector>

namespace hstack {

struct FitOptions {
  int max_iters = 100000;
  double tol = 1e-10;  // relative objective change
  int restarts = 0;    // unused by EM (concave problem); kept for CLI parity
  bool record_trace = false;
};

/// Point estimate of stacking weights.
struct StackingFit {
  std::string method;
  SimplexWeights weights;  // 1 x K (complete), J x K (no pooling), n x K (additive)
  double objective = 0.0;
  int iters = 0;
  bool converged = false;
  std::vector<double> trace;  // objective per EM iteration when requested
};

/// Complete-pooling stacking: maximizes sum_i pi_i log(sum_k w_k p_ik) over
/// the simplex by the multiplicative EM update, started at uniform weights.
/// `row_weights` defaults to all ones; entries of `lpd` may be -inf as long as
/// every row has a finite entry.
StackingFit fit_complete_pooling(const Matrix& lpd, const FitOptions& opts = {},
                                 const Vector& row_weights = Vector());
StackingFit fit_complete_pooling(const LpdMatrix& lpd, const FitOptions& opts = {});

/// No-pooling stacking: one complete-pooling solve per discrete cell.
/// Throws ValidationError("empty_cell") listing every cell without data.
StackingFit fit_no_pooling(const LpdMatrix& lpd, const FeatureSet& feats,
                           const FitOptions& opts = {});

/// Result of the unpenalized additive fit.
struct AdditiveFit {
  Vector mu;                 // K-1 intercepts
  Matrix alpha;              // P x (K-1), P = J + M design columns
  SimplexWeights weights;    // n x K pointwise
  double objective = 0.0;
  int iters = 0;
  bool converged = false;
  bool hit_cap = false;
};

/// Coefficient bound for fit_additive_mle; beyond it softmax weights are
/// within about 1e-13 of 0 or 1.
inline constexpr double kCoefficientCap = 30.0;

/// Maximum-likelihood additive stacking: eta_ik = mu_k + sum_m alpha_mk f_m(x_i)
/// over the design [one-hot(cell) | features], no prior. Coefficients are
/// boxed to |.| <= kCoefficientCap and `hit_cap` is set if any reaches it.
AdditiveFit fit_additive_mle(const LpdMatrix& lpd, const FeatureSet& feats,
                             const FitOptions& opts = {});

/// Hessian of the mixture log likelihood with respect to vec(B) (column-major)
/// where eta = X * B and B is X.cols() x (K-1).
Matrix additive_loglik_hessian(const MixtureLikelihood& lik, const Matrix& X,
                               const Matrix& eta);

/// Objective callback for maximize_newton: returns f(x) and fills the
/// gradient and Hessian when the pointers are non-null.
using SmoothObjective =
    std::function<double(const Vector& x, Vector* grad, Matrix* hess)>;

struct NewtonOptions {
  int max_iters = 500;
  double step_tol = 1e-10;
  double grad_tol = 1e-12;
  double bound = 0.0;  // box |x_j| <= bound when > 0
};

struct NewtonResult {
  Vector x;
  double value = 0.0;
  Vector grad;
  int iters = 0;
  bool converged = false;
  bool at_bound = false;
};

/// Damped (Levenberg-Marquardt) Newton ascent with an optional box.
NewtonResult maximize_newton(const SmoothObjective& f, Vector x0,
                             const NewtonOptions& opts = {});

}  // namespace hstack

#endif  // HSTACK_OPTIMIZE_HPP
