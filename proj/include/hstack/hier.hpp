#ifndef HSTACK_HIER_HPP
#define HSTACK_HIER_HPP

#include "hstack/core.hpp"
#include "hstack/sampler.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace hstack {

enum class PriorKind { basic, grouped, feature_decomposed, correlated, gp };
enum class KernelKind { exp_quad, zero_one };

std::string to_string(PriorKind kind);
PriorKind prior_kind_from_string(const std::string& name);
std::string to_string(KernelKind kind);
KernelKind kernel_kind_from_string(const std::string& name);

/// Hyperpriors of the GP weight prior. For exp_quad the kernel is
/// a * exp(-|x - x'|^2 / rho^2) with a ~ N+(0, amplitude_scale) and
/// rho ~ InvGamma(length_shape, length_rate). For zero_one the kernel is
/// a^2 * 1{x = x'} with a ~ N+(0, tau_sigma), the discrete-cell prior.
struct KernelSpec {
  KernelKind kind = KernelKind::exp_quad;
  double amplitude_scale = 1.0;
  double length_shape = 4.0;
  double length_rate = 1.0;
};

/// Structure and hyperparameters of the prior on the unconstrained weights.
struct PriorSpec {
  PriorKind kind = PriorKind::basic;
  double tau_mu = 1.0;
  Vector tau_sigma = Vector::Ones(1);  // one entry, or one per group
  double mu0 = 0.0;
  bool sample_mu0 = false;  // extra sampled shift mu_0 ~ N(0, 1) of the mean
  double inv_gamma_a = 2.0;
  double inv_gamma_b = 1.0;
  Matrix omega;  // J x J prior correlation (correlated)
  KernelSpec kernel;
  double jitter = 1e-8;
};

/// Optional hyperparameters for build_prior; unset fields keep defaults.
struct PriorHyper {
  std::optional<double> tau_mu;
  std::optional<Vector> tau_sigma;
  std::optional<double> mu0;
  bool sample_mu0 = false;
  std::optional<double> inv_gamma_a;
  std::optional<double> inv_gamma_b;
  std::optional<Matrix> omega;
  std::optional<KernelSpec> kernel;
  /// When set, tau_sigma defaults to sqrt(1 / M) instead of 1.
  std::optional<Eigen::Index> scale_by_num_features;
};

/// Validated prior; throws ValidationError on non-positive scales or an
/// invalid correlation matrix (reporting its smallest eigenvalue).
PriorSpec build_prior(PriorKind kind, const PriorHyper& hyper = {});

/// Likelihood reweighting for time-ordered data.
struct TimeWeights {
  Vector pi;
  double gamma = 0.0;
  double horizon = 0.0;

  /// n * pi_i / sum(pi); preserves the total weight n.
  Vector normalized() const;
};

/// pi_i = 1 + gamma - (1 - t_i / T)^2. Rejects t_i outside [0, T].
TimeWeights time_reweight(const Vector& t, double horizon, double gamma);

/// Structured view of one point in the sampler's unconstrained space.
struct UnconstrainedParams {
  Vector mu;              // K-1
  double mu0_raw = 0.0;   // only used when PriorSpec::sample_mu0
  Matrix log_sigma;       // scale groups x (K-1)
  Vector log_lambda;      // per design column (feature_decomposed)
  Vector log_amplitude;   // K-1 (gp)
  Vector log_length;      // K-1 (gp, exp_quad)
  Matrix alpha;           // design columns (or GP inputs) x (K-1)
};

struct ModelOptions {
  /// alpha holds standard-normal latents (non-centered) or the coefficient
  /// deviations themselves (centered).
  bool non_centered = true;
  /// Include log-Jacobians of the log-transformed scale parameters.
  bool jacobian = true;
};

/// Joint posterior of the hierarchical stacking model: mixture likelihood of
/// the pointwise LOO densities under input-dependent softmax weights, the
/// structured prior on the coefficients, and hyperpriors on mean and scales.
class StackingModel {
 public:
  StackingModel(const LpdMatrix& lpd, const FeatureSet& feats, PriorSpec prior,
                std::optional<TimeWeights> tw = std::nullopt,
                ModelOptions opts = {});

  Eigen::Index dim() const { return dim_; }
  Eigen::Index n() const { return n_; }
  Eigen::Index K() const { return K_; }
  Eigen::Index num_coefficients() const { return P_; }
  const PriorSpec& prior() const { return prior_; }
  const ModelOptions& options() const { return opts_; }
  const FeatureSet& features() const { return feats_; }
  const Matrix& lpd() const { return lpd_; }
  std::vector<std::string> parameter_names() const;

  UnconstrainedParams unpack(const Vector& theta) const;
  Vector pack(const UnconstrainedParams& p) const;
  /// All-zero parameter point of the right shape.
  UnconstrainedParams zeros() const;

  double log_posterior(const Vector& theta) const;
  double log_posterior(const Vector& theta, Vector* grad) const;

  /// Effective intercepts mu_k (including the sampled mu_0 shift).
  Vector effective_mu(const Vector& theta) const;
  /// Coefficient deviations alpha (P x (K-1), or U x (K-1) for the GP prior).
  Matrix effective_alpha(const Vector& theta) const;
  /// Linear predictor eta (n x (K-1)) at the training inputs.
  Matrix linear_predictor(const Vector& theta) const;
  /// Softmax weights (n x K) at the training inputs.
  SimplexWeights pointwise_weights(const Vector& theta) const;

  /// Linear predictor at new inputs. Unseen cells use alpha = 0 (the
  /// hierarchical mean) when `unseen_fallback`, otherwise they throw.
  Matrix predict_linear(const Vector& theta, const FeatureSet& new_feats,
                        bool unseen_fallback = true) const;

  /// Design columns at the training inputs ([one-hot | features]).
  const Matrix& design() const { return X_; }

  /// Prior scale of each coefficient (P x (K-1)); not defined for the GP prior.
  Matrix coefficient_scales(const Vector& theta) const;
  /// Scale-group of each design column (basic and grouped priors).
  const std::vector<int>& column_groups() const { return group_of_col_; }

 private:
  struct Layout {
    Eigen::Index mu = 0, mu0 = -1, log_sigma = 0, log_lambda = 0,
                 log_amp = 0, log_len = 0, alpha = 0;
    Eigen::Index sigma_groups = 0, n_lambda = 0, n_amp = 0, n_len = 0,
                 alpha_rows = 0;
  };
  struct GpFactor {
    Matrix K;  // kernel without jitter
    Matrix L;  // Cholesky of K + jitter I
  };

  double mu_location(const UnconstrainedParams& p) const;
  Matrix coefficient_scales(const UnconstrainedParams& p) const;
  GpFactor gp_factor(const UnconstrainedParams& p, Eigen::Index k) const;
  Matrix gp_kernel(const Matrix& a, const Matrix& b, double amp, double len) const;
  Matrix deviations(const UnconstrainedParams& p) const;
  Matrix eta_from(const UnconstrainedParams& p, const Matrix& dev) const;

  Matrix lpd_;
  FeatureSet feats_;
  PriorSpec prior_;
  ModelOptions opts_;
  Eigen::Index n_ = 0, K_ = 0, P_ = 0, dim_ = 0;
  Matrix X_;                      // n x P design
  std::vector<int> group_of_col_;  // scale group per design column
  Matrix omega_chol_;             // correlated prior
  double omega_logdet_ = 0.0;
  Matrix gp_inputs_;              // U x D unique GP inputs
  Matrix gp_sqdist_;              // U x U squared distances
  std::vector<int> gp_index_;     // observation -> unique input
  bool gp_on_cells_ = false;
  MixtureLikelihood lik_;
  Layout lay_;
};

/// Posterior draws of the hierarchical stacking model.
struct WeightDraws {
  std::shared_ptr<const StackingModel> model;
  Matrix draws;                // S x dim, chains stacked in order
  int chains = 1;
  SimplexWeights mean_weights;  // n x K posterior mean at training inputs
  Diagnostics diagnostics;
  std::vector<ChainStats> chain_stats;

  Eigen::Index size() const { return draws.rows(); }
  SimplexWeights weights_at(Eigen::Index s) const;
};

struct HierOptions {
  bool enforce_diagnostics = true;
  double max_rhat = 1.01;
  double min_ess = 100.0;
  double max_divergent_fraction = 0.10;
  ModelOptions model;
};

/// Samples the joint posterior with HMC and returns the draws together with
/// posterior-mean pointwise weights. Throws DiagnosticError when the
/// divergence fraction exceeds its limit, or (when enforced) when R-hat or
/// bulk ESS misses its threshold.
WeightDraws fit_hierarchical(const LpdMatrix& lpd, const FeatureSet& feats,
                             const PriorSpec& prior, const SamplerConfig& cfg,
                             const std::optional<TimeWeights>& tw = std::nullopt,
                             const HierOptions& opts = {});

/// Applies the divergence and (when enforced) R-hat / ESS checks of
/// HierOptions to a finished fit; throws DiagnosticError on failure.
void check_diagnostics(const WeightDraws& draws, const HierOptions& opts);

/// Wraps externally obtained draws (e.g. read back from disk).
WeightDraws make_weight_draws(std::shared_ptr<const StackingModel> model,
                              Matrix draws, int chains = 1);

/// Posterior-mean weights at new inputs: mean over draws of
/// softmax(mu + sum_m alpha_m f_m(x)).
SimplexWeights predict_weights(const WeightDraws& draws, const FeatureSet& new_feats,
                               bool unseen_fallback = true);

/// log(sum_k w_k exp(ld_k)) for one weight row.
double combine_predictions(const Vector& weights, const Vector& model_log_densities);

/// Maximum a posteriori fit of (mu, alpha) with all scales held fixed, in the
/// centered parameterization. Used for the flat-prior and concentrated-prior
/// limits of the hierarchical model.
struct MapFit {
  Vector theta;               // full centered parameter vector
  Vector mu;
  Matrix alpha;
  SimplexWeights weights;     // n x K
  SimplexWeights cell_weights;  // J x K when the input is cells only
  double value = 0.0;
  bool converged = false;
};

struct MapOptions {
  bool include_mu_prior = false;  // flat mu when false
  int max_iters = 500;
};

MapFit fit_map(const LpdMatrix& lpd, const FeatureSet& feats, const PriorSpec& prior,
               const Matrix& fixed_log_sigma, const MapOptions& opts = {});

}  // namespace hstack

#endif  // HSTACK_HIER_HPP
