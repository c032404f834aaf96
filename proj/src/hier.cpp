#include "hstack/hier.hpp"

#include "hstack/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>
#include <unordered_map>

namespace hstack {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double log_normal(double x, double s) {
  return -kHalfLog2Pi - std::log(s) - 0.5 * (x * x) / (s * s);
}

double log_half_normal(double x, double s) { return std::log(2.0) + log_normal(x, s); }

double log_inv_gamma(double x, double a, double b) {
  return a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(x) - b / x;
}

bool is_additive(PriorKind kind) {
  return kind == PriorKind::basic || kind == PriorKind::grouped ||
         kind == PriorKind::feature_decomposed;
}

// v^T Phi(Y) z where Phi keeps the lower triangle and halves the diagonal.
double lower_half_form(const Vector& v, const Matrix& Y, const Vector& z) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < Y.cols(); ++j) {
    s += 0.5 * v(j) * Y(j, j) * z(j);
    for (Eigen::Index i = j + 1; i < Y.rows(); ++i) s += v(i) * Y(i, j) * z(j);
  }
  return s;
}

void require_positive(double x, const char* name) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    std::ostringstream os;
    os << name << " must be positive and finite, got " << x;
    throw ValidationError("bad_prior", os.str());
  }
}

}  // namespace

std::string to_string(PriorKind kind) {
  switch (kind) {
    case PriorKind::basic: return "basic";
    case PriorKind::grouped: return "grouped";
    case PriorKind::feature_decomposed: return "feature_decomposed";
    case PriorKind::correlated: return "correlated";
    case PriorKind::gp: return "gp";
  }
  return "basic";
}

PriorKind prior_kind_from_string(const std::string& name) {
  if (name == "basic") return PriorKind::basic;
  if (name == "grouped") return PriorKind::grouped;
  if (name == "feature_decomposed" || name == "decomposed") return PriorKind::feature_decomposed;
  if (name == "correlated") return PriorKind::correlated;
  if (name == "gp") return PriorKind::gp;
  throw ValidationError("bad_prior", "unknown prior kind '" + name + "'");
}

std::string to_string(KernelKind kind) {
  return kind == KernelKind::exp_quad ? "exp_quad" : "zero_one";
}

KernelKind kernel_kind_from_string(const std::string& name) {
  if (name == "exp_quad") return KernelKind::exp_quad;
  if (name == "zero_one") return KernelKind::zero_one;
  throw ValidationError("bad_prior", "unknown kernel '" + name + "'");
}

PriorSpec build_prior(PriorKind kind, const PriorHyper& hyper) {
  PriorSpec spec;
  spec.kind = kind;
  if (hyper.tau_mu) spec.tau_mu = *hyper.tau_mu;
  if (hyper.scale_by_num_features) {
    if (*hyper.scale_by_num_features < 1)
      throw ValidationError("bad_prior", "feature count for scale must be >= 1");
    spec.tau_sigma =
        Vector::Constant(1, std::sqrt(1.0 / static_cast<double>(*hyper.scale_by_num_features)));
  }
  if (hyper.tau_sigma) spec.tau_sigma = *hyper.tau_sigma;
  if (hyper.mu0) spec.mu0 = *hyper.mu0;
  spec.sample_mu0 = hyper.sample_mu0;
  if (hyper.inv_gamma_a) spec.inv_gamma_a = *hyper.inv_gamma_a;
  if (hyper.inv_gamma_b) spec.inv_gamma_b = *hyper.inv_gamma_b;
  if (hyper.kernel) spec.kernel = *hyper.kernel;

  require_positive(spec.tau_mu, "tau_mu");
  if (spec.tau_sigma.size() == 0)
    throw ValidationError("bad_prior", "tau_sigma must have at least one entry");
  for (Eigen::Index g = 0; g < spec.tau_sigma.size(); ++g)
    require_positive(spec.tau_sigma(g), "tau_sigma");
  if (!std::isfinite(spec.mu0)) throw ValidationError("bad_prior", "mu0 must be finite");
  require_positive(spec.inv_gamma_a, "inv_gamma_a");
  require_positive(spec.inv_gamma_b, "inv_gamma_b");
  require_positive(spec.kernel.amplitude_scale, "kernel amplitude scale");
  require_positive(spec.kernel.length_shape, "kernel length shape");
  require_positive(spec.kernel.length_rate, "kernel length rate");

  if (kind == PriorKind::correlated) {
    if (!hyper.omega)
      throw ValidationError("bad_prior", "correlated prior needs a correlation matrix");
    const Matrix& om = *hyper.omega;
    if (om.rows() != om.cols() || om.rows() == 0)
      throw ValidationError("bad_prior", "correlation matrix must be square and non-empty");
    if (!om.allFinite() || (om - om.transpose()).cwiseAbs().maxCoeff() > 1e-10)
      throw ValidationError("bad_prior", "correlation matrix must be finite and symmetric");
    if ((om.diagonal().array() - 1.0).abs().maxCoeff() > 1e-10)
      throw ValidationError("bad_prior", "correlation matrix must have a unit diagonal");
    const double min_eig =
        Eigen::SelfAdjointEigenSolver<Matrix>(om, Eigen::EigenvaluesOnly).eigenvalues()(0);
    if (!(min_eig > 0.0)) {
      std::ostringstream os;
      os << "correlation matrix is not positive definite (smallest eigenvalue "
         << min_eig << ")";
      throw ValidationError("not_positive_definite", os.str());
    }
    spec.omega = om;
  } else if (hyper.omega) {
    throw ValidationError("bad_prior", "a correlation matrix is only used by the correlated prior");
  }
  return spec;
}

Vector TimeWeights::normalized() const {
  const double total = pi.sum();
  return pi * (static_cast<double>(pi.size()) / total);
}

TimeWeights time_reweight(const Vector& t, double horizon, double gamma) {
  require_positive(horizon, "horizon T");
  if (!(gamma >= 0.0) || !std::isfinite(gamma))
    throw ValidationError("bad_time_weights", "gamma must be finite and >= 0");
  TimeWeights tw;
  tw.gamma = gamma;
  tw.horizon = horizon;
  tw.pi.resize(t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    if (!(t(i) >= 0.0 && t(i) <= horizon)) {
      std::ostringstream os;
      os << "time t_" << i + 1 << " = " << t(i) << " outside [0, " << horizon << "]";
      throw ValidationError("bad_time_weights", os.str());
    }
    const double r = 1.0 - t(i) / horizon;
    tw.pi(i) = 1.0 + gamma - r * r;
  }
  if (!(tw.pi.sum() > 0.0))
    throw ValidationError("bad_time_weights", "time weights sum to zero");
  return tw;
}

StackingModel::StackingModel(const LpdMatrix& lpd, const FeatureSet& feats,
                             PriorSpec prior, std::optional<TimeWeights> tw,
                             ModelOptions opts)
    : prior_(std::move(prior)), opts_(opts) {
  if (lpd.K() < 2)
    throw ValidationError("too_few_models", "hierarchical stacking needs K >= 2 models");
  if (lpd.n() == 0) {
    // Prior-only model: the likelihood term vanishes.
    lpd_ = lpd.values;
    feats_ = feats;
    feats_.cells.resize(0);
    feats_.features.resize(0, feats.features.cols());
  } else {
    auto [data, fs] = validate(lpd, feats);
    lpd_ = data.values;
    feats_ = std::move(fs);
  }
  n_ = lpd_.rows();
  K_ = lpd_.cols();
  const Eigen::Index km1 = K_ - 1;
  const Eigen::Index J = feats_.num_cells();
  const Eigen::Index M = feats_.num_features();

  Vector pi;
  if (tw) {
    if (tw->pi.size() != n_) {
      std::ostringstream os;
      os << "time weights have length " << tw->pi.size() << " but lpd has n=" << n_;
      throw ValidationError("dimension_mismatch", os.str());
    }
    pi = tw->normalized();
  }
  if (n_ > 0) lik_ = MixtureLikelihood(lpd_, pi);

  Eigen::Index groups = 1;
  if (prior_.kind != PriorKind::gp) {
    P_ = J + M;
    X_ = Matrix::Zero(n_, P_);
    for (Eigen::Index i = 0; i < feats_.cells.size(); ++i) X_(i, feats_.cells(i)) = 1.0;
    if (M > 0 && n_ > 0) X_.rightCols(M) = feats_.features;
    group_of_col_.assign(static_cast<std::size_t>(P_), 0);
  }

  switch (prior_.kind) {
    case PriorKind::basic:
    case PriorKind::feature_decomposed:
      break;
    case PriorKind::grouped: {
      if (!feats_.group_of_feature.empty()) {
        if (static_cast<Eigen::Index>(feats_.group_of_feature.size()) != M)
          throw ValidationError("dimension_mismatch",
                                "group_of_feature length differs from feature count");
        int gmax = -1;
        for (int g : feats_.group_of_feature) {
          if (g < 0) throw ValidationError("bad_prior", "feature groups must be >= 0");
          gmax = std::max(gmax, g);
        }
        for (Eigen::Index m = 0; m < M; ++m)
          group_of_col_[static_cast<std::size_t>(J + m)] = feats_.group_of_feature[m];
        for (Eigen::Index j = 0; j < J; ++j) group_of_col_[static_cast<std::size_t>(j)] = gmax + 1;
        groups = gmax + 1 + (J > 0 ? 1 : 0);
      } else {
        for (Eigen::Index m = 0; m < M; ++m)
          group_of_col_[static_cast<std::size_t>(J + m)] = J > 0 ? 1 : 0;
        groups = std::max<Eigen::Index>(1, (J > 0 ? 1 : 0) + (M > 0 ? 1 : 0));
      }
      break;
    }
    case PriorKind::correlated: {
      if (M > 0 || J == 0)
        throw ValidationError("bad_prior", "the correlated prior needs a discrete cell input only");
      if (prior_.omega.rows() != J) {
        std::ostringstream os;
        os << "correlation matrix is " << prior_.omega.rows() << "x" << prior_.omega.cols()
           << " but the input has J=" << J << " cells";
        throw ValidationError("dimension_mismatch", os.str());
      }
      Eigen::LLT<Matrix> llt(prior_.omega);
      if (llt.info() != Eigen::Success)
        throw ValidationError("not_positive_definite", "correlation matrix is not positive definite");
      omega_chol_ = llt.matrixL();
      omega_logdet_ = 2.0 * omega_chol_.diagonal().array().log().sum();
      break;
    }
    case PriorKind::gp: {
      groups = 0;
      if (J > 0 && M > 0)
        throw ValidationError("bad_prior", "the gp prior takes either cells or continuous features");
      if (M > 0) {
        std::map<std::vector<double>, int> seen;
        std::vector<std::vector<double>> rows;
        gp_index_.resize(static_cast<std::size_t>(n_));
        for (Eigen::Index i = 0; i < n_; ++i) {
          std::vector<double> r(static_cast<std::size_t>(M));
          for (Eigen::Index m = 0; m < M; ++m) r[static_cast<std::size_t>(m)] = feats_.features(i, m);
          seen.emplace(r, 0);
          rows.push_back(std::move(r));
        }
        int u = 0;
        gp_inputs_.resize(static_cast<Eigen::Index>(seen.size()), M);
        for (auto& [key, idx] : seen) {
          idx = u;
          for (Eigen::Index m = 0; m < M; ++m) gp_inputs_(u, m) = key[static_cast<std::size_t>(m)];
          ++u;
        }
        for (Eigen::Index i = 0; i < n_; ++i)
          gp_index_[static_cast<std::size_t>(i)] = seen[rows[static_cast<std::size_t>(i)]];
      } else if (J > 0) {
        gp_on_cells_ = true;
        gp_inputs_.resize(J, 1);
        for (Eigen::Index j = 0; j < J; ++j) gp_inputs_(j, 0) = static_cast<double>(j);
        gp_index_.assign(feats_.cells.data(), feats_.cells.data() + feats_.cells.size());
      } else {
        throw ValidationError("bad_prior", "the gp prior needs cells or continuous features");
      }
      const Eigen::Index U = gp_inputs_.rows();
      gp_sqdist_.resize(U, U);
      for (Eigen::Index a = 0; a < U; ++a)
        for (Eigen::Index b = 0; b < U; ++b)
          gp_sqdist_(a, b) = (gp_inputs_.row(a) - gp_inputs_.row(b)).squaredNorm();
      P_ = U;
      break;
    }
  }

  if (prior_.kind != PriorKind::gp && prior_.tau_sigma.size() != 1 &&
      prior_.tau_sigma.size() != groups) {
    std::ostringstream os;
    os << "tau_sigma has " << prior_.tau_sigma.size() << " entries but the prior has "
       << groups << " scale groups";
    throw ValidationError("dimension_mismatch", os.str());
  }

  Eigen::Index at = 0;
  lay_.mu = at;
  at += km1;
  if (prior_.sample_mu0) lay_.mu0 = at++;
  lay_.sigma_groups = groups;
  lay_.log_sigma = at;
  at += groups * km1;
  lay_.n_lambda = prior_.kind == PriorKind::feature_decomposed ? P_ : 0;
  lay_.log_lambda = at;
  at += lay_.n_lambda;
  lay_.n_amp = prior_.kind == PriorKind::gp ? km1 : 0;
  lay_.log_amp = at;
  at += lay_.n_amp;
  lay_.n_len = prior_.kind == PriorKind::gp && prior_.kernel.kind == KernelKind::exp_quad ? km1 : 0;
  lay_.log_len = at;
  at += lay_.n_len;
  lay_.alpha_rows = P_;
  lay_.alpha = at;
  at += P_ * km1;
  dim_ = at;
}

std::vector<std::string> StackingModel::parameter_names() const {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(dim_));
  const Eigen::Index km1 = K_ - 1;
  auto idx = [](Eigen::Index a) { return std::to_string(a + 1); };
  for (Eigen::Index k = 0; k < km1; ++k) names.push_back("mu." + idx(k));
  if (prior_.sample_mu0) names.push_back("mu0");
  for (Eigen::Index k = 0; k < km1; ++k)
    for (Eigen::Index g = 0; g < lay_.sigma_groups; ++g)
      names.push_back("log_sigma." + idx(g) + "." + idx(k));
  for (Eigen::Index m = 0; m < lay_.n_lambda; ++m) names.push_back("log_lambda." + idx(m));
  for (Eigen::Index k = 0; k < lay_.n_amp; ++k) names.push_back("log_amplitude." + idx(k));
  for (Eigen::Index k = 0; k < lay_.n_len; ++k) names.push_back("log_length." + idx(k));
  const std::string a = opts_.non_centered ? "z." : "alpha.";
  for (Eigen::Index k = 0; k < km1; ++k)
    for (Eigen::Index m = 0; m < P_; ++m) names.push_back(a + idx(m) + "." + idx(k));
  return names;
}

UnconstrainedParams StackingModel::zeros() const {
  const Eigen::Index km1 = K_ - 1;
  UnconstrainedParams p;
  p.mu = Vector::Zero(km1);
  p.log_sigma = Matrix::Zero(lay_.sigma_groups, km1);
  p.log_lambda = Vector::Zero(lay_.n_lambda);
  p.log_amplitude = Vector::Zero(lay_.n_amp);
  p.log_length = Vector::Zero(lay_.n_len);
  p.alpha = Matrix::Zero(P_, km1);
  return p;
}

UnconstrainedParams StackingModel::unpack(const Vector& theta) const {
  if (theta.size() != dim_) {
    std::ostringstream os;
    os << "parameter vector has length " << theta.size() << ", model expects " << dim_;
    throw ValidationError("dimension_mismatch", os.str());
  }
  const Eigen::Index km1 = K_ - 1;
  UnconstrainedParams p;
  p.mu = theta.segment(lay_.mu, km1);
  if (lay_.mu0 >= 0) p.mu0_raw = theta(lay_.mu0);
  p.log_sigma = Eigen::Map<const Matrix>(theta.data() + lay_.log_sigma, lay_.sigma_groups, km1);
  p.log_lambda = theta.segment(lay_.log_lambda, lay_.n_lambda);
  p.log_amplitude = theta.segment(lay_.log_amp, lay_.n_amp);
  p.log_length = theta.segment(lay_.log_len, lay_.n_len);
  p.alpha = Eigen::Map<const Matrix>(theta.data() + lay_.alpha, P_, km1);
  return p;
}

Vector StackingModel::pack(const UnconstrainedParams& p) const {
  const Eigen::Index km1 = K_ - 1;
  if (p.mu.size() != km1 || p.log_sigma.rows() != lay_.sigma_groups ||
      (lay_.sigma_groups > 0 && p.log_sigma.cols() != km1) ||
      p.log_lambda.size() != lay_.n_lambda || p.log_amplitude.size() != lay_.n_amp ||
      p.log_length.size() != lay_.n_len || p.alpha.rows() != P_ ||
      (P_ > 0 && p.alpha.cols() != km1))
    throw ValidationError("dimension_mismatch", "parameter blocks do not match the model layout");
  Vector theta(dim_);
  theta.segment(lay_.mu, km1) = p.mu;
  if (lay_.mu0 >= 0) theta(lay_.mu0) = p.mu0_raw;
  Eigen::Map<Matrix>(theta.data() + lay_.log_sigma, lay_.sigma_groups, km1) = p.log_sigma;
  theta.segment(lay_.log_lambda, lay_.n_lambda) = p.log_lambda;
  theta.segment(lay_.log_amp, lay_.n_amp) = p.log_amplitude;
  theta.segment(lay_.log_len, lay_.n_len) = p.log_length;
  Eigen::Map<Matrix>(theta.data() + lay_.alpha, P_, km1) = p.alpha;
  return theta;
}

double StackingModel::mu_location(const UnconstrainedParams& p) const {
  return prior_.mu0 + (prior_.sample_mu0 ? prior_.tau_mu * p.mu0_raw : 0.0);
}

Matrix StackingModel::coefficient_scales(const Vector& theta) const {
  if (prior_.kind == PriorKind::gp)
    throw ValidationError("bad_prior", "coefficient scales are not defined for the gp prior");
  const UnconstrainedParams p = unpack(theta);
  const Eigen::Index km1 = K_ - 1;
  Matrix s(P_, km1);
  for (Eigen::Index k = 0; k < km1; ++k)
    for (Eigen::Index m = 0; m < P_; ++m) {
      double ls = p.log_sigma(group_of_col_[static_cast<std::size_t>(m)], k);
      if (prior_.kind == PriorKind::feature_decomposed) ls += p.log_lambda(m);
      s(m, k) = std::exp(ls);
    }
  return s;
}

Matrix StackingModel::gp_kernel(const Matrix& a, const Matrix& b, double amp,
                                double len) const {
  Matrix k(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      const double sq = (a.row(i) - b.row(j)).squaredNorm();
      k(i, j) = prior_.kernel.kind == KernelKind::exp_quad
                    ? amp * std::exp(-sq / (len * len))
                    : (sq == 0.0 ? amp * amp : 0.0);
    }
  return k;
}

StackingModel::GpFactor StackingModel::gp_factor(const UnconstrainedParams& p,
                                                 Eigen::Index k) const {
  GpFactor f;
  const double amp = std::exp(p.log_amplitude(k));
  const double len = lay_.n_len > 0 ? std::exp(p.log_length(k)) : 1.0;
  const Eigen::Index U = gp_inputs_.rows();
  if (prior_.kernel.kind == KernelKind::exp_quad)
    f.K = amp * (-gp_sqdist_.array() / (len * len)).exp().matrix();
  else
    f.K = (gp_sqdist_.array() == 0.0).cast<double>().matrix() * (amp * amp);
  Matrix Kj = f.K;
  Kj.diagonal().array() += prior_.jitter;
  Eigen::LLT<Matrix> llt(Kj);
  if (llt.info() == Eigen::Success && std::isfinite(amp) && std::isfinite(len))
    f.L = llt.matrixL();
  else
    f.L.resize(0, U);
  return f;
}

Matrix StackingModel::deviations(const UnconstrainedParams& p) const {
  const Eigen::Index km1 = K_ - 1;
  if (!opts_.non_centered) return p.alpha;
  switch (prior_.kind) {
    case PriorKind::correlated: {
      Matrix dev = omega_chol_ * p.alpha;
      for (Eigen::Index k = 0; k < km1; ++k) dev.col(k) *= std::exp(p.log_sigma(0, k));
      return dev;
    }
    case PriorKind::gp: {
      Matrix dev(P_, km1);
      for (Eigen::Index k = 0; k < km1; ++k) {
        const GpFactor f = gp_factor(p, k);
        if (f.L.rows() == 0) return Matrix::Constant(P_, km1, std::nan(""));
        dev.col(k) = f.L * p.alpha.col(k);
      }
      return dev;
    }
    default:
      return coefficient_scales(pack(p)).cwiseProduct(p.alpha);
  }
}

Matrix StackingModel::eta_from(const UnconstrainedParams& p, const Matrix& dev) const {
  Matrix eta = Vector::Ones(n_) * p.mu.transpose();
  if (prior_.kind == PriorKind::gp) {
    for (Eigen::Index i = 0; i < n_; ++i) eta.row(i) += dev.row(gp_index_[static_cast<std::size_t>(i)]);
  } else if (P_ > 0 && n_ > 0) {
    eta += X_ * dev;
  }
  return eta;
}

double StackingModel::log_posterior(const Vector& theta) const {
  return log_posterior(theta, nullptr);
}

double StackingModel::log_posterior(const Vector& theta, Vector* grad) const {
  const UnconstrainedParams p = unpack(theta);
  const Eigen::Index km1 = K_ - 1;
  const double ninf = -std::numeric_limits<double>::infinity();
  const double jac = opts_.jacobian ? 1.0 : 0.0;
  UnconstrainedParams g = zeros();
  double lp = 0.0;

  // Population mean.
  const double tmu = prior_.tau_mu;
  const double loc = mu_location(p);
  for (Eigen::Index k = 0; k < km1; ++k) {
    const double d = p.mu(k) - loc;
    lp += log_normal(d, tmu);
    g.mu(k) -= d / (tmu * tmu);
    if (prior_.sample_mu0) g.mu0_raw += d / tmu;
  }
  if (prior_.sample_mu0) {
    lp += log_normal(p.mu0_raw, 1.0);
    g.mu0_raw -= p.mu0_raw;
  }

  // Scale hyperpriors on the log scale.
  for (Eigen::Index s = 0; s < lay_.sigma_groups; ++s) {
    const double tau = prior_.tau_sigma(prior_.tau_sigma.size() == 1 ? 0 : s);
    for (Eigen::Index k = 0; k < km1; ++k) {
      const double ls = p.log_sigma(s, k), sig = std::exp(ls);
      lp += log_half_normal(sig, tau) + jac * ls;
      g.log_sigma(s, k) += -(sig * sig) / (tau * tau) + jac;
    }
  }
  for (Eigen::Index m = 0; m < lay_.n_lambda; ++m) {
    const double ll = p.log_lambda(m), lam = std::exp(ll);
    lp += log_inv_gamma(lam, prior_.inv_gamma_a, prior_.inv_gamma_b) + jac * ll;
    g.log_lambda(m) += -(prior_.inv_gamma_a + 1.0) + prior_.inv_gamma_b / lam + jac;
  }
  const double amp_scale = prior_.kernel.kind == KernelKind::exp_quad
                               ? prior_.kernel.amplitude_scale
                               : prior_.tau_sigma(0);
  for (Eigen::Index k = 0; k < lay_.n_amp; ++k) {
    const double la = p.log_amplitude(k), a = std::exp(la);
    lp += log_half_normal(a, amp_scale) + jac * la;
    g.log_amplitude(k) += -(a * a) / (amp_scale * amp_scale) + jac;
  }
  for (Eigen::Index k = 0; k < lay_.n_len; ++k) {
    const double ll = p.log_length(k), len = std::exp(ll);
    lp += log_inv_gamma(len, prior_.kernel.length_shape, prior_.kernel.length_rate) + jac * ll;
    g.log_length(k) += -(prior_.kernel.length_shape + 1.0) + prior_.kernel.length_rate / len + jac;
  }
  if (!std::isfinite(lp)) return ninf;

  // Coefficients and likelihood.
  std::vector<GpFactor> gpf;
  Matrix dev;
  if (prior_.kind == PriorKind::gp) {
    gpf.reserve(static_cast<std::size_t>(km1));
    dev.resize(P_, km1);
    for (Eigen::Index k = 0; k < km1; ++k) {
      gpf.push_back(gp_factor(p, k));
      if (gpf.back().L.rows() == 0) return ninf;
      dev.col(k) = opts_.non_centered ? Vector(gpf.back().L * p.alpha.col(k))
                                      : Vector(p.alpha.col(k));
    }
  } else {
    dev = deviations(p);
  }
  Matrix A = Matrix::Zero(P_, km1);  // d loglik / d dev
  if (n_ > 0) {
    const Matrix eta = eta_from(p, dev);
    if (!eta.allFinite()) return ninf;
    Matrix geta;
    lp += lik_.value_and_gradient(eta, geta);
    g.mu += geta.colwise().sum().transpose();
    if (prior_.kind == PriorKind::gp) {
      for (Eigen::Index i = 0; i < n_; ++i) A.row(gp_index_[static_cast<std::size_t>(i)]) += geta.row(i);
    } else if (P_ > 0) {
      A = X_.transpose() * geta;
    }
  }

  if (is_additive(prior_.kind)) {
    const Matrix s = coefficient_scales(theta);
    Matrix dlogs(P_, km1);
    if (opts_.non_centered) {
      const Matrix& z = p.alpha;
      lp += -kHalfLog2Pi * static_cast<double>(z.size()) - 0.5 * z.squaredNorm();
      g.alpha = s.cwiseProduct(A) - z;
      dlogs = A.cwiseProduct(dev);
    } else {
      const Matrix& a = p.alpha;
      const Matrix r = a.cwiseQuotient(s);
      lp += -kHalfLog2Pi * static_cast<double>(a.size()) - s.array().log().sum() -
            0.5 * r.squaredNorm();
      g.alpha = A - r.cwiseQuotient(s);
      dlogs = (r.array().square() - 1.0).matrix();
    }
    for (Eigen::Index k = 0; k < km1; ++k)
      for (Eigen::Index m = 0; m < P_; ++m) {
        if (prior_.kind == PriorKind::feature_decomposed) {
          g.log_sigma(0, k) += dlogs(m, k);
          g.log_lambda(m) += dlogs(m, k);
        } else {
          g.log_sigma(group_of_col_[static_cast<std::size_t>(m)], k) += dlogs(m, k);
        }
      }
  } else if (prior_.kind == PriorKind::correlated) {
    const double J = static_cast<double>(P_);
    const auto L = omega_chol_.triangularView<Eigen::Lower>();
    for (Eigen::Index k = 0; k < km1; ++k) {
      const double sig = std::exp(p.log_sigma(0, k));
      if (opts_.non_centered) {
        const Vector z = p.alpha.col(k);
        lp += -kHalfLog2Pi * J - 0.5 * z.squaredNorm();
        g.alpha.col(k) = sig * (omega_chol_.transpose() * A.col(k)) - z;
        g.log_sigma(0, k) += A.col(k).dot(dev.col(k));
      } else {
        const Vector a = p.alpha.col(k);
        const Vector y = L.solve(a);
        const double quad = y.squaredNorm();
        lp += -J * std::log(sig) - 0.5 * omega_logdet_ - kHalfLog2Pi * J -
              0.5 * quad / (sig * sig);
        const Vector beta = omega_chol_.transpose().triangularView<Eigen::Upper>().solve(y);
        g.alpha.col(k) = A.col(k) - beta / (sig * sig);
        g.log_sigma(0, k) += -J + quad / (sig * sig);
      }
    }
  } else {  // gp
    const double U = static_cast<double>(P_);
    const bool eq = prior_.kernel.kind == KernelKind::exp_quad;
    for (Eigen::Index k = 0; k < km1; ++k) {
      const Matrix& Kk = gpf[static_cast<std::size_t>(k)].K;
      const Matrix& Lm = gpf[static_cast<std::size_t>(k)].L;
      const auto L = Lm.triangularView<Eigen::Lower>();
      std::vector<Matrix> dK;
      dK.push_back(eq ? Kk : Matrix(2.0 * Kk));
      if (eq) {
        const double len = std::exp(p.log_length(k));
        dK.push_back(Kk.cwiseProduct(gp_sqdist_) * (2.0 / (len * len)));
      }
      std::vector<double> dtheta(dK.size(), 0.0);
      if (opts_.non_centered) {
        const Vector z = p.alpha.col(k);
        lp += -kHalfLog2Pi * U - 0.5 * z.squaredNorm();
        const Vector v = Lm.transpose() * A.col(k);
        g.alpha.col(k) = v - z;
        for (std::size_t h = 0; h < dK.size(); ++h) {
          const Matrix Y1 = L.solve(dK[h]);
          const Matrix Y = L.solve(Matrix(Y1.transpose()));
          dtheta[h] = lower_half_form(v, Y, z);
        }
      } else {
        const Vector a = p.alpha.col(k);
        const Vector y = L.solve(a);
        lp += -Lm.diagonal().array().log().sum() - kHalfLog2Pi * U - 0.5 * y.squaredNorm();
        const Vector beta = Lm.transpose().triangularView<Eigen::Upper>().solve(y);
        g.alpha.col(k) = A.col(k) - beta;
        const Matrix Linv = L.solve(Matrix::Identity(P_, P_));
        const Matrix Kinv = Linv.transpose() * Linv;
        for (std::size_t h = 0; h < dK.size(); ++h)
          dtheta[h] = 0.5 * (beta.dot(dK[h] * beta) - Kinv.cwiseProduct(dK[h]).sum());
      }
      g.log_amplitude(k) += dtheta[0];
      if (eq) g.log_length(k) += dtheta[1];
    }
  }

  if (!std::isfinite(lp)) return ninf;
  if (grad) *grad = pack(g);
  return lp;
}

Vector StackingModel::effective_mu(const Vector& theta) const { return unpack(theta).mu; }

Matrix StackingModel::effective_alpha(const Vector& theta) const {
  return deviations(unpack(theta));
}

Matrix StackingModel::linear_predictor(const Vector& theta) const {
  const UnconstrainedParams p = unpack(theta);
  return eta_from(p, deviations(p));
}

SimplexWeights StackingModel::pointwise_weights(const Vector& theta) const {
  const Matrix eta = linear_predictor(theta);
  SimplexWeights w(n_, K_);
  for (Eigen::Index i = 0; i < n_; ++i)
    w.row(i) = softmax_weights(eta.row(i).transpose()).transpose();
  return w;
}

Matrix StackingModel::predict_linear(const Vector& theta, const FeatureSet& nf,
                                     bool unseen_fallback) const {
  const UnconstrainedParams p = unpack(theta);
  const Eigen::Index km1 = K_ - 1;
  const Eigen::Index J = feats_.num_cells(), M = feats_.num_features();
  const bool cells_in = prior_.kind == PriorKind::gp ? gp_on_cells_ : J > 0;
  const Eigen::Index m = nf.n();
  const Matrix dev = deviations(p);
  Matrix eta = Vector::Ones(m) * p.mu.transpose();

  if (cells_in) {
    if (!nf.has_cells() && m > 0)
      throw ValidationError("missing_cells", "model was trained with a cell index");
    std::unordered_map<long, Eigen::Index> pos;
    for (Eigen::Index j = 0; j < J; ++j) pos[feats_.cell_labels[static_cast<std::size_t>(j)]] = j;
    for (Eigen::Index i = 0; i < m; ++i) {
      const int c = nf.cells(i);
      const long label = nf.cell_labels.empty() ? c : nf.cell_labels[static_cast<std::size_t>(c)];
      const auto it = pos.find(label);
      if (it == pos.end()) {
        if (!unseen_fallback) {
          std::ostringstream os;
          os << "cell " << label << " was not seen in training";
          throw ValidationError("unseen_cell", os.str());
        }
        continue;
      }
      eta.row(i) += dev.row(it->second);
    }
  }
  const Eigen::Index Mf = prior_.kind == PriorKind::gp ? (gp_on_cells_ ? 0 : gp_inputs_.cols()) : M;
  if (Mf > 0) {
    if (nf.features.cols() != Mf || nf.features.rows() != m) {
      std::ostringstream os;
      os << "new inputs have " << nf.features.cols() << " feature columns, model expects " << Mf;
      throw ValidationError("dimension_mismatch", os.str());
    }
    if (prior_.kind == PriorKind::gp) {
      for (Eigen::Index k = 0; k < km1; ++k) {
        const GpFactor f = gp_factor(p, k);
        const double amp = std::exp(p.log_amplitude(k));
        const double len = lay_.n_len > 0 ? std::exp(p.log_length(k)) : 1.0;
        const Matrix Ks = gp_kernel(nf.features, gp_inputs_, amp, len);
        const auto L = f.L.triangularView<Eigen::Lower>();
        const Vector coef =
            f.L.transpose().triangularView<Eigen::Upper>().solve(Vector(L.solve(dev.col(k))));
        eta.col(k) += Ks * coef;
      }
    } else {
      eta += nf.features * dev.bottomRows(M);
    }
  }
  return eta;
}

SimplexWeights WeightDraws::weights_at(Eigen::Index s) const {
  return model->pointwise_weights(draws.row(s).transpose());
}

WeightDraws make_weight_draws(std::shared_ptr<const StackingModel> model, Matrix draws,
                              int chains) {
  if (draws.cols() != model->dim()) {
    std::ostringstream os;
    os << "draws have " << draws.cols() << " columns, model expects " << model->dim();
    throw ValidationError("dimension_mismatch", os.str());
  }
  if (draws.rows() == 0) throw ValidationError("empty_input", "no posterior draws");
  if (!draws.allFinite()) throw ValidationError("non_finite", "posterior draws contain non-finite values");
  WeightDraws out;
  out.model = std::move(model);
  out.draws = std::move(draws);
  out.chains = std::max(1, chains);
  out.mean_weights = SimplexWeights::Zero(out.model->n(), out.model->K());
  for (Eigen::Index s = 0; s < out.draws.rows(); ++s) out.mean_weights += out.weights_at(s);
  out.mean_weights /= static_cast<double>(out.draws.rows());
  if (out.draws.rows() % out.chains == 0 && out.draws.rows() / out.chains >= 4) {
    const Eigen::Index per = out.draws.rows() / out.chains;
    std::vector<Matrix> split;
    for (int c = 0; c < out.chains; ++c) split.push_back(out.draws.middleRows(c * per, per));
    out.diagnostics = diagnostics(split);
  }
  return out;
}

void check_diagnostics(const WeightDraws& d, const HierOptions& opts) {
  const Diagnostics& dg = d.diagnostics;
  if (dg.total_draws > 0) {
    const double frac = static_cast<double>(dg.divergences) / dg.total_draws;
    if (frac > opts.max_divergent_fraction) {
      std::ostringstream os;
      os << dg.divergences << " of " << dg.total_draws
         << " transitions diverged; raise target_accept or use the non-centered "
            "parameterization";
      throw DiagnosticError(os.str());
    }
  }
  if (!opts.enforce_diagnostics) return;
  const double rhat = dg.max_rhat();
  if (d.chains >= 2 && !(rhat < opts.max_rhat)) {
    std::ostringstream os;
    os << "max R-hat " << rhat << " is not below " << opts.max_rhat;
    throw DiagnosticError(os.str());
  }
  const double ess = dg.min_ess_bulk();
  if (dg.ess_bulk.size() > 0 && !(ess > opts.min_ess)) {
    std::ostringstream os;
    os << "min bulk ESS " << ess << " is not above " << opts.min_ess;
    throw DiagnosticError(os.str());
  }
}

WeightDraws fit_hierarchical(const LpdMatrix& lpd, const FeatureSet& feats,
                             const PriorSpec& prior, const SamplerConfig& cfg,
                             const std::optional<TimeWeights>& tw, const HierOptions& opts) {
  check_config(cfg);
  auto model = std::make_shared<const StackingModel>(lpd, feats, prior, tw, opts.model);
  const LogDensityFn logp = [model](const Vector& x, Vector* g) {
    return model->log_posterior(x, g);
  };
  const SampleResult r = sample(logp, model->pack(model->zeros()), cfg);
  WeightDraws out = make_weight_draws(model, r.merged(), cfg.chains);
  out.diagnostics = r.diagnostics;
  out.chain_stats = r.stats;
  check_diagnostics(out, opts);
  return out;
}

SimplexWeights predict_weights(const WeightDraws& d, const FeatureSet& nf,
                               bool unseen_fallback) {
  const Eigen::Index m = nf.n(), K = d.model->K();
  SimplexWeights w = SimplexWeights::Zero(m, K);
  for (Eigen::Index s = 0; s < d.size(); ++s) {
    const Matrix eta = d.model->predict_linear(d.draws.row(s).transpose(), nf, unseen_fallback);
    for (Eigen::Index i = 0; i < m; ++i)
      w.row(i) += softmax_weights(eta.row(i).transpose()).transpose();
  }
  return w / static_cast<double>(d.size());
}

double combine_predictions(const Vector& weights, const Vector& lds) {
  if (weights.size() != lds.size())
    throw ValidationError("dimension_mismatch", "weights and densities differ in length");
  return combine_log_density(weights, lds);
}

MapFit fit_map(const LpdMatrix& lpd, const FeatureSet& feats, const PriorSpec& prior,
               const Matrix& fixed_log_sigma, const MapOptions& opts) {
  if (!is_additive(prior.kind))
    throw ValidationError("bad_prior",
                          "fixed-scale MAP supports the basic, grouped and decomposed priors");
  ModelOptions mo;
  mo.non_centered = false;
  mo.jacobian = false;
  const StackingModel model(lpd, feats, prior, std::nullopt, mo);
  UnconstrainedParams base = model.zeros();
  if (fixed_log_sigma.rows() != base.log_sigma.rows() ||
      fixed_log_sigma.cols() != base.log_sigma.cols())
    throw ValidationError("dimension_mismatch", "fixed log scales do not match the prior's groups");
  base.log_sigma = fixed_log_sigma;
  const Matrix s = model.coefficient_scales(model.pack(base));
  const Eigen::Index n = model.n(), P = model.num_coefficients(), km1 = model.K() - 1;
  const Eigen::Index rows = P + 1;
  Matrix X1(n, rows);
  X1.col(0).setOnes();
  if (P > 0) X1.rightCols(P) = model.design();
  const MixtureLikelihood lik(model.lpd());
  const double tmu = prior.tau_mu;

  SmoothObjective obj = [&](const Vector& x, Vector* grad, Matrix* hess) {
    const Eigen::Map<const Matrix> B(x.data(), rows, km1);
    const Matrix eta = X1 * B;
    Matrix geta;
    double v = lik.value_and_gradient(eta, geta);
    const Matrix alpha = B.bottomRows(P);
    const Matrix r = alpha.cwiseQuotient(s);
    v += -kHalfLog2Pi * static_cast<double>(alpha.size()) - s.array().log().sum() -
         0.5 * r.squaredNorm();
    if (opts.include_mu_prior)
      for (Eigen::Index k = 0; k < km1; ++k) v += log_normal(B(0, k) - prior.mu0, tmu);
    if (grad) {
      Matrix gB = X1.transpose() * geta;
      gB.bottomRows(P) -= r.cwiseQuotient(s);
      if (opts.include_mu_prior)
        gB.row(0) -= ((B.row(0).array() - prior.mu0) / (tmu * tmu)).matrix();
      *grad = Eigen::Map<const Vector>(gB.data(), gB.size());
    }
    if (hess) {
      *hess = additive_loglik_hessian(lik, X1, eta);
      for (Eigen::Index k = 0; k < km1; ++k) {
        for (Eigen::Index m = 0; m < P; ++m)
          (*hess)(1 + m + rows * k, 1 + m + rows * k) -= 1.0 / (s(m, k) * s(m, k));
        if (opts.include_mu_prior) (*hess)(rows * k, rows * k) -= 1.0 / (tmu * tmu);
      }
    }
    return v;
  };

  NewtonOptions nopts;
  nopts.max_iters = opts.max_iters;
  const NewtonResult res = maximize_newton(obj, Vector::Zero(rows * km1), nopts);

  MapFit fit;
  const Eigen::Map<const Matrix> B(res.x.data(), rows, km1);
  base.mu = B.row(0).transpose();
  base.alpha = B.bottomRows(P);
  fit.theta = model.pack(base);
  fit.mu = base.mu;
  fit.alpha = base.alpha;
  fit.weights = model.pointwise_weights(fit.theta);
  const Eigen::Index J = model.features().num_cells();
  if (J > 0 && model.features().num_features() == 0) {
    fit.cell_weights.resize(J, model.K());
    for (Eigen::Index j = 0; j < J; ++j)
      fit.cell_weights.row(j) =
          softmax_weights(Vector(base.mu + base.alpha.row(j).transpose())).transpose();
  }
  fit.value = res.value;
  fit.converged = res.converged;
  return fit;
}

}  // namespace hstack
