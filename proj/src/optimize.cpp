#include "hstack/optimize.hpp"

#include <algorithm>
#include <sstream>

namespace hstack {

StackingFit fit_complete_pooling(const Matrix& lpd, const FitOptions& opts,
                                 const Vector& row_weights) {
  if (opts.max_iters < 1 || !(opts.tol > 0.0))
    throw ValidationError("bad_options", "max_iters must be >= 1 and tol > 0");
  const Eigen::Index n = lpd.rows(), K = lpd.cols();
  if (K < 1 || n < 1)
    throw ValidationError("empty_input", "lpd matrix is empty");
  Vector pi = row_weights.size() == 0 ? Vector::Ones(n) : row_weights;
  if (pi.size() != n)
    throw ValidationError("dimension_mismatch", "row weights length differs from n");

  const Vector row_max = lpd.rowwise().maxCoeff();
  for (Eigen::Index i = 0; i < n; ++i)
    if (!std::isfinite(row_max(i))) {
      std::ostringstream os;
      os << "observation " << i + 1
         << " has zero density under every model (log of zero mixture)";
      throw ValidationError("zero_mixture", os.str());
    }
  const Matrix dens = (lpd.colwise() - row_max).array().exp().matrix();
  const double mass = pi.sum();
  const double offset = pi.dot(row_max);

  StackingFit fit;
  fit.method = "complete";
  Vector w = Vector::Constant(K, 1.0 / static_cast<double>(K));
  auto objective = [&](const Vector& mix) {
    double s = offset;
    for (Eigen::Index i = 0; i < n; ++i)
      if (pi(i) != 0.0) s += pi(i) * std::log(mix(i));
    return s;
  };
  Vector mix = dens * w;
  double obj = objective(mix);
  if (opts.record_trace) fit.trace.push_back(obj);

  for (int it = 1; it <= opts.max_iters; ++it) {
    // g_k = (1/mass) sum_i pi_i p_ik / mix_i; EM sets w_k <- w_k g_k.
    const Vector ratio = pi.cwiseQuotient(mix);
    const Vector g = dens.transpose() * ratio / mass;
    w = w.cwiseProduct(g);
    w /= w.sum();
    mix = dens * w;
    const double next = objective(mix);
    if (opts.record_trace) fit.trace.push_back(next);
    const double rel = std::abs(next - obj) / std::max(1.0, std::abs(next));
    obj = next;
    fit.iters = it;
    // Optimality gap certificate: f(w*) - f(w) <= mass * (max_k g_k - 1).
    const Vector g_new = dens.transpose() * pi.cwiseQuotient(mix) / mass;
    const double gap = g_new.maxCoeff() - 1.0;
    if (rel < opts.tol && gap < 1e-7) {
      fit.converged = true;
      break;
    }
  }
  fit.weights = w.transpose();
  fit.objective = obj;
  return fit;
}

StackingFit fit_complete_pooling(const LpdMatrix& lpd, const FitOptions& opts) {
  validate_lpd(lpd);
  return fit_complete_pooling(lpd.values, opts);
}

StackingFit fit_no_pooling(const LpdMatrix& lpd, const FeatureSet& feats,
                           const FitOptions& opts) {
  validate_lpd(lpd);
  if (!feats.has_cells())
    throw ValidationError("missing_cells", "no-pooling stacking needs a cell index");
  if (feats.cells.size() != lpd.n()) {
    std::ostringstream os;
    os << "lpd has n=" << lpd.n() << " observations but cell index has n="
       << feats.cells.size();
    throw ValidationError("dimension_mismatch", os.str());
  }
  const int J = std::max(feats.num_cells(), feats.cells.maxCoeff() + 1);
  std::vector<std::vector<Eigen::Index>> rows(J);
  for (Eigen::Index i = 0; i < lpd.n(); ++i) rows[feats.cells(i)].push_back(i);
  std::vector<long> empty;
  for (int j = 0; j < J; ++j)
    if (rows[j].empty())
      empty.push_back(feats.num_cells() > 0 ? feats.cell_labels[j] : j);
  if (!empty.empty()) {
    std::ostringstream os;
    os << "empty cells:";
    for (long c : empty) os << ' ' << c;
    throw ValidationError("empty_cell", os.str());
  }

  StackingFit fit;
  fit.method = "nopool";
  fit.weights.resize(J, lpd.K());
  fit.converged = true;
  for (int j = 0; j < J; ++j) {
    Matrix sub(static_cast<Eigen::Index>(rows[j].size()), lpd.K());
    for (std::size_t r = 0; r < rows[j].size(); ++r)
      sub.row(static_cast<Eigen::Index>(r)) = lpd.values.row(rows[j][r]);
    const StackingFit cell = fit_complete_pooling(sub, opts);
    fit.weights.row(j) = cell.weights;
    fit.objective += cell.objective;
    fit.iters = std::max(fit.iters, cell.iters);
    fit.converged = fit.converged && cell.converged;
  }
  return fit;
}

NewtonResult maximize_newton(const SmoothObjective& f, Vector x0,
                             const NewtonOptions& opts) {
  const Eigen::Index d = x0.size();
  const double cap = opts.bound;
  if (cap > 0.0) x0 = x0.cwiseMax(-cap).cwiseMin(cap);
  NewtonResult res;
  res.x = std::move(x0);
  Vector g(d);
  Matrix H(d, d);
  res.value = f(res.x, &g, &H);
  double lambda = 1e-3;

  for (int it = 1; it <= opts.max_iters; ++it) {
    res.iters = it;
    std::vector<Eigen::Index> free;
    for (Eigen::Index j = 0; j < d; ++j) {
      const bool pinned = cap > 0.0 && std::abs(res.x(j)) >= cap - 1e-12 &&
                          g(j) * res.x(j) > 0.0;
      if (!pinned) free.push_back(j);
    }
    const auto nf = static_cast<Eigen::Index>(free.size());
    double gmax = 0.0;
    for (Eigen::Index a = 0; a < nf; ++a) gmax = std::max(gmax, std::abs(g(free[a])));
    if (nf == 0 || gmax < opts.grad_tol) {
      res.converged = true;
      break;
    }
    Matrix A(nf, nf);
    Vector b(nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
      b(a) = g(free[a]);
      for (Eigen::Index c = 0; c < nf; ++c) A(a, c) = -H(free[a], free[c]);
    }
    bool accepted = false;
    while (lambda < 1e20) {
      Matrix M = A;
      M.diagonal().array() += lambda * (1.0 + A.diagonal().array().abs());
      const Vector step = M.ldlt().solve(b);
      Vector trial = res.x;
      for (Eigen::Index a = 0; a < nf; ++a) trial(free[a]) += step(a);
      if (cap > 0.0) trial = trial.cwiseMax(-cap).cwiseMin(cap);
      Vector tg(d);
      Matrix tH(d, d);
      const double tv = f(trial, &tg, &tH);
      if (std::isfinite(tv) && tv >= res.value) {
        const double moved = (trial - res.x).lpNorm<Eigen::Infinity>();
        const double gained = tv - res.value;
        res.x = std::move(trial);
        res.value = tv;
        g = std::move(tg);
        H = std::move(tH);
        lambda = std::max(lambda / 4.0, 1e-12);
        accepted = true;
        if (lambda < 1.0 &&
            (moved < opts.step_tol * (1.0 + res.x.lpNorm<Eigen::Infinity>()) ||
             (gained == 0.0 && moved < 1e-6))) {
          res.converged = true;
        }
        break;
      }
      lambda *= 5.0;
    }
    if (!accepted) {
      // No ascent direction left at machine precision.
      res.converged = gmax < 1e-6;
      break;
    }
    if (res.converged) break;
  }
  res.grad = g;
  if (cap > 0.0)
    res.at_bound = (res.x.array().abs() >= cap - 1e-9).any();
  return res;
}

Matrix additive_loglik_hessian(const MixtureLikelihood& lik, const Matrix& X,
                               const Matrix& eta) {
  const Eigen::Index n = X.rows(), rows = X.cols(), km1 = eta.cols();
  Matrix hess = Matrix::Zero(rows * km1, rows * km1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Matrix h = lik.row_hessian(eta, i);
    for (Eigen::Index k = 0; k < km1; ++k)
      for (Eigen::Index l = 0; l < km1; ++l) {
        const double hkl = h(k, l);
        if (hkl == 0.0) continue;
        for (Eigen::Index p = 0; p < rows; ++p) {
          const double xp = X(i, p);
          if (xp == 0.0) continue;
          for (Eigen::Index q = 0; q < rows; ++q)
            hess(p + rows * k, q + rows * l) += xp * X(i, q) * hkl;
        }
      }
  }
  return hess;
}

AdditiveFit fit_additive_mle(const LpdMatrix& lpd, const FeatureSet& feats,
                             const FitOptions& opts) {
  auto [data, fs] = validate(lpd, feats);
  const Matrix D = design_matrix(fs);
  const Eigen::Index n = data.n(), K = data.K(), P = D.cols();
  const Eigen::Index km1 = K - 1;
  Matrix X(n, P + 1);
  X.col(0).setOnes();
  if (P > 0) X.rightCols(P) = D;
  const MixtureLikelihood lik(data.values);
  const Eigen::Index rows = P + 1;

  // Parameter vector is vec(B) column-major, B = [mu; alpha] (P+1) x (K-1).
  SmoothObjective obj = [&](const Vector& theta, Vector* grad, Matrix* hess) {
    const Eigen::Map<const Matrix> B(theta.data(), rows, km1);
    const Matrix eta = X * B;
    Matrix geta;
    const double v = lik.value_and_gradient(eta, geta);
    if (grad) {
      const Matrix gB = X.transpose() * geta;
      *grad = Eigen::Map<const Vector>(gB.data(), gB.size());
    }
    if (hess) *hess = additive_loglik_hessian(lik, X, eta);
    return v;
  };

  NewtonOptions nopts;
  nopts.max_iters = std::min(opts.max_iters, 2000);
  nopts.bound = kCoefficientCap;
  const NewtonResult r = maximize_newton(obj, Vector::Zero(rows * km1), nopts);

  AdditiveFit fit;
  const Eigen::Map<const Matrix> B(r.x.data(), rows, km1);
  fit.mu = B.row(0).transpose();
  fit.alpha = B.bottomRows(P);
  const Matrix eta = X * B;
  fit.weights.resize(n, K);
  for (Eigen::Index i = 0; i < n; ++i)
    fit.weights.row(i) = softmax_weights(eta.row(i).transpose()).transpose();
  fit.objective = r.value;
  fit.iters = r.iters;
  fit.converged = r.converged;
  fit.hit_cap = r.at_bound;
  return fit;
}

}  // namespace hstack
