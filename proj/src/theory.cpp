#include "hstack/theory.hpp"

#include "hstack/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace hstack {

namespace {

const double kInf = std::numeric_limits<double>::infinity();

// Margins are compared against L with a tolerance so that exact ties such as
// log(0.2475) - log(0.0025) versus log(99) are not split by rounding.
bool below(double margin, double L) { return margin < L - 1e-10 * (1.0 + std::abs(L)); }

Eigen::Index argmax_first(const Eigen::Ref<const Vector>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < v.size(); ++k)
    if (v(k) > v(best)) best = k;
  return best;
}

double margin_of(const Eigen::Ref<const Vector>& ld, Eigen::Index k) {
  if (ld(k) == -kInf) return 0.0;
  double rival = -kInf;
  for (Eigen::Index l = 0; l < ld.size(); ++l)
    if (l != k) rival = std::max(rival, ld(l));
  return ld(k) - rival;
}

Vector dirichlet(std::mt19937_64& rng, double conc, int n) {
  std::gamma_distribution<double> g(conc, 1.0);
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = g(rng) + 1e-12;
  return v / v.sum();
}

Scenario keep_models(const Scenario& sc, const std::vector<int>& keep) {
  Scenario out = sc;
  out.log_dens.resize(sc.cells(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j)
    out.log_dens.col(static_cast<Eigen::Index>(j)) = sc.log_dens.col(keep[j]);
  return out;
}

double sum_inverse_odds(const Vector& w) {
  double c = 0.0;
  for (Eigen::Index k = 0; k < w.size(); ++k) c += w(k) > 0.0 ? (1.0 - w(k)) / w(k) : kInf;
  return c;
}

}  // namespace

void Scenario::check() const {
  if (log_dens.rows() != mass.size() || x_bin.size() != mass.size())
    throw ValidationError("dimension_mismatch", "scenario arrays disagree in cell count");
  if (mass.size() == 0 || log_dens.cols() == 0)
    throw ValidationError("empty_input", "scenario has no cells or no models");
  if ((mass.array() < 0.0).any() || !mass.allFinite())
    throw ValidationError("bad_scenario", "cell masses must be finite and nonnegative");
  if (std::abs(mass.sum() - 1.0) > 1e-6) {
    std::ostringstream os;
    os << "data-generating mass sums to " << mass.sum() << ", expected 1";
    throw ValidationError("bad_scenario", os.str());
  }
  if (x_bin.minCoeff() < 0 || x_bin.maxCoeff() >= num_x_bins)
    throw ValidationError("bad_scenario", "x bin index out of range");
  if ((log_dens.array() == kInf).any() || log_dens.hasNaN())
    throw ValidationError("bad_scenario", "model log densities must be < +inf and not NaN");
}

Scenario spike_slab_scenario(double delta, Eigen::Index cells) {
  if (!(delta >= 0.0 && delta <= 1.0))
    throw ValidationError("bad_scenario", "delta must lie in [0, 1]");
  if (cells < 4 || cells % 4 != 0)
    throw ValidationError("bad_scenario", "cell count must be a positive multiple of 4");
  Scenario sc;
  sc.kind = "spike_slab";
  sc.delta = delta;
  sc.mass = Vector::Constant(cells, 1.0 / static_cast<double>(cells));
  sc.log_dens.resize(cells, 2);
  sc.x_bin.resize(cells);
  sc.num_x_bins = 2;
  sc.x_values.resize(2);
  sc.x_values << -1.5, 0.5;
  const double width = 4.0 / static_cast<double>(cells);
  const double left1 = std::log((1.0 - delta) / 4.0), right1 = std::log(delta / 2.0);
  const double left2 = std::log(delta / 4.0), right2 = std::log((1.0 - delta) / 2.0);
  for (Eigen::Index c = 0; c < cells; ++c) {
    const double y = -3.0 + (static_cast<double>(c) + 0.5) * width;
    sc.log_dens(c, 0) = y < 0.0 ? left1 : right1;
    sc.log_dens(c, 1) = y < 0.0 ? left2 : right2;
    sc.x_bin(c) = y < 0.0 ? 0 : 1;
  }
  return sc;
}

Scenario bernoulli_sqrt_scenario(Eigen::Index x_cells) {
  if (x_cells < 1) throw ValidationError("bad_scenario", "need at least one x cell");
  Scenario sc;
  sc.kind = "bernoulli_sqrt";
  const Eigen::Index C = 2 * x_cells;
  const double h = 1.0 / static_cast<double>(x_cells);
  sc.mass.resize(C);
  sc.log_dens.resize(C, 2);
  sc.x_bin.resize(C);
  sc.num_x_bins = x_cells;
  sc.x_values.resize(x_cells);
  for (Eigen::Index j = 0; j < x_cells; ++j) {
    const double x = (static_cast<double>(j) + 0.5) * h;
    const double r = std::sqrt(x);
    sc.x_values(j) = x;
    sc.mass(2 * j) = x * h;  // y = 1
    sc.log_dens(2 * j, 0) = std::log(0.5);
    sc.log_dens(2 * j, 1) = std::log(r);
    sc.mass(2 * j + 1) = (1.0 - x) * h;  // y = 0
    sc.log_dens(2 * j + 1, 0) = std::log(0.5);
    sc.log_dens(2 * j + 1, 1) = std::log1p(-r);
    sc.x_bin(2 * j) = static_cast<int>(j);
    sc.x_bin(2 * j + 1) = static_cast<int>(j);
  }
  return sc;
}

Scenario piecewise_scenario(std::uint64_t seed, const PiecewiseOptions& opts) {
  if (opts.x_pieces < 1 || opts.y_pieces < 2 || opts.cells_per_piece < 1 ||
      !(opts.concentration > 0.0))
    throw ValidationError("bad_scenario", "invalid piecewise scenario options");
  std::mt19937_64 rng(stream_seed(seed, 0x7e0));
  int K = opts.K;
  if (K == 0) K = std::uniform_int_distribution<int>(2, 4)(rng);
  if (K < 1) throw ValidationError("bad_scenario", "K must be >= 1");
  const int Px = opts.x_pieces, Py = opts.y_pieces, r = opts.cells_per_piece;
  const Vector px = dirichlet(rng, 1.0, Px);
  std::vector<Vector> pt;
  std::vector<std::vector<Vector>> pm(static_cast<std::size_t>(Px));
  for (int a = 0; a < Px; ++a) {
    pt.push_back(dirichlet(rng, 1.0, Py));
    for (int k = 0; k < K; ++k) pm[static_cast<std::size_t>(a)].push_back(dirichlet(rng, opts.concentration, Py));
  }
  Scenario sc;
  sc.kind = "piecewise_custom";
  const Eigen::Index C = static_cast<Eigen::Index>(Px) * r * Py * r;
  sc.mass.resize(C);
  sc.log_dens.resize(C, K);
  sc.x_bin.resize(C);
  sc.num_x_bins = static_cast<Eigen::Index>(Px) * r;
  sc.x_values.resize(sc.num_x_bins);
  const double rr = static_cast<double>(r);
  Eigen::Index c = 0;
  for (int a = 0; a < Px; ++a)
    for (int sa = 0; sa < r; ++sa) {
      const int bin = a * r + sa;
      sc.x_values(bin) = (static_cast<double>(bin) + 0.5) / static_cast<double>(sc.num_x_bins);
      for (int b = 0; b < Py; ++b)
        for (int sb = 0; sb < r; ++sb) {
          sc.mass(c) = px(a) / rr * pt[static_cast<std::size_t>(a)](b) / rr;
          for (int k = 0; k < K; ++k)
            sc.log_dens(c, k) =
                std::log(pm[static_cast<std::size_t>(a)][static_cast<std::size_t>(k)](b) * Py);
          sc.x_bin(c) = bin;
          ++c;
        }
    }
  return sc;
}

double elpd_of_weights(const Scenario& sc, const Matrix& w) {
  sc.check();
  if (w.cols() != sc.K() || (w.rows() != 1 && w.rows() != sc.num_x_bins)) {
    std::ostringstream os;
    os << "weights are " << w.rows() << "x" << w.cols() << ", expected 1x" << sc.K() << " or "
       << sc.num_x_bins << "x" << sc.K();
    throw ValidationError("dimension_mismatch", os.str());
  }
  double total = 0.0;
  for (Eigen::Index c = 0; c < sc.cells(); ++c) {
    if (sc.mass(c) == 0.0) continue;
    const Eigen::Index r = w.rows() == 1 ? 0 : sc.x_bin(c);
    const double v = combine_log_density(w.row(r).transpose(), sc.log_dens.row(c).transpose());
    if (v == -kInf) return -kInf;
    total += sc.mass(c) * v;
  }
  return total;
}

Vector model_elpds(const Scenario& sc) {
  Vector e(sc.K());
  for (Eigen::Index k = 0; k < sc.K(); ++k) {
    Matrix w = Matrix::Zero(1, sc.K());
    w(0, k) = 1.0;
    e(k) = elpd_of_weights(sc, w);
  }
  return e;
}

Vector winner_margins(const Scenario& sc) {
  Vector m(sc.cells());
  for (Eigen::Index c = 0; c < sc.cells(); ++c) {
    const Vector ld = sc.log_dens.row(c).transpose();
    m(c) = margin_of(ld, argmax_first(ld));
  }
  return m;
}

SeparationReport winner_partition(const Scenario& sc, double L) {
  sc.check();
  const Eigen::Index K = sc.K(), B = sc.num_x_bins;
  SeparationReport rep;
  rep.L = L;
  rep.J_masses = Vector::Zero(K);
  rep.I_masses = Vector::Zero(K);
  rep.cell_winner.resize(sc.cells());
  Matrix celpd = Matrix::Zero(B, K);
  Vector bin_mass = Vector::Zero(B);
  for (Eigen::Index c = 0; c < sc.cells(); ++c) {
    const Vector ld = sc.log_dens.row(c).transpose();
    const Eigen::Index k = argmax_first(ld);
    rep.cell_winner(c) = static_cast<int>(k);
    if (sc.mass(c) == 0.0) continue;
    rep.J_masses(k) += sc.mass(c);
    if (below(margin_of(ld, k), L)) rep.epsilon += sc.mass(c);
    bin_mass(sc.x_bin(c)) += sc.mass(c);
    celpd.row(sc.x_bin(c)) += sc.mass(c) * ld.transpose();
  }
  rep.bin_winner.resize(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const Eigen::Index k = bin_mass(b) > 0.0 ? argmax_first(celpd.row(b).transpose()) : 0;
    rep.bin_winner(b) = static_cast<int>(k);
    rep.I_masses(k) += bin_mass(b);
  }
  for (Eigen::Index c = 0; c < sc.cells(); ++c) {
    if (sc.mass(c) == 0.0) continue;
    const Vector ld = sc.log_dens.row(c).transpose();
    if (below(margin_of(ld, rep.bin_winner(sc.x_bin(c))), L)) rep.epsilon_strong += sc.mass(c);
  }
  rep.rho = rep.J_masses.maxCoeff();
  rep.rho_x = rep.I_masses.maxCoeff();
  return rep;
}

SeparationProfile separation_profile(const Scenario& sc, const Vector& L_grid) {
  const SeparationReport base = winner_partition(sc, 0.0);
  Vector m(sc.cells()), ms(sc.cells());
  for (Eigen::Index c = 0; c < sc.cells(); ++c) {
    const Vector ld = sc.log_dens.row(c).transpose();
    m(c) = margin_of(ld, base.cell_winner(c));
    ms(c) = margin_of(ld, base.bin_winner(sc.x_bin(c)));
  }
  SeparationProfile prof;
  prof.L = L_grid;
  prof.epsilon = Vector::Zero(L_grid.size());
  prof.epsilon_strong = Vector::Zero(L_grid.size());
  for (Eigen::Index l = 0; l < L_grid.size(); ++l)
    for (Eigen::Index c = 0; c < sc.cells(); ++c) {
      if (sc.mass(c) == 0.0) continue;
      if (below(m(c), L_grid(l))) prof.epsilon(l) += sc.mass(c);
      if (below(ms(c), L_grid(l))) prof.epsilon_strong(l) += sc.mass(c);
    }
  return prof;
}

double max_separation_margin(const Scenario& sc) {
  const Vector m = winner_margins(sc);
  double lo = kInf;
  for (Eigen::Index c = 0; c < sc.cells(); ++c)
    if (sc.mass(c) > 0.0) lo = std::min(lo, m(c));
  return lo;
}

Vector population_stacking(const Scenario& sc) {
  sc.check();
  std::vector<Eigen::Index> rows;
  for (Eigen::Index c = 0; c < sc.cells(); ++c)
    if (sc.mass(c) > 0.0) rows.push_back(c);
  Matrix ld(static_cast<Eigen::Index>(rows.size()), sc.K());
  Vector m(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    ld.row(static_cast<Eigen::Index>(r)) = sc.log_dens.row(rows[r]);
    m(static_cast<Eigen::Index>(r)) = sc.mass(rows[r]);
  }
  FitOptions opts;
  opts.max_iters = 200000;
  opts.tol = 1e-15;
  return fit_complete_pooling(ld, opts, m).weights.row(0).transpose();
}

double pointwise_selection_elpd(const Scenario& sc) {
  const SeparationReport rep = winner_partition(sc, 0.0);
  Matrix w = Matrix::Zero(sc.num_x_bins, sc.K());
  for (Eigen::Index b = 0; b < sc.num_x_bins; ++b) w(b, rep.bin_winner(b)) = 1.0;
  return elpd_of_weights(sc, w);
}

Vector pseudo_bma_weight(const Scenario& sc, double n) {
  if (!(n > 0.0)) throw ValidationError("bad_options", "sample size must be positive");
  const Vector e = model_elpds(sc);
  const double top = e.maxCoeff();
  Vector w(e.size());
  for (Eigen::Index k = 0; k < e.size(); ++k)
    w(k) = e(k) == -kInf ? 0.0 : std::exp(n * (e(k) - top));
  return w / w.sum();
}

double winner_entropy_term(double rho, Eigen::Index K) {
  double h = rho > 0.0 ? rho * std::log(rho) : 0.0;
  if (rho < 1.0 && K > 1)
    h += (1.0 - rho) * std::log((1.0 - rho) / static_cast<double>(K - 1));
  return h;
}

double gain_bound_g(double L, Eigen::Index K, double rho, double eps) {
  return L * (1.0 - rho) * (1.0 - eps) - std::log(static_cast<double>(K));
}

double gain_bound_g_star(double L, Eigen::Index K, double rho, double eps) {
  return L * (1.0 - rho) * (1.0 - eps) + winner_entropy_term(rho, K);
}

TheoremReport theorem_bounds(const Scenario& sc, double L) {
  if (!(L >= 0.0)) throw ValidationError("bad_options", "margin L must be >= 0");
  TheoremReport rep;
  rep.L = L;
  rep.sep = winner_partition(sc, L);
  rep.w_stacking = population_stacking(sc);
  rep.w_approx = rep.sep.J_masses;
  rep.elpd_stacking = elpd_of_weights(sc, rep.w_stacking.transpose());
  const Vector single = model_elpds(sc);
  rep.best_single_elpd = single.maxCoeff();
  const Eigen::Index K = sc.K();
  const double eps = rep.sep.epsilon, eL = std::exp(-L);
  const double slack_tol = 1e-7;  // EM converges sublinearly when the optimum sits on a face

  // T1, after removing models that stacking ignores.
  std::vector<int> keep;
  for (Eigen::Index k = 0; k < K; ++k) {
    if (rep.w_stacking(k) >= 1e-6)
      keep.push_back(static_cast<int>(k));
    else
      rep.t1_dropped.push_back(static_cast<int>(k));
  }
  {
    const Scenario red = rep.t1_dropped.empty() ? sc : keep_models(sc, keep);
    const SeparationReport rs = rep.t1_dropped.empty() ? rep.sep : winner_partition(red, L);
    const Vector ws = rep.t1_dropped.empty() ? rep.w_stacking : population_stacking(red);
    const Vector wa = rs.J_masses;
    const double ea = elpd_of_weights(red, wa.transpose());
    const double es = elpd_of_weights(red, ws.transpose());
    rep.t1_gap = std::abs(ea - es);
    if (ea == -kInf || es == -kInf) rep.t1_gap = kInf;
    rep.t1_constant = sum_inverse_odds(wa) + sum_inverse_odds(ws);
    rep.t1_bound = rep.t1_constant * (rs.epsilon + eL);
    rep.t1_pass = std::isinf(rep.t1_bound) || rep.t1_gap <= rep.t1_bound + slack_tol;
  }

  // T2 for every zero-weight model.
  for (int k : rep.t1_dropped) rep.t2_models.push_back(k);
  const auto nz = static_cast<Eigen::Index>(rep.t2_models.size());
  rep.t2_prob.resize(nz);
  rep.t2_tight.resize(nz);
  rep.t2_loose.resize(nz);
  for (Eigen::Index j = 0; j < nz; ++j) {
    const int k = rep.t2_models[static_cast<std::size_t>(j)];
    rep.t2_prob(j) = rep.sep.J_masses(k);
    rep.t2_tight(j) = 1.0 / (1.0 + std::expm1(L) * (1.0 - eps) + eps);
    rep.t2_loose(j) = eL + eps;
    rep.t2_pass = rep.t2_pass && rep.t2_prob(j) <= rep.t2_loose(j) + slack_tol;
    rep.t2_tight_pass = rep.t2_tight_pass && rep.t2_prob(j) <= rep.t2_tight(j) + slack_tol;
  }

  // T3.
  const double rho = rep.sep.rho;
  rep.t3_gain = rep.elpd_stacking - rep.best_single_elpd;
  rep.t3_g = gain_bound_g(L, K, rho, eps);
  rep.t3_g_star = gain_bound_g_star(L, K, rho, eps);
  rep.t3_g_star_minus_eps = rep.t3_g_star - eps;
  rep.t3_bound = std::max(0.0, winner_entropy_term(rho, K) + L * std::max(0.0, 1.0 - rho - eps));
  rep.t3_pass = rep.t3_gain >= rep.t3_bound - slack_tol;
  rep.t3_g_le_g_star = rep.t3_g <= rep.t3_g_star + 1e-12;

  // T4.
  rep.t4_selection_elpd = pointwise_selection_elpd(sc);
  rep.t4_gain = rep.t4_selection_elpd - rep.elpd_stacking;
  rep.t4_neg_log_rho_x = -std::log(rep.sep.rho_x);
  double cs = 0.0;
  for (Eigen::Index k = 0; k < K; ++k)
    if (rep.sep.I_masses(k) > 0.0)
      cs += rep.w_stacking(k) > 0.0 ? (1.0 - rep.w_stacking(k)) / rep.w_stacking(k) : kInf;
  double R = 1.0;
  for (Eigen::Index c = 0; c < sc.cells(); ++c) {
    if (sc.mass(c) == 0.0) continue;
    const Vector ld = sc.log_dens.row(c).transpose();
    const Eigen::Index k = rep.sep.bin_winner(sc.x_bin(c));
    if (!below(margin_of(ld, k), L)) continue;
    R = std::max(R, std::exp(-margin_of(ld, k)));
    if (ld(k) == -kInf) R = kInf;
  }
  const double eps_s = rep.sep.epsilon_strong;
  rep.t4_slack = cs * ((eps_s > 0.0 ? eps_s * R : 0.0) + eL);
  rep.t4_bound = rep.t4_neg_log_rho_x - rep.t4_slack;
  rep.t4_pass = std::isnan(rep.t4_bound) || rep.t4_gain >= rep.t4_bound - slack_tol;
  return rep;
}

}  // namespace hstack
