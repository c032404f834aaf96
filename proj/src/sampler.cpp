#include "hstack/sampler.hpp"

#include <boost/math/distributions/normal.hpp>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <atomic>
#include <complex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace hstack {

namespace {

struct DualAveraging {
  double mu = 0.0, h_bar = 0.0, x_bar = 0.0;
  double gamma = 0.05, t0 = 10.0, kappa = 0.75;
  int t = 0;
  double target = 0.8;

  void restart(double step) {
    mu = std::log(10.0 * step);
    h_bar = 0.0;
    x_bar = 0.0;
    t = 0;
  }
  double update(double accept) {
    ++t;
    const double eta = 1.0 / (t + t0);
    h_bar = (1.0 - eta) * h_bar + eta * (target - accept);
    const double x = mu - std::sqrt(static_cast<double>(t)) / gamma * h_bar;
    const double w = std::pow(static_cast<double>(t), -kappa);
    x_bar = w * x + (1.0 - w) * x_bar;
    return std::exp(x);
  }
  double final_step() const { return std::exp(x_bar); }
};

double kinetic(const Vector& p, const Vector& inv_metric) {
  return 0.5 * p.cwiseProduct(inv_metric).dot(p);
}

Vector draw_momentum(std::mt19937_64& rng, const Vector& inv_metric) {
  std::normal_distribution<double> z;
  Vector p(inv_metric.size());
  for (Eigen::Index j = 0; j < p.size(); ++j) p(j) = z(rng) / std::sqrt(inv_metric(j));
  return p;
}

struct ChainOutput {
  Matrix draws;
  ChainStats stats;
};

double find_initial_step(const LogDensityFn& logp, const Vector& q0,
                         const Vector& g0, double lp0, const Vector& inv_metric,
                         std::mt19937_64& rng) {
  double step = 1.0;
  Vector p = draw_momentum(rng, inv_metric);
  const double h0 = -lp0 + kinetic(p, inv_metric);
  auto trial_delta = [&](double eps) {
    Vector q = q0, pp = p, g = g0;
    double lp = lp0;
    if (!leapfrog(logp, q, pp, g, lp, eps, 1, inv_metric)) return -1e300;
    return h0 - (-lp + kinetic(pp, inv_metric));
  };
  double delta = trial_delta(step);
  const int dir = delta > std::log(0.8) ? 1 : -1;
  for (int it = 0; it < 100; ++it) {
    if (dir == 1 && !(delta > std::log(0.8))) break;
    if (dir == -1 && !(delta < std::log(0.8))) break;
    step = dir == 1 ? step * 2.0 : step * 0.5;
    if (step < 1e-12 || step > 1e7) break;
    delta = trial_delta(step);
  }
  return step;
}

ChainOutput run_chain(const LogDensityFn& logp, const Vector& init,
                      const SamplerConfig& cfg, int chain) {
  std::mt19937_64 rng(stream_seed(cfg.seed, static_cast<std::uint64_t>(chain)));
  const Eigen::Index d = init.size();
  std::uniform_real_distribution<double> unif(-1.0, 1.0);

  Vector q(d), g(d);
  double lp = -std::numeric_limits<double>::infinity();
  double radius = cfg.init_radius;
  for (int attempt = 0; attempt < 100; ++attempt) {
    q = init;
    if (radius > 0.0)
      for (Eigen::Index j = 0; j < d; ++j) q(j) += radius * unif(rng);
    lp = logp(q, &g);
    if (std::isfinite(lp) && g.allFinite()) break;
    radius *= 0.5;
    if (attempt == 99)
      throw ValidationError("bad_init", "log density is not finite at the initial point");
  }

  Vector inv_metric = Vector::Ones(d);
  double step = find_initial_step(logp, q, g, lp, inv_metric, rng);
  DualAveraging da;
  da.target = cfg.target_accept;
  da.restart(step);

  const int w1 = static_cast<int>(0.15 * cfg.warmup);
  const int w2_end = w1 + static_cast<int>(0.60 * cfg.warmup);
  std::uniform_int_distribution<int> len(1, cfg.max_leapfrog);

  ChainOutput out;
  out.draws.resize(cfg.draws_per_chain, d);
  Vector window_sum = Vector::Zero(d), window_sq = Vector::Zero(d);
  int window_n = 0;
  double accept_sum = 0.0;
  const int total = cfg.warmup + cfg.draws_per_chain;

  for (int it = 0; it < total; ++it) {
    const bool warm = it < cfg.warmup;
    Vector p = draw_momentum(rng, inv_metric);
    const double h0 = -lp + kinetic(p, inv_metric);
    Vector q1 = q, p1 = p, g1 = g;
    double lp1 = lp;
    const bool finite = leapfrog(logp, q1, p1, g1, lp1, step, len(rng), inv_metric);
    const double h1 = finite ? -lp1 + kinetic(p1, inv_metric)
                             : std::numeric_limits<double>::infinity();
    const double dh = h1 - h0;
    const bool divergent = !std::isfinite(dh) || dh > cfg.divergence_threshold;
    const double accept = divergent ? 0.0 : std::min(1.0, std::exp(-dh));
    if (divergent) {
      if (warm) ++out.stats.warmup_divergences;
      else ++out.stats.divergences;
    }
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    if (!divergent && u01(rng) < accept) {
      q = std::move(q1);
      g = std::move(g1);
      lp = lp1;
    }

    if (warm) {
      step = da.update(accept);
      if (it >= w1 && it < w2_end) {
        window_sum += q;
        window_sq += q.cwiseProduct(q);
        ++window_n;
      }
      if (it == w2_end - 1 && window_n > 2) {
        const double nn = window_n;
        const Vector mean = window_sum / nn;
        Vector var = (window_sq / nn - mean.cwiseProduct(mean)) * (nn / (nn - 1.0));
        var = var.cwiseMax(0.0);
        // Shrink toward a small constant, as in common HMC warmup practice.
        inv_metric = (nn / (nn + 5.0)) * var.array() + 1e-3 * (5.0 / (nn + 5.0));
        step = find_initial_step(logp, q, g, lp, inv_metric, rng);
        da.restart(step);
      }
      if (it == cfg.warmup - 1) {
        step = da.final_step();
        if (out.stats.warmup_divergences == cfg.warmup)
          throw DiagnosticError("every warmup transition diverged in chain " +
                                std::to_string(chain + 1));
      }
    } else {
      out.draws.row(it - cfg.warmup) = q.transpose();
      accept_sum += accept;
    }
  }
  out.stats.step_size = step;
  out.stats.inv_metric = inv_metric;
  out.stats.mean_accept =
      cfg.draws_per_chain > 0 ? accept_sum / cfg.draws_per_chain : 0.0;
  return out;
}

// Average ranks (1-based) with ties sharing their mean rank.
Vector average_ranks(const Vector& x) {
  const Eigen::Index n = x.size();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return x(a) < x(b); });
  Vector r(n);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j + 1 < n && x(idx[j + 1]) == x(idx[i])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index t = i; t <= j; ++t) r(idx[t]) = avg;
    i = j + 1;
  }
  return r;
}

std::vector<Vector> split_chains(const std::vector<Vector>& chains) {
  std::vector<Vector> out;
  for (const Vector& c : chains) {
    const Eigen::Index half = c.size() / 2;
    out.push_back(c.head(half));
    out.push_back(c.tail(half));
  }
  return out;
}

std::vector<Vector> rank_normalize(const std::vector<Vector>& chains) {
  Eigen::Index total = 0;
  for (const Vector& c : chains) total += c.size();
  Vector pooled(total);
  Eigen::Index off = 0;
  for (const Vector& c : chains) {
    pooled.segment(off, c.size()) = c;
    off += c.size();
  }
  const Vector r = average_ranks(pooled);
  const boost::math::normal_distribution<double> stdnorm;
  std::vector<Vector> out;
  off = 0;
  for (const Vector& c : chains) {
    Vector z(c.size());
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      const double u = (r(off + i) - 0.375) / (static_cast<double>(total) + 0.25);
      z(i) = boost::math::quantile(stdnorm, u);
    }
    out.push_back(std::move(z));
    off += c.size();
  }
  return out;
}

Vector autocovariance(const Vector& x) {
  const Eigen::Index n = x.size();
  Eigen::Index nfft = 1;
  while (nfft < 2 * n) nfft *= 2;
  std::vector<double> buf(static_cast<std::size_t>(nfft), 0.0);
  const double mean = x.mean();
  for (Eigen::Index i = 0; i < n; ++i) buf[i] = x(i) - mean;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, buf);
  for (auto& c : freq) c = std::complex<double>(std::norm(c), 0.0);
  std::vector<double> ac;
  fft.inv(ac, freq);
  Vector out(n);
  for (Eigen::Index t = 0; t < n; ++t) out(t) = ac[t] / static_cast<double>(n);
  return out;
}

double ess_impl(const std::vector<Vector>& chains) {
  const auto m = static_cast<Eigen::Index>(chains.size());
  if (m == 0) return std::numeric_limits<double>::quiet_NaN();
  Eigen::Index n = chains.front().size();
  for (const Vector& c : chains) n = std::min(n, c.size());
  if (n < 4) return std::numeric_limits<double>::quiet_NaN();

  Matrix acov(n, m);
  Vector means(m), vars(m);
  for (Eigen::Index c = 0; c < m; ++c) {
    const Vector x = chains[c].head(n);
    acov.col(c) = autocovariance(x);
    means(c) = x.mean();
    vars(c) = acov(0, c) * static_cast<double>(n) / static_cast<double>(n - 1);
  }
  const double W = vars.mean();
  double var_plus = W * static_cast<double>(n - 1) / static_cast<double>(n);
  if (m > 1) {
    const double grand = means.mean();
    const double B = (means.array() - grand).square().sum() / static_cast<double>(m - 1);
    var_plus += B;
  }
  if (!(var_plus > 0.0)) return std::numeric_limits<double>::quiet_NaN();

  const Vector mean_acov = acov.rowwise().mean();
  auto rho = [&](Eigen::Index t) { return 1.0 - (W - mean_acov(t)) / var_plus; };

  // Geyer's initial positive sequence with monotone adjustment.
  std::vector<double> pair_sums;
  Eigen::Index t = 0;
  while (t + 1 < n) {
    const double s = rho(t) + rho(t + 1);
    if (s < 0.0) break;
    pair_sums.push_back(s);
    t += 2;
  }
  for (std::size_t k = 1; k < pair_sums.size(); ++k)
    pair_sums[k] = std::min(pair_sums[k], pair_sums[k - 1]);
  double tau = -1.0;
  for (double s : pair_sums) tau += 2.0 * s;
  const double total = static_cast<double>(m * n);
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

double rhat_impl(const std::vector<Vector>& chains) {
  const auto m = static_cast<Eigen::Index>(chains.size());
  Eigen::Index n = chains.front().size();
  for (const Vector& c : chains) n = std::min(n, c.size());
  Vector means(m), vars(m);
  for (Eigen::Index c = 0; c < m; ++c) {
    const Vector x = chains[c].head(n);
    means(c) = x.mean();
    vars(c) = (x.array() - means(c)).square().sum() / static_cast<double>(n - 1);
  }
  const double W = vars.mean();
  const double B = static_cast<double>(n) * (means.array() - means.mean()).square().sum() /
                   static_cast<double>(m - 1);
  const double var_plus = (static_cast<double>(n - 1) * W + B) / static_cast<double>(n);
  if (W == 0.0)
    return B == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                    : std::numeric_limits<double>::infinity();
  return std::sqrt(var_plus / W);
}

std::vector<Vector> column_of(const std::vector<Matrix>& chains, Eigen::Index j) {
  std::vector<Vector> out;
  for (const Matrix& c : chains) out.push_back(c.col(j));
  return out;
}

}  // namespace

void check_config(const SamplerConfig& cfg) {
  std::ostringstream os;
  if (cfg.chains < 1) os << "chains must be >= 1; ";
  if (cfg.warmup < 100) os << "warmup must be >= 100; ";
  if (cfg.draws_per_chain < 1) os << "draws_per_chain must be >= 1; ";
  if (!(cfg.target_accept >= 0.6 && cfg.target_accept <= 0.99))
    os << "target_accept must lie in [0.6, 0.99]; ";
  if (cfg.max_leapfrog < 1) os << "max_leapfrog must be >= 1; ";
  if (!os.str().empty()) throw ValidationError("bad_sampler_config", os.str());
}

bool leapfrog(const LogDensityFn& logp, Vector& q, Vector& p, Vector& grad,
              double& logp_value, double step_size, int steps,
              const Vector& inv_metric) {
  for (int s = 0; s < steps; ++s) {
    p += 0.5 * step_size * grad;
    q += step_size * inv_metric.cwiseProduct(p);
    logp_value = logp(q, &grad);
    if (!std::isfinite(logp_value) || !grad.allFinite()) return false;
    p += 0.5 * step_size * grad;
  }
  return true;
}

double Diagnostics::max_rhat() const {
  double r = std::numeric_limits<double>::quiet_NaN();
  for (const auto& x : rhat)
    if (x && (std::isnan(r) || *x > r || std::isnan(*x))) r = *x;
  return r;
}

double Diagnostics::min_ess_bulk() const {
  return ess_bulk.size() ? ess_bulk.minCoeff() : std::numeric_limits<double>::quiet_NaN();
}

double Diagnostics::min_ess_tail() const {
  return ess_tail.size() ? ess_tail.minCoeff() : std::numeric_limits<double>::quiet_NaN();
}

Matrix SampleResult::merged() const {
  Eigen::Index rows = 0, cols = chains.empty() ? 0 : chains.front().cols();
  for (const Matrix& c : chains) rows += c.rows();
  Matrix out(rows, cols);
  Eigen::Index off = 0;
  for (const Matrix& c : chains) {
    out.middleRows(off, c.rows()) = c;
    off += c.rows();
  }
  return out;
}

double effective_sample_size(const std::vector<Vector>& chains) {
  return ess_impl(chains);
}

double split_rhat(const std::vector<Vector>& chains) {
  return rhat_impl(split_chains(chains));
}

Diagnostics diagnostics(const std::vector<Matrix>& chains) {
  Diagnostics diag;
  if (chains.empty()) return diag;
  const Eigen::Index d = chains.front().cols();
  diag.ess_bulk.resize(d);
  diag.ess_tail.resize(d);
  diag.rhat.resize(static_cast<std::size_t>(d));
  for (const Matrix& c : chains) diag.total_draws += static_cast<int>(c.rows());
  for (Eigen::Index j = 0; j < d; ++j) {
    const std::vector<Vector> split = split_chains(column_of(chains, j));
    const std::vector<Vector> z = rank_normalize(split);
    if (chains.size() >= 2) {
      // Folded chains: distance from the pooled median.
      Eigen::Index total = 0;
      for (const Vector& c : split) total += c.size();
      std::vector<double> pooled;
      pooled.reserve(static_cast<std::size_t>(total));
      for (const Vector& c : split) pooled.insert(pooled.end(), c.data(), c.data() + c.size());
      std::nth_element(pooled.begin(), pooled.begin() + total / 2, pooled.end());
      const double med = pooled[static_cast<std::size_t>(total / 2)];
      std::vector<Vector> folded;
      for (const Vector& c : split) folded.push_back((c.array() - med).abs().matrix());
      const double bulk = rhat_impl(z);
      const double tail = rhat_impl(rank_normalize(folded));
      double r = bulk;
      if (std::isnan(r) || (!std::isnan(tail) && tail > r)) r = tail;
      diag.rhat[j] = r;
    }
    diag.ess_bulk(j) = ess_impl(z);

    std::vector<double> pooled;
    for (const Vector& c : split) pooled.insert(pooled.end(), c.data(), c.data() + c.size());
    std::sort(pooled.begin(), pooled.end());
    const auto q_at = [&](double prob) {
      const auto pos = static_cast<std::size_t>(prob * static_cast<double>(pooled.size() - 1));
      return pooled[pos];
    };
    const double q05 = q_at(0.05), q95 = q_at(0.95);
    std::vector<Vector> lo, hi;
    for (const Vector& c : split) {
      lo.push_back((c.array() <= q05).cast<double>().matrix());
      hi.push_back((c.array() <= q95).cast<double>().matrix());
    }
    const double e_lo = ess_impl(lo), e_hi = ess_impl(hi);
    diag.ess_tail(j) = std::isnan(e_lo) ? e_hi : (std::isnan(e_hi) ? e_lo : std::min(e_lo, e_hi));
  }
  return diag;
}

SampleResult sample(const LogDensityFn& logp, const Vector& init,
                    const SamplerConfig& cfg) {
  check_config(cfg);
  {
    Vector g(init.size());
    const double lp = logp(init, &g);
    if (!std::isfinite(lp) || !g.allFinite())
      throw ValidationError("bad_init", "log density or gradient is not finite at init");
  }
  std::vector<ChainOutput> outs(static_cast<std::size_t>(cfg.chains));
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.chains));
  auto worker = [&]() {
    for (int c = next++; c < cfg.chains; c = next++) {
      try {
        outs[static_cast<std::size_t>(c)] = run_chain(logp, init, cfg, c);
      } catch (...) {
        errors[static_cast<std::size_t>(c)] = std::current_exception();
      }
    }
  };
  const int nthreads = std::max(1, std::min(cfg.threads, cfg.chains));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  SampleResult res;
  for (auto& o : outs) {
    res.chains.push_back(std::move(o.draws));
    res.stats.push_back(std::move(o.stats));
  }
  res.diagnostics = diagnostics(res.chains);
  for (const ChainStats& s : res.stats) res.diagnostics.divergences += s.divergences;
  return res;
}

}  // namespace hstack
