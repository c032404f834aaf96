#include "hstack/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace hstack {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(trim(cur));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Shortest representation that round-trips.
std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ValidationError("file_not_writable", "cannot write '" + path + "'");
  return os;
}

Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace

double CsvTable::number(std::size_t row, std::size_t col) const {
  const std::string& s = rows[row][col];
  double v = 0.0;
  const std::string l = lower(s);
  if (l == "inf" || l == "+inf") return std::numeric_limits<double>::infinity();
  if (l == "-inf") return -std::numeric_limits<double>::infinity();
  if (l == "nan") return std::numeric_limits<double>::quiet_NaN();
  const char* b = s.data();
  if (!s.empty() && s[0] == '+') ++b;
  const auto r = std::from_chars(b, s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    std::ostringstream os;
    os << path << ":" << line_of_row[row] << ": column '" << header[col] << "' value '" << s
       << "' is not a number";
    throw ValidationError("parse_error", os.str());
  }
  return v;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("file_not_found", "cannot open '" + path + "'");
  CsvTable t;
  t.path = path;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty() || line[0] == '#') continue;
    auto fields = split(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size()) {
      std::ostringstream os;
      os << path << ":" << lineno << ": expected " << t.header.size() << " fields, found "
         << fields.size();
      throw ValidationError("parse_error", os.str());
    }
    t.rows.push_back(std::move(fields));
    t.line_of_row.push_back(lineno);
  }
  if (t.header.empty()) throw ValidationError("parse_error", path + ": missing header row");
  return t;
}

LpdMatrix read_lpd_csv(const std::string& path, std::vector<std::string>* model_names) {
  const CsvTable t = read_csv(path);
  if (t.header.size() < 2)
    throw ValidationError("parse_error", path + ": expected obs_id and at least one model column");
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  const auto K = static_cast<Eigen::Index>(t.header.size() - 1);
  Matrix v(n, K);
  std::vector<std::string> ids;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(i);
    ids.push_back(t.rows[r][0]);
    for (Eigen::Index k = 0; k < K; ++k) v(i, k) = t.number(r, static_cast<std::size_t>(k + 1));
  }
  if (model_names) model_names->assign(t.header.begin() + 1, t.header.end());
  return LpdMatrix(std::move(v), std::move(ids));
}

void write_lpd_csv(const std::string& path, const LpdMatrix& lpd,
                   const std::vector<std::string>& model_names) {
  std::ofstream os = open_out(path);
  os << "obs_id";
  for (Eigen::Index k = 0; k < lpd.K(); ++k)
    os << ',' << (model_names.empty() ? "M" + std::to_string(k + 1) : model_names[static_cast<std::size_t>(k)]);
  os << '\n';
  for (Eigen::Index i = 0; i < lpd.n(); ++i) {
    os << (lpd.obs_ids.empty() ? std::to_string(i + 1) : lpd.obs_ids[static_cast<std::size_t>(i)]);
    for (Eigen::Index k = 0; k < lpd.K(); ++k) os << ',' << fmt(lpd.values(i, k));
    os << '\n';
  }
}

FeatureFile read_features_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header.empty() || lower(t.header[0]) != "obs_id")
    throw ValidationError("parse_error", path + ": first column must be obs_id");
  const bool has_cell = t.header.size() > 1 && lower(t.header[1]) == "cell";
  const std::size_t first = has_cell ? 2 : 1;
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  const auto M = static_cast<Eigen::Index>(t.header.size() - first);
  FeatureFile f;
  f.feature_names.assign(t.header.begin() + static_cast<std::ptrdiff_t>(first), t.header.end());
  std::vector<long> labels;
  Matrix x(n, M);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(i);
    f.obs_ids.push_back(t.rows[r][0]);
    if (has_cell) {
      const double c = t.number(r, 1);
      if (c != std::floor(c) || !std::isfinite(c)) {
        std::ostringstream os;
        os << path << ":" << t.line_of_row[r] << ": cell label '" << t.rows[r][1]
           << "' is not an integer";
        throw ValidationError("parse_error", os.str());
      }
      labels.push_back(static_cast<long>(c));
    }
    for (Eigen::Index m = 0; m < M; ++m) x(i, m) = t.number(r, first + static_cast<std::size_t>(m));
  }
  if (has_cell) {
    f.features = make_cell_features(labels);
  } else if (M == 0) {
    f.features = make_empty_features(n);
  }
  f.features.features = std::move(x);
  return f;
}

void write_features_csv(const std::string& path, const FeatureSet& feats,
                        const std::vector<std::string>& obs_ids) {
  std::ofstream os = open_out(path);
  os << "obs_id";
  if (feats.has_cells()) os << ",cell";
  for (Eigen::Index m = 0; m < feats.num_features(); ++m) os << ",f" << m + 1;
  os << '\n';
  for (Eigen::Index i = 0; i < feats.n(); ++i) {
    os << (obs_ids.empty() ? std::to_string(i + 1) : obs_ids[static_cast<std::size_t>(i)]);
    if (feats.has_cells()) os << ',' << feats.cell_labels[static_cast<std::size_t>(feats.cells(i))];
    for (Eigen::Index m = 0; m < feats.num_features(); ++m) os << ',' << fmt(feats.features(i, m));
    os << '\n';
  }
}

LogLikDraws read_loglik_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  Matrix m(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t s = 0; s < t.rows.size(); ++s)
    for (std::size_t i = 0; i < t.header.size(); ++i)
      m(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i)) = t.number(s, i);
  return m;
}

void write_loglik_csv(const std::string& path, const LogLikDraws& draws) {
  std::ofstream os = open_out(path);
  for (Eigen::Index i = 0; i < draws.cols(); ++i) os << (i ? "," : "") << "obs" << i + 1;
  os << '\n';
  for (Eigen::Index s = 0; s < draws.rows(); ++s) {
    for (Eigen::Index i = 0; i < draws.cols(); ++i) os << (i ? "," : "") << fmt(draws(s, i));
    os << '\n';
  }
}

void write_draws_csv(const std::string& path, const DrawTable& table) {
  if (table.chains < 1 || table.draws.rows() % table.chains != 0)
    throw ValidationError("dimension_mismatch", "draw count is not a multiple of the chain count");
  const Eigen::Index per = table.draws.rows() / table.chains;
  std::ofstream os = open_out(path);
  os << "chain,draw";
  for (const auto& n : table.names) os << ',' << n;
  os << '\n';
  for (Eigen::Index s = 0; s < table.draws.rows(); ++s) {
    os << s / per + 1 << ',' << s % per + 1;
    for (Eigen::Index d = 0; d < table.draws.cols(); ++d) os << ',' << fmt(table.draws(s, d));
    os << '\n';
  }
}

DrawTable read_draws_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header.size() < 3 || t.header[0] != "chain" || t.header[1] != "draw")
    throw ValidationError("parse_error", path + ": expected header chain,draw,<parameters>");
  DrawTable d;
  d.names.assign(t.header.begin() + 2, t.header.end());
  const auto S = static_cast<Eigen::Index>(t.rows.size());
  if (S == 0) throw ValidationError("parse_error", path + ": no draws");
  d.draws.resize(S, static_cast<Eigen::Index>(d.names.size()));
  std::vector<long> chain(static_cast<std::size_t>(S));
  for (std::size_t s = 0; s < t.rows.size(); ++s) {
    chain[s] = static_cast<long>(t.number(s, 0));
    for (std::size_t j = 0; j < d.names.size(); ++j) {
      const double v = t.number(s, j + 2);
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << path << ":" << t.line_of_row[s] << ": non-finite draw of '" << d.names[j] << "'";
        throw ValidationError("non_finite", os.str());
      }
      d.draws(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j)) = v;
    }
  }
  std::map<long, Eigen::Index> counts;
  for (std::size_t s = 0; s < chain.size(); ++s) {
    if (s > 0 && chain[s] < chain[s - 1])
      throw ValidationError("parse_error", path + ": draws must be grouped by chain");
    const Eigen::Index expect = ++counts[chain[s]];
    if (t.number(s, 1) != static_cast<double>(expect)) {
      std::ostringstream os;
      os << path << ":" << t.line_of_row[s] << ": expected draw " << expect << " of chain " << chain[s];
      throw ValidationError("parse_error", os.str());
    }
  }
  for (const auto& [c, cnt] : counts)
    if (cnt != counts.begin()->second)
      throw ValidationError("parse_error", path + ": chains have unequal lengths");
  d.chains = static_cast<int>(counts.size());
  return d;
}

Json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("file_not_found", "cannot open '" + path + "'");
  try {
    return Json::parse(is);
  } catch (const Json::parse_error& e) {
    throw ValidationError("parse_error", path + ": " + e.what());
  }
}

void write_json(const std::string& path, const Json& j) {
  std::ofstream os = open_out(path);
  os << j.dump(2) << '\n';
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os = open_out(path);
  os << text;
}

Json matrix_to_json(const Matrix& m) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(finite_or_null(m(i, j)));
    a.push_back(std::move(r));
  }
  return a;
}

Matrix matrix_from_json(const Json& j) {
  if (!j.is_array()) throw ValidationError("parse_error", "expected an array of rows");
  const auto n = static_cast<Eigen::Index>(j.size());
  const Eigen::Index m = n ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Matrix out(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Json& r = j[static_cast<std::size_t>(i)];
    if (!r.is_array() || static_cast<Eigen::Index>(r.size()) != m)
      throw ValidationError("parse_error", "ragged matrix in JSON");
    for (Eigen::Index c = 0; c < m; ++c) {
      const Json& v = r[static_cast<std::size_t>(c)];
      out(i, c) = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    }
  }
  return out;
}

Json vector_to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(finite_or_null(v(i)));
  return a;
}

Vector vector_from_json(const Json& j) {
  if (j.is_number()) return Vector::Constant(1, j.get<double>());
  if (!j.is_array()) throw ValidationError("parse_error", "expected a number array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v(static_cast<Eigen::Index>(i)) = j[i].is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                     : j[i].get<double>();
  return v;
}

Json to_json(const LpdMatrix& lpd) {
  return Json{{"obs_ids", lpd.obs_ids}, {"values", matrix_to_json(lpd.values)}};
}

LpdMatrix lpd_from_json(const Json& j) {
  try {
    return LpdMatrix(matrix_from_json(j.at("values")),
                     j.value("obs_ids", std::vector<std::string>{}));
  } catch (const Json::exception& e) {
    throw ValidationError("parse_error", std::string("lpd JSON: ") + e.what());
  }
}

Json to_json(const FeatureSet& f) {
  Json j;
  std::vector<int> cells(static_cast<std::size_t>(f.cells.size()));
  for (Eigen::Index i = 0; i < f.cells.size(); ++i) cells[static_cast<std::size_t>(i)] = f.cells(i);
  j["cells"] = cells;
  j["cell_labels"] = f.cell_labels;
  j["features"] = matrix_to_json(f.features);
  j["group_of_feature"] = f.group_of_feature;
  j["standardized"] = f.standardized;
  j["medians"] = vector_to_json(f.medians);
  j["scales"] = vector_to_json(f.scales);
  return j;
}

FeatureSet features_from_json(const Json& j) {
  try {
    FeatureSet f;
    const auto cells = j.value("cells", std::vector<int>{});
    if (!cells.empty()) {
      auto labels = j.value("cell_labels", std::vector<long>{});
      std::vector<long> per_obs;
      for (int c : cells) {
        if (c < 0 || (!labels.empty() && c >= static_cast<int>(labels.size())))
          throw ValidationError("parse_error", "cell index out of range in features JSON");
        per_obs.push_back(labels.empty() ? c : labels[static_cast<std::size_t>(c)]);
      }
      f = make_cell_features(per_obs);
    }
    if (j.contains("features") && !j["features"].empty()) f.features = matrix_from_json(j["features"]);
    f.group_of_feature = j.value("group_of_feature", std::vector<int>{});
    f.standardized = j.value("standardized", false);
    if (j.contains("medians")) f.medians = vector_from_json(j["medians"]);
    if (j.contains("scales")) f.scales = vector_from_json(j["scales"]);
    return f;
  } catch (const Json::exception& e) {
    throw ValidationError("parse_error", std::string("features JSON: ") + e.what());
  }
}

Json to_json(const StackingFit& fit) {
  Json j{{"method", fit.method},
         {"objective", fit.objective},
         {"iters", fit.iters},
         {"converged", fit.converged}};
  j["weights"] = fit.weights.rows() == 1 ? vector_to_json(fit.weights.row(0).transpose())
                                         : matrix_to_json(fit.weights);
  return j;
}

Json to_json(const Diagnostics& d) {
  Json rhat = Json::array();
  for (const auto& r : d.rhat) rhat.push_back(r ? Json(*r) : Json(nullptr));
  Json j{{"rhat", rhat},
         {"ess_bulk", vector_to_json(d.ess_bulk)},
         {"ess_tail", vector_to_json(d.ess_tail)},
         {"divergences", d.divergences},
         {"total_draws", d.total_draws}};
  j["max_rhat"] = d.rhat.empty() ? Json(nullptr) : finite_or_null(d.max_rhat());
  j["min_ess_bulk"] = d.ess_bulk.size() ? finite_or_null(d.min_ess_bulk()) : Json(nullptr);
  return j;
}

Json to_json(const PriorSpec& p) {
  Json j{{"kind", to_string(p.kind)},
         {"tau_mu", p.tau_mu},
         {"tau_sigma", vector_to_json(p.tau_sigma)},
         {"mu0", p.mu0},
         {"sample_mu0", p.sample_mu0},
         {"inv_gamma_a", p.inv_gamma_a},
         {"inv_gamma_b", p.inv_gamma_b},
         {"jitter", p.jitter}};
  j["kernel"] = Json{{"kind", to_string(p.kernel.kind)},
                     {"amplitude_scale", p.kernel.amplitude_scale},
                     {"length_shape", p.kernel.length_shape},
                     {"length_rate", p.kernel.length_rate}};
  if (p.omega.size()) j["omega"] = matrix_to_json(p.omega);
  return j;
}

PriorSpec prior_from_json(const Json& j) {
  try {
    PriorHyper h;
    if (j.contains("tau_mu")) h.tau_mu = j["tau_mu"].get<double>();
    if (j.contains("tau_sigma")) h.tau_sigma = vector_from_json(j["tau_sigma"]);
    if (j.contains("mu0")) h.mu0 = j["mu0"].get<double>();
    h.sample_mu0 = j.value("sample_mu0", false);
    if (j.contains("inv_gamma_a")) h.inv_gamma_a = j["inv_gamma_a"].get<double>();
    if (j.contains("inv_gamma_b")) h.inv_gamma_b = j["inv_gamma_b"].get<double>();
    if (j.contains("omega")) h.omega = matrix_from_json(j["omega"]);
    if (j.contains("kernel")) {
      const Json& k = j["kernel"];
      KernelSpec ks;
      ks.kind = kernel_kind_from_string(k.value("kind", std::string("exp_quad")));
      ks.amplitude_scale = k.value("amplitude_scale", ks.amplitude_scale);
      ks.length_shape = k.value("length_shape", ks.length_shape);
      ks.length_rate = k.value("length_rate", ks.length_rate);
      h.kernel = ks;
    }
    PriorSpec p = build_prior(prior_kind_from_string(j.value("kind", std::string("basic"))), h);
    p.jitter = j.value("jitter", p.jitter);
    return p;
  } catch (const Json::exception& e) {
    throw ValidationError("parse_error", std::string("prior JSON: ") + e.what());
  }
}

Json to_json(const SamplerConfig& c) {
  return Json{{"chains", c.chains},
              {"warmup", c.warmup},
              {"draws_per_chain", c.draws_per_chain},
              {"seed", c.seed},
              {"target_accept", c.target_accept},
              {"max_leapfrog", c.max_leapfrog},
              {"threads", c.threads},
              {"init_radius", c.init_radius},
              {"divergence_threshold", c.divergence_threshold}};
}

SamplerConfig sampler_from_json(const Json& j, SamplerConfig c) {
  try {
    c.chains = j.value("chains", c.chains);
    c.warmup = j.value("warmup", c.warmup);
    c.draws_per_chain = j.value("draws_per_chain", c.draws_per_chain);
    c.seed = j.value("seed", c.seed);
    c.target_accept = j.value("target_accept", c.target_accept);
    c.max_leapfrog = j.value("max_leapfrog", c.max_leapfrog);
    c.threads = j.value("threads", c.threads);
    c.init_radius = j.value("init_radius", c.init_radius);
    c.divergence_threshold = j.value("divergence_threshold", c.divergence_threshold);
  } catch (const Json::exception& e) {
    throw ValidationError("parse_error", std::string("sampler JSON: ") + e.what());
  }
  check_config(c);
  return c;
}

Json to_json(const SeparationReport& r) {
  return Json{{"L", r.L},
              {"epsilon", r.epsilon},
              {"epsilon_strong", r.epsilon_strong},
              {"J_masses", vector_to_json(r.J_masses)},
              {"I_masses", vector_to_json(r.I_masses)},
              {"rho", r.rho},
              {"rho_x", r.rho_x}};
}

Json to_json(const TheoremReport& r) {
  Json j;
  j["L"] = r.L;
  j["separation"] = to_json(r.sep);
  j["w_stacking"] = vector_to_json(r.w_stacking);
  j["w_approx"] = vector_to_json(r.w_approx);
  j["elpd_stacking"] = finite_or_null(r.elpd_stacking);
  j["best_single_elpd"] = finite_or_null(r.best_single_elpd);
  j["t1"] = Json{{"gap", finite_or_null(r.t1_gap)},
                 {"constant", finite_or_null(r.t1_constant)},
                 {"bound", finite_or_null(r.t1_bound)},
                 {"dropped_models", r.t1_dropped},
                 {"pass", r.t1_pass}};
  j["t2"] = Json{{"models", r.t2_models},
                 {"prob", vector_to_json(r.t2_prob)},
                 {"tight_bound", vector_to_json(r.t2_tight)},
                 {"loose_bound", vector_to_json(r.t2_loose)},
                 {"pass", r.t2_pass},
                 {"tight_pass", r.t2_tight_pass}};
  j["t3"] = Json{{"gain", finite_or_null(r.t3_gain)},
                 {"g", finite_or_null(r.t3_g)},
                 {"g_star", finite_or_null(r.t3_g_star)},
                 {"g_star_minus_eps", finite_or_null(r.t3_g_star_minus_eps)},
                 {"bound", finite_or_null(r.t3_bound)},
                 {"g_le_g_star", r.t3_g_le_g_star},
                 {"pass", r.t3_pass}};
  j["t4"] = Json{{"selection_elpd", finite_or_null(r.t4_selection_elpd)},
                 {"gain", finite_or_null(r.t4_gain)},
                 {"neg_log_rho_x", finite_or_null(r.t4_neg_log_rho_x)},
                 {"slack", finite_or_null(r.t4_slack)},
                 {"bound", finite_or_null(r.t4_bound)},
                 {"pass", r.t4_pass}};
  j["all_pass"] = r.all_pass();
  return j;
}

Json to_json(const PsisLoo& r) {
  Json status = Json::array();
  for (Eigen::Index i = 0; i < r.khat.size(); ++i) status.push_back(khat_status(r.khat(i)));
  return Json{{"lpd", vector_to_json(r.lpd)},
              {"khat", vector_to_json(r.khat)},
              {"max_khat", r.khat.size() ? finite_or_null(r.khat.maxCoeff()) : Json(nullptr)},
              {"khat_status", status},
              {"n_unreliable", r.n_unreliable}};
}

Json to_json(const StackedLoo& r) {
  Json status = Json::array();
  for (Eigen::Index i = 0; i < r.khat.size(); ++i) status.push_back(khat_status(r.khat(i)));
  return Json{{"elpd", finite_or_null(r.elpd)},
              {"pointwise", vector_to_json(r.pointwise)},
              {"khat", vector_to_json(r.khat)},
              {"max_khat", r.khat.size() ? finite_or_null(r.khat.maxCoeff()) : Json(nullptr)},
              {"khat_status", status},
              {"n_unreliable", r.n_unreliable}};
}

FitConfig fit_config_from_json(const Json& j) {
  FitConfig c;
  try {
    if (j.contains("prior")) c.prior = prior_from_json(j["prior"]);
    if (j.contains("sampler")) c.sampler = sampler_from_json(j["sampler"]);
    if (j.contains("diagnostics")) {
      const Json& d = j["diagnostics"];
      c.hier.enforce_diagnostics = d.value("enforce", c.hier.enforce_diagnostics);
      c.hier.max_rhat = d.value("max_rhat", c.hier.max_rhat);
      c.hier.min_ess = d.value("min_ess", c.hier.min_ess);
      c.hier.max_divergent_fraction = d.value("max_divergent_fraction", c.hier.max_divergent_fraction);
    }
    c.hier.model.non_centered = j.value("non_centered", true);
    for (int g : j.value("group_of_feature", std::vector<int>{})) {
      if (g < 1) throw ValidationError("bad_config", "group_of_feature entries are 1-based");
      c.group_of_feature.push_back(g - 1);
    }
    if (j.contains("time")) {
      const Json& t = j["time"];
      if (t.contains("pi")) {
        TimeWeights tw;
        tw.pi = vector_from_json(t["pi"]);
        tw.gamma = t.value("gamma", 0.0);
        tw.horizon = t.value("horizon", 0.0);
        if (tw.pi.size() == 0 || (tw.pi.array() <= 0.0).any() || !tw.pi.allFinite())
          throw ValidationError("bad_config", "time weights must be positive and finite");
        c.time = tw;
      } else {
        c.time = time_reweight(vector_from_json(t.at("t")), t.at("horizon").get<double>(),
                               t.value("gamma", 0.0));
      }
    }
  } catch (const Json::exception& e) {
    throw ValidationError("parse_error", std::string("config JSON: ") + e.what());
  }
  return c;
}

Json to_json(const FitConfig& c) {
  Json j{{"prior", to_json(c.prior)},
         {"sampler", to_json(c.sampler)},
         {"diagnostics", Json{{"enforce", c.hier.enforce_diagnostics},
                              {"max_rhat", c.hier.max_rhat},
                              {"min_ess", c.hier.min_ess},
                              {"max_divergent_fraction", c.hier.max_divergent_fraction}}},
         {"non_centered", c.hier.model.non_centered}};
  std::vector<int> g;
  for (int x : c.group_of_feature) g.push_back(x + 1);
  j["group_of_feature"] = g;
  if (c.time)
    j["time"] = Json{{"gamma", c.time->gamma},
                     {"horizon", c.time->horizon},
                     {"pi", vector_to_json(c.time->pi)}};
  return j;
}

}  // namespace hstack
