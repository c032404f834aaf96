#include "hstack/cli.hpp"

#include "hstack/hier.hpp"
#include "hstack/io.hpp"
#include "hstack/optimize.hpp"
#include "hstack/psis.hpp"
#include "hstack/synth.hpp"
#include "hstack/theory.hpp"

#include "CLI11.hpp"

#include <boost/version.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace hstack {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Json file_digest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return nullptr;
  std::ostringstream ss;
  ss << is.rdbuf();
  return hex64(fnv1a(ss.str()));
}

// Bookkeeping for one invocation; the manifest is written exactly once.
struct Run {
  std::string command;
  std::vector<std::string> args;
  std::string out_dir;
  Json options = Json::object();
  Json inputs = Json::array();
  Json outputs = Json::array();
  std::uint64_t seed = 1;
  int threads = 1;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void input(const std::string& path) {
    inputs.push_back(Json{{"path", path}, {"fnv1a64", file_digest(path)}});
  }

  std::string output(const std::string& name) {
    const std::string p = (fs::path(out_dir) / name).string();
    outputs.push_back(p);
    return p;
  }

  void prepare_out() {
    if (out_dir.empty()) throw ValidationError("missing_option", "--out is required");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw ValidationError("file_not_writable", "cannot create '" + out_dir + "': " + ec.message());
  }

  void finish(const std::string& status, int code, const Json& error) {
    if (out_dir.empty()) return;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) return;
    Json m;
    m["command"] = command;
    m["args"] = args;
    m["options"] = options;
    m["config_hash"] = hex64(fnv1a(options.dump()));
    m["seed"] = seed;
    m["threads"] = threads;
    m["inputs"] = inputs;
    Json outs = Json::array();
    for (const auto& p : outputs)
      outs.push_back(Json{{"path", p}, {"fnv1a64", file_digest(p.get<std::string>())}});
    m["outputs"] = outs;
    m["status"] = status;
    m["exit_code"] = code;
    if (!error.is_null()) m["error"] = error;
    m["versions"] = Json{{"hstack", kVersion},
                         {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                       std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                       std::to_string(EIGEN_MINOR_VERSION)},
                         {"boost", BOOST_LIB_VERSION},
                         {"compiler", __VERSION__}};
    m["wall_time_s"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    try {
      write_json((fs::path(out_dir) / "manifest.json").string(), m);
    } catch (const std::exception&) {
    }
  }
};

std::vector<double> parse_grid(const std::string& spec, const std::string& what) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  std::string p;
  while (std::getline(ss, p, ':')) parts.push_back(p);
  double a = 0, b = 0, step = 0;
  try {
    if (parts.size() != 3) throw std::invalid_argument("parts");
    std::size_t used = 0;
    a = std::stod(parts[0], &used);
    if (used != parts[0].size()) throw std::invalid_argument("a");
    b = std::stod(parts[1], &used);
    if (used != parts[1].size()) throw std::invalid_argument("b");
    step = std::stod(parts[2], &used);
    if (used != parts[2].size()) throw std::invalid_argument("step");
  } catch (const std::exception&) {
    throw ValidationError("bad_grid", what + " '" + spec + "' must look like start:stop:step");
  }
  if (!(step > 0.0) || !(b >= a) || !std::isfinite(a) || !std::isfinite(b))
    throw ValidationError("bad_grid", what + " '" + spec + "' needs start <= stop and step > 0");
  const double count = std::floor((b - a) / step + 1e-9) + 1.0;
  if (count > 100000) throw ValidationError("bad_grid", what + " '" + spec + "' has too many points");
  std::vector<double> out;
  for (int i = 0; i < static_cast<int>(count); ++i)
    out.push_back(std::round((a + i * step) * 1e12) / 1e12);
  return out;
}

// Features aligned with the lpd rows; obs ids must agree row by row.
FeatureSet load_features(Run& run, const std::string& path, const LpdMatrix& lpd, bool rectify,
                         bool standardize) {
  if (path.empty()) return make_empty_features(lpd.n());
  run.input(path);
  FeatureFile f = read_features_csv(path);
  if (static_cast<Eigen::Index>(f.obs_ids.size()) != lpd.n()) {
    std::ostringstream os;
    os << "features file '" << path << "' has n=" << f.obs_ids.size() << " rows but lpd has n=" << lpd.n();
    throw ValidationError("dimension_mismatch", os.str());
  }
  for (std::size_t i = 0; i < f.obs_ids.size(); ++i)
    if (f.obs_ids[i] != lpd.obs_ids[i]) {
      std::ostringstream os;
      os << "obs_id mismatch at row " << i + 1 << ": lpd has '" << lpd.obs_ids[i]
         << "', features have '" << f.obs_ids[i] << "'";
      throw ValidationError("dimension_mismatch", os.str());
    }
  if (rectify && f.features.num_features() > 0) {
    RectifyOptions ro;
    ro.standardize = standardize;
    FeatureSet r = rectify_features(f.features.features, ro);
    r.cells = f.features.cells;
    r.cell_labels = f.features.cell_labels;
    return r;
  }
  return f.features;
}

Json weights_json(const StackingFit& fit, const std::vector<std::string>& models) {
  Json j = to_json(fit);
  j["models"] = models;
  return j;
}

SimplexWeights pointwise_from_cells(const SimplexWeights& cell_w, const FeatureSet& feats) {
  SimplexWeights w(feats.n(), cell_w.cols());
  for (Eigen::Index i = 0; i < feats.n(); ++i) w.row(i) = cell_w.row(feats.cells(i));
  return w;
}

// ---------------------------------------------------------------- fit

struct FitArgs {
  std::string method = "complete";
  std::string lpd, features, config, out;
  bool rectify = false, standardize = false;
  int chains = 0, warmup = -1, draws = 0;
};

void cmd_fit(Run& run, const FitArgs& a) {
  run.prepare_out();
  run.input(a.lpd);
  std::vector<std::string> models;
  LpdMatrix lpd_raw = read_lpd_csv(a.lpd, &models);
  FitConfig cfg;
  if (!a.config.empty()) {
    run.input(a.config);
    cfg = fit_config_from_json(read_json(a.config));
  }
  FeatureSet feats_raw = load_features(run, a.features, lpd_raw, a.rectify, a.standardize);
  if (!cfg.group_of_feature.empty()) feats_raw.group_of_feature = cfg.group_of_feature;
  auto [lpd, feats] = validate(lpd_raw, feats_raw);

  cfg.sampler.seed = run.seed;
  cfg.sampler.threads = run.threads;
  if (a.chains > 0) cfg.sampler.chains = a.chains;
  if (a.warmup >= 0) cfg.sampler.warmup = a.warmup;
  if (a.draws > 0) cfg.sampler.draws_per_chain = a.draws;
  run.options["config"] = to_json(cfg);

  if (a.method == "complete") {
    StackingFit fit = fit_complete_pooling(lpd);
    write_json(run.output("weights.json"), weights_json(fit, models));
  } else if (a.method == "nopool") {
    if (!feats.has_cells())
      throw ValidationError("missing_cells", "nopool needs a cell column in the features file");
    StackingFit fit = fit_no_pooling(lpd, feats);
    Json j = weights_json(fit, models);
    j["cells"] = feats.cell_labels;
    j["pointwise"] = matrix_to_json(pointwise_from_cells(fit.weights, feats));
    write_json(run.output("weights.json"), j);
  } else if (a.method == "additive") {
    AdditiveFit fit = fit_additive_mle(lpd, feats);
    Json j{{"method", "additive"},
           {"models", models},
           {"mu", vector_to_json(fit.mu)},
           {"alpha", matrix_to_json(fit.alpha)},
           {"objective", fit.objective},
           {"iters", fit.iters},
           {"converged", fit.converged},
           {"hit_cap", fit.hit_cap},
           {"weights", vector_to_json(fit.weights.colwise().mean().transpose())},
           {"pointwise", matrix_to_json(fit.weights)}};
    write_json(run.output("weights.json"), j);
  } else if (a.method == "hier") {
    auto model = std::make_shared<const StackingModel>(lpd, feats, cfg.prior, cfg.time, cfg.hier.model);
    const LogDensityFn logp = [model](const Vector& x, Vector* g) { return model->log_posterior(x, g); };
    const SampleResult r = sample(logp, model->pack(model->zeros()), cfg.sampler);
    WeightDraws d = make_weight_draws(model, r.merged(), cfg.sampler.chains);
    d.diagnostics = r.diagnostics;
    d.chain_stats = r.stats;

    write_draws_csv(run.output("draws.csv"), DrawTable{model->parameter_names(), d.draws, d.chains});
    Json diag = to_json(d.diagnostics);
    diag["parameters"] = model->parameter_names();
    Json chains = Json::array();
    for (const auto& cs : d.chain_stats)
      chains.push_back(Json{{"divergences", cs.divergences},
                            {"warmup_divergences", cs.warmup_divergences},
                            {"mean_accept", cs.mean_accept},
                            {"step_size", cs.step_size}});
    diag["chains"] = chains;
    write_json(run.output("diagnostics.json"), diag);

    Json j{{"method", "hier"},
           {"models", models},
           {"weights", vector_to_json(d.mean_weights.colwise().mean().transpose())},
           {"pointwise", matrix_to_json(d.mean_weights)},
           {"draws", d.size()}};
    if (feats.has_cells() && feats.num_features() == 0) {
      const FeatureSet cells = make_cell_features(feats.cell_labels);
      j["cells"] = feats.cell_labels;
      j["cell_weights"] = matrix_to_json(predict_weights(d, cells, false));
    }
    write_json(run.output("weights.json"), j);
    Json saved{{"lpd", to_json(lpd)}, {"features", to_json(feats)}, {"config", to_json(cfg)}};
    if (cfg.time) saved["time_pi"] = vector_to_json(cfg.time->pi);
    write_json(run.output("model.json"), saved);
    check_diagnostics(d, cfg.hier);
  } else {
    throw ValidationError("bad_option", "unknown method '" + a.method + "'");
  }
}

// ---------------------------------------------------------------- loo

struct LooArgs {
  std::string fit_dir, draws, lpd, weights, out;
};

// Compares a file written by an earlier fit with the digest in its manifest.
void verify_fit_output(const std::string& fit_dir, const std::string& path) {
  const fs::path mpath = fs::path(fit_dir) / "manifest.json";
  if (!fs::exists(mpath)) return;
  const Json m = read_json(mpath.string());
  if (!m.contains("outputs")) return;
  const std::string name = fs::path(path).filename().string();
  for (const auto& o : m["outputs"]) {
    if (!o.is_object() || fs::path(o.value("path", "")).filename().string() != name) continue;
    if (o.value("fnv1a64", Json()) != file_digest(path))
      throw ValidationError("corrupted_input",
                            "'" + path + "' does not match the digest recorded by the fit");
    return;
  }
}

void cmd_loo(Run& run, const LooArgs& a) {
  run.prepare_out();
  StackedLoo res;
  Json extra;
  if (!a.fit_dir.empty()) {
    const std::string mpath = (fs::path(a.fit_dir) / "model.json").string();
    const std::string dpath = a.draws.empty() ? (fs::path(a.fit_dir) / "draws.csv").string() : a.draws;
    run.input(mpath);
    run.input(dpath);
    if (a.draws.empty()) verify_fit_output(a.fit_dir, dpath);
    const Json saved = read_json(mpath);
    LpdMatrix lpd = lpd_from_json(saved.at("lpd"));
    FeatureSet feats = features_from_json(saved.at("features"));
    FitConfig cfg = fit_config_from_json(saved.at("config"));
    std::optional<TimeWeights> tw;
    if (saved.contains("time_pi")) {
      TimeWeights t;
      t.pi = vector_from_json(saved["time_pi"]);
      tw = t;
    }
    auto model = std::make_shared<const StackingModel>(lpd, feats, cfg.prior, tw, cfg.hier.model);
    DrawTable table = read_draws_csv(dpath);
    if (table.draws.cols() != model->dim()) {
      std::ostringstream os;
      os << "draw table '" << dpath << "' has " << table.draws.cols() << " parameters, model expects "
         << model->dim();
      throw ValidationError("dimension_mismatch", os.str());
    }
    if (table.names != model->parameter_names())
      throw ValidationError("dimension_mismatch", "draw table parameter names do not match the model");
    WeightDraws d = make_weight_draws(model, table.draws, table.chains);
    res = stacked_loo(lpd, d);
    extra["draws"] = d.size();
  } else {
    if (a.lpd.empty() || a.weights.empty())
      throw ValidationError("missing_option", "loo needs --fit DIR, or --lpd FILE with --weights FILE");
    run.input(a.lpd);
    run.input(a.weights);
    LpdMatrix lpd = read_lpd_csv(a.lpd);
    validate_lpd(lpd);
    const Json wj = read_json(a.weights);
    SimplexWeights w;
    try {
      if (wj.contains("pointwise")) {
        w = matrix_from_json(wj["pointwise"]);
      } else {
        const Vector v = vector_from_json(wj.at("weights"));
        w = v.transpose().replicate(lpd.n(), 1);
      }
    } catch (const Json::exception& e) {
      throw ValidationError("parse_error", a.weights + ": " + e.what());
    }
    if (w.rows() != lpd.n() || w.cols() != lpd.K()) {
      std::ostringstream os;
      os << "weights are " << w.rows() << "x" << w.cols() << " but lpd is " << lpd.n() << "x" << lpd.K();
      throw ValidationError("dimension_mismatch", os.str());
    }
    if (!is_simplex(w, 1e-8)) throw ValidationError("not_simplex", "weights rows must lie on the simplex");
    res = stacked_loo(lpd, std::vector<SimplexWeights>{w});
    extra["draws"] = 1;
  }
  Json j = to_json(res);
  j["draws"] = extra["draws"];
  write_json(run.output("loo.json"), j);
}

// ---------------------------------------------------------------- psis-loo

void cmd_psis(Run& run, const std::vector<std::string>& files) {
  run.prepare_out();
  std::vector<LogLikDraws> models;
  for (const auto& f : files) {
    run.input(f);
    models.push_back(read_loglik_csv(f));
  }
  std::vector<PsisLoo> reports;
  LpdMatrix lpd = psis_loo_matrix(models, &reports);
  write_lpd_csv(run.output("lpd.csv"), lpd);
  Json j = Json::array();
  for (std::size_t k = 0; k < reports.size(); ++k) {
    Json r = to_json(reports[k]);
    r["file"] = files[k];
    r["draws"] = models[k].rows();
    j.push_back(r);
  }
  write_json(run.output("psis.json"), Json{{"models", j}});
}

// ---------------------------------------------------------------- theory

struct TheoryArgs {
  std::string scenario = "spike-slab";
  std::string scenario_file;
  std::string delta_grid = "0.01:0.49:0.02";
  std::string L_grid = "0:5:0.05";
  std::optional<double> L;
  Eigen::Index cells = 2000;
  int count = 50;
  std::vector<double> L_values{0.25, 1.0, 3.0};
  std::vector<double> bma_n{1.0, 10.0};
};

void apply_scenario_file(Run& run, TheoryArgs& a, const CLI::App& sub) {
  if (a.scenario_file.empty()) return;
  run.input(a.scenario_file);
  const Json j = read_json(a.scenario_file);
  try {
    auto unset = [&](const char* flag) { return sub.count(flag) == 0; };
    if (j.contains("kind") && unset("--scenario")) {
      std::string k = j["kind"].get<std::string>();
      std::replace(k.begin(), k.end(), '_', '-');
      a.scenario = k == "piecewise-custom" ? "piecewise" : k;
    }
    if (j.contains("delta_grid") && unset("--delta-grid")) a.delta_grid = j["delta_grid"].get<std::string>();
    if (j.contains("L_grid") && unset("--L-grid")) a.L_grid = j["L_grid"].get<std::string>();
    if (j.contains("L") && unset("--L")) a.L = j["L"].get<double>();
    if (j.contains("cells") && unset("--cells")) a.cells = j["cells"].get<Eigen::Index>();
    if (j.contains("count") && unset("--count")) a.count = j["count"].get<int>();
    if (j.contains("L_values") && unset("--L-values")) a.L_values = j["L_values"].get<std::vector<double>>();
    if (j.contains("bma_n") && unset("--bma-n")) a.bma_n = j["bma_n"].get<std::vector<double>>();
  } catch (const Json::exception& e) {
    throw ValidationError("parse_error", a.scenario_file + ": " + e.what());
  }
}

Json theory_spike_slab(Run& run, const TheoryArgs& a) {
  const std::vector<double> deltas = parse_grid(a.delta_grid, "delta grid");
  const std::vector<double> Ls = parse_grid(a.L_grid, "L grid");
  for (double d : deltas)
    if (!(d > 0.0 && d < 1.0))
      throw ValidationError("bad_grid", "delta grid values must lie in (0, 1)");
  for (double n : a.bma_n)
    if (!(n > 0.0)) throw ValidationError("bad_option", "--bma-n values must be positive");

  std::ostringstream wcsv, ecsv, gcsv;
  for (auto* s : {&wcsv, &ecsv, &gcsv}) *s << std::setprecision(10);
  wcsv << "delta,stacking_defined,w1_stacking,w2_stacking";
  for (double n : a.bma_n) wcsv << ",w1_bma_n" << n;
  wcsv << '\n';
  ecsv << "delta,L,epsilon,epsilon_strong\n";
  gcsv << "delta,L,gain,g,g_star,g_star_minus_eps,bound,pass\n";

  Json points = Json::array();
  bool all_pass = true;
  std::vector<double> w1s, w1_deltas;
  std::vector<std::vector<double>> bma(a.bma_n.size());
  for (double d : deltas) {
    const Scenario sc = spike_slab_scenario(d, a.cells);
    const bool defined = std::abs(d - 0.5) > 1e-12;
    Json p{{"delta", d}, {"stacking_defined", defined}};
    Json bj = Json::object();
    for (std::size_t b = 0; b < a.bma_n.size(); ++b) {
      const double w = pseudo_bma_weight(sc, a.bma_n[b])(0);
      bma[b].push_back(w);
      std::ostringstream key;
      key << a.bma_n[b];
      bj[key.str()] = w;
    }
    p["bma_w1"] = bj;
    p["model_elpds"] = vector_to_json(model_elpds(sc));
    wcsv << d << ',' << (defined ? 1 : 0);
    if (defined) {
      const double L = a.L ? *a.L : max_separation_margin(sc);
      const TheoremReport r = theorem_bounds(sc, L);
      all_pass = all_pass && r.all_pass();
      p["w_stacking"] = vector_to_json(r.w_stacking);
      p["theorems"] = to_json(r);
      w1s.push_back(r.w_stacking(0));
      w1_deltas.push_back(d);
      wcsv << ',' << r.w_stacking(0) << ',' << r.w_stacking(1);
      gcsv << d << ',' << L << ',' << r.t3_gain << ',' << r.t3_g << ',' << r.t3_g_star << ','
           << r.t3_g_star_minus_eps << ',' << r.t3_bound << ',' << (r.t3_pass ? 1 : 0) << '\n';
    } else {
      p["w_stacking"] = nullptr;
      wcsv << ",,";
    }
    for (std::size_t b = 0; b < a.bma_n.size(); ++b) wcsv << ',' << bma[b].back();
    wcsv << '\n';
    Vector Lv(static_cast<Eigen::Index>(Ls.size()));
    for (std::size_t i = 0; i < Ls.size(); ++i) Lv(static_cast<Eigen::Index>(i)) = Ls[i];
    const SeparationProfile prof = separation_profile(sc, Lv);
    for (Eigen::Index i = 0; i < Lv.size(); ++i)
      ecsv << d << ',' << Lv(i) << ',' << prof.epsilon(i) << ',' << prof.epsilon_strong(i) << '\n';
    points.push_back(p);
  }
  write_text(run.output("weights_vs_delta.csv"), wcsv.str());
  write_text(run.output("epsilon_vs_L.csv"), ecsv.str());
  write_text(run.output("gain_vs_bound.csv"), gcsv.str());

  const double tol = 1e-6;
  bool non_inc = true, non_dec = true;
  std::optional<double> w2_zero_from;
  for (std::size_t i = 1; i < w1s.size(); ++i) {
    non_inc = non_inc && w1s[i] <= w1s[i - 1] + tol;
    non_dec = non_dec && w1s[i] >= w1s[i - 1] - tol;
  }
  for (std::size_t i = w1s.size(); i-- > 0;) {
    if (w1s[i] < 1.0 - 1e-4) break;
    w2_zero_from = w1_deltas[i];
  }
  Json mono{{"w1_stacking_non_increasing", non_inc},
            {"w1_stacking_non_decreasing", non_dec},
            {"w2_zero_from_delta", w2_zero_from ? Json(*w2_zero_from) : Json(nullptr)}};
  Json strict = Json::object();
  for (std::size_t b = 0; b < a.bma_n.size(); ++b) {
    bool dec = true;
    for (std::size_t i = 1; i < bma[b].size(); ++i) dec = dec && bma[b][i] < bma[b][i - 1];
    std::ostringstream key;
    key << a.bma_n[b];
    strict[key.str()] = dec;
  }
  mono["w1_bma_strictly_decreasing"] = strict;
  return Json{{"scenario", "spike-slab"}, {"cells", a.cells}, {"points", points},
              {"monotonicity", mono}, {"all_pass", all_pass}};
}

Json theory_single(Run& run, const Scenario& sc, const TheoryArgs& a) {
  const double L = a.L ? *a.L : max_separation_margin(sc);
  const TheoremReport r = theorem_bounds(sc, L);
  const std::vector<double> Ls = parse_grid(a.L_grid, "L grid");
  Vector Lv(static_cast<Eigen::Index>(Ls.size()));
  for (std::size_t i = 0; i < Ls.size(); ++i) Lv(static_cast<Eigen::Index>(i)) = Ls[i];
  const SeparationProfile prof = separation_profile(sc, Lv);
  std::ostringstream ecsv;
  ecsv << "L,epsilon,epsilon_strong\n";
  for (Eigen::Index i = 0; i < Lv.size(); ++i)
    ecsv << Lv(i) << ',' << prof.epsilon(i) << ',' << prof.epsilon_strong(i) << '\n';
  write_text(run.output("epsilon_vs_L.csv"), ecsv.str());
  return Json{{"scenario", sc.kind},
              {"model_elpds", vector_to_json(model_elpds(sc))},
              {"pointwise_selection_elpd", pointwise_selection_elpd(sc)},
              {"theorems", to_json(r)},
              {"all_pass", r.all_pass()}};
}

Json theory_piecewise(Run& run, const TheoryArgs& a) {
  if (a.count < 1) throw ValidationError("bad_option", "--count must be positive");
  if (a.L_values.empty()) throw ValidationError("bad_option", "--L-values must not be empty");
  Json items = Json::array();
  bool all_pass = true;
  std::ostringstream gcsv;
  gcsv << "scenario,K,L,gain,g_star_minus_eps,bound,t1,t2,t3,t4\n";
  for (int s = 0; s < a.count; ++s) {
    const Scenario sc = piecewise_scenario(stream_seed(run.seed, static_cast<std::uint64_t>(s)));
    Json reps = Json::array();
    for (double L : a.L_values) {
      const TheoremReport r = theorem_bounds(sc, L);
      all_pass = all_pass && r.all_pass();
      reps.push_back(to_json(r));
      gcsv << s << ',' << sc.K() << ',' << L << ',' << r.t3_gain << ',' << r.t3_g_star_minus_eps << ','
           << r.t3_bound << ',' << r.t1_pass << ',' << r.t2_pass << ',' << r.t3_pass << ','
           << r.t4_pass << '\n';
    }
    items.push_back(Json{{"index", s}, {"K", sc.K()}, {"reports", reps}});
  }
  write_text(run.output("gain_vs_bound.csv"), gcsv.str());
  return Json{{"scenario", "piecewise"}, {"count", a.count}, {"scenarios", items}, {"all_pass", all_pass}};
}

void cmd_theory(Run& run, TheoryArgs a, const CLI::App& sub) {
  run.prepare_out();
  apply_scenario_file(run, a, sub);
  run.options["resolved"] = Json{{"scenario", a.scenario}, {"delta_grid", a.delta_grid},
                                 {"L_grid", a.L_grid}, {"cells", a.cells}, {"count", a.count}};
  if (a.L) run.options["resolved"]["L"] = *a.L;
  if (a.cells < 4 || a.cells % 4 != 0)
    throw ValidationError("bad_option", "--cells must be a positive multiple of 4");
  Json report;
  if (a.scenario == "spike-slab") {
    report = theory_spike_slab(run, a);
  } else if (a.scenario == "bernoulli-sqrt") {
    report = theory_single(run, bernoulli_sqrt_scenario(), a);
  } else if (a.scenario == "piecewise") {
    report = theory_piecewise(run, a);
  } else {
    throw ValidationError("bad_option", "unknown scenario '" + a.scenario + "'");
  }
  write_json(run.output("theory.json"), report);
}

// ---------------------------------------------------------------- simulate

void cmd_simulate(Run& run, GenConfig g) {
  run.prepare_out();
  g.seed = run.seed;
  g.check();
  Json truth{{"kind", g.kind}, {"seed", g.seed}, {"n", g.n}};
  if (g.kind == "spike-slab") {
    const SpikeSlabData d = gen_spike_slab(g.delta, g.n, g.seed);
    write_lpd_csv(run.output("lpd.csv"), d.lpd);
    std::ostringstream os;
    os << "obs_id,y\n" << std::setprecision(17);
    for (Eigen::Index i = 0; i < d.y.size(); ++i) os << i + 1 << ',' << d.y(i) << '\n';
    write_text(run.output("data.csv"), os.str());
    truth["delta"] = g.delta;
    truth["model_elpds"] = vector_to_json(model_elpds(d.scenario));
    if (std::abs(g.delta - 0.5) > 1e-12 && g.delta > 0.0 && g.delta < 1.0)
      truth["stacking_weights"] = vector_to_json(population_stacking(d.scenario));
    truth["J_masses"] = vector_to_json(winner_partition(d.scenario).J_masses);
  } else if (g.kind == "bernoulli-sqrt") {
    const BernoulliData d = gen_bernoulli_sqrt(g.n, g.seed);
    write_lpd_csv(run.output("lpd.csv"), d.lpd);
    FeatureSet f;
    f.features = d.x;
    write_features_csv(run.output("features.csv"), f, d.lpd.obs_ids);
    std::ostringstream os;
    os << "obs_id,x,y\n" << std::setprecision(17);
    for (Eigen::Index i = 0; i < d.x.size(); ++i) os << i + 1 << ',' << d.x(i) << ',' << d.y(i) << '\n';
    write_text(run.output("data.csv"), os.str());
    truth["model_elpds"] = vector_to_json(model_elpds(d.scenario));
  } else if (g.kind == "cells" || g.kind == "continuous") {
    CellsData d;
    if (g.kind == "cells") {
      std::vector<Eigen::Index> npc = g.n_per_cell;
      if (npc.empty()) npc.assign(static_cast<std::size_t>(g.J), std::max<Eigen::Index>(1, g.n / g.J));
      d = gen_cells(g.J, g.K, npc, g.effect_size, g.seed);
      for (auto& l : d.features.cell_labels) ++l;  // 1-based in files
      truth["n_per_cell"] = npc;
    } else {
      d = gen_continuous(g.n, g.K, g.effect_size, g.seed);
    }
    write_lpd_csv(run.output("lpd.csv"), d.lpd);
    write_features_csv(run.output("features.csv"), d.features, d.lpd.obs_ids);
    truth["effect_size"] = g.effect_size;
    truth["true_weights"] = matrix_to_json(d.true_weights);
    truth["component_probs"] = matrix_to_json(d.component_probs);
  } else {
    const NealData d = gen_neal_regression(g.n, g.seed, g.outlier_prob);
    std::ostringstream os;
    os << "obs_id,x,y,outlier\n" << std::setprecision(17);
    long outliers = 0;
    for (Eigen::Index i = 0; i < d.x.size(); ++i) {
      const bool o = d.outlier[static_cast<std::size_t>(i)];
      outliers += o;
      os << i + 1 << ',' << d.x(i) << ',' << d.y(i) << ',' << (o ? 1 : 0) << '\n';
    }
    write_text(run.output("data.csv"), os.str());
    truth["outlier_prob"] = g.outlier_prob;
    truth["outliers"] = outliers;
  }
  write_json(run.output("truth.json"), truth);
}

Json error_json(const std::string& code, const std::string& message, int exit_code) {
  return Json{{"error", code}, {"message", message}, {"exit_code", exit_code}};
}

}  // namespace

int default_threads() {
  if (const char* s = std::getenv("HSTACK_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(s, &end, 10);
    if (end != s && *end == '\0' && v > 0 && v <= 1024) return static_cast<int>(v);
  }
  return 1;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Hierarchical stacking of predictive distributions", "hstack"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Run run;
  for (int i = 0; i < argc; ++i) run.args.emplace_back(argv[i]);
  run.threads = default_threads();
  auto common = [&](CLI::App* s, std::string& out) {
    s->add_option("--out", out, "Output directory")->required();
    s->add_option("--seed", run.seed, "Random seed; all randomness derives from it");
    s->add_option("--threads", run.threads, "Worker threads (default: HSTACK_THREADS or 1)")
        ->check(CLI::PositiveNumber);
  };

  FitArgs fa;
  CLI::App* fit = app.add_subcommand("fit", "Fit stacking weights");
  fit->add_option("--method", fa.method, "complete | nopool | additive | hier")
      ->check(CLI::IsMember({"complete", "nopool", "additive", "hier"}));
  fit->add_option("--lpd", fa.lpd, "LOO log density CSV (obs_id,M1..MK)")->required();
  fit->add_option("--features", fa.features, "Feature CSV (obs_id[,cell],f1..fM)");
  fit->add_option("--prior,--config", fa.config, "JSON config: prior, sampler, diagnostics, time");
  fit->add_flag("--rectify", fa.rectify, "Replace continuous inputs by rectified median splits");
  fit->add_flag("--standardize", fa.standardize, "Scale rectified features to unit variance");
  fit->add_option("--chains", fa.chains, "Override sampler chains");
  fit->add_option("--warmup", fa.warmup, "Override warmup iterations");
  fit->add_option("--draws", fa.draws, "Override draws per chain");
  common(fit, fa.out);

  LooArgs la;
  CLI::App* loo = app.add_subcommand("loo", "Leave-one-out elpd of the stacked model");
  loo->add_option("--fit", la.fit_dir, "Output directory of `fit --method hier`");
  loo->add_option("--draws", la.draws, "Draw table (default: <fit>/draws.csv)");
  loo->add_option("--lpd", la.lpd, "LOO log density CSV, with --weights");
  loo->add_option("--weights", la.weights, "weights.json of a point fit");
  common(loo, la.out);

  std::vector<std::string> loglik;
  std::string psis_out;
  CLI::App* psis = app.add_subcommand("psis-loo", "PSIS-LOO log densities from per-draw log likelihoods");
  psis->add_option("--loglik", loglik, "S x n log likelihood CSV, one per model")->required();
  common(psis, psis_out);

  TheoryArgs ta;
  std::string theory_out;
  double L_opt = 0.0;
  CLI::App* theory = app.add_subcommand("theory", "Population-level bound checks");
  theory->add_option("--scenario", ta.scenario, "spike-slab | bernoulli-sqrt | piecewise");
  theory->add_option("--scenario-file", ta.scenario_file, "JSON scenario spec");
  theory->add_option("--delta-grid", ta.delta_grid, "start:stop:step");
  theory->add_option("--L-grid", ta.L_grid, "Margins for the epsilon profile, start:stop:step");
  CLI::Option* L_flag = theory->add_option("--L", L_opt, "Separation margin (default: largest with epsilon = 0)");
  theory->add_option("--cells", ta.cells, "Grid cells of the spike-slab scenario");
  theory->add_option("--count", ta.count, "Number of random piecewise scenarios");
  theory->add_option("--L-values", ta.L_values, "Margins checked on piecewise scenarios")->delimiter(',');
  theory->add_option("--bma-n", ta.bma_n, "Sample sizes of the pseudo-BMA curves")->delimiter(',');
  common(theory, theory_out);

  GenConfig gc;
  std::string sim_out;
  CLI::App* sim = app.add_subcommand("simulate", "Generate synthetic data sets");
  sim->add_option("--kind", gc.kind, "spike-slab | bernoulli-sqrt | cells | continuous | neal");
  sim->add_option("--n", gc.n, "Observations");
  sim->add_option("--delta", gc.delta, "Slab probability");
  sim->add_option("--J", gc.J, "Cells");
  sim->add_option("--K", gc.K, "Models");
  sim->add_option("--n-per-cell", gc.n_per_cell, "Observations per cell")->delimiter(',');
  sim->add_option("--effect-size", gc.effect_size, "Spread of the true cell weights on the logit scale");
  sim->add_option("--outlier-prob", gc.outlier_prob, "Outlier probability (neal)");
  common(sim, sim_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << error_json("usage", e.what(), kExitInput).dump() << '\n';
    return kExitInput;
  }

  CLI::App* sub = app.get_subcommands().front();
  run.command = sub->get_name();
  run.options["args"] = std::vector<std::string>(run.args.begin() + 1, run.args.end());
  int code = kExitOk;
  Json err;
  try {
    if (sub == fit) {
      run.out_dir = fa.out;
      cmd_fit(run, fa);
    } else if (sub == loo) {
      run.out_dir = la.out;
      cmd_loo(run, la);
    } else if (sub == psis) {
      run.out_dir = psis_out;
      cmd_psis(run, loglik);
    } else if (sub == theory) {
      run.out_dir = theory_out;
      if (L_flag->count()) ta.L = L_opt;
      cmd_theory(run, ta, *theory);
    } else if (sub == sim) {
      run.out_dir = sim_out;
      cmd_simulate(run, gc);
    }
  } catch (const ValidationError& e) {
    code = kExitInput;
    err = error_json(e.code(), e.what(), code);
  } catch (const DiagnosticError& e) {
    code = kExitDiagnostic;
    err = error_json("diagnostics", e.what(), code);
  } catch (const std::exception& e) {
    code = kExitInternal;
    err = error_json("internal", e.what(), code);
  }
  if (code != kExitOk) {
    std::cerr << err.dump() << '\n';
    if (!run.out_dir.empty()) {
      try {
        write_json(run.output("error.json"), err);
      } catch (const std::exception&) {
      }
    }
  }
  run.finish(code == kExitOk ? "ok" : "failed", code, err);
  return code;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace hstack
