#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "ctds/ctds.hpp"

namespace ctds::cli {

namespace fs = std::filesystem;

struct Context {
  RunConfig cfg;
  fs::path out_dir;
  std::size_t threads = 1;
  std::uint64_t seed = 1;
};

inline Context make_context(RunConfig cfg) {
  Context c{std::move(cfg), {}, 1, 1};
  c.out_dir = c.cfg.resolve(c.cfg.get("output_dir", "out"), false);
  fs::create_directories(c.out_dir);
  c.threads = static_cast<std::size_t>(c.cfg.get_int("threads", static_cast<long long>(default_threads())));
  c.seed = static_cast<std::uint64_t>(c.cfg.get_int("seed", 1));
  return c;
}

inline std::ofstream open_output(const Context& c, const std::string& name) {
  const auto path = (c.out_dir / name).string();
  std::ofstream out(path);
  if (!out) throw IoError(detail::concat("cannot open '", path, "' for writing"));
  out << std::setprecision(17);
  return out;
}

inline void write_json(const Context& c, const std::string& name, const json& j) { open_output(c, name) << j.dump(2) << '\n'; }

inline std::string numbered(const std::string& stem, std::size_t k, const std::string& ext) {
  std::ostringstream s;
  s << stem << '_' << std::setw(3) << std::setfill('0') << k << ext;
  return s.str();
}

// ---- configuration pieces --------------------------------------------------

inline Track load_track(const RunConfig& cfg) {
  const auto tracks = read_tracks_csv(cfg.get_path("telemetry"));
  if (tracks.empty()) throw ConfigError("telemetry file has no fixes");
  if (!cfg.has("track_id")) return tracks.front();
  const auto id = cfg.get("track_id");
  for (const auto& t : tracks)
    if (t.id == id) return t;
  throw ConfigError(detail::concat("telemetry has no track '", id, "'"));
}

inline CtcrwParams ctcrw_init(const RunConfig& cfg) {
  CtcrwParams p;
  p.gamma_ou = cfg.get_double("ctcrw_gamma", 1e-3);
  p.sigma_ou = cfg.get_double("ctcrw_sigma", 1.0);
  p.obs_sd = cfg.get_double("ctcrw_obs_sd", 0.0);
  p.validate();
  return p;
}

// Parameters from `ctcrw_params` (a params JSON written by impute) or a fresh fit.
inline CtcrwFit ctcrw_params(const RunConfig& cfg, const Track& track) {
  if (cfg.has("ctcrw_params")) {
    std::ifstream in(cfg.get_path("ctcrw_params"));
    const json j = json::parse(in);
    return CtcrwFit{params_from_json(j), j.value("loglik", 0.0), true, j.value("iterations", 0)};
  }
  CtcrwFitOptions fo;
  fo.estimate_mu = cfg.get_bool("ctcrw_estimate_mu", false);
  return fit_ctcrw(track, ctcrw_init(cfg), fo);
}

// `raster = name:path` lines; the first raster fixes the grid geometry.
inline std::shared_ptr<RasterGrid> load_grid(const RunConfig& cfg) {
  const auto rasters = cfg.get_all("raster");
  if (rasters.empty()) throw ConfigError(detail::concat(cfg.source(), ": no 'raster = name:path' entries"));
  std::shared_ptr<RasterGrid> grid;
  for (const auto& r : rasters) {
    const auto colon = r.find(':');
    if (colon == std::string::npos) throw ConfigError(detail::concat("raster entry '", r, "' is not name:path"));
    const auto name = RunConfig::trim(r.substr(0, colon));
    const auto path = cfg.resolve(RunConfig::trim(r.substr(colon + 1)));
    const auto ar = read_ascii_raster(path);
    if (!grid) {
      grid = std::make_shared<RasterGrid>(grid_from_ascii(ar, name));
    } else {
      add_ascii_layer(*grid, ar, name);
    }
  }
  return grid;
}

inline SplineConfig spline_config(const RunConfig& cfg) {
  SplineConfig s;
  s.period = cfg.get_double("spline_period", s.period);
  s.knot_spacing = cfg.get_double("spline_knot_spacing", s.knot_spacing);
  s.degree = static_cast<int>(cfg.get_int("spline_degree", s.degree));
  s.validate();
  return s;
}

// `covariate = name kind [layer|path] [tv]`, kinds: intercept, location,
// directional_feature, conspecific, persistence.
inline std::vector<CovariateSpec> covariate_specs(const RunConfig& cfg) {
  std::vector<CovariateSpec> out;
  for (const auto& line : cfg.get_all("covariate")) {
    std::istringstream ss(line);
    std::vector<std::string> tok;
    for (std::string t; ss >> t;) tok.push_back(t);
    if (tok.size() < 2) throw ConfigError(detail::concat("covariate '", line, "': expected 'name kind ...'"));
    bool tv = false;
    if (tok.back() == "tv") {
      tv = true;
      tok.pop_back();
    }
    const auto& name = tok[0];
    const auto& kind = tok[1];
    auto need_arg = [&] {
      if (tok.size() < 3) throw ConfigError(detail::concat("covariate '", line, "': kind ", kind, " needs an argument"));
      return tok[2];
    };
    if (kind == "intercept") {
      out.push_back(CovariateSpec::intercept(name, tv));
    } else if (kind == "location") {
      out.push_back(CovariateSpec::location(name, need_arg(), tv));
    } else if (kind == "directional_feature") {
      out.push_back(CovariateSpec::directional_feature(name, need_arg(), tv));
    } else if (kind == "conspecific") {
      auto companion = std::make_shared<const ImputedPath>(read_imputed_csv(cfg.resolve(need_arg())));
      out.push_back(CovariateSpec::directional_conspecific(name, companion, tv));
    } else if (kind == "persistence") {
      out.push_back(CovariateSpec::directional_persistence(name, tv));
    } else {
      throw ConfigError(detail::concat("covariate '", line, "': unknown kind '", kind, "'"));
    }
  }
  if (out.empty()) throw ConfigError(detail::concat(cfg.source(), ": no 'covariate =' entries"));
  return out;
}

inline std::shared_ptr<const CovariateModel> covariate_model(const RunConfig& cfg, std::shared_ptr<const RasterGrid> grid) {
  return std::make_shared<const CovariateModel>(std::move(grid), covariate_specs(cfg), spline_config(cfg));
}

inline ImputationConfig imputation_config(const Context& c) {
  ImputationConfig ic;
  ic.K = static_cast<std::size_t>(c.cfg.get_int("K", 10));
  ic.delta = c.cfg.get_double("delta", 60.0);
  ic.seed = derive_seed(c.seed, 101);
  ic.threads = c.threads;
  ic.design.use_censored_tail = c.cfg.get_bool("use_censored_tail", false);
  return ic;
}

inline CvOptions cv_options(const Context& c) {
  CvOptions co;
  const auto rule = c.cfg.get("cv_rule", "min");
  if (rule == "min") {
    co.rule = CvRule::Min;
  } else if (rule == "1se") {
    co.rule = CvRule::OneSe;
  } else {
    throw ConfigError(detail::concat("cv_rule must be 'min' or '1se', got '", rule, "'"));
  }
  co.threads = c.threads;
  co.group_seconds = c.cfg.get_double("cv_group_seconds", 0.0);
  return co;
}

inline McmcOptions mcmc_options(const RunConfig& cfg) {
  McmcOptions mo;
  mo.n_iter = static_cast<std::size_t>(cfg.get_int("mcmc_iter", 20000));
  if (cfg.has("mcmc_burn")) mo.n_burn = static_cast<std::size_t>(cfg.get_int("mcmc_burn"));
  return mo;
}

// gamma_lasso for the lasso prior: explicit value or the choice recorded by a cv run.
inline double lasso_gamma(const RunConfig& cfg) {
  if (cfg.has("gamma_lasso")) return cfg.get_double("gamma_lasso");
  if (cfg.has("cv_result")) {
    std::ifstream in(cfg.get_path("cv_result"));
    return json::parse(in).at("gamma_lasso").get<double>();
  }
  throw ConfigError(
      "the lasso prior needs gamma_lasso chosen by cross-validation: run the 'cv' subcommand first and set "
      "cv_result = <its cv.json>, or set gamma_lasso explicitly");
}

// ---- subcommands -----------------------------------------------------------

inline ImputationSet run_imputation(const Context& c, const Track& track, const CovariateModel& model,
                                    CtcrwFit& fit) {
  fit = ctcrw_params(c.cfg, track);
  return impute_designs(track, fit.params, model, imputation_config(c));
}

inline int cmd_impute(const Context& c) {
  const Track track = load_track(c.cfg);
  const CtcrwFit fit = ctcrw_params(c.cfg, track);
  const ImputationConfig ic = imputation_config(c);
  std::vector<ImputedPath> paths(ic.K);
  parallel_for(ic.K, c.threads,
               [&](std::size_t k) { paths[k] = draw_path(track, fit.params, ic.delta, derive_seed(ic.seed, k)); });
  write_json(c, "params.json", params_json(fit));
  for (std::size_t k = 0; k < ic.K; ++k) {
    auto out = open_output(c, numbered("imputed", k, ".csv"));
    write_imputed_csv(out, paths[k], k);
  }
  std::cout << "wrote " << ic.K << " imputed paths and params.json to " << c.out_dir.string() << '\n';
  return 0;
}

inline int cmd_discretize(const Context& c) {
  const auto grid = load_grid(c.cfg);
  std::vector<std::string> inputs;
  for (const auto& p : c.cfg.get_all("imputed")) inputs.push_back(c.cfg.resolve(p));
  if (inputs.empty()) throw ConfigError(detail::concat(c.cfg.source(), ": no 'imputed = path' entries"));
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const DiscretePath dp = discretize(read_imputed_csv(inputs[k]), *grid);
    auto out = open_output(c, numbered("discrete", k, ".csv"));
    write_discrete_csv(out, dp);
    if (c.cfg.get_bool("write_design", false)) {
      const auto model = covariate_model(c.cfg, grid);
      auto dout = open_output(c, numbered("design", k, ".csv"));
      write_design_csv(dout, build_design(dp, *model, imputation_config(c).design));
    }
  }
  std::cout << "discretized " << inputs.size() << " paths into " << c.out_dir.string() << '\n';
  return 0;
}

inline void write_curves(const Context& c, const CovariateModel& model, const Eigen::VectorXd& mean,
                         const Eigen::MatrixXd& cov) {
  if (!model.any_time_varying()) return;
  auto out = open_output(c, "beta_curves.csv");
  write_beta_curves_csv(out, model, mean, cov);
}

inline int cmd_fit(const Context& c, std::string estimator = "") {
  if (estimator.empty()) estimator = c.cfg.get("estimator", "mle");
  // The lasso prior's gamma must come from a finished cv run; check before any work.
  const double prior_gamma = estimator == "bayes-lasso" ? lasso_gamma(c.cfg) : 0.0;
  const Track track = load_track(c.cfg);
  const auto grid = load_grid(c.cfg);
  const auto model = covariate_model(c.cfg, grid);
  CtcrwFit cfit;
  const ImputationSet set = run_imputation(c, track, *model, cfit);
  json report;
  report["estimator"] = estimator;
  report["K"] = set.designs.size();
  report["imputation_redraws"] = set.redraws;
  report["ctcrw"] = params_json(cfit);

  if (estimator == "mle") {
    const auto fits = fit_each(set.designs, c.threads);
    const PooledFit pooled = pool_or_single(fits, c.cfg.get_bool("between_correction", true));
    report["pooled"] = pooled_json(pooled);
    write_curves(c, *model, pooled.mean, pooled.covariance);
  } else if (estimator == "lasso-cv" || estimator == "stacked-lasso") {
    const DesignData stacked = stack_designs(set.designs);
    LassoFit lf;
    if (estimator == "lasso-cv" || !(c.cfg.has("gamma_lasso") || c.cfg.has("cv_result"))) {
      lf = cv_lasso(stacked, static_cast<std::size_t>(c.cfg.get_int("n_folds", 5)), {}, derive_seed(c.seed, 202),
                    cv_options(c));
    } else {
      lf = fit_lasso(stacked, lasso_gamma(c.cfg));
    }
    report["lasso"] = lasso_json(lf);
  } else if (estimator == "bayes" || estimator == "bayes-lasso") {
    BetaPrior prior = BetaPrior::gaussian(c.cfg.get_double("prior_variance", 100.0));
    if (estimator == "bayes-lasso") {
      prior = BetaPrior::laplace(prior_gamma, c.cfg.get_double("prior_variance", 100.0));
      prior.gamma_scale = lasso_scales(stack_designs(set.designs));
    }
    const McmcChain chain = composition_sample(set.designs, prior, mcmc_options(c.cfg), derive_seed(c.seed, 303), c.threads);
    report["posterior"] = chain_summary_json(chain);
    auto out = open_output(c, "chain.csv");
    write_chain_csv(out, chain);
    Eigen::MatrixXd centered = chain.draws.rowwise() - chain.draws.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered / std::max<double>(1.0, double(chain.n_draws() - 1));
    write_curves(c, *model, chain.mean(), cov);
  } else {
    throw ConfigError(detail::concat("unknown estimator '", estimator,
                                     "' (expected mle, lasso-cv, stacked-lasso, bayes, bayes-lasso)"));
  }
  write_json(c, "fit.json", report);
  std::cout << "wrote fit.json to " << c.out_dir.string() << '\n';
  return 0;
}

inline int cmd_cv(const Context& c) {
  const Track track = load_track(c.cfg);
  const auto grid = load_grid(c.cfg);
  const auto model = covariate_model(c.cfg, grid);
  CtcrwFit cfit;
  const ImputationSet set = run_imputation(c, track, *model, cfit);
  const DesignData stacked = stack_designs(set.designs);
  const LassoFit lf =
      cv_lasso(stacked, static_cast<std::size_t>(c.cfg.get_int("n_folds", 5)), {}, derive_seed(c.seed, 202), cv_options(c));
  write_json(c, "cv.json", lasso_json(lf));
  std::cout << "gamma_lasso = " << lf.penalty << "; wrote cv.json to " << c.out_dir.string() << '\n';
  return 0;
}

inline int cmd_bayes(const Context& c) {
  const auto e = c.cfg.get("estimator", "bayes");
  return cmd_fit(c, e == "bayes-lasso" ? e : "bayes");
}

// Synthetic landscape unless rasters are configured.
inline std::shared_ptr<RasterGrid> simulation_grid(const Context& c, bool& synthetic) {
  synthetic = !c.cfg.has("raster");
  if (!synthetic) return load_grid(c.cfg);
  LandscapeOptions lo;
  lo.n_rows = static_cast<std::size_t>(c.cfg.get_int("n_rows", 50));
  lo.n_cols = static_cast<std::size_t>(c.cfg.get_int("n_cols", 50));
  lo.cell_size = c.cfg.get_double("cell_size", 100.0);
  lo.seed = static_cast<std::uint64_t>(c.cfg.get_int("landscape_seed", 7));
  return std::make_shared<RasterGrid>(synthetic_landscape(lo));
}

// `truth = name value` per model column.
inline Eigen::VectorXd truth_vector(const RunConfig& cfg, const CovariateModel& model) {
  const auto& names = model.column_names();
  Eigen::VectorXd a = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(names.size()));
  std::vector<bool> seen(names.size(), false);
  for (const auto& line : cfg.get_all("truth")) {
    std::istringstream ss(line);
    std::string name;
    double v = 0.0;
    if (!(ss >> name >> v)) throw ConfigError(detail::concat("truth '", line, "': expected 'name value'"));
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ConfigError(detail::concat("truth names unknown column '", name, "'"));
    const auto j = static_cast<std::size_t>(it - names.begin());
    a[static_cast<Eigen::Index>(j)] = v;
    seen[j] = true;
  }
  for (std::size_t j = 0; j < names.size(); ++j)
    if (!seen[j]) throw ConfigError(detail::concat("no truth value for column '", names[j], "'"));
  return a;
}

// Companion path for conspecific covariates in synthetic runs.
inline void maybe_write_companion(const Context& c, const RasterGrid& grid, double t0, double t1) {
  if (!c.cfg.has("companion_out")) return;
  const auto p = circling_companion(grid, t0, t1, c.cfg.get_double("companion_radius", 1500.0),
                                    c.cfg.get_double("companion_period", 86400.0));
  std::ofstream out(c.cfg.resolve(c.cfg.get("companion_out"), false));
  out << std::setprecision(17);
  write_imputed_csv(out, p, 0);
}

inline int cmd_simulate(const Context& c) {
  bool synthetic = false;
  const auto grid = simulation_grid(c, synthetic);
  if (synthetic) {
    for (const auto& name : grid->layer_names())
      write_ascii_raster((c.out_dir / (name + ".asc")).string(), *grid, grid->layer(name));
  }
  const double t0 = c.cfg.get_double("t0", 0.0);
  const double t1 = t0 + c.cfg.get_double("span", 14.0 * 86400.0);
  maybe_write_companion(c, *grid, t0, t1);
  const auto model = covariate_model(c.cfg, grid);
  SimConfig sc;
  sc.model = model;
  sc.alpha = truth_vector(c.cfg, *model);
  sc.t0 = t0;
  sc.t1 = t1;
  sc.interval = c.cfg.get_double("interval", 14400.0);
  sc.seed = derive_seed(c.seed, 404);
  sc.start = grid->cell(static_cast<std::size_t>(c.cfg.get_int("start_row", static_cast<long long>(grid->n_rows() / 2))),
                        static_cast<std::size_t>(c.cfg.get_int("start_col", static_cast<long long>(grid->n_cols() / 2))));
  const DiscretePath dp = simulate_ctds(sc);
  const Track track = thin_to_track(dp, *grid, sc.interval, c.cfg.get_double("jitter_sd", 0.0), derive_seed(c.seed, 405),
                                    c.cfg.get("track_id", "sim"));
  {
    auto out = open_output(c, "telemetry.csv");
    write_track_csv(out, {track});
  }
  {
    auto out = open_output(c, "true_path.csv");
    write_discrete_csv(out, dp);
  }
  json truth;
  truth["seed"] = c.seed;
  truth["t0"] = t0;
  truth["t1"] = t1;
  truth["interval"] = sc.interval;
  truth["start_cell"] = sc.start.index;
  truth["n_transitions"] = dp.n_visits() - 1;
  json coefs = json::object();
  for (std::size_t j = 0; j < model->column_names().size(); ++j)
    coefs[model->column_names()[j]] = sc.alpha[static_cast<Eigen::Index>(j)];
  truth["coefficients"] = coefs;
  write_json(c, "truth.json", truth);
  std::cout << "simulated " << dp.n_visits() - 1 << " transitions; wrote telemetry.csv, true_path.csv, truth.json to "
            << c.out_dir.string() << '\n';
  return 0;
}

inline int cmd_recovery_study(const Context& c) {
  bool synthetic = false;
  const auto grid = simulation_grid(c, synthetic);
  RecoveryProtocol pr;
  pr.span = c.cfg.get_double("span", 14.0 * 86400.0);
  maybe_write_companion(c, *grid, 0.0, pr.span);
  pr.model = covariate_model(c.cfg, grid);
  pr.truth = truth_vector(c.cfg, *pr.model);
  pr.interval = c.cfg.get_double("interval", 14400.0);
  pr.jitter_sd = c.cfg.get_double("jitter_sd", 0.0);
  const auto est = c.cfg.get("recovery_estimator", "imputed");
  if (est == "imputed") {
    pr.estimator = RecoveryEstimator::Imputed;
  } else if (est == "oracle") {
    pr.estimator = RecoveryEstimator::Oracle;
  } else {
    throw ConfigError(detail::concat("recovery_estimator must be 'imputed' or 'oracle', got '", est, "'"));
  }
  pr.K = static_cast<std::size_t>(c.cfg.get_int("K", 10));
  pr.delta = c.cfg.get_double("delta", 60.0);
  pr.ctcrw_init = ctcrw_init(c.cfg);
  pr.n_folds = static_cast<std::size_t>(c.cfg.get_int("n_folds", 5));
  const auto cvo = cv_options(c);
  pr.rule = c.cfg.has("cv_rule") ? cvo.rule : CvRule::OneSe;
  pr.cv_group_seconds = c.cfg.get_double("cv_group_seconds", pr.interval);
  pr.threads = c.threads;
  const auto n = static_cast<std::size_t>(c.cfg.get_int("n_replicates", 100));
  const RecoverySummary s = recovery_study(pr, n, c.seed);
  {
    auto out = open_output(c, "recovery.csv");
    write_recovery_csv(out, s);
  }
  json j;
  j["n_replicates"] = s.n_replicates;
  j["n_succeeded"] = s.n_succeeded;
  j["n_failed"] = s.n_failed;
  j["failures"] = s.failures;
  json rows = json::array();
  for (const auto& r : s.rows)
    rows.push_back({{"covariate", r.covariate},
                    {"true", r.truth},
                    {"prop_nonzero", r.prop_nonzero},
                    {"prop_zero", r.prop_zero},
                    {"prop_positive", r.prop_positive},
                    {"prop_negative", r.prop_negative},
                    {"min", r.min},
                    {"max", r.max}});
  j["rows"] = rows;
  write_json(c, "recovery.json", j);
  std::cout << "recovery study: " << s.n_succeeded << " of " << n << " replicates succeeded; wrote recovery.csv to "
            << c.out_dir.string() << '\n';
  return 0;
}

// Entry point shared by the executable and the tests. Returns the exit code.
inline int run(const std::string& command, const std::string& config_path, const std::vector<std::string>& overrides,
               std::ostream& err = std::cerr) {
  try {
    RunConfig cfg = RunConfig::load(config_path);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ConfigError(detail::concat("override '", o, "' is not key=value"));
      cfg.set(RunConfig::trim(o.substr(0, eq)), RunConfig::trim(o.substr(eq + 1)));
    }
    const Context c = make_context(std::move(cfg));
    if (command == "impute") return cmd_impute(c);
    if (command == "discretize") return cmd_discretize(c);
    if (command == "fit") return cmd_fit(c);
    if (command == "cv") return cmd_cv(c);
    if (command == "simulate") return cmd_simulate(c);
    if (command == "recovery-study") return cmd_recovery_study(c);
    if (command == "bayes") return cmd_bayes(c);
    throw ConfigError(detail::concat("unknown subcommand '", command, "'"));
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace ctds::cli
