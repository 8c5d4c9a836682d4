#pragma once

// Declarative Monte-Carlo experiments: a JSON config names a model, an
// estimator and an (N, T) grid; every cell runs `trials` independent
// simulate -> estimate pipelines and the result is a tidy table plus per-cell
// summaries.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mkv/errors.hpp"
#include "mkv/io.hpp"
#include "mkv/models.hpp"
#include "mkv/offline.hpp"
#include "mkv/online.hpp"
#include "mkv/parallel.hpp"
#include "mkv/rng.hpp"
#include "mkv/simulate.hpp"
#include "mkv/stats.hpp"
#include "mkv/theta.hpp"

namespace mkv {

inline constexpr const char* kVersion = "0.1.0";

enum class EstimatorKind { offline_closed, offline_numeric, online_averaged, online_per_particle };

inline EstimatorKind parse_estimator(const std::string& text) {
  if (text == "offline-closed") return EstimatorKind::offline_closed;
  if (text == "offline-numeric") return EstimatorKind::offline_numeric;
  if (text == "online-averaged") return EstimatorKind::online_averaged;
  if (text == "online-per-particle") return EstimatorKind::online_per_particle;
  throw ValidationError("unknown estimator '" + text +
                        "' (offline-closed | offline-numeric | online-averaged | online-per-particle)");
}

inline std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::offline_closed: return "offline-closed";
    case EstimatorKind::offline_numeric: return "offline-numeric";
    case EstimatorKind::online_averaged: return "online-averaged";
    case EstimatorKind::online_per_particle: return "online-per-particle";
  }
  return {};
}

inline bool is_online(EstimatorKind kind) {
  return kind == EstimatorKind::online_averaged || kind == EstimatorKind::online_per_particle;
}

struct ExperimentConfig {
  std::string name = "experiment";
  std::string model = "linear";
  double sigma = 1.0;
  Theta theta_true{1.0, 0.5};
  EstimatorKind estimator = EstimatorKind::offline_closed;
  std::vector<std::size_t> grid_n;
  std::vector<double> grid_t;
  std::size_t trials = 1;
  double dt = 0.1;
  std::string init = "normal:1,1";
  std::string lr;          // online only
  std::string theta_init;  // online, and the starting point of offline-numeric
  std::uint64_t master_seed = 0;
  std::string output;      // path prefix for exported files
  std::size_t checkpoints = 0;  // online only: points of the trial-averaged MSE curve
  std::size_t max_iters = 500;
  double grad_tol = 1e-8;

  ModelSpec model_spec() const { return ModelSpec::by_name(model, sigma); }
  std::size_t cells() const noexcept { return grid_n.size() * grid_t.size(); }
  /// Cells are ordered N-major: cell = n_index * |T grid| + t_index.
  std::size_t cell_n(std::size_t cell) const { return grid_n[cell / grid_t.size()]; }
  double cell_t(std::size_t cell) const { return grid_t[cell % grid_t.size()]; }

  SimConfig sim_config(std::size_t cell, std::size_t trial) const {
    SimConfig cfg;
    cfg.n_particles = cell_n(cell);
    cfg.dt = dt;
    cfg.horizon = cell_t(cell);
    cfg.init = io::parse_initial_condition(init);
    cfg.seed = rng::derive_seed(master_seed, {cell, trial});
    return cfg;
  }

  void validate() const {
    if (name.empty()) throw ValidationError("experiment name must be nonempty");
    const ModelSpec spec = model_spec();
    theta_true.require_dim(spec.param_dim());
    if (grid_n.empty() || grid_t.empty()) throw ValidationError("experiment grid needs at least one N and one T");
    if (trials < 1) throw ValidationError("trials must be >= 1");
    for (std::size_t n : grid_n) {
      if (n < 1) throw ValidationError("grid N values must be >= 1");
    }
    for (std::size_t c = 0; c < cells(); ++c) sim_config(c, 0).validate();
    io::parse_initial_condition(init).validate(spec.state_dim());
    if (estimator == EstimatorKind::offline_closed && spec.kind() != ModelKind::linear_mean_field) {
      throw ValidationError("offline-closed needs the linear model");
    }
    if (is_online(estimator)) {
      if (lr.empty()) throw ValidationError("online estimators need 'lr'");
      if (theta_init.empty()) throw ValidationError("online estimators need 'theta_init'");
      LearningRate::parse(lr, spec.param_dim());
    }
    if (!theta_init.empty() && ThetaInit::parse(theta_init).size() != spec.param_dim()) {
      throw DimensionError("theta_init length must equal p");
    }
    if (checkpoints != 0 && (!is_online(estimator) || checkpoints < 3)) {
      throw ValidationError("checkpoints applies to online estimators and must be >= 3");
    }
    if (max_iters < 1 || !(grad_tol > 0.0)) throw ValidationError("max_iters and grad_tol must be positive");
  }
};

inline nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["schema"] = 1;
  j["name"] = cfg.name;
  j["model"] = cfg.model;
  j["sigma"] = cfg.sigma;
  j["theta_true"] = cfg.theta_true.to_vector();
  j["estimator"] = to_string(cfg.estimator);
  j["grid"] = {{"n", cfg.grid_n}, {"t", cfg.grid_t}};
  j["trials"] = cfg.trials;
  j["dt"] = cfg.dt;
  j["init"] = cfg.init;
  if (!cfg.lr.empty()) j["lr"] = cfg.lr;
  if (!cfg.theta_init.empty()) j["theta_init"] = cfg.theta_init;
  j["master_seed"] = cfg.master_seed;
  if (!cfg.output.empty()) j["output"] = cfg.output;
  if (cfg.checkpoints != 0) j["checkpoints"] = cfg.checkpoints;
  if (cfg.estimator == EstimatorKind::offline_numeric) {
    j["max_iters"] = cfg.max_iters;
    j["grad_tol"] = cfg.grad_tol;
  }
  return j;
}

/// Parses and validates a config document. Unknown keys are rejected.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  static const std::set<std::string> known = {"schema", "name", "model", "sigma", "theta_true", "estimator",
                                              "grid", "trials", "dt", "init", "lr", "theta_init", "master_seed",
                                              "output", "checkpoints", "max_iters", "grad_tol", "notes"};
  if (!j.is_object()) throw ValidationError("experiment config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ValidationError("unknown config key '" + key + "'");
  }
  ExperimentConfig cfg;
  try {
    if (j.at("schema").get<int>() != 1) throw ValidationError("unsupported config schema (expected 1)");
    cfg.name = j.value("name", cfg.name);
    cfg.model = j.value("model", cfg.model);
    cfg.sigma = j.value("sigma", cfg.sigma);
    const auto theta = j.at("theta_true").get<std::vector<double>>();
    cfg.theta_true = Theta(std::span<const double>(theta));
    cfg.estimator = parse_estimator(j.at("estimator").get<std::string>());
    const auto& grid = j.at("grid");
    cfg.grid_n = grid.value("n", std::vector<std::size_t>{});
    cfg.grid_t = grid.value("t", std::vector<double>{});
    cfg.trials = j.at("trials").get<std::size_t>();
    cfg.dt = j.value("dt", cfg.dt);
    cfg.init = j.value("init", cfg.init);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.theta_init = j.value("theta_init", cfg.theta_init);
    cfg.master_seed = j.value("master_seed", cfg.master_seed);
    cfg.output = j.value("output", cfg.output);
    cfg.checkpoints = j.value("checkpoints", cfg.checkpoints);
    cfg.max_iters = j.value("max_iters", cfg.max_iters);
    cfg.grad_tol = j.value("grad_tol", cfg.grad_tol);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed experiment config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(io::read_json(path));
}

// ---------------------------------------------------------------------------
// Results

struct TrialRow {
  std::size_t cell = 0;
  std::size_t n = 0;
  double t = 0.0;
  std::size_t trial = 0;
  Eigen::VectorXd theta_hat;
  Eigen::VectorXd sq_err;   // per component; per-particle mode: mean over the N estimators
  Eigen::VectorXd abs_err;
  double joint_sq_err = 0.0;
};

struct Exclusion {
  std::size_t cell = 0;
  std::size_t trial = 0;
  std::string reason;
};

struct MetricSummary {
  double mean = 0.0;
  double median = 0.0;
  double stderr_ = 0.0;
};

struct CellSummary {
  std::size_t cell = 0;
  std::size_t n = 0;
  double t = 0.0;
  std::size_t rows = 0;
  std::size_t excluded = 0;
  std::vector<MetricSummary> sq_err;   // per component
  std::vector<MetricSummary> abs_err;  // per component
  MetricSummary joint_sq_err;
};

struct CurvePoint {
  std::size_t cell = 0;
  double t = 0.0;
  Eigen::VectorXd mse;  // trial-averaged squared error per component
};

struct RateFitRecord {
  std::string axis;    // "n" or "t"
  std::string metric;  // "mae" or "mse"
  std::size_t component = 0;
  stats::RateFit fit;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<TrialRow> rows;
  std::vector<Exclusion> exclusions;
  std::vector<CellSummary> summary;
  std::vector<CurvePoint> curve;
  std::vector<RateFitRecord> rate_fits;
  bool exclusion_cap_exceeded = false;
  double wall_seconds = 0.0;  // exported separately so result files stay reproducible

  std::size_t param_dim() const { return static_cast<std::size_t>(config.theta_true.size()); }

  void require_within_cap() const {
    if (exclusion_cap_exceeded) {
      throw ExclusionCapError(std::to_string(exclusions.size()) + " of " +
                              std::to_string(config.trials * config.cells()) + " trials excluded (cap is 1%)");
    }
  }
};

inline MetricSummary summarize_metric(const std::vector<double>& xs) {
  return {stats::mean(xs), stats::median(xs), stats::stderr_of_mean(xs)};
}

/// Per-cell summaries, a pure function of the rows.
inline std::vector<CellSummary> summarize(const ExperimentConfig& cfg, const std::vector<TrialRow>& rows,
                                          const std::vector<Exclusion>& exclusions) {
  const std::size_t p = cfg.theta_true.size();
  std::vector<CellSummary> out(cfg.cells());
  for (std::size_t c = 0; c < out.size(); ++c) {
    CellSummary& s = out[c];
    s.cell = c;
    s.n = cfg.cell_n(c);
    s.t = cfg.cell_t(c);
    std::vector<std::vector<double>> sq(p);
    std::vector<std::vector<double>> ab(p);
    std::vector<double> joint;
    for (const auto& r : rows) {
      if (r.cell != c) continue;
      ++s.rows;
      for (std::size_t k = 0; k < p; ++k) {
        sq[k].push_back(r.sq_err[static_cast<Eigen::Index>(k)]);
        ab[k].push_back(r.abs_err[static_cast<Eigen::Index>(k)]);
      }
      joint.push_back(r.joint_sq_err);
    }
    for (const auto& e : exclusions) s.excluded += e.cell == c ? 1 : 0;
    for (std::size_t k = 0; k < p; ++k) {
      s.sq_err.push_back(summarize_metric(sq[k]));
      s.abs_err.push_back(summarize_metric(ab[k]));
    }
    s.joint_sq_err = summarize_metric(joint);
  }
  return out;
}

/// Log-log fits of the mean error against N (single T) or against T (single N).
inline std::vector<RateFitRecord> fit_rates(const ExperimentConfig& cfg, const std::vector<CellSummary>& summary) {
  std::vector<RateFitRecord> out;
  std::string axis;
  if (cfg.grid_n.size() >= 4 && cfg.grid_t.size() == 1) axis = "n";
  if (cfg.grid_t.size() >= 4 && cfg.grid_n.size() == 1) axis = "t";
  if (axis.empty()) return out;
  const std::size_t p = cfg.theta_true.size();
  for (const char* metric : {"mae", "mse"}) {
    for (std::size_t k = 0; k < p; ++k) {
      std::vector<double> xs;
      std::vector<double> ys;
      for (const auto& s : summary) {
        if (s.rows == 0) continue;
        xs.push_back(axis == "n" ? static_cast<double>(s.n) : s.t);
        ys.push_back(std::string(metric) == "mae" ? s.abs_err[k].mean : s.sq_err[k].mean);
      }
      try {
        out.push_back({axis, metric, k, stats::fit_rate(xs, ys)});
      } catch (const ValidationError&) {
        // too few usable cells or an exactly-zero error; no fit
      }
    }
  }
  return out;
}

namespace detail {

struct TrialOutcome {
  std::optional<TrialRow> row;
  std::optional<std::string> excluded;
  std::vector<HistoryPoint> history;
};

inline TrialOutcome run_trial(const ExperimentConfig& cfg, const ModelSpec& model, std::size_t cell,
                              std::size_t trial) {
  const SimConfig sim = cfg.sim_config(cell, trial);
  const std::size_t p = model.param_dim();
  const Eigen::VectorXd& truth = cfg.theta_true.values();
  TrialOutcome outcome;
  TrialRow row;
  row.cell = cell;
  row.n = sim.n_particles;
  row.t = sim.horizon;
  row.trial = trial;
  try {
    switch (cfg.estimator) {
      case EstimatorKind::offline_closed: {
        ParticleSystem system(model, cfg.theta_true, sim);
        LinearSufficientStats s;
        std::vector<double> prev(system.state().begin(), system.state().end());
        for (std::size_t k = 0; k < sim.steps(); ++k) {
          system.advance();
          s.add_increment(prev, system.state(), sim.dt);
          std::copy(system.state().begin(), system.state().end(), prev.begin());
        }
        row.theta_hat = s.estimate().values();
        break;
      }
      case EstimatorKind::offline_numeric: {
        const TrajectoryBatch traj = simulate_ips(model, cfg.theta_true, sim);
        const ThetaInit init = cfg.theta_init.empty() ? ThetaInit(Theta(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p))))
                                                      : ThetaInit::parse(cfg.theta_init);
        AscentOptions opts;
        opts.max_iters = cfg.max_iters;
        opts.grad_tol = cfg.grad_tol;
        row.theta_hat = mle_numeric(model, traj, init.sample(sim.seed), opts).theta.values();
        break;
      }
      case EstimatorKind::online_averaged:
      case EstimatorKind::online_per_particle: {
        OnlineOptions opts;
        opts.lr = LearningRate::parse(cfg.lr, p);
        opts.init = ThetaInit::parse(cfg.theta_init);
        opts.mode = cfg.estimator == EstimatorKind::online_averaged ? OnlineMode::averaged : OnlineMode::per_particle;
        if (cfg.checkpoints != 0) opts.max_checkpoints = cfg.checkpoints;
        OnlineRun run = run_online(model, cfg.theta_true, sim, opts);
        row.theta_hat = run.final_theta();
        if (opts.mode == OnlineMode::per_particle) {
          row.sq_err = run.final_sq_error();
          row.abs_err = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
          for (const auto& s : run.per_particle) row.abs_err += (s.theta.values() - truth).cwiseAbs();
          row.abs_err /= static_cast<double>(run.per_particle.size());
        }
        if (cfg.checkpoints != 0) outcome.history = std::move(run.history);
        break;
      }
    }
  } catch (const DegenerateEstimateError&) {
    outcome.excluded = "degenerate-estimate";
    return outcome;
  } catch (const SimulationDivergedError&) {
    outcome.excluded = "simulation-diverged";
    return outcome;
  } catch (const EstimatorDivergedError&) {
    outcome.excluded = "estimator-diverged";
    return outcome;
  } catch (const ConvergenceError&) {
    outcome.excluded = "no-convergence";
    return outcome;
  }
  if (row.sq_err.size() == 0) {
    row.sq_err = (row.theta_hat - truth).array().square().matrix();
    row.abs_err = (row.theta_hat - truth).cwiseAbs();
  }
  row.joint_sq_err = row.sq_err.sum();
  outcome.row = std::move(row);
  return outcome;
}

}  // namespace detail

/// Runs every (cell, trial) pipeline on `workers` threads. Output does not
/// depend on the worker count. Excluded trials are counted; the cap flag is
/// set when they exceed 1% of all trials.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t workers = default_worker_count()) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const ModelSpec model = cfg.model_spec();
  const std::size_t total = cfg.cells() * cfg.trials;
  std::vector<detail::TrialOutcome> outcomes(total);
  parallel_for(total, workers, [&](std::size_t job) {
    outcomes[job] = detail::run_trial(cfg, model, job / cfg.trials, job % cfg.trials);
  });

  ExperimentResult result;
  result.config = cfg;
  for (std::size_t job = 0; job < total; ++job) {
    auto& o = outcomes[job];
    if (o.row) {
      result.rows.push_back(std::move(*o.row));
    } else {
      result.exclusions.push_back({job / cfg.trials, job % cfg.trials, *o.excluded});
    }
  }
  result.exclusion_cap_exceeded = static_cast<double>(result.exclusions.size()) > 0.01 * static_cast<double>(total);
  result.summary = summarize(cfg, result.rows, result.exclusions);
  result.rate_fits = fit_rates(cfg, result.summary);

  if (cfg.checkpoints != 0) {
    const std::size_t p = cfg.theta_true.size();
    for (std::size_t cell = 0; cell < cfg.cells(); ++cell) {
      std::vector<CurvePoint> acc;
      std::size_t used = 0;
      for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
        const auto& o = outcomes[cell * cfg.trials + trial];
        if (!o.row) continue;
        if (acc.empty()) {
          for (const auto& h : o.history) acc.push_back({cell, h.t, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p))});
        }
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i].mse += o.history[i].sq_error;
        ++used;
      }
      for (auto& pt : acc) {
        pt.mse /= static_cast<double>(used);
        result.curve.push_back(std::move(pt));
      }
    }
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---------------------------------------------------------------------------
// Export / import

enum class ExportFormat { csv, json };

inline ExportFormat parse_export_format(const std::string& text) {
  if (text == "csv") return ExportFormat::csv;
  if (text == "json") return ExportFormat::json;
  throw ValidationError("unknown export format '" + text + "' (csv | json)");
}

namespace detail {

inline nlohmann::json metric_json(const MetricSummary& m) {
  return {{"mean", m.mean}, {"median", m.median}, {"stderr", m.stderr_}};
}

inline std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::string rows_header(std::size_t p) {
  std::string h = "cell,n,t,trial";
  for (const char* prefix : {"theta_hat_", "sq_err_", "abs_err_"}) {
    for (std::size_t k = 1; k <= p; ++k) h += "," + std::string(prefix) + std::to_string(k);
  }
  return h + ",joint_sq_err";
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentResult& r) {
  nlohmann::json j;
  j["metadata"] = {{"config", to_json(r.config)},
                   {"version", kVersion},
                   {"rows", r.rows.size()},
                   {"exclusions", r.exclusions.size()},
                   {"exclusion_cap_exceeded", r.exclusion_cap_exceeded}};
  j["rows"] = nlohmann::json::array();
  for (const auto& row : r.rows) {
    j["rows"].push_back({{"cell", row.cell},
                         {"n", row.n},
                         {"t", row.t},
                         {"trial", row.trial},
                         {"theta_hat", detail::to_std(row.theta_hat)},
                         {"sq_err", detail::to_std(row.sq_err)},
                         {"abs_err", detail::to_std(row.abs_err)},
                         {"joint_sq_err", row.joint_sq_err}});
  }
  j["exclusions"] = nlohmann::json::array();
  for (const auto& e : r.exclusions) j["exclusions"].push_back({{"cell", e.cell}, {"trial", e.trial}, {"reason", e.reason}});
  j["summary"] = nlohmann::json::array();
  for (const auto& s : r.summary) {
    nlohmann::json cell = {{"cell", s.cell}, {"n", s.n}, {"t", s.t}, {"rows", s.rows}, {"excluded", s.excluded}};
    cell["sq_err"] = nlohmann::json::array();
    cell["abs_err"] = nlohmann::json::array();
    for (const auto& m : s.sq_err) cell["sq_err"].push_back(detail::metric_json(m));
    for (const auto& m : s.abs_err) cell["abs_err"].push_back(detail::metric_json(m));
    cell["joint_sq_err"] = detail::metric_json(s.joint_sq_err);
    j["summary"].push_back(std::move(cell));
  }
  j["rate_fits"] = nlohmann::json::array();
  for (const auto& f : r.rate_fits) {
    j["rate_fits"].push_back({{"axis", f.axis},
                              {"metric", f.metric},
                              {"component", f.component + 1},
                              {"slope", f.fit.slope},
                              {"intercept", f.fit.intercept},
                              {"r_squared", f.fit.r_squared}});
  }
  if (!r.curve.empty()) {
    j["curve"] = nlohmann::json::array();
    for (const auto& c : r.curve) j["curve"].push_back({{"cell", c.cell}, {"t", c.t}, {"mse", detail::to_std(c.mse)}});
  }
  return j;
}

/// Rebuilds a result from its JSON export; summaries and rate fits are
/// recomputed from the rows.
inline ExperimentResult result_from_json(const nlohmann::json& j) {
  ExperimentResult r;
  try {
    r.config = parse_experiment_config(j.at("metadata").at("config"));
    for (const auto& row : j.at("rows")) {
      TrialRow t;
      t.cell = row.at("cell").get<std::size_t>();
      t.n = row.at("n").get<std::size_t>();
      t.t = row.at("t").get<double>();
      t.trial = row.at("trial").get<std::size_t>();
      t.theta_hat = detail::to_eigen(row.at("theta_hat").get<std::vector<double>>());
      t.sq_err = detail::to_eigen(row.at("sq_err").get<std::vector<double>>());
      t.abs_err = detail::to_eigen(row.at("abs_err").get<std::vector<double>>());
      t.joint_sq_err = row.at("joint_sq_err").get<double>();
      r.rows.push_back(std::move(t));
    }
    for (const auto& e : j.at("exclusions")) {
      r.exclusions.push_back({e.at("cell").get<std::size_t>(), e.at("trial").get<std::size_t>(),
                              e.at("reason").get<std::string>()});
    }
    if (j.contains("curve")) {
      for (const auto& c : j.at("curve")) {
        r.curve.push_back({c.at("cell").get<std::size_t>(), c.at("t").get<double>(),
                           detail::to_eigen(c.at("mse").get<std::vector<double>>())});
      }
    }
    r.exclusion_cap_exceeded = j.at("metadata").at("exclusion_cap_exceeded").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed experiment result: ") + e.what());
  }
  r.summary = summarize(r.config, r.rows, r.exclusions);
  r.rate_fits = fit_rates(r.config, r.summary);
  return r;
}

inline ExperimentResult import_json(const std::string& path) { return result_from_json(io::read_json(path)); }

/// Reads the per-trial table written by the CSV export.
inline std::vector<TrialRow> import_rows_csv(const std::string& path, std::size_t p) {
  auto in = io::open_for_read(path);
  std::string line;
  if (!std::getline(in, line) || line != detail::rows_header(p)) {
    throw IoError("'" + path + "': header does not match a p = " + std::to_string(p) + " rows table");
  }
  std::vector<TrialRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    const auto cells = io::split(line, ',');
    if (cells.size() != 5 + 3 * p) throw IoError(where + ": wrong number of fields");
    TrialRow r;
    r.cell = static_cast<std::size_t>(io::parse_double(cells[0], where));
    r.n = static_cast<std::size_t>(io::parse_double(cells[1], where));
    r.t = io::parse_double(cells[2], where);
    r.trial = static_cast<std::size_t>(io::parse_double(cells[3], where));
    r.theta_hat.resize(static_cast<Eigen::Index>(p));
    r.sq_err.resize(static_cast<Eigen::Index>(p));
    r.abs_err.resize(static_cast<Eigen::Index>(p));
    for (std::size_t k = 0; k < p; ++k) {
      const auto e = static_cast<Eigen::Index>(k);
      r.theta_hat[e] = io::parse_double(cells[4 + k], where);
      r.sq_err[e] = io::parse_double(cells[4 + p + k], where);
      r.abs_err[e] = io::parse_double(cells[4 + 2 * p + k], where);
    }
    r.joint_sq_err = io::parse_double(cells[4 + 3 * p], where);
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Files written by `export_result` for a given prefix.
struct ExportPaths {
  std::string rows_csv, summary_csv, curve_csv, columns_txt, json, timing;
  explicit ExportPaths(const std::string& prefix)
      : rows_csv(prefix + ".rows.csv"),
        summary_csv(prefix + ".summary.csv"),
        curve_csv(prefix + ".curve.csv"),
        columns_txt(prefix + ".columns.txt"),
        json(prefix + ".json"),
        timing(prefix + ".timing.json") {}
};

inline void export_result(const ExperimentResult& r, const std::string& prefix, ExportFormat format) {
  const ExportPaths paths(prefix);
  const std::size_t p = r.param_dim();
  using io::format_double;
  if (format == ExportFormat::json) {
    io::write_json(paths.json, to_json(r));
  } else {
    {
      auto out = io::open_for_write(paths.rows_csv);
      out << detail::rows_header(p) << '\n';
      for (const auto& row : r.rows) {
        out << row.cell << ',' << row.n << ',' << format_double(row.t) << ',' << row.trial;
        for (const Eigen::VectorXd* v : {&row.theta_hat, &row.sq_err, &row.abs_err}) {
          for (Eigen::Index k = 0; k < v->size(); ++k) out << ',' << format_double((*v)[k]);
        }
        out << ',' << format_double(row.joint_sq_err) << '\n';
      }
      io::finish_write(out, paths.rows_csv);
    }
    {
      auto out = io::open_for_write(paths.summary_csv);
      out << "cell,n,t,rows,excluded";
      for (const char* metric : {"sq_err_", "abs_err_"}) {
        for (std::size_t k = 1; k <= p; ++k) {
          for (const char* stat : {"_mean", "_median", "_stderr"}) out << ',' << metric << k << stat;
        }
      }
      out << ",joint_sq_err_mean,joint_sq_err_median,joint_sq_err_stderr\n";
      for (const auto& s : r.summary) {
        out << s.cell << ',' << s.n << ',' << format_double(s.t) << ',' << s.rows << ',' << s.excluded;
        for (const auto* metrics : {&s.sq_err, &s.abs_err}) {
          for (const auto& m : *metrics) {
            out << ',' << format_double(m.mean) << ',' << format_double(m.median) << ',' << format_double(m.stderr_);
          }
        }
        out << ',' << format_double(s.joint_sq_err.mean) << ',' << format_double(s.joint_sq_err.median) << ','
            << format_double(s.joint_sq_err.stderr_) << '\n';
      }
      io::finish_write(out, paths.summary_csv);
    }
    if (!r.curve.empty()) {
      auto out = io::open_for_write(paths.curve_csv);
      out << "cell,n,T,t";
      for (std::size_t k = 1; k <= p; ++k) out << ",mse_" << k;
      out << '\n';
      for (const auto& c : r.curve) {
        out << c.cell << ',' << r.config.cell_n(c.cell) << ',' << format_double(r.config.cell_t(c.cell)) << ','
            << format_double(c.t);
        for (Eigen::Index k = 0; k < c.mse.size(); ++k) out << ',' << format_double(c.mse[k]);
        out << '\n';
      }
      io::finish_write(out, paths.curve_csv);
    }
    auto out = io::open_for_write(paths.columns_txt);
    out << "# " << paths.rows_csv << ": one row per retained (cell, trial)\n"
        << "cell          grid cell index, N-major over the (N, T) grid\n"
        << "n, t          particle count and horizon of the cell\n"
        << "trial         trial index within the cell; seed = derive(master_seed, cell, trial)\n"
        << "theta_hat_k   estimate of component k (online per-particle: mean over the N estimators)\n"
        << "sq_err_k      (theta_hat_k - theta_true_k)^2 (per-particle: mean over estimators)\n"
        << "abs_err_k     |theta_hat_k - theta_true_k| (per-particle: mean over estimators)\n"
        << "joint_sq_err  sum over k of sq_err_k\n"
        << "\n# " << paths.summary_csv << ": one row per cell\n"
        << "rows, excluded        retained and excluded trial counts\n"
        << "<metric>_k_<stat>     mean, median and standard error of the mean over retained trials\n";
    if (!r.curve.empty()) {
      out << "\n# " << paths.curve_csv << ": trial-averaged online error path\n"
          << "T             horizon of the cell, t  time along the run, mse_k  mean of sq_err_k at time t\n";
    }
    io::finish_write(out, paths.columns_txt);
  }
  io::write_json(paths.timing, {{"wall_seconds", r.wall_seconds}, {"version", kVersion}});
}

}  // namespace mkv
