// mkv: command-line front end for simulation, estimation and experiments.
//
// Exit codes: 0 ok, 2 invalid input, 3 divergence or too many excluded
// trials, 1 anything else.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mkv/mkv.hpp"

namespace {

using mkv::io::format_double;

struct SurfaceAxis {
  double low = 0.0;
  double high = 0.0;
  std::size_t steps = 0;

  double at(std::size_t i) const {
    return steps == 1 ? low : low + (high - low) * static_cast<double>(i) / static_cast<double>(steps - 1);
  }
};

// "theta1:a:b:steps,theta2:a:b:steps" (axis names theta1/θ1/t1 accepted)
std::pair<SurfaceAxis, SurfaceAxis> parse_surface_grid(const std::string& text) {
  std::optional<SurfaceAxis> axes[2];
  for (const auto& item : mkv::io::split(text, ',')) {
    const auto parts = mkv::io::split(item, ':');
    if (parts.size() != 4) throw mkv::ValidationError("grid axis '" + item + "' must be name:low:high:steps");
    int which = -1;
    if (parts[0] == "theta1" || parts[0] == "θ1" || parts[0] == "t1") which = 0;
    if (parts[0] == "theta2" || parts[0] == "θ2" || parts[0] == "t2") which = 1;
    if (which < 0) throw mkv::ValidationError("unknown grid axis '" + parts[0] + "'");
    SurfaceAxis a;
    try {
      a.low = std::stod(parts[1]);
      a.high = std::stod(parts[2]);
      a.steps = static_cast<std::size_t>(std::stoul(parts[3]));
    } catch (const std::exception&) {
      throw mkv::ValidationError("cannot parse grid axis '" + item + "'");
    }
    if (a.steps < 1 || !(a.low <= a.high)) throw mkv::ValidationError("grid axis '" + item + "' is empty");
    axes[which] = a;
  }
  if (!axes[0] || !axes[1]) throw mkv::ValidationError("surface grid needs both theta1 and theta2 axes");
  return {*axes[0], *axes[1]};
}

void write_online_history(const std::string& path, const mkv::OnlineRun& run) {
  auto out = mkv::io::open_for_write(path);
  out << "t";
  for (Eigen::Index k = 0; k < run.history.front().theta.size(); ++k) out << ",theta_" << k + 1;
  out << '\n';
  for (const auto& h : run.history) {
    out << format_double(h.t);
    for (Eigen::Index k = 0; k < h.theta.size(); ++k) out << ',' << format_double(h.theta[k]);
    out << '\n';
  }
  mkv::io::finish_write(out, path);
}

int run(int argc, char** argv) {
  CLI::App app{"Simulation and drift estimation for McKean-Vlasov interacting particle systems"};
  app.require_subcommand(1);
  app.set_version_flag("--version", mkv::kVersion);

  // simulate
  struct {
    std::string model = "linear", theta, init = "normal:1,1", out;
    std::size_t n = 100;
    double dt = 0.1, horizon = 1.0, sigma = 1.0;
    std::uint64_t seed = 0;
    bool record_noise = false;
  } sim;
  auto* simulate = app.add_subcommand("simulate", "Euler-Maruyama simulation of the particle system");
  simulate->add_option("--model", sim.model, "linear | opinion")->capture_default_str();
  simulate->add_option("--theta", sim.theta, "true parameters, e.g. 1,0.5")->required();
  simulate->add_option("--n", sim.n, "number of particles")->capture_default_str();
  simulate->add_option("--dt", sim.dt, "time step")->capture_default_str();
  simulate->add_option("--T", sim.horizon, "horizon")->capture_default_str();
  simulate->add_option("--sigma", sim.sigma, "diffusion coefficient")->capture_default_str();
  simulate->add_option("--init", sim.init, "normal:m,v | uniform:a,b | point:x")->capture_default_str();
  simulate->add_option("--seed", sim.seed, "master seed")->capture_default_str();
  simulate->add_flag("--record-noise", sim.record_noise, "store Brownian increments");
  simulate->add_option("--out", sim.out, "trajectory CSV (a .json sidecar is written next to it)")->required();

  // offline
  struct {
    std::string traj, model = "linear", method = "closed-form", window = "0:", init, out;
    double sigma = 1.0;
    std::size_t max_iters = 500;
    double grad_tol = 1e-8;
  } off;
  auto* offline = app.add_subcommand("offline", "Offline maximum likelihood on a stored trajectory");
  offline->add_option("--traj", off.traj, "trajectory CSV")->required();
  offline->add_option("--model", off.model, "linear | opinion")->capture_default_str();
  offline->add_option("--sigma", off.sigma, "diffusion coefficient (overridden by the sidecar)");
  offline->add_option("--method", off.method, "closed-form | numeric")->capture_default_str();
  offline->add_option("--window", off.window, "time window a:b")->capture_default_str();
  offline->add_option("--init", off.init, "starting point for numeric ascent (default zeros)");
  offline->add_option("--max-iters", off.max_iters)->capture_default_str();
  offline->add_option("--grad-tol", off.grad_tol)->capture_default_str();
  offline->add_option("--out", off.out, "result JSON")->required();

  // online
  struct {
    std::string model = "linear", theta_true, mode = "averaged", lr, init, sim_init = "normal:1,1", traj, out;
    std::size_t n = 10, checkpoints = 10000;
    double dt = 0.1, horizon = 100.0, sigma = 1.0;
    std::uint64_t seed = 0;
  } on;
  auto* online = app.add_subcommand("online", "Online stochastic gradient estimation");
  online->add_option("--model", on.model, "linear | opinion")->capture_default_str();
  online->add_option("--theta-true", on.theta_true, "parameters generating the data");
  online->add_option("--mode", on.mode, "averaged | per-particle")->capture_default_str();
  online->add_option("--lr", on.lr, "learning rates, e.g. powmin:0.05,0.51;powmin:0.30,0.51")->required();
  online->add_option("--init", on.init, "initial estimate, e.g. uniform:-1,2;uniform:-2,2")->required();
  online->add_option("--n", on.n, "number of particles")->capture_default_str();
  online->add_option("--dt", on.dt, "time step")->capture_default_str();
  online->add_option("--T", on.horizon, "horizon")->capture_default_str();
  online->add_option("--sigma", on.sigma, "diffusion coefficient")->capture_default_str();
  online->add_option("--sim-init", on.sim_init, "initial law of the particles")->capture_default_str();
  online->add_option("--seed", on.seed, "master seed")->capture_default_str();
  online->add_option("--traj", on.traj, "replay a stored trajectory instead of simulating");
  online->add_option("--checkpoints", on.checkpoints, "maximum history rows")->capture_default_str();
  online->add_option("--out", on.out, "history CSV (t, theta_1..theta_p)")->required();

  // experiment
  struct {
    std::string config, out, format = "both";
    std::size_t workers = 0;
  } exp;
  auto* experiment = app.add_subcommand("experiment", "Run a Monte-Carlo experiment manifest");
  experiment->add_option("--config", exp.config, "experiment JSON")->required();
  experiment->add_option("--out", exp.out, "output prefix (defaults to the config's output field)");
  experiment->add_option("--format", exp.format, "csv | json | both")->capture_default_str();
  experiment->add_option("--workers", exp.workers, "worker threads (default: MKV_WORKERS or CPU count)");

  // normality
  struct {
    std::string theta0 = "1,0.5", init = "normal:1,1", out;
    std::size_t n = 500, trials = 10000, workers = 0;
    double dt = 0.1, horizon = 5.0;
    std::uint64_t seed = 0;
  } nor;
  auto* normality = app.add_subcommand("normality", "Residual table sqrt(N)(theta_hat - theta0) for the linear model");
  normality->add_option("--theta0", nor.theta0)->capture_default_str();
  normality->add_option("--n", nor.n)->capture_default_str();
  normality->add_option("--T", nor.horizon)->capture_default_str();
  normality->add_option("--dt", nor.dt)->capture_default_str();
  normality->add_option("--init", nor.init)->capture_default_str();
  normality->add_option("--trials", nor.trials)->capture_default_str();
  normality->add_option("--seed", nor.seed)->capture_default_str();
  normality->add_option("--workers", nor.workers);
  normality->add_option("--out", nor.out, "CSV (trial, comp1, comp2)")->required();

  // surface
  struct {
    std::string model = "linear", theta0, grid, kind = "ips", out;
    std::size_t n = 10;
  } surf;
  auto* surface = app.add_subcommand("surface", "Asymptotic log-likelihood surface of the linear model");
  surface->add_option("--model", surf.model, "linear")->capture_default_str();
  surface->add_option("--theta0", surf.theta0, "true parameters")->required();
  surface->add_option("--n", surf.n, "number of particles")->capture_default_str();
  surface->add_option("--kind", surf.kind, "ips | contrast")->capture_default_str();
  surface->add_option("--grid", surf.grid, "theta1:a:b:steps,theta2:a:b:steps")->required();
  surface->add_option("--out", surf.out, "CSV (theta1, theta2, value)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (simulate->parsed()) {
    const mkv::ModelSpec model = mkv::ModelSpec::by_name(sim.model, sim.sigma);
    mkv::SimConfig cfg;
    cfg.n_particles = sim.n;
    cfg.dt = sim.dt;
    cfg.horizon = sim.horizon;
    cfg.init = mkv::io::parse_initial_condition(sim.init);
    cfg.seed = sim.seed;
    cfg.record_noise = sim.record_noise;
    const auto traj = mkv::simulate_ips(model, mkv::parse_theta(sim.theta), cfg);
    mkv::io::write_trajectory(sim.out, traj, cfg);
    return 0;
  }

  if (offline->parsed()) {
    const auto traj = mkv::io::read_trajectory(off.traj);
    const mkv::ModelSpec model =
        mkv::ModelSpec::by_name(off.model, traj.model_id.empty() ? off.sigma : traj.sigma);
    const auto window = mkv::parse_window(off.window);
    nlohmann::json result;
    result["method"] = off.method;
    result["window"] = {window.begin, std::isfinite(window.end) ? window.end : traj.horizon()};
    mkv::Theta estimate;
    if (off.method == "closed-form") {
      if (model.kind() != mkv::ModelKind::linear_mean_field) throw mkv::ValidationError("closed-form needs --model linear");
      estimate = mkv::mle_linear_closed_form(traj, window);
    } else if (off.method == "numeric") {
      const mkv::Theta init = off.init.empty()
                                  ? mkv::Theta(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.param_dim())))
                                  : mkv::parse_theta(off.init);
      mkv::AscentOptions opts;
      opts.max_iters = off.max_iters;
      opts.grad_tol = off.grad_tol;
      const auto fit = mkv::mle_numeric(model, traj, init, opts, window);
      estimate = fit.theta;
      result["iterations"] = fit.iterations;
      result["grad_norm"] = fit.grad_norm;
      result["line_search_stalled"] = fit.line_search_stalled;
    } else {
      throw mkv::ValidationError("unknown method '" + off.method + "' (closed-form | numeric)");
    }
    result["theta"] = estimate.to_vector();
    result["log_likelihood"] = mkv::log_likelihood(model, estimate, traj, window).value;
    if (traj.theta_true.size() == estimate.size()) result["theta_true"] = traj.theta_true.to_vector();
    mkv::io::write_json(off.out, result);
    return 0;
  }

  if (online->parsed()) {
    const mkv::ModelSpec model = mkv::ModelSpec::by_name(on.model, on.sigma);
    mkv::OnlineOptions opts;
    opts.lr = mkv::LearningRate::parse(on.lr, model.param_dim());
    opts.init = mkv::ThetaInit::parse(on.init);
    opts.mode = mkv::parse_online_mode(on.mode);
    opts.max_checkpoints = on.checkpoints;
    mkv::OnlineRun result;
    if (!on.traj.empty()) {
      result = mkv::run_online_replay(model, mkv::io::read_trajectory(on.traj), opts, on.seed);
    } else {
      if (on.theta_true.empty()) throw mkv::ValidationError("--theta-true is required unless --traj is given");
      mkv::SimConfig cfg;
      cfg.n_particles = on.n;
      cfg.dt = on.dt;
      cfg.horizon = on.horizon;
      cfg.init = mkv::io::parse_initial_condition(on.sim_init);
      cfg.seed = on.seed;
      result = mkv::run_online(model, mkv::parse_theta(on.theta_true), cfg, opts);
    }
    write_online_history(on.out, result);
    return 0;
  }

  if (experiment->parsed()) {
    mkv::ExperimentConfig cfg = mkv::load_experiment_config(exp.config);
    const std::string prefix = exp.out.empty() ? cfg.output : exp.out;
    if (prefix.empty()) throw mkv::ValidationError("no output prefix: set 'output' in the config or pass --out");
    if (exp.format != "csv" && exp.format != "json" && exp.format != "both") {
      throw mkv::ValidationError("unknown format '" + exp.format + "' (csv | json | both)");
    }
    const std::size_t workers = exp.workers == 0 ? mkv::default_worker_count() : exp.workers;
    const auto result = mkv::run_experiment(cfg, workers);
    if (exp.format != "json") mkv::export_result(result, prefix, mkv::ExportFormat::csv);
    if (exp.format != "csv") mkv::export_result(result, prefix, mkv::ExportFormat::json);
    for (const auto& f : result.rate_fits) {
      std::printf("rate %s vs %s, component %zu: slope %.4f (r^2 %.4f)\n", f.metric.c_str(), f.axis.c_str(),
                  f.component + 1, f.fit.slope, f.fit.r_squared);
    }
    std::printf("%zu rows, %zu excluded, %.2f s\n", result.rows.size(), result.exclusions.size(),
                result.wall_seconds);
    result.require_within_cap();
    return 0;
  }

  if (normality->parsed()) {
    mkv::SimConfig cfg;
    cfg.n_particles = nor.n;
    cfg.dt = nor.dt;
    cfg.horizon = nor.horizon;
    cfg.init = mkv::io::parse_initial_condition(nor.init);
    cfg.seed = nor.seed;
    const auto sample = mkv::normality_sample(mkv::ModelSpec::linear_mean_field(), mkv::parse_theta(nor.theta0), cfg,
                                              nor.trials, nor.workers == 0 ? mkv::default_worker_count() : nor.workers);
    mkv::io::write_residuals(nor.out, sample.trial, sample.residuals);
    return 0;
  }

  if (surface->parsed()) {
    if (surf.model != "linear") throw mkv::ValidationError("surfaces are available for the linear model only");
    const mkv::Theta theta0 = mkv::parse_theta(surf.theta0);
    const auto [a1, a2] = parse_surface_grid(surf.grid);
    if (surf.kind != "ips" && surf.kind != "contrast") throw mkv::ValidationError("--kind must be ips or contrast");
    auto out = mkv::io::open_for_write(surf.out);
    out << "theta1,theta2,value\n";
    for (std::size_t i = 0; i < a1.steps; ++i) {
      for (std::size_t j = 0; j < a2.steps; ++j) {
        const mkv::Theta theta{a1.at(i), a2.at(j)};
        const double v = surf.kind == "ips" ? mkv::asymptotic_loglik_ips_linear(theta, theta0, surf.n)
                                            : mkv::asymptotic_contrast_linear(theta, theta0);
        out << format_double(theta[0]) << ',' << format_double(theta[1]) << ',' << format_double(v) << '\n';
      }
    }
    mkv::io::finish_write(out, surf.out);
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const mkv::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const mkv::DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const mkv::SimulationDivergedError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return 3;
  } catch (const mkv::EstimatorDivergedError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return 3;
  } catch (const mkv::ExclusionCapError& e) {
    std::cerr << "failed: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
