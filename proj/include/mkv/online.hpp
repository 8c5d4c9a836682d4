#pragma once

// Continuous-time stochastic gradient ascent on the IPS log-likelihood,
// discretized on the observation grid. Each step moves theta by
//   gamma (.) 1/(N sigma^2) sum_i grad_theta B(theta, x^i, mu^N) (dx^i - B(theta, x^i, mu^N) dt)
// (averaged estimator) or by the single-particle term (per-particle estimators).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mkv/errors.hpp"
#include "mkv/models.hpp"
#include "mkv/rng.hpp"
#include "mkv/simulate.hpp"
#include "mkv/theta.hpp"

namespace mkv {

// ---------------------------------------------------------------------------
// Learning rates

/// Scalar schedule gamma_t, positive (or identically zero) and non-increasing.
struct Schedule {
  enum class Kind {
    constant,    // gamma_t = a
    power_min,   // gamma_t = min(a, a t^-b), a > 0, b in (1/2, 1]
    reciprocal,  // gamma_t = a / (b + t), a, b > 0
  };

  Kind kind = Kind::constant;
  double a = 0.0;
  double b = 0.0;

  static Schedule constant(double c) { return checked({Kind::constant, c, 0.0}); }
  static Schedule power_min(double gamma0, double alpha) { return checked({Kind::power_min, gamma0, alpha}); }
  static Schedule reciprocal(double c_gamma, double c0) { return checked({Kind::reciprocal, c_gamma, c0}); }

  double operator()(double t) const {
    switch (kind) {
      case Kind::constant: return a;
      case Kind::power_min: return t <= 1.0 ? a : a * std::pow(t, -b);
      case Kind::reciprocal: return a / (b + t);
    }
    return 0.0;
  }

  /// "const:0.1", "powmin:0.05,0.51", "recip:2,1", or a bare number.
  static Schedule parse(const std::string& text) {
    const auto colon = text.find(':');
    const std::string kind = colon == std::string::npos ? "const" : text.substr(0, colon);
    const std::string args = colon == std::string::npos ? text : text.substr(colon + 1);
    std::vector<double> v;
    try {
      std::size_t pos = 0;
      while (pos <= args.size()) {
        const auto comma = args.find(',', pos);
        v.push_back(std::stod(args.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
    } catch (const std::exception&) {
      throw ValidationError("cannot parse learning rate '" + text + "'");
    }
    if ((kind == "const" || kind == "constant") && v.size() == 1) return constant(v[0]);
    if (kind == "powmin" && v.size() == 2) return power_min(v[0], v[1]);
    if (kind == "recip" && v.size() == 2) return reciprocal(v[0], v[1]);
    throw ValidationError("unknown learning rate '" + text + "' (const:c | powmin:g0,alpha | recip:C,C0)");
  }

  std::string to_string() const {
    switch (kind) {
      case Kind::constant: return "const:" + fmt(a);
      case Kind::power_min: return "powmin:" + fmt(a) + "," + fmt(b);
      case Kind::reciprocal: return "recip:" + fmt(a) + "," + fmt(b);
    }
    return {};
  }

 private:
  static std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
  }

  static Schedule checked(Schedule s) {
    if (!std::isfinite(s.a) || !std::isfinite(s.b)) throw ValidationError("learning rate parameters must be finite");
    switch (s.kind) {
      case Kind::constant:
        // zero freezes the coordinate
        if (s.a < 0.0) throw ValidationError("constant learning rate must be >= 0");
        break;
      case Kind::power_min:
        if (!(s.a > 0.0)) throw ValidationError("power-min learning rate needs gamma0 > 0");
        if (!(s.b > 0.5 && s.b <= 1.0)) throw ValidationError("power-min learning rate needs alpha in (1/2, 1]");
        break;
      case Kind::reciprocal:
        if (!(s.a > 0.0 && s.b > 0.0)) throw ValidationError("reciprocal learning rate needs C_gamma, C0 > 0");
        break;
    }
    return s;
  }
};

/// One schedule per parameter coordinate.
class LearningRate {
 public:
  LearningRate() = default;
  explicit LearningRate(std::vector<Schedule> schedules) : schedules_(std::move(schedules)) {
    if (schedules_.empty()) throw ValidationError("learning rate needs at least one schedule");
  }

  /// Semicolon-separated schedules; a single schedule is broadcast to p coordinates.
  static LearningRate parse(const std::string& text, std::size_t p) {
    std::vector<Schedule> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto semi = text.find(';', pos);
      out.push_back(Schedule::parse(text.substr(pos, semi == std::string::npos ? std::string::npos : semi - pos)));
      if (semi == std::string::npos) break;
      pos = semi + 1;
    }
    if (out.size() == 1 && p > 1) out.assign(p, out.front());
    if (out.size() != p) throw ValidationError("learning rate has " + std::to_string(out.size()) + " schedules, need " + std::to_string(p));
    return LearningRate(std::move(out));
  }

  std::size_t size() const noexcept { return schedules_.size(); }
  const std::vector<Schedule>& schedules() const noexcept { return schedules_; }

  Eigen::VectorXd operator()(double t) const {
    Eigen::VectorXd g(static_cast<Eigen::Index>(schedules_.size()));
    for (std::size_t k = 0; k < schedules_.size(); ++k) g[static_cast<Eigen::Index>(k)] = schedules_[k](t);
    return g;
  }

  std::string to_string() const {
    std::string s;
    for (std::size_t k = 0; k < schedules_.size(); ++k) s += (k ? ";" : "") + schedules_[k].to_string();
    return s;
  }

 private:
  std::vector<Schedule> schedules_;
};

inline Eigen::VectorXd lr_eval(const LearningRate& lr, double t) {
  if (!(t >= 0.0)) throw ValidationError("learning rate time must be >= 0");
  return lr(t);
}

// ---------------------------------------------------------------------------
// Estimator state and single steps

enum class OnlineMode { averaged, per_particle };

inline OnlineMode parse_online_mode(const std::string& text) {
  if (text == "averaged") return OnlineMode::averaged;
  if (text == "per-particle" || text == "per_particle") return OnlineMode::per_particle;
  throw ValidationError("unknown online mode '" + text + "' (averaged | per-particle)");
}

struct HistoryPoint {
  double t = 0.0;
  Eigen::VectorXd theta;      // per-particle mode: mean over estimators
  Eigen::VectorXd sq_error;   // mean over estimators of (theta - theta0)^2, when theta0 is known
};

struct EstimatorState {
  Theta theta;
  double t = 0.0;
  std::size_t steps = 0;
  OnlineMode mode = OnlineMode::averaged;
  std::optional<std::size_t> particle;  // per-particle mode: which particle drives this estimator
};

inline constexpr double kThetaRunawayBound = 1e8;

namespace detail {

inline void check_step_inputs(const ModelSpec& model, std::span<const double> frame, std::span<const double> next,
                              const Eigen::VectorXd& gamma) {
  if (frame.size() != next.size() || frame.empty() || frame.size() % model.state_dim() != 0) {
    throw DimensionError("online step needs two frames of equal size N x d");
  }
  if (static_cast<std::size_t>(gamma.size()) != model.param_dim()) throw DimensionError("gamma length must equal p");
  if ((gamma.array() < 0.0).any()) throw ValidationError("gamma entries must be >= 0");
}

// Accumulates grad B (theta) * (x_next - (x + B dt)) for particle i into acc.
inline void add_particle_score(const ModelSpec& model, const Theta& theta, std::span<const double> frame,
                               std::span<const double> next, const EmpiricalMeasure& mu, std::size_t i, double dt,
                               std::span<double> drift, std::span<double> grad, Eigen::VectorXd& acc) {
  const std::size_t d = model.state_dim();
  const std::size_t p = model.param_dim();
  detail::evaluate_drift(model, theta, frame.subspan(i * d, d), mu, drift, grad);
  for (std::size_t c = 0; c < d; ++c) {
    const std::size_t j = i * d + c;
    const double innovation = next[j] - (frame[j] + drift[c] * dt);
    for (std::size_t a = 0; a < p; ++a) acc[static_cast<Eigen::Index>(a)] += grad[a * d + c] * innovation;
  }
}

inline Theta apply_increment(const Theta& theta, const Eigen::VectorXd& increment, std::size_t step) {
  Eigen::VectorXd next = theta.values() + increment;
  if (!next.allFinite() || next.cwiseAbs().maxCoeff() > kThetaRunawayBound) {
    throw EstimatorDivergedError(step, "parameter estimate left the finite range");
  }
  return Theta(std::move(next));
}

}  // namespace detail

/// Averaged update over all particles between consecutive frames.
inline EstimatorState online_step_averaged(const ModelSpec& model, const EstimatorState& state,
                                           std::span<const double> frame, std::span<const double> next, double dt,
                                           const Eigen::VectorXd& gamma) {
  detail::check_step_inputs(model, frame, next, gamma);
  state.theta.require_dim(model.param_dim());
  const std::size_t d = model.state_dim();
  const std::size_t p = model.param_dim();
  const std::size_t n = frame.size() / d;
  const EmpiricalMeasure mu(frame, d);
  std::vector<double> drift(d);
  std::vector<double> grad(p * d);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < n; ++i) detail::add_particle_score(model, state.theta, frame, next, mu, i, dt, drift, grad, acc);
  const double scale = 1.0 / (static_cast<double>(n) * model.sigma() * model.sigma());
  EstimatorState out = state;
  out.theta = detail::apply_increment(state.theta, gamma.cwiseProduct(acc) * scale, state.steps);
  out.t = state.t + dt;
  out.steps = state.steps + 1;
  out.mode = OnlineMode::averaged;
  return out;
}

/// Per-particle updates: estimator i sees only particle i's increment and the
/// shared empirical measure of `frame`. Updates `states` in place.
inline void online_step_per_particle(const ModelSpec& model, std::span<EstimatorState> states,
                                     std::span<const double> frame, std::span<const double> next, double dt,
                                     const Eigen::VectorXd& gamma) {
  detail::check_step_inputs(model, frame, next, gamma);
  const std::size_t d = model.state_dim();
  const std::size_t p = model.param_dim();
  const std::size_t n = frame.size() / d;
  if (states.size() != n) throw DimensionError("per-particle mode needs one estimator per particle");
  const EmpiricalMeasure mu(frame, d);
  mu.mean();
  std::vector<double> drift(d);
  std::vector<double> grad(p * d);
  const double scale = 1.0 / (model.sigma() * model.sigma());
  for (std::size_t i = 0; i < n; ++i) {
    EstimatorState& s = states[i];
    s.theta.require_dim(p);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    detail::add_particle_score(model, s.theta, frame, next, mu, i, dt, drift, grad, acc);
    s.theta = detail::apply_increment(s.theta, gamma.cwiseProduct(acc) * scale, s.steps);
    s.t += dt;
    ++s.steps;
    s.mode = OnlineMode::per_particle;
    s.particle = i;
  }
}

inline std::vector<EstimatorState> online_step_per_particle(const ModelSpec& model, std::vector<EstimatorState> states,
                                                            std::span<const double> frame, std::span<const double> next,
                                                            double dt, const Eigen::VectorXd& gamma) {
  online_step_per_particle(model, std::span<EstimatorState>(states), frame, next, dt, gamma);
  return states;
}

// ---------------------------------------------------------------------------
// Full runs

/// Initial estimate: per coordinate either a fixed value or U[low, high].
class ThetaInit {
 public:
  struct Component {
    bool uniform = false;
    double low = 0.0;
    double high = 0.0;  // fixed value when !uniform is stored in low
  };

  ThetaInit() = default;
  explicit ThetaInit(const Theta& fixed) {
    for (std::size_t k = 0; k < fixed.size(); ++k) components_.push_back({false, fixed[k], fixed[k]});
  }
  explicit ThetaInit(std::vector<Component> components) : components_(std::move(components)) {}

  /// "uniform:-1,2;uniform:-2,2", "fixed:0.5;uniform:2,5" or "0.5,0.1".
  static ThetaInit parse(const std::string& text) {
    if (text.find(':') == std::string::npos) return ThetaInit(parse_theta(text));
    std::vector<Component> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto semi = text.find(';', pos);
      const std::string item = text.substr(pos, semi == std::string::npos ? std::string::npos : semi - pos);
      const auto colon = item.find(':');
      const std::string kind = item.substr(0, colon);
      const Theta args = parse_theta(colon == std::string::npos ? "" : item.substr(colon + 1));
      if (kind == "uniform" && args.size() == 2 && args[0] < args[1]) {
        out.push_back({true, args[0], args[1]});
      } else if (kind == "fixed" && args.size() == 1) {
        out.push_back({false, args[0], args[0]});
      } else {
        throw ValidationError("cannot parse initial estimate '" + item + "' (uniform:a,b | fixed:v)");
      }
      if (semi == std::string::npos) break;
      pos = semi + 1;
    }
    return ThetaInit(std::move(out));
  }

  std::size_t size() const noexcept { return components_.size(); }
  const std::vector<Component>& components() const noexcept { return components_; }

  Theta sample(std::uint64_t seed) const {
    const auto stream = rng::make_stream(seed, rng::Stream::estimator_init);
    Eigen::VectorXd v(static_cast<Eigen::Index>(components_.size()));
    for (std::size_t k = 0; k < components_.size(); ++k) {
      const auto& c = components_[k];
      v[static_cast<Eigen::Index>(k)] = c.uniform ? c.low + (c.high - c.low) * stream.uniform(0, k) : c.low;
    }
    return Theta(std::move(v));
  }

 private:
  std::vector<Component> components_;
};

struct OnlineOptions {
  LearningRate lr;
  ThetaInit init;
  OnlineMode mode = OnlineMode::averaged;
  std::size_t max_checkpoints = 10000;
};

struct OnlineRun {
  Theta initial;
  std::vector<HistoryPoint> history;
  EstimatorState averaged;                    // averaged mode
  std::vector<EstimatorState> per_particle;   // per-particle mode

  /// Final estimate (mean over estimators in per-particle mode).
  Eigen::VectorXd final_theta() const { return history.back().theta; }
  Eigen::VectorXd final_sq_error() const { return history.back().sq_error; }
};

namespace detail {

// Streams frames through the chosen step op, recording downsampled history.
class OnlineDriver {
 public:
  OnlineDriver(const ModelSpec& model, const OnlineOptions& opts, Theta init, std::size_t n_particles,
               std::size_t total_steps, std::optional<Theta> theta_true)
      : model_(model), opts_(opts), truth_(std::move(theta_true)) {
    if (opts.lr.size() != model.param_dim()) throw DimensionError("learning rate length must equal p");
    init.require_dim(model.param_dim());
    if (opts.max_checkpoints < 3) throw ValidationError("max_checkpoints must be >= 3");
    stride_ = std::max<std::size_t>(1, (total_steps + opts.max_checkpoints - 3) / (opts.max_checkpoints - 2));
    total_ = total_steps;
    run_.initial = init;
    if (opts.mode == OnlineMode::averaged) {
      run_.averaged.theta = init;
    } else {
      run_.per_particle.assign(n_particles, EstimatorState{init, 0.0, 0, OnlineMode::per_particle, std::nullopt});
      for (std::size_t i = 0; i < n_particles; ++i) run_.per_particle[i].particle = i;
    }
    record(0.0);
  }

  void step(std::span<const double> frame, std::span<const double> next, double dt, std::size_t k) {
    const Eigen::VectorXd gamma = opts_.lr(static_cast<double>(k) * dt);
    if (opts_.mode == OnlineMode::averaged) {
      run_.averaged = online_step_averaged(model_, run_.averaged, frame, next, dt, gamma);
    } else {
      online_step_per_particle(model_, std::span<EstimatorState>(run_.per_particle), frame, next, dt, gamma);
    }
    const std::size_t done = k + 1;
    if (done % stride_ == 0 || done == total_) record(static_cast<double>(done) * dt);
  }

  OnlineRun finish() && { return std::move(run_); }

 private:
  void record(double t) {
    HistoryPoint h;
    h.t = t;
    const auto p = static_cast<Eigen::Index>(model_.param_dim());
    if (opts_.mode == OnlineMode::averaged) {
      h.theta = run_.averaged.theta.values();
      if (truth_) h.sq_error = (h.theta - truth_->values()).array().square().matrix();
    } else {
      h.theta = Eigen::VectorXd::Zero(p);
      Eigen::VectorXd sq = Eigen::VectorXd::Zero(p);
      for (const auto& s : run_.per_particle) {
        h.theta += s.theta.values();
        if (truth_) sq += (s.theta.values() - truth_->values()).array().square().matrix();
      }
      const double n = static_cast<double>(run_.per_particle.size());
      h.theta /= n;
      if (truth_) h.sq_error = sq / n;
    }
    run_.history.push_back(std::move(h));
  }

  const ModelSpec& model_;
  const OnlineOptions& opts_;
  std::optional<Theta> truth_;
  std::size_t stride_ = 1;
  std::size_t total_ = 0;
  OnlineRun run_;
};

}  // namespace detail

/// Simulates data at theta0_true and runs the online estimator alongside it.
/// The initial estimate is drawn from the estimator_init stream of cfg.seed.
inline OnlineRun run_online(const ModelSpec& model, const Theta& theta0_true, const SimConfig& cfg,
                            const OnlineOptions& opts) {
  cfg.validate();
  theta0_true.require_dim(model.param_dim());
  if (opts.init.size() != model.param_dim()) throw DimensionError("initial estimate spec length must equal p");
  const std::size_t steps = cfg.steps();
  ParticleSystem system(model, theta0_true, cfg);
  detail::OnlineDriver driver(model, opts, opts.init.sample(cfg.seed), cfg.n_particles, steps, theta0_true);
  std::vector<double> prev(system.state().begin(), system.state().end());
  for (std::size_t k = 0; k < steps; ++k) {
    system.advance();
    driver.step(prev, system.state(), cfg.dt, k);
    std::copy(system.state().begin(), system.state().end(), prev.begin());
  }
  return std::move(driver).finish();
}

/// Replays a stored trajectory through the online estimator.
inline OnlineRun run_online_replay(const ModelSpec& model, const TrajectoryBatch& traj, const OnlineOptions& opts,
                                   std::uint64_t init_seed, double horizon = -1.0) {
  if (traj.dim != model.state_dim()) throw DimensionError("trajectory dimension does not match the model");
  if (opts.init.size() != model.param_dim()) throw DimensionError("initial estimate spec length must equal p");
  std::size_t steps = traj.steps();
  if (horizon > 0.0) {
    if (horizon > traj.horizon() * (1.0 + 1e-9)) {
      throw ValidationError("requested horizon " + std::to_string(horizon) + " exceeds stored trajectory horizon " +
                            std::to_string(traj.horizon()));
    }
    steps = static_cast<std::size_t>(std::llround(horizon / traj.dt));
  }
  std::optional<Theta> truth;
  if (traj.theta_true.size() == model.param_dim()) truth = traj.theta_true;
  detail::OnlineDriver driver(model, opts, opts.init.sample(init_seed), traj.n_particles, steps, truth);
  for (std::size_t k = 0; k < steps; ++k) driver.step(traj.frame(k), traj.frame(k + 1), traj.dt, k);
  return std::move(driver).finish();
}

}  // namespace mkv
