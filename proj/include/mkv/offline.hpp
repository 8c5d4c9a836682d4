#pragma once

// Batch maximum likelihood for the drift parameters.
//
// The objective is the data form of the Girsanov log-likelihood,
//   l(theta) = 1/(N sigma^2) sum_i sum_k [ <B_k^i(theta), dx_k^i> - 1/2 |B_k^i(theta)|^2 dt ],
// with left-point (Ito) sums. It differs from the likelihood written in terms
// of G = B(theta) - B(theta0) and dw only by theta-free terms.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mkv/errors.hpp"
#include "mkv/models.hpp"
#include "mkv/parallel.hpp"
#include "mkv/rng.hpp"
#include "mkv/simulate.hpp"
#include "mkv/theta.hpp"

namespace mkv {

/// Observation window [begin, end]; an infinite end means "to the horizon".
struct TimeWindow {
  double begin = 0.0;
  double end = std::numeric_limits<double>::infinity();
};

/// Parses "a:b" (either side may be empty).
inline TimeWindow parse_window(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ValidationError("window must look like begin:end, got '" + text + "'");
  TimeWindow w;
  try {
    if (colon > 0) w.begin = std::stod(text.substr(0, colon));
    if (colon + 1 < text.size()) w.end = std::stod(text.substr(colon + 1));
  } catch (const std::exception&) {
    throw ValidationError("cannot parse window '" + text + "'");
  }
  return w;
}

/// Half-open range of Euler steps [first, last) covered by a window.
struct StepRange {
  std::size_t first = 0;
  std::size_t last = 0;
};

inline StepRange resolve_window(const TrajectoryBatch& traj, const TimeWindow& window) {
  if (traj.steps() == 0) throw ValidationError("trajectory has no increments");
  const double horizon = traj.horizon();
  const double end = std::isinf(window.end) ? horizon : window.end;
  const double slack = 1e-9 * std::max(1.0, horizon);
  if (window.begin < 0.0 || !(window.begin < end)) throw ValidationError("window must satisfy 0 <= begin < end");
  if (end > horizon + slack) {
    throw ValidationError("window end " + std::to_string(end) + " exceeds trajectory horizon " + std::to_string(horizon));
  }
  StepRange r;
  r.first = static_cast<std::size_t>(std::llround(window.begin / traj.dt));
  r.last = static_cast<std::size_t>(std::llround(end / traj.dt));
  if (r.last > traj.steps()) r.last = traj.steps();
  if (r.first >= r.last) throw ValidationError("window covers no increments");
  return r;
}

struct LikelihoodValue {
  double value = 0.0;
  std::optional<Eigen::VectorXd> gradient;
  Theta at_theta;
  TimeWindow window;
};

namespace detail {

struct LikelihoodTerms {
  double value = 0.0;
  Eigen::VectorXd gradient;
  // sum grad B grad B^T dt / (N sigma^2): minus the Hessian for models
  // linear in theta, a positive semi-definite preconditioner otherwise.
  Eigen::MatrixXd scoring;
};

inline LikelihoodTerms likelihood_terms(const ModelSpec& model, const Theta& theta, const TrajectoryBatch& traj,
                                        StepRange range, bool want_gradient, bool want_scoring) {
  theta.require_dim(model.param_dim());
  if (traj.dim != model.state_dim()) throw DimensionError("trajectory dimension does not match the model");
  const std::size_t p = model.param_dim();
  const std::size_t d = model.state_dim();
  const std::size_t n = traj.n_particles;
  const double dt = traj.dt;

  LikelihoodTerms out;
  out.gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  if (want_scoring) out.scoring = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  const bool need_grad = want_gradient || want_scoring;

  std::vector<double> drift(d);
  std::vector<double> grad(need_grad ? p * d : 0);
  for (std::size_t k = range.first; k < range.last; ++k) {
    const auto x = traj.frame(k);
    const auto x_next = traj.frame(k + 1);
    const EmpiricalMeasure mu(x, d);
    for (std::size_t i = 0; i < n; ++i) {
      detail::evaluate_drift(model, theta, x.subspan(i * d, d), mu, drift, grad);
      for (std::size_t c = 0; c < d; ++c) {
        const std::size_t j = i * d + c;
        const double dx = x_next[j] - x[j];
        out.value += drift[c] * dx - 0.5 * drift[c] * drift[c] * dt;
        if (want_gradient) {
          const double innovation = x_next[j] - (x[j] + drift[c] * dt);
          for (std::size_t a = 0; a < p; ++a) out.gradient[static_cast<Eigen::Index>(a)] += grad[a * d + c] * innovation;
        }
        if (want_scoring) {
          for (std::size_t a = 0; a < p; ++a) {
            for (std::size_t b = 0; b < p; ++b) {
              out.scoring(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) +=
                  grad[a * d + c] * grad[b * d + c] * dt;
            }
          }
        }
      }
    }
  }
  const double scale = 1.0 / (static_cast<double>(n) * model.sigma() * model.sigma());
  out.value *= scale;
  out.gradient *= scale;
  if (want_scoring) out.scoring *= scale;
  return out;
}

}  // namespace detail

/// Data-form log-likelihood (normalized by 1/N) over `window`.
inline LikelihoodValue log_likelihood(const ModelSpec& model, const Theta& theta, const TrajectoryBatch& traj,
                                      const TimeWindow& window = {}, bool with_gradient = true) {
  const StepRange range = resolve_window(traj, window);
  auto terms = detail::likelihood_terms(model, theta, traj, range, with_gradient, false);
  LikelihoodValue out;
  out.value = terms.value;
  if (with_gradient) out.gradient = std::move(terms.gradient);
  out.at_theta = theta;
  out.window = window;
  return out;
}

// ---------------------------------------------------------------------------
// Numerical maximization

struct AscentOptions {
  enum class StepRule {
    gradient,  // steepest ascent
    scoring,   // ascent along the scoring-preconditioned gradient
  };
  std::size_t max_iters = 500;
  double grad_tol = 1e-8;
  StepRule step_rule = StepRule::scoring;
  std::size_t max_halvings = 60;
};

/// Objective evaluation for `maximize`. `curvature`, when present, is a
/// positive-definite approximation of minus the Hessian.
struct ObjectiveEval {
  double value = 0.0;
  Eigen::VectorXd gradient;
  std::optional<Eigen::MatrixXd> curvature;
};

struct AscentResult {
  Theta theta;
  double value = 0.0;
  double grad_norm = 0.0;
  std::size_t iterations = 0;
  /// Set when the line search could not make progress before the gradient
  /// tolerance was met (flat or badly conditioned curvature).
  bool line_search_stalled = false;
};

/// Gradient ascent with Armijo backtracking (step halving).
template <class Objective>
AscentResult maximize(Objective&& objective, const Theta& init, const AscentOptions& opts = {}) {
  constexpr double kArmijo = 1e-4;
  Eigen::VectorXd theta = init.values();
  ObjectiveEval current = objective(Theta(theta));
  double step = 1.0;
  for (std::size_t iter = 0;; ++iter) {
    const double gnorm = current.gradient.norm();
    if (!std::isfinite(gnorm) || !std::isfinite(current.value)) {
      throw ConvergenceError("objective is not finite at the current iterate",
                             {theta.data(), theta.data() + theta.size()}, gnorm);
    }
    if (gnorm <= opts.grad_tol) return {Theta(theta), current.value, gnorm, iter, false};
    if (iter >= opts.max_iters) {
      throw ConvergenceError("maximizer reached the iteration cap (" + std::to_string(opts.max_iters) + ")",
                             {theta.data(), theta.data() + theta.size()}, gnorm);
    }

    Eigen::VectorXd direction = current.gradient;
    if (opts.step_rule == AscentOptions::StepRule::scoring && current.curvature) {
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(*current.curvature);
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        Eigen::VectorXd solved = ldlt.solve(current.gradient);
        if (solved.allFinite() && solved.dot(current.gradient) > 0.0) direction = std::move(solved);
      }
      step = 1.0;
    }
    const double slope = current.gradient.dot(direction);

    bool accepted = false;
    for (std::size_t h = 0; h <= opts.max_halvings; ++h, step *= 0.5) {
      const Eigen::VectorXd trial = theta + step * direction;
      if (!trial.allFinite()) continue;
      ObjectiveEval next = objective(Theta(trial));
      const bool armijo = next.value >= current.value + kArmijo * step * slope;
      // Near the optimum value differences drown in rounding; accept steps
      // that still shrink the gradient.
      const bool flat = std::abs(next.value - current.value) <= 1e-14 * (1.0 + std::abs(current.value)) &&
                        next.gradient.norm() < gnorm;
      if (armijo || flat) {
        theta = trial;
        current = std::move(next);
        accepted = true;
        break;
      }
    }
    if (!accepted) return {Theta(theta), current.value, gnorm, iter, true};
    if (opts.step_rule == AscentOptions::StepRule::gradient) step = std::min(1e6, step * 4.0);
  }
}

/// Maximum likelihood estimate over `window` by numerical ascent.
inline AscentResult mle_numeric(const ModelSpec& model, const TrajectoryBatch& traj, const Theta& init,
                                const AscentOptions& opts = {}, const TimeWindow& window = {}) {
  init.require_dim(model.param_dim());
  const StepRange range = resolve_window(traj, window);
  const bool scoring = opts.step_rule == AscentOptions::StepRule::scoring;
  return maximize(
      [&](const Theta& theta) {
        auto terms = detail::likelihood_terms(model, theta, traj, range, true, scoring);
        ObjectiveEval e;
        e.value = terms.value;
        e.gradient = std::move(terms.gradient);
        if (scoring) e.curvature = std::move(terms.scoring);
        return e;
      },
      init, opts);
}

// ---------------------------------------------------------------------------
// Linear mean-field model: closed form

/// Running sums A, B, C, D for the linear model:
///   A = sum (x - xbar) dx,  B = sum x dx,  C = sum (x - xbar)^2 dt,  D = sum x^2 dt.
struct LinearSufficientStats {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double d = 0.0;

  void add_increment(std::span<const double> x, std::span<const double> x_next, double dt) {
    const EmpiricalMeasure mu(x, 1);
    const double xbar = mu.mean()[0];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double dev = x[i] - xbar;
      const double dx = x_next[i] - x[i];
      a += dev * dx;
      b += x[i] * dx;
      c += dev * dev * dt;
      d += x[i] * x[i] * dt;
    }
  }

  /// Stationary point of the data-form likelihood.
  Theta estimate() const {
    constexpr double kTiny = 1e-12;
    const double den1 = c - d;
    const double den2 = c * c - c * d;
    if (std::abs(den1) < kTiny || std::abs(den2) < kTiny) {
      throw DegenerateEstimateError("closed-form MLE denominators vanish (C - D = " + std::to_string(den1) +
                                    ", C^2 - CD = " + std::to_string(den2) + "); parameters not identifiable");
    }
    return Theta{(b - a) / den1, (d * a - c * b) / den2};
  }
};

inline LinearSufficientStats linear_sufficient_stats(const TrajectoryBatch& traj, const TimeWindow& window = {}) {
  if (traj.dim != 1) throw DimensionError("closed-form MLE needs one-dimensional states");
  const StepRange range = resolve_window(traj, window);
  LinearSufficientStats s;
  for (std::size_t k = range.first; k < range.last; ++k) s.add_increment(traj.frame(k), traj.frame(k + 1), traj.dt);
  return s;
}

inline Theta mle_linear_closed_form(const TrajectoryBatch& traj, const TimeWindow& window = {}) {
  return linear_sufficient_stats(traj, window).estimate();
}

// ---------------------------------------------------------------------------
// Fisher information of the linear model

struct FisherInfo {
  Eigen::Matrix2d matrix = Eigen::Matrix2d::Zero();
  Theta at_theta;
  double t = 0.0;
};

/// I_t(theta0) = int_0^t E[grad B grad B^T] ds for the linear model with unit
/// diffusion and x_0 ~ (mu0, sigma0_sq): [[D_t, C_t], [C_t, C_t]] with
/// C_t = int Var(x_s) ds and D_t = C_t + int E[x_s]^2 ds.
inline FisherInfo fisher_information_linear(const Theta& theta0, double t, double mu0, double sigma0_sq) {
  theta0.require_dim(2);
  const double th1 = theta0[0];
  const double th2 = theta0[1];
  if (!(th1 + th2 > 0.0)) throw DomainError("Fisher information needs theta1 + theta2 > 0");
  if (th1 == 0.0) throw DomainError("Fisher information needs theta1 != 0");
  if (!(t >= 0.0)) throw ValidationError("Fisher information needs t >= 0");
  const double g = -2.0 * (th1 + th2);
  const double em1 = std::expm1(g * t);
  const double c_t = (em1 - g * t) / (g * g) + sigma0_sq * em1 / g;
  const double d_t = c_t - mu0 * mu0 * std::expm1(-2.0 * th1 * t) / (2.0 * th1);
  FisherInfo info;
  info.matrix << d_t, c_t, c_t, c_t;
  info.at_theta = theta0;
  info.t = t;
  return info;
}

// ---------------------------------------------------------------------------
// Asymptotic normality sample

struct NormalitySample {
  std::vector<std::size_t> trial;   // index of each retained trial
  Eigen::MatrixXd residuals;        // rows: sqrt(N) (theta_hat - theta0)
  std::size_t trials = 0;
  std::size_t dropped = 0;
};

/// Independent simulations + closed-form MLE; returns the standardized
/// residual table. Trial seeds derive from (cfg.seed, trial index).
inline NormalitySample normality_sample(const ModelSpec& model, const Theta& theta0, const SimConfig& cfg,
                                        std::size_t trials, std::size_t workers = default_worker_count()) {
  if (model.kind() != ModelKind::linear_mean_field) {
    throw ValidationError("normality_sample uses the closed-form MLE and needs the linear model");
  }
  if (trials < 100) throw ValidationError("normality_sample needs at least 100 trials");
  theta0.require_dim(2);
  cfg.validate();
  const std::size_t steps = cfg.steps();
  std::vector<std::optional<Eigen::Vector2d>> draws(trials);
  parallel_for(trials, workers, [&](std::size_t trial) {
    SimConfig trial_cfg = cfg;
    trial_cfg.seed = rng::derive_seed(cfg.seed, {trial});
    ParticleSystem system(model, theta0, trial_cfg);
    LinearSufficientStats s;
    std::vector<double> prev(system.state().begin(), system.state().end());
    for (std::size_t k = 0; k < steps; ++k) {
      system.advance();
      s.add_increment(prev, system.state(), cfg.dt);
      std::copy(system.state().begin(), system.state().end(), prev.begin());
    }
    try {
      const Theta est = s.estimate();
      draws[trial] = std::sqrt(static_cast<double>(cfg.n_particles)) * (est.values() - theta0.values());
    } catch (const DegenerateEstimateError&) {
    }
  });
  NormalitySample out;
  out.trials = trials;
  std::vector<Eigen::Vector2d> kept;
  for (std::size_t i = 0; i < trials; ++i) {
    if (draws[i]) {
      out.trial.push_back(i);
      kept.push_back(*draws[i]);
    } else {
      ++out.dropped;
    }
  }
  if (static_cast<double>(out.dropped) >= 0.01 * static_cast<double>(trials)) {
    throw ExclusionCapError("normality_sample dropped " + std::to_string(out.dropped) + " of " +
                            std::to_string(trials) + " trials (cap is 1%)");
  }
  out.residuals.resize(static_cast<Eigen::Index>(kept.size()), 2);
  for (std::size_t i = 0; i < kept.size(); ++i) out.residuals.row(static_cast<Eigen::Index>(i)) = kept[i].transpose();
  return out;
}

}  // namespace mkv
