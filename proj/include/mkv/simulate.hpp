#pragma once

// Euler-Maruyama integration of the N-particle system
//   dx^i = B(theta, x^i, mu^N) dt + sigma dw^i
// with counter-based noise so every run is reproducible bit for bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mkv/errors.hpp"
#include "mkv/models.hpp"
#include "mkv/rng.hpp"
#include "mkv/theta.hpp"

namespace mkv {

/// Initial law of the particles; coordinates are drawn i.i.d.
struct InitialCondition {
  enum class Kind { point, normal, uniform };

  Kind kind = Kind::normal;
  std::vector<double> point;  // Kind::point, length d (a single value is broadcast)
  double mean = 1.0;          // Kind::normal
  double variance = 1.0;
  double low = 0.0;           // Kind::uniform
  double high = 1.0;

  static InitialCondition point_mass(std::vector<double> x0) {
    InitialCondition ic;
    ic.kind = Kind::point;
    ic.point = std::move(x0);
    return ic;
  }
  static InitialCondition gaussian(double mean, double variance) {
    InitialCondition ic;
    ic.kind = Kind::normal;
    ic.mean = mean;
    ic.variance = variance;
    return ic;
  }
  static InitialCondition uniform_box(double low, double high) {
    InitialCondition ic;
    ic.kind = Kind::uniform;
    ic.low = low;
    ic.high = high;
    return ic;
  }

  void validate(std::size_t dim) const {
    switch (kind) {
      case Kind::point:
        if (point.size() != 1 && point.size() != dim) throw ValidationError("point initial condition has wrong dimension");
        for (double v : point) {
          if (!std::isfinite(v)) throw ValidationError("initial point must be finite");
        }
        return;
      case Kind::normal:
        if (!std::isfinite(mean) || !(variance >= 0.0) || !std::isfinite(variance)) {
          throw ValidationError("normal initial condition needs finite mean and variance >= 0");
        }
        return;
      case Kind::uniform:
        if (!std::isfinite(low) || !std::isfinite(high) || !(low < high)) {
          throw ValidationError("uniform initial condition needs low < high");
        }
        return;
    }
  }

  /// Mean of coordinate c under the initial law.
  double law_mean(std::size_t c = 0) const {
    switch (kind) {
      case Kind::point: return point.size() == 1 ? point[0] : point[c];
      case Kind::normal: return mean;
      case Kind::uniform: return 0.5 * (low + high);
    }
    return 0.0;
  }

  /// N x d initial positions drawn from `stream`.
  std::vector<double> sample(std::size_t n, std::size_t dim, const rng::CounterStream& stream) const {
    validate(dim);
    std::vector<double> x(n * dim);
    switch (kind) {
      case Kind::point:
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t c = 0; c < dim; ++c) x[i * dim + c] = law_mean(c);
        }
        break;
      case Kind::normal:
        stream.fill_normal(0, std::sqrt(variance), x);
        for (double& v : x) v += mean;
        break;
      case Kind::uniform:
        for (std::size_t j = 0; j < x.size(); ++j) x[j] = low + (high - low) * stream.uniform(0, j);
        break;
    }
    return x;
  }
};

struct SimConfig {
  std::size_t n_particles = 1;
  double dt = 0.1;
  double horizon = 1.0;
  InitialCondition init = InitialCondition::gaussian(1.0, 1.0);
  std::uint64_t seed = 0;
  bool record_noise = false;

  void validate() const {
    if (n_particles < 1) throw ValidationError("n_particles must be >= 1");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ValidationError("dt must be positive");
    if (!(horizon >= dt) || !std::isfinite(horizon)) throw ValidationError("horizon must be >= dt");
    const double ratio = horizon / dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) {
      throw ValidationError("horizon must be an integer multiple of dt");
    }
  }

  std::size_t steps() const {
    validate();
    return static_cast<std::size_t>(std::llround(horizon / dt));
  }
};

/// Time grid plus every particle path; states are row-major [K+1][N][d].
struct TrajectoryBatch {
  std::vector<double> times;
  std::size_t n_particles = 0;
  std::size_t dim = 1;
  double dt = 0.0;
  std::vector<double> states;
  std::vector<double> noise;  // [K][N][d], empty unless recorded
  Theta theta_true;
  std::string model_id;
  double sigma = 1.0;

  std::size_t steps() const noexcept { return times.empty() ? 0 : times.size() - 1; }
  std::size_t frame_size() const noexcept { return n_particles * dim; }
  double horizon() const noexcept { return times.empty() ? 0.0 : times.back(); }
  bool has_noise() const noexcept { return !noise.empty(); }

  std::span<const double> frame(std::size_t k) const {
    return std::span<const double>(states).subspan(k * frame_size(), frame_size());
  }
  std::span<const double> noise_frame(std::size_t k) const {
    return std::span<const double>(noise).subspan(k * frame_size(), frame_size());
  }
  double position(std::size_t k, std::size_t i, std::size_t c = 0) const {
    return states[(k * n_particles + i) * dim + c];
  }
};

inline constexpr double kStateRunawayBound = 1e12;

/// Advances every particle of `state` one Euler step, with drift computed
/// against the (frozen) measure `mu`; noise entries are the Brownian
/// increments (variance dt each).
inline void step_against_measure(const ModelSpec& model, const Theta& theta, std::span<const double> state,
                                 const EmpiricalMeasure& mu, double dt, std::span<const double> noise,
                                 std::span<double> out, std::size_t step_index = 0) {
  const std::size_t d = model.state_dim();
  if (state.size() % d != 0 || noise.size() != state.size() || out.size() != state.size()) {
    throw DimensionError("state, noise and output sizes must agree");
  }
  const double sigma = model.sigma();
  const std::size_t n = state.size() / d;
  double drift_buf[16];
  std::vector<double> drift_heap;
  std::span<double> drift(drift_buf, d <= 16 ? d : 0);
  if (d > 16) {
    drift_heap.resize(d);
    drift = drift_heap;
  }
  for (std::size_t i = 0; i < n; ++i) {
    detail::evaluate_drift(model, theta, state.subspan(i * d, d), mu, drift, {});
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t j = i * d + c;
      const double next = state[j] + drift[c] * dt + sigma * noise[j];
      if (!std::isfinite(next) || std::abs(next) > kStateRunawayBound) {
        throw SimulationDivergedError(step_index, "particle " + std::to_string(i) + " left the finite range");
      }
      out[j] = next;
    }
  }
}

/// One Euler-Maruyama step of the interacting system. All particles are
/// advanced from the same snapshot.
inline void step_euler(const ModelSpec& model, const Theta& theta, std::span<const double> state, double dt,
                       std::span<const double> noise, std::span<double> out, std::size_t step_index = 0) {
  theta.require_dim(model.param_dim());
  const EmpiricalMeasure mu(state, model.state_dim());
  step_against_measure(model, theta, state, mu, dt, noise, out, step_index);
}

inline std::vector<double> step_euler(const ModelSpec& model, const Theta& theta, std::span<const double> state,
                                      double dt, std::span<const double> noise) {
  std::vector<double> out(state.size());
  step_euler(model, theta, state, dt, noise, out);
  return out;
}

/// Stateful stepper over the observation grid. Noise for step k is
/// sqrt(dt) * z(k, j) from the brownian stream of `seed`.
class ParticleSystem {
 public:
  ParticleSystem(ModelSpec model, Theta theta, std::vector<double> initial_state, double dt,
                 rng::CounterStream noise_stream)
      : model_(std::move(model)), theta_(std::move(theta)), dt_(dt), sqrt_dt_(std::sqrt(dt)),
        noise_stream_(noise_stream), state_(std::move(initial_state)), next_(state_.size()), noise_(state_.size()) {
    theta_.require_dim(model_.param_dim());
    if (state_.empty() || state_.size() % model_.state_dim() != 0) {
      throw DimensionError("initial state size is not a multiple of the state dimension");
    }
  }

  ParticleSystem(const ModelSpec& model, const Theta& theta, const SimConfig& cfg)
      : ParticleSystem(model, theta,
                       cfg.init.sample(cfg.n_particles, model.state_dim(),
                                       rng::make_stream(cfg.seed, rng::Stream::initial_state)),
                       cfg.dt, rng::make_stream(cfg.seed, rng::Stream::brownian)) {
    cfg.validate();
  }

  const ModelSpec& model() const noexcept { return model_; }
  const Theta& theta() const noexcept { return theta_; }
  std::size_t step_index() const noexcept { return step_; }
  double time() const noexcept { return static_cast<double>(step_) * dt_; }
  double dt() const noexcept { return dt_; }
  std::size_t n_particles() const noexcept { return state_.size() / model_.state_dim(); }
  std::span<const double> state() const noexcept { return state_; }
  /// Brownian increments used by the most recent advance().
  std::span<const double> last_noise() const noexcept { return noise_; }

  /// Draws this step's increments into last_noise() without advancing.
  std::span<const double> draw_noise() {
    noise_stream_.fill_normal(step_, sqrt_dt_, noise_);
    return noise_;
  }

  void advance() {
    draw_noise();
    advance_with(noise_);
  }

  /// Advances using caller-provided increments (for synchronous coupling).
  void advance_with(std::span<const double> noise) {
    step_euler(model_, theta_, state_, dt_, noise, next_, step_);
    if (noise.data() != noise_.data()) std::copy(noise.begin(), noise.end(), noise_.begin());
    std::swap(state_, next_);
    ++step_;
  }

 private:
  ModelSpec model_;
  Theta theta_;
  double dt_;
  double sqrt_dt_;
  rng::CounterStream noise_stream_;
  std::vector<double> state_;
  std::vector<double> next_;
  std::vector<double> noise_;
  std::size_t step_ = 0;
};

namespace detail {

inline TrajectoryBatch make_batch(const ModelSpec& model, const Theta& theta, const SimConfig& cfg) {
  TrajectoryBatch batch;
  const std::size_t k = cfg.steps();
  batch.n_particles = cfg.n_particles;
  batch.dim = model.state_dim();
  batch.dt = cfg.dt;
  batch.theta_true = theta;
  batch.model_id = model.name();
  batch.sigma = model.sigma();
  batch.times.resize(k + 1);
  for (std::size_t s = 0; s <= k; ++s) batch.times[s] = static_cast<double>(s) * cfg.dt;
  batch.states.reserve((k + 1) * batch.frame_size());
  if (cfg.record_noise) batch.noise.reserve(k * batch.frame_size());
  return batch;
}

// Stand-in for the law of the McKean-Vlasov process that particles of a
// proxy system interact with. The linear model only needs the law's mean,
// which obeys m_{k+1} = m_k - theta1 m_k dt under the Euler scheme, so it is
// tracked exactly; other models use an independent cloud of
// kProxyCloudFactor * N particles.
class LawSurrogate {
 public:
  static constexpr std::size_t kProxyCloudFactor = 32;

  LawSurrogate(const ModelSpec& model, const Theta& theta, const SimConfig& cfg) : model_(model), theta_(theta) {
    if (model.kind() == ModelKind::linear_mean_field) {
      mean_.assign(model.state_dim(), cfg.init.law_mean());
    } else {
      const std::size_t m = kProxyCloudFactor * cfg.n_particles;
      cloud_.emplace(model, theta,
                     cfg.init.sample(m, model.state_dim(), rng::make_stream(cfg.seed, rng::Stream::proxy_initial_state)),
                     cfg.dt, rng::make_stream(cfg.seed, rng::Stream::proxy_brownian));
    }
  }

  EmpiricalMeasure measure() const {
    if (cloud_) return EmpiricalMeasure(cloud_->state(), model_.state_dim());
    return EmpiricalMeasure(mean_, model_.state_dim());
  }

  void advance(double dt) {
    if (cloud_) {
      cloud_->advance();
      return;
    }
    const EmpiricalMeasure dirac(mean_, model_.state_dim());
    std::vector<double> next(mean_.size());
    std::vector<double> zero(mean_.size(), 0.0);
    // deterministic mean dynamics: same Euler map with no noise
    step_against_measure(model_, theta_, mean_, dirac, dt, zero, next);
    mean_ = std::move(next);
  }

 private:
  ModelSpec model_;
  Theta theta_;
  std::vector<double> mean_;
  std::optional<ParticleSystem> cloud_;
};

}  // namespace detail

/// Simulates the interacting particle system from the sampled initial state.
inline TrajectoryBatch simulate_ips(const ModelSpec& model, const Theta& theta_true, const SimConfig& cfg) {
  cfg.validate();
  TrajectoryBatch batch = detail::make_batch(model, theta_true, cfg);
  ParticleSystem system(model, theta_true, cfg);
  const std::size_t k = cfg.steps();
  batch.states.insert(batch.states.end(), system.state().begin(), system.state().end());
  for (std::size_t s = 0; s < k; ++s) {
    system.advance();
    if (cfg.record_noise) batch.noise.insert(batch.noise.end(), system.last_noise().begin(), system.last_noise().end());
    batch.states.insert(batch.states.end(), system.state().begin(), system.state().end());
  }
  return batch;
}

struct CoupledTrajectories {
  TrajectoryBatch ips;
  TrajectoryBatch proxy;
};

/// Runs the IPS and, with the same initial positions and Brownian
/// increments, a proxy system whose particles interact with a surrogate of
/// the true law instead of with each other.
inline CoupledTrajectories simulate_coupled_pair(const ModelSpec& model, const Theta& theta_true,
                                                 const SimConfig& cfg) {
  cfg.validate();
  CoupledTrajectories out{detail::make_batch(model, theta_true, cfg), detail::make_batch(model, theta_true, cfg)};
  out.proxy.model_id = model.name() + "-proxy";
  ParticleSystem ips(model, theta_true, cfg);
  std::vector<double> proxy(ips.state().begin(), ips.state().end());
  std::vector<double> proxy_next(proxy.size());
  detail::LawSurrogate law(model, theta_true, cfg);

  auto record = [&cfg](TrajectoryBatch& batch, std::span<const double> state, std::span<const double> noise) {
    if (cfg.record_noise && !noise.empty()) batch.noise.insert(batch.noise.end(), noise.begin(), noise.end());
    batch.states.insert(batch.states.end(), state.begin(), state.end());
  };
  record(out.ips, ips.state(), {});
  record(out.proxy, proxy, {});

  const std::size_t k = cfg.steps();
  for (std::size_t s = 0; s < k; ++s) {
    const auto noise = ips.draw_noise();
    const EmpiricalMeasure mu = law.measure();
    step_against_measure(model, theta_true, proxy, mu, cfg.dt, noise, proxy_next, s);
    ips.advance_with(noise);
    law.advance(cfg.dt);
    std::swap(proxy, proxy_next);
    record(out.ips, ips.state(), ips.last_noise());
    record(out.proxy, proxy, ips.last_noise());
  }
  return out;
}

/// Independent McKean-Vlasov paths (observation Case I): each particle
/// interacts only with the law surrogate. Exact under the Euler scheme for
/// the linear model, approximate otherwise.
inline TrajectoryBatch simulate_mean_field(const ModelSpec& model, const Theta& theta_true, const SimConfig& cfg) {
  CoupledTrajectories pair = simulate_coupled_pair(model, theta_true, cfg);
  pair.proxy.model_id = model.name();
  return std::move(pair.proxy);
}

}  // namespace mkv
