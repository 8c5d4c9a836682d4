#pragma once

// Parametric drift family B(theta, x, mu) = b(theta, x) + \int phi(theta, x, y) mu(dy)
// with the linear mean-field and opinion-dynamics models built in.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mkv/errors.hpp"
#include "mkv/theta.hpp"

namespace mkv {

using Point = std::span<const double>;

enum class ModelKind { linear_mean_field, opinion_dynamics, custom };

/// How the interaction integral depends on the measure. `mean_only` models
/// satisfy \int phi(theta, x, y) mu(dy) = phi(theta, x, mean(mu)), which lets a
/// whole frame be evaluated in O(N).
enum class Reduction { mean_only, pairwise };

/// Callbacks for a user-defined model. Gradients are p x d matrices with
/// entry (k, c) = d(component c) / d(theta_k).
struct CustomModelFunctions {
  std::function<Eigen::VectorXd(const Theta&, Point)> b;
  std::function<Eigen::VectorXd(const Theta&, Point, Point)> phi;
  std::function<Eigen::MatrixXd(const Theta&, Point)> grad_b;
  std::function<Eigen::MatrixXd(const Theta&, Point, Point)> grad_phi;
};

/// Immutable model description; cheap to copy and safe to share across threads.
class ModelSpec {
 public:
  static ModelSpec linear_mean_field(double sigma = 1.0) {
    return ModelSpec(ModelKind::linear_mean_field, "linear", 2, 1, sigma, Reduction::mean_only, nullptr);
  }

  static ModelSpec opinion_dynamics(double sigma = 1.0) {
    return ModelSpec(ModelKind::opinion_dynamics, "opinion", 2, 1, sigma, Reduction::pairwise, nullptr);
  }

  static ModelSpec custom(std::string name, std::size_t param_dim, std::size_t state_dim, double sigma,
                          Reduction reduction, CustomModelFunctions functions) {
    if (!functions.b || !functions.phi || !functions.grad_b || !functions.grad_phi) {
      throw ValidationError("custom model '" + name + "' must supply b, phi and both gradients");
    }
    if (param_dim == 0 || state_dim == 0) throw ValidationError("custom model dimensions must be positive");
    return ModelSpec(ModelKind::custom, std::move(name), param_dim, state_dim, sigma, reduction,
                     std::make_shared<const CustomModelFunctions>(std::move(functions)));
  }

  /// "linear" or "opinion".
  static ModelSpec by_name(std::string_view name, double sigma = 1.0) {
    if (name == "linear") return linear_mean_field(sigma);
    if (name == "opinion") return opinion_dynamics(sigma);
    throw ValidationError("unknown model '" + std::string(name) + "' (expected linear or opinion)");
  }

  ModelKind kind() const noexcept { return kind_; }
  const std::string& name() const noexcept { return name_; }
  std::size_t param_dim() const noexcept { return param_dim_; }
  std::size_t state_dim() const noexcept { return state_dim_; }
  double sigma() const noexcept { return sigma_; }
  Reduction reduction() const noexcept { return reduction_; }
  const CustomModelFunctions* functions() const noexcept { return functions_.get(); }

  void require_point(Point x) const {
    if (x.size() != state_dim_) {
      throw DimensionError("point has dimension " + std::to_string(x.size()) + ", model state dimension is " +
                           std::to_string(state_dim_));
    }
  }

 private:
  ModelSpec(ModelKind kind, std::string name, std::size_t p, std::size_t d, double sigma, Reduction reduction,
            std::shared_ptr<const CustomModelFunctions> functions)
      : kind_(kind), name_(std::move(name)), param_dim_(p), state_dim_(d), sigma_(sigma), reduction_(reduction),
        functions_(std::move(functions)) {
    if (!(sigma_ > 0.0) || !std::isfinite(sigma_)) throw ValidationError("sigma must be positive and finite");
  }

  ModelKind kind_;
  std::string name_;
  std::size_t param_dim_;
  std::size_t state_dim_;
  double sigma_;
  Reduction reduction_;
  std::shared_ptr<const CustomModelFunctions> functions_;
};

/// Non-owning view of N particle positions (row-major N x d) with a lazily
/// computed mean. The cache makes concurrent first calls to mean() unsafe;
/// share a measure between threads only after mean() has been called once.
class EmpiricalMeasure {
 public:
  EmpiricalMeasure(std::span<const double> positions, std::size_t dim) : positions_(positions), dim_(dim) {
    if (dim_ == 0 || positions_.empty() || positions_.size() % dim_ != 0) {
      throw ValidationError("empirical measure needs N >= 1 points of dimension " + std::to_string(dim_));
    }
  }

  std::size_t size() const noexcept { return positions_.size() / dim_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const double> positions() const noexcept { return positions_; }
  Point point(std::size_t i) const { return positions_.subspan(i * dim_, dim_); }

  Point mean() const {
    if (!mean_) {
      std::vector<double> m(dim_, 0.0);
      const std::size_t n = size();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < dim_; ++c) m[c] += positions_[i * dim_ + c];
      }
      for (double& v : m) v /= static_cast<double>(n);
      mean_ = std::move(m);
    }
    return *mean_;
  }

 private:
  std::span<const double> positions_;
  std::size_t dim_;
  mutable std::optional<std::vector<double>> mean_;
};

namespace detail {

// Opinion kernel shape exp(-0.01 / (1 - u^2)) with u = r - theta2, zero off
// the open bump and for r <= 0.
struct BumpValue {
  double shape = 0.0;       // exp(-0.01 / (1 - u^2)), 0 off support
  double d_theta2 = 0.0;    // d(shape)/d(theta2)
};

inline BumpValue opinion_bump(double r, double theta2) noexcept {
  constexpr double kWidth = 0.01;
  if (!(r > 0.0)) return {};
  const double u = r - theta2;
  const double gap = 1.0 - u * u;
  if (!(gap > 0.0)) return {};
  const double shape = std::exp(-kWidth / gap);
  // d/dtheta2 of -kWidth / (1 - u^2) with du/dtheta2 = -1
  return {shape, shape * 2.0 * kWidth * u / (gap * gap)};
}

inline double distance(Point x, Point y) noexcept {
  double s = 0.0;
  for (std::size_t c = 0; c < x.size(); ++c) {
    const double diff = x[c] - y[c];
    s += diff * diff;
  }
  return std::sqrt(s);
}

// Adds b(theta, x) into `out` (length d) and, if `grad` is non-empty, its
// theta-gradient into grad (p x d row-major).
inline void add_confinement(const ModelSpec& model, const Theta& theta, Point x, std::span<double> out,
                            std::span<double> grad) {
  switch (model.kind()) {
    case ModelKind::linear_mean_field:
      out[0] += -theta[0] * x[0];
      if (!grad.empty()) grad[0] += -x[0];
      return;
    case ModelKind::opinion_dynamics:
      return;
    case ModelKind::custom: {
      const auto* f = model.functions();
      const Eigen::VectorXd b = f->b(theta, x);
      for (std::size_t c = 0; c < out.size(); ++c) out[c] += b[static_cast<Eigen::Index>(c)];
      if (!grad.empty()) {
        const Eigen::MatrixXd g = f->grad_b(theta, x);
        const std::size_t d = out.size();
        for (std::size_t k = 0; k < model.param_dim(); ++k) {
          for (std::size_t c = 0; c < d; ++c) {
            grad[k * d + c] += g(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c));
          }
        }
      }
      return;
    }
  }
}

// Adds weight * phi(theta, x, y) into `out` and its scaled gradient into `grad`.
inline void add_interaction(const ModelSpec& model, const Theta& theta, Point x, Point y, double weight,
                            std::span<double> out, std::span<double> grad) {
  switch (model.kind()) {
    case ModelKind::linear_mean_field: {
      const double diff = x[0] - y[0];
      out[0] += weight * (-theta[1] * diff);
      if (!grad.empty()) grad[1] += weight * (-diff);
      return;
    }
    case ModelKind::opinion_dynamics: {
      const BumpValue bump = opinion_bump(distance(x, y), theta[1]);
      if (bump.shape == 0.0 && bump.d_theta2 == 0.0) return;
      const std::size_t d = out.size();
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = x[c] - y[c];
        out[c] += weight * (-theta[0] * bump.shape * diff);
        if (!grad.empty()) {
          grad[c] += weight * (-bump.shape * diff);
          grad[d + c] += weight * (-theta[0] * bump.d_theta2 * diff);
        }
      }
      return;
    }
    case ModelKind::custom: {
      const auto* f = model.functions();
      const Eigen::VectorXd phi = f->phi(theta, x, y);
      const std::size_t d = out.size();
      for (std::size_t c = 0; c < d; ++c) out[c] += weight * phi[static_cast<Eigen::Index>(c)];
      if (!grad.empty()) {
        const Eigen::MatrixXd g = f->grad_phi(theta, x, y);
        for (std::size_t k = 0; k < model.param_dim(); ++k) {
          for (std::size_t c = 0; c < d; ++c) {
            grad[k * d + c] += weight * g(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c));
          }
        }
      }
      return;
    }
  }
}

// Writes B(theta, x, mu) into `drift` and, when `grad` is non-empty,
// grad_theta B into `grad`. Both outputs are overwritten. When `pairwise`
// is set the reduction hint is ignored and the full O(N) sum is used.
inline void evaluate_drift(const ModelSpec& model, const Theta& theta, Point x, const EmpiricalMeasure& mu,
                           std::span<double> drift, std::span<double> grad, bool pairwise = false) {
  std::fill(drift.begin(), drift.end(), 0.0);
  std::fill(grad.begin(), grad.end(), 0.0);
  add_confinement(model, theta, x, drift, grad);
  if (model.reduction() == Reduction::mean_only && !pairwise) {
    add_interaction(model, theta, x, mu.mean(), 1.0, drift, grad);
    return;
  }
  const std::size_t n = mu.size();
  const double w = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) add_interaction(model, theta, x, mu.point(j), w, drift, grad);
}

inline void check_inputs(const ModelSpec& model, const Theta& theta, Point x) {
  theta.require_dim(model.param_dim());
  model.require_point(x);
  for (double v : x) {
    if (!std::isfinite(v)) throw ValidationError("state entries must be finite");
  }
}

inline void check_measure(const ModelSpec& model, const EmpiricalMeasure& mu) {
  if (mu.dim() != model.state_dim()) throw DimensionError("measure dimension does not match model state dimension");
}

}  // namespace detail

/// Scalar opinion kernel: theta1 exp(-0.01 / (1 - (r - theta2)^2)) on
/// r > 0, (r - theta2)^2 < 1, and zero elsewhere.
inline double opinion_kernel(const Theta& theta, double r) {
  theta.require_dim(2);
  return theta[0] * detail::opinion_bump(r, theta[1]).shape;
}

inline Eigen::VectorXd confinement_b(const ModelSpec& model, const Theta& theta, Point x) {
  detail::check_inputs(model, theta, x);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.state_dim()));
  detail::add_confinement(model, theta, x, {out.data(), model.state_dim()}, {});
  return out;
}

inline Eigen::VectorXd interaction_phi(const ModelSpec& model, const Theta& theta, Point x, Point y) {
  detail::check_inputs(model, theta, x);
  model.require_point(y);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.state_dim()));
  detail::add_interaction(model, theta, x, y, 1.0, {out.data(), model.state_dim()}, {});
  return out;
}

inline Eigen::VectorXd drift_B(const ModelSpec& model, const Theta& theta, Point x, const EmpiricalMeasure& mu) {
  detail::check_inputs(model, theta, x);
  detail::check_measure(model, mu);
  Eigen::VectorXd out(static_cast<Eigen::Index>(model.state_dim()));
  detail::evaluate_drift(model, theta, x, mu, {out.data(), model.state_dim()}, {});
  return out;
}

/// drift_B evaluated by the full pairwise sum regardless of the reduction hint.
inline Eigen::VectorXd drift_B_pairwise(const ModelSpec& model, const Theta& theta, Point x,
                                        const EmpiricalMeasure& mu) {
  detail::check_inputs(model, theta, x);
  detail::check_measure(model, mu);
  Eigen::VectorXd out(static_cast<Eigen::Index>(model.state_dim()));
  detail::evaluate_drift(model, theta, x, mu, {out.data(), model.state_dim()}, {}, true);
  return out;
}

/// p x d matrix of partial derivatives dB_c / dtheta_k.
inline Eigen::MatrixXd grad_theta_B(const ModelSpec& model, const Theta& theta, Point x,
                                    const EmpiricalMeasure& mu) {
  detail::check_inputs(model, theta, x);
  detail::check_measure(model, mu);
  const std::size_t p = model.param_dim();
  const std::size_t d = model.state_dim();
  std::vector<double> drift(d);
  std::vector<double> grad(p * d);
  detail::evaluate_drift(model, theta, x, mu, drift, grad);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(d));
  for (std::size_t k = 0; k < p; ++k) {
    for (std::size_t c = 0; c < d; ++c) out(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)) = grad[k * d + c];
  }
  return out;
}

}  // namespace mkv
