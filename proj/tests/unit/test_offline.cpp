#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "mkv/offline.hpp"
#include "mkv/stats.hpp"

namespace {

using mkv::ModelSpec;
using mkv::SimConfig;
using mkv::Theta;
using mkv::TrajectoryBatch;

SimConfig config(std::size_t n, double horizon, std::uint64_t seed) {
  SimConfig cfg;
  cfg.n_particles = n;
  cfg.dt = 0.1;
  cfg.horizon = horizon;
  cfg.seed = seed;
  return cfg;
}

// Euler path with every Brownian increment set to zero.
TrajectoryBatch noiseless(const ModelSpec& model, const Theta& theta, std::vector<double> x0, std::size_t steps,
                          double dt = 0.1) {
  TrajectoryBatch traj;
  traj.n_particles = x0.size();
  traj.dim = 1;
  traj.dt = dt;
  traj.theta_true = theta;
  traj.model_id = model.name();
  const std::vector<double> zero(x0.size(), 0.0);
  std::vector<double> x = std::move(x0);
  for (std::size_t k = 0; k <= steps; ++k) {
    traj.times.push_back(static_cast<double>(k) * dt);
    traj.states.insert(traj.states.end(), x.begin(), x.end());
    if (k < steps) x = mkv::step_euler(model, theta, x, dt, zero);
  }
  return traj;
}

TEST(LogLikelihood, ZeroPathIsFlat) {
  const auto lin = ModelSpec::linear_mean_field();
  const auto traj = noiseless(lin, {1.0, 0.5}, {0.0, 0.0, 0.0}, 20);
  for (const Theta& th : {Theta{1.0, 0.5}, Theta{-3.0, 8.0}, Theta{0.0, 0.0}}) {
    const auto l = mkv::log_likelihood(lin, th, traj);
    EXPECT_EQ(l.value, 0.0);
    EXPECT_EQ(l.gradient->norm(), 0.0);
  }
}

TEST(LogLikelihood, NoiselessDataPeaksAtTruth) {
  const auto lin = ModelSpec::linear_mean_field();
  const Theta th0{1.0, 0.5};
  const auto traj = noiseless(lin, th0, {2.0, -1.0, 0.5, 3.0}, 50);
  const auto at_truth = mkv::log_likelihood(lin, th0, traj);
  // 1/N sum 1/2 |B|^2 dt
  double expected = 0.0;
  for (std::size_t k = 0; k < traj.steps(); ++k) {
    for (std::size_t i = 0; i < 4; ++i) {
      const double b = (traj.position(k + 1, i) - traj.position(k, i)) / traj.dt;
      expected += 0.5 * b * b * traj.dt / 4.0;
    }
  }
  EXPECT_NEAR(at_truth.value, expected, 1e-12 * std::abs(expected));
  EXPECT_LT(at_truth.gradient->norm(), 1e-12);
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int rep = 0; rep < 100; ++rep) {
    const Theta th{u(gen), u(gen)};
    EXPECT_LE(mkv::log_likelihood(lin, th, traj).value, at_truth.value + 1e-12);
  }
}

TEST(LogLikelihood, WindowValidation) {
  const auto lin = ModelSpec::linear_mean_field();
  const auto traj = mkv::simulate_ips(lin, {1.0, 0.5}, config(5, 10.0, 1));
  EXPECT_THROW(mkv::log_likelihood(lin, {1.0, 0.5}, traj, {0.0, 10.5}), mkv::ValidationError);
  EXPECT_THROW(mkv::log_likelihood(lin, {1.0, 0.5}, traj, {5.0, 5.0}), mkv::ValidationError);
  EXPECT_NO_THROW(mkv::log_likelihood(lin, {1.0, 0.5}, traj, mkv::parse_window("0:10")));
  // splitting the window splits the sum
  const Theta th{0.7, 0.2};
  const double whole = mkv::log_likelihood(lin, th, traj).value;
  const double parts = mkv::log_likelihood(lin, th, traj, {0.0, 4.0}).value +
                       mkv::log_likelihood(lin, th, traj, mkv::parse_window("4:")).value;
  EXPECT_NEAR(whole, parts, 1e-12 * std::abs(whole));
  EXPECT_THROW(mkv::parse_window("3"), mkv::ValidationError);
}

class LikelihoodGradient : public ::testing::TestWithParam<const char*> {};

TEST_P(LikelihoodGradient, MatchesCentralDifference) {
  const auto model = ModelSpec::by_name(GetParam(), 0.8);
  const bool opinion = model.kind() == mkv::ModelKind::opinion_dynamics;
  const Theta truth = opinion ? Theta{2.0, 0.5} : Theta{1.0, 0.5};
  auto cfg = config(12, 5.0, 3);
  if (opinion) cfg.init = mkv::InitialCondition::uniform_box(0.0, 3.0);
  const auto traj = mkv::simulate_ips(model, truth, cfg);
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  int checked = 0;
  for (int rep = 0; rep < 40; ++rep) {
    const Theta th = opinion ? Theta{u(gen) + 2.0, 0.5 + 0.1 * u(gen)} : Theta{u(gen), u(gen)};
    const auto l = mkv::log_likelihood(model, th, traj);
    for (int k = 0; k < 2; ++k) {
      auto central = [&](double h) {
        Eigen::VectorXd up = th.values();
        Eigen::VectorXd dn = th.values();
        up[k] += h;
        dn[k] -= h;
        return (mkv::log_likelihood(model, Theta(up), traj, {}, false).value -
                mkv::log_likelihood(model, Theta(dn), traj, {}, false).value) / (2 * h);
      };
      // Richardson-extrapolated central difference: pairs sitting in the
      // steep edge layer of the opinion kernel make the plain O(h^2) error
      // visible at h = 1e-5.
      const double fd = (4.0 * central(1e-5) - central(2e-5)) / 3.0;
      const double g = (*l.gradient)[k];
      EXPECT_LE(std::abs(g - fd), 1e-5 * std::max(1.0, std::abs(g))) << "k=" << k;
      ++checked;
    }
  }
  EXPECT_EQ(checked, 80);
}

INSTANTIATE_TEST_SUITE_P(BuiltIn, LikelihoodGradient, ::testing::Values("linear", "opinion"));

TEST(LogLikelihood, ExactlyQuadraticForLinearModel) {
  const auto lin = ModelSpec::linear_mean_field();
  const auto traj = mkv::simulate_ips(lin, {1.0, 0.5}, config(10, 10.0, 8));
  auto hessian = [&](const Theta& th) {
    Eigen::Matrix2d h;
    const double step = 1e-2;
    for (int k = 0; k < 2; ++k) {
      Eigen::VectorXd up = th.values();
      Eigen::VectorXd dn = th.values();
      up[k] += step;
      dn[k] -= step;
      h.col(k) = (*mkv::log_likelihood(lin, Theta(up), traj).gradient - *mkv::log_likelihood(lin, Theta(dn), traj).gradient) /
                 (2 * step);
    }
    return h;
  };
  const Eigen::Matrix2d ha = hessian({1.0, 0.5});
  const Eigen::Matrix2d hb = hessian({-2.0, 3.0});
  EXPECT_LT((ha - hb).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, ha.cwiseAbs().maxCoeff()));
  EXPECT_LT((ha - ha.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  // negative definite
  EXPECT_LT(ha.trace(), 0.0);
  EXPECT_GT(ha.determinant(), 0.0);
}

// ---------------------------------------------------------------------------
// Estimators

TEST(ClosedForm, AgreesWithNumericAscent) {
  const auto lin = ModelSpec::linear_mean_field();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto traj = mkv::simulate_ips(lin, {1.0, 0.5}, config(20, 10.0, seed));
    const Theta closed = mkv::mle_linear_closed_form(traj);
    const auto numeric = mkv::mle_numeric(lin, traj, {0.0, 0.0});
    EXPECT_NEAR(closed[0], numeric.theta[0], 1e-6);
    EXPECT_NEAR(closed[1], numeric.theta[1], 1e-6);
    EXPECT_LE(numeric.grad_norm, 1e-8);
    EXPECT_FALSE(numeric.line_search_stalled);
  }
}

TEST(ClosedForm, NewtonStepOracle) {
  // The likelihood is quadratic, so one Newton step from anywhere is exact.
  const auto lin = ModelSpec::linear_mean_field();
  const auto traj = mkv::simulate_ips(lin, {1.0, 0.5}, config(30, 20.0, 4));
  const Theta start{5.0, -4.0};
  const auto l = mkv::log_likelihood(lin, start, traj);
  Eigen::Matrix2d h;
  for (int k = 0; k < 2; ++k) {
    Eigen::VectorXd up = start.values();
    up[k] += 1.0;
    h.col(k) = *mkv::log_likelihood(lin, Theta(up), traj).gradient - *l.gradient;
  }
  const Eigen::Vector2d newton = start.values() - h.inverse() * *l.gradient;
  const Theta closed = mkv::mle_linear_closed_form(traj);
  EXPECT_NEAR(newton[0], closed[0], 1e-8);
  EXPECT_NEAR(newton[1], closed[1], 1e-8);
  const auto numeric = mkv::mle_numeric(lin, traj, start);
  EXPECT_NEAR(numeric.theta[0], newton[0], 1e-8);
  EXPECT_NEAR(numeric.theta[1], newton[1], 1e-8);
}

TEST(ClosedForm, WindowedEstimate) {
  const auto lin = ModelSpec::linear_mean_field();
  const auto traj = mkv::simulate_ips(lin, {1.0, 0.5}, config(20, 10.0, 2));
  const Theta early = mkv::mle_linear_closed_form(traj, {0.0, 5.0});
  auto cfg = config(20, 5.0, 2);
  const auto prefix = mkv::simulate_ips(lin, {1.0, 0.5}, cfg);
  EXPECT_EQ(early, mkv::mle_linear_closed_form(prefix));
}

TEST(ClosedForm, NoiselessDataRecoversTruth) {
  const auto lin = ModelSpec::linear_mean_field();
  const Theta th0{1.0, 0.5};
  const auto traj = noiseless(lin, th0, {2.0, -1.0, 0.5, 3.0}, 50);
  const Theta closed = mkv::mle_linear_closed_form(traj);
  EXPECT_NEAR(closed[0], 1.0, 1e-12);
  EXPECT_NEAR(closed[1], 0.5, 1e-12);
  const auto numeric = mkv::mle_numeric(lin, traj, {-1.0, 2.0});
  EXPECT_NEAR(numeric.theta[0], 1.0, 1e-8);
  EXPECT_NEAR(numeric.theta[1], 0.5, 1e-8);
}

TEST(ClosedForm, DegenerateCases) {
  const auto lin = ModelSpec::linear_mean_field();
  const auto single = mkv::simulate_ips(lin, {1.0, 0.5}, config(1, 10.0, 1));
  EXPECT_THROW(mkv::mle_linear_closed_form(single), mkv::DegenerateEstimateError);
  const auto still = noiseless(lin, {1.0, 0.5}, {0.0, 0.0}, 10);
  EXPECT_THROW(mkv::mle_linear_closed_form(still), mkv::DegenerateEstimateError);
}

TEST(Numeric, GradientRuleAndOpinionModel) {
  const auto lin = ModelSpec::linear_mean_field();
  const auto traj = mkv::simulate_ips(lin, {1.0, 0.5}, config(10, 5.0, 6));
  mkv::AscentOptions opts;
  opts.step_rule = mkv::AscentOptions::StepRule::gradient;
  opts.max_iters = 20000;
  const auto plain = mkv::mle_numeric(lin, traj, {0.0, 0.0}, opts);
  const Theta closed = mkv::mle_linear_closed_form(traj);
  EXPECT_NEAR(plain.theta[0], closed[0], 1e-6);
  EXPECT_NEAR(plain.theta[1], closed[1], 1e-6);

  const auto op = ModelSpec::opinion_dynamics();
  auto cfg = config(30, 20.0, 6);
  cfg.init = mkv::InitialCondition::uniform_box(0.0, 3.0);
  const auto otraj = mkv::simulate_ips(op, {2.0, 0.5}, cfg);
  const auto fit = mkv::mle_numeric(op, otraj, {1.5, 0.6});
  EXPECT_LE(fit.grad_norm, 1e-8);
  EXPECT_NEAR(fit.theta[1], 0.5, 0.2);
}

TEST(Numeric, IterationCapReportsLastIterate) {
  const auto lin = ModelSpec::linear_mean_field();
  const auto traj = mkv::simulate_ips(lin, {1.0, 0.5}, config(10, 5.0, 6));
  mkv::AscentOptions opts;
  opts.step_rule = mkv::AscentOptions::StepRule::gradient;
  opts.max_iters = 2;
  try {
    mkv::mle_numeric(lin, traj, {50.0, -50.0}, opts);
    FAIL() << "expected ConvergenceError";
  } catch (const mkv::ConvergenceError& e) {
    EXPECT_EQ(e.last_iterate().size(), 2U);
    EXPECT_GT(e.grad_norm(), 1e-8);
  }
}

TEST(Numeric, ArgmaxInvariantUnderConstantShift) {
  const auto lin = ModelSpec::linear_mean_field();
  const auto traj = mkv::simulate_ips(lin, {1.0, 0.5}, config(15, 10.0, 9));
  const mkv::StepRange range = mkv::resolve_window(traj, {});
  for (double shift : {0.0, 123.0, -1e4}) {
    const auto fit = mkv::maximize(
        [&](const Theta& th) {
          auto t = mkv::detail::likelihood_terms(lin, th, traj, range, true, true);
          return mkv::ObjectiveEval{t.value + shift, t.gradient, t.scoring};
        },
        Theta{0.0, 0.0});
    const Theta closed = mkv::mle_linear_closed_form(traj);
    EXPECT_NEAR(fit.theta[0], closed[0], 1e-8) << shift;
    EXPECT_NEAR(fit.theta[1], closed[1], 1e-8) << shift;
  }
}

// Median |theta_hat - theta0| roughly halves when N quadruples.
TEST(ClosedFormProperty, ConsistencyInN) {
  const auto lin = ModelSpec::linear_mean_field();
  auto median_error = [&](std::size_t n) {
    std::vector<double> errs;
    for (std::uint64_t trial = 0; trial < 300; ++trial) {
      const auto traj = mkv::simulate_ips(lin, {1.0, 0.5}, config(n, 10.0, mkv::rng::derive_seed(n, {trial})));
      const Theta est = mkv::mle_linear_closed_form(traj);
      errs.push_back((est.values() - Eigen::Vector2d(1.0, 0.5)).norm());
    }
    return mkv::stats::median(errs);
  };
  const double ratio = median_error(25) / median_error(100);
  EXPECT_GT(ratio, 2.0 * 0.7);
  EXPECT_LT(ratio, 2.0 * 1.3);
}

// ---------------------------------------------------------------------------
// Fisher information

// Moments of the linear McKean-Vlasov law with x_0 ~ (mu0, s0):
//   E x_s = mu0 e^{-theta1 s},  Var x_s = s0 e^{g s} + (e^{g s} - 1) / g,  g = -2 (theta1 + theta2).
Eigen::Matrix2d fisher_by_quadrature(const Theta& th, double t, double mu0, double s0) {
  using boost::math::quadrature::gauss_kronrod;
  const double g = -2.0 * (th[0] + th[1]);
  auto var = [&](double s) { return s0 * std::exp(g * s) + std::expm1(g * s) / g; };
  auto mean_sq = [&](double s) { return mu0 * mu0 * std::exp(-2.0 * th[0] * s); };
  double err = 0.0;
  const double c = gauss_kronrod<double, 61>::integrate(var, 0.0, t, 15, 1e-14, &err);
  const double d = c + gauss_kronrod<double, 61>::integrate(mean_sq, 0.0, t, 15, 1e-14, &err);
  Eigen::Matrix2d m;
  m << d, c, c, c;
  return m;
}

TEST(Fisher, MatchesQuadratureOracle) {
  for (const Theta& th : {Theta{1.0, 0.5}, Theta{0.5, 0.1}, Theta{2.0, -1.0}, Theta{-0.2, 1.0}}) {
    for (double mu0 : {1.0, 0.3}) {
      for (double s0 : {1.0, 0.0, 2.5}) {
        for (double t : {1.0, 5.0, 10.0}) {
          const auto info = mkv::fisher_information_linear(th, t, mu0, s0);
          const Eigen::Matrix2d oracle = fisher_by_quadrature(th, t, mu0, s0);
          EXPECT_LT((info.matrix - oracle).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, oracle.cwiseAbs().maxCoeff()))
              << "theta=(" << th[0] << "," << th[1] << ") t=" << t;
        }
      }
    }
  }
}

TEST(Fisher, StructuralProperties) {
  const Theta th{1.0, 0.5};
  EXPECT_EQ(mkv::fisher_information_linear(th, 0.0, 1.0, 1.0).matrix, Eigen::Matrix2d::Zero());
  std::mt19937_64 gen(3);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::Vector2d lambda(z(gen), z(gen));
    double previous = 0.0;
    for (double t : {1.0, 2.0, 5.0, 10.0}) {
      const auto info = mkv::fisher_information_linear(th, t, 1.0, 1.0);
      const double q = lambda.dot(info.matrix * lambda);
      EXPECT_GT(q, previous);
      previous = q;
      EXPECT_EQ(info.matrix(0, 1), info.matrix(1, 0));
      EXPECT_GT(info.matrix.determinant(), 0.0);
    }
  }
  EXPECT_THROW(mkv::fisher_information_linear({1.0, -1.0}, 1.0, 1.0, 1.0), mkv::DomainError);
  EXPECT_THROW(mkv::fisher_information_linear({0.0, 1.0}, 1.0, 1.0, 1.0), mkv::DomainError);
  EXPECT_THROW(mkv::fisher_information_linear(th, -1.0, 1.0, 1.0), mkv::ValidationError);
}

// ---------------------------------------------------------------------------
// Normality sample

TEST(NormalitySample, ShapeAndValidation) {
  const auto lin = ModelSpec::linear_mean_field();
  const auto sample = mkv::normality_sample(lin, {1.0, 0.5}, config(50, 5.0, 1), 200, 2);
  EXPECT_EQ(sample.residuals.rows(), 200);
  EXPECT_EQ(sample.residuals.cols(), 2);
  EXPECT_EQ(sample.dropped, 0U);
  for (int c = 0; c < 2; ++c) {
    const Eigen::VectorXd col = sample.residuals.col(c);
    const std::vector<double> v(col.data(), col.data() + col.size());
    EXPECT_LT(std::abs(mkv::stats::mean(v)), 4.0 * mkv::stats::stderr_of_mean(v));
  }
  const auto again = mkv::normality_sample(lin, {1.0, 0.5}, config(50, 5.0, 1), 200, 1);
  EXPECT_EQ(sample.residuals, again.residuals);
  EXPECT_THROW(mkv::normality_sample(lin, {1.0, 0.5}, config(50, 5.0, 1), 99), mkv::ValidationError);
  EXPECT_THROW(mkv::normality_sample(ModelSpec::opinion_dynamics(), {1.0, 0.5}, config(50, 5.0, 1), 100),
               mkv::ValidationError);
  EXPECT_THROW(mkv::normality_sample(lin, {1.0, 0.5}, config(1, 5.0, 1), 100), mkv::ExclusionCapError);
}

}  // namespace
