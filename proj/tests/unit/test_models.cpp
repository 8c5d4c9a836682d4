#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "mkv/models.hpp"

namespace {

using mkv::EmpiricalMeasure;
using mkv::ModelSpec;
using mkv::Theta;

std::vector<double> pt(double x) { return {x}; }

TEST(Models, BuiltInDeclarations) {
  const auto lin = ModelSpec::linear_mean_field();
  EXPECT_EQ(lin.param_dim(), 2U);
  EXPECT_EQ(lin.state_dim(), 1U);
  EXPECT_EQ(lin.reduction(), mkv::Reduction::mean_only);
  EXPECT_EQ(lin.sigma(), 1.0);
  const auto op = ModelSpec::opinion_dynamics(0.5);
  EXPECT_EQ(op.reduction(), mkv::Reduction::pairwise);
  EXPECT_EQ(op.sigma(), 0.5);
  EXPECT_THROW(ModelSpec::linear_mean_field(0.0), mkv::ValidationError);
  EXPECT_THROW(ModelSpec::by_name("quadratic"), mkv::ValidationError);
  EXPECT_EQ(ModelSpec::by_name("opinion").kind(), mkv::ModelKind::opinion_dynamics);
}

TEST(Theta, RejectsNonFiniteAndParses) {
  EXPECT_THROW((Theta{1.0, std::nan("")}), mkv::ValidationError);
  EXPECT_THROW((Theta{INFINITY}), mkv::ValidationError);
  EXPECT_EQ(mkv::parse_theta("1,0.5"), (Theta{1.0, 0.5}));
  EXPECT_THROW(mkv::parse_theta("1,x"), mkv::ValidationError);
  EXPECT_THROW(mkv::parse_theta("1,"), mkv::ValidationError);
  EXPECT_THROW((Theta{1.0}).require_dim(2), mkv::DimensionError);
}

TEST(Confinement, LinearAndOpinion) {
  const auto lin = ModelSpec::linear_mean_field();
  EXPECT_DOUBLE_EQ(mkv::confinement_b(lin, {1.0, 0.5}, pt(2.0))[0], -2.0);
  EXPECT_EQ(mkv::confinement_b(lin, {1.0, 0.5}, pt(0.0))[0], 0.0);
  EXPECT_EQ(mkv::confinement_b(ModelSpec::opinion_dynamics(), {2.0, 0.5}, pt(0.7))[0], 0.0);
  const std::vector<double> two = {1.0, 2.0};
  EXPECT_THROW(mkv::confinement_b(lin, {1.0, 0.5}, two), mkv::DimensionError);
}

TEST(Interaction, Examples) {
  const auto lin = ModelSpec::linear_mean_field();
  EXPECT_DOUBLE_EQ(mkv::interaction_phi(lin, {1.0, 0.5}, pt(2.0), pt(1.0))[0], -0.5);
  const auto op = ModelSpec::opinion_dynamics();
  EXPECT_EQ(mkv::interaction_phi(op, {2.0, 0.5}, pt(0.3), pt(0.3))[0], 0.0);
  // r = theta2 sits at the centre of the bump
  const double v = mkv::interaction_phi(op, {2.0, 0.5}, pt(1.0), pt(0.5))[0];
  EXPECT_NEAR(v, -2.0 * std::exp(-0.01) * 0.5, 1e-15);
  EXPECT_NEAR(v / 0.5, -1.9801, 1e-4);
  const double w = mkv::interaction_phi(op, {2.0, 0.5}, pt(0.5), pt(1.0))[0];
  EXPECT_NEAR(w, 2.0 * std::exp(-0.01) * 0.5, 1e-15);
}

TEST(Interaction, OpinionKernelSupport) {
  const Theta th{3.0, 0.5};
  EXPECT_EQ(mkv::opinion_kernel(th, 0.0), 0.0);
  EXPECT_EQ(mkv::opinion_kernel(th, -1.0), 0.0);
  EXPECT_EQ(mkv::opinion_kernel(th, 1.5), 0.0);   // (r - theta2)^2 = 1
  EXPECT_EQ(mkv::opinion_kernel(th, 4.0), 0.0);
  EXPECT_GT(mkv::opinion_kernel(th, 1.49), 0.0);
  // continuity at the outer edge of the bump
  const double r = 0.5 + 1.0 - 1e-6;
  EXPECT_LT(std::abs(mkv::opinion_kernel(th, r)), 1e-3 * th[0]);
  const auto op = ModelSpec::opinion_dynamics();
  EXPECT_LT(std::abs(mkv::interaction_phi(op, th, pt(r), pt(0.0))[0]), 1e-3 * th[0]);
}

TEST(Drift, Examples) {
  const auto lin = ModelSpec::linear_mean_field();
  const std::vector<double> mu13 = {1.0, 3.0};
  EXPECT_DOUBLE_EQ(mkv::drift_B(lin, {1.0, 0.5}, pt(2.0), EmpiricalMeasure(mu13, 1))[0], -2.0);
  const std::vector<double> mu4 = {4.0};
  EXPECT_DOUBLE_EQ(mkv::drift_B(lin, {0.0, 1.0}, pt(0.0), EmpiricalMeasure(mu4, 1))[0], 4.0);

  const auto op = ModelSpec::opinion_dynamics();
  const Theta th{2.0, 0.5};
  const std::vector<double> mu = {0.25, 5.0};
  const double u = 0.25 - 0.5;
  const double kernel = 2.0 * std::exp(-0.01 / (1.0 - u * u));
  const double expected = 0.5 * (-kernel * (0.0 - 0.25));
  EXPECT_NEAR(mkv::drift_B(op, th, pt(0.0), EmpiricalMeasure(mu, 1))[0], expected, 1e-15);
}

TEST(Gradient, Examples) {
  const auto lin = ModelSpec::linear_mean_field();
  const std::vector<double> mu = {0.0, 2.0};  // mean 1
  const auto g = mkv::grad_theta_B(lin, {0.3, -0.7}, pt(2.0), EmpiricalMeasure(mu, 1));
  ASSERT_EQ(g.rows(), 2);
  ASSERT_EQ(g.cols(), 1);
  EXPECT_DOUBLE_EQ(g(0, 0), -2.0);
  EXPECT_DOUBLE_EQ(g(1, 0), -1.0);
  const std::vector<double> zero = {-1.0, 1.0};
  const auto g0 = mkv::grad_theta_B(lin, {0.3, -0.7}, pt(0.0), EmpiricalMeasure(zero, 1));
  EXPECT_EQ(g0(0, 0), 0.0);
  EXPECT_EQ(g0(1, 0), 0.0);

  const auto op = ModelSpec::opinion_dynamics();
  const Theta th{2.0, 0.5};
  const std::vector<double> y = {0.5};
  const auto go = mkv::grad_theta_B(op, th, pt(1.0), EmpiricalMeasure(y, 1));
  EXPECT_NEAR(go(0, 0), std::exp(-0.01) * -(1.0 - 0.5), 1e-15);
  const double h = 1e-5;
  const double fd = (mkv::drift_B(op, {2.0, 0.5 + h}, pt(1.0), EmpiricalMeasure(y, 1))[0] -
                     mkv::drift_B(op, {2.0, 0.5 - h}, pt(1.0), EmpiricalMeasure(y, 1))[0]) / (2 * h);
  EXPECT_NEAR(go(1, 0), fd, 1e-6);
}

// ---------------------------------------------------------------------------
// Properties over randomized inputs

double central_difference(const ModelSpec& m, const Theta& th, double x, const EmpiricalMeasure& mu, int k) {
  const double h = 1e-5;
  Eigen::VectorXd up = th.values();
  Eigen::VectorXd dn = th.values();
  up[k] += h;
  dn[k] -= h;
  const std::vector<double> p = {x};
  return (mkv::drift_B(m, Theta(up), p, mu)[0] - mkv::drift_B(m, Theta(dn), p, mu)[0]) / (2 * h);
}

// Smallest 1 - (r - theta2)^2 over in-support pairs (boundary-layer guard for
// the finite-difference oracle, which is unreliable where the bump is steep).
double min_gap(const Theta& th, double x, const std::vector<double>& ys) {
  double m = 1.0;
  for (double y : ys) {
    const double r = std::abs(x - y);
    const double u = r - th[1];
    if (r > 0.0 && u * u < 1.0) m = std::min(m, 1.0 - u * u);
    if (r > 0.0 && u * u >= 1.0 && u * u < 1.0 + 1e-3) m = 0.0;
  }
  return m;
}

class GradientProperty : public ::testing::TestWithParam<const char*> {};

TEST_P(GradientProperty, MatchesCentralDifference) {
  const ModelSpec m = ModelSpec::by_name(GetParam());
  const bool opinion = m.kind() == mkv::ModelKind::opinion_dynamics;
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> big(-10.0, 10.0);
  std::uniform_int_distribution<int> count(1, 16);
  int checked = 0;
  int nonzero = 0;
  for (int rep = 0; rep < 4000 && checked < 1000; ++rep) {
    Theta th{big(gen), big(gen)};
    if (opinion) th = Theta{big(gen), std::abs(big(gen)) / 5.0};  // keep the bump near the data scale
    const double x = opinion ? big(gen) / 5.0 : big(gen);
    std::vector<double> ys(static_cast<std::size_t>(count(gen)));
    for (double& y : ys) y = opinion ? big(gen) / 5.0 : big(gen);
    if (opinion && min_gap(th, x, ys) < 0.1) continue;
    const EmpiricalMeasure mu(ys, 1);
    const std::vector<double> xp = {x};
    const auto g = mkv::grad_theta_B(m, th, xp, mu);
    for (int k = 0; k < 2; ++k) {
      const double fd = central_difference(m, th, x, mu, k);
      EXPECT_LE(std::abs(g(k, 0) - fd), 1e-5 * std::max(1.0, std::abs(g(k, 0))))
          << "theta=(" << th[0] << "," << th[1] << ") x=" << x << " k=" << k;
      nonzero += g(k, 0) != 0.0;
    }
    ++checked;
  }
  EXPECT_GE(checked, 1000);
  EXPECT_GT(nonzero, 200);
}

INSTANTIATE_TEST_SUITE_P(BuiltIn, GradientProperty, ::testing::Values("linear", "opinion"));

TEST(DriftProperty, MeanOnlyFastPathMatchesPairwiseSum) {
  const auto lin = ModelSpec::linear_mean_field();
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::uniform_int_distribution<int> count(1, 64);
  for (int rep = 0; rep < 500; ++rep) {
    const Theta th{u(gen), u(gen)};
    std::vector<double> ys(static_cast<std::size_t>(count(gen)));
    for (double& y : ys) y = u(gen);
    const std::vector<double> x = {u(gen)};
    const EmpiricalMeasure mu(ys, 1);
    EXPECT_NEAR(mkv::drift_B(lin, th, x, mu)[0], mkv::drift_B_pairwise(lin, th, x, mu)[0], 1e-12);
  }
}

TEST(InteractionProperty, LinearAntisymmetry) {
  const auto lin = ModelSpec::linear_mean_field();
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int rep = 0; rep < 500; ++rep) {
    const Theta th{u(gen), u(gen)};
    const double x = u(gen);
    const double y = u(gen);
    EXPECT_EQ(mkv::interaction_phi(lin, th, pt(x), pt(y))[0], -mkv::interaction_phi(lin, th, pt(y), pt(x))[0]);
  }
}

TEST(InteractionProperty, OpinionKernelVanishesTowardBoundary) {
  for (double theta2 : {0.1, 0.5, 0.9}) {
    const Theta th{5.0, theta2};
    double previous = INFINITY;
    for (double eps : {1e-1, 1e-2, 1e-3, 1e-4, 1e-6}) {
      const double v = mkv::opinion_kernel(th, theta2 + 1.0 - eps);
      EXPECT_LT(v, previous);
      previous = v;
    }
    EXPECT_LT(previous, 1e-3 * th[0]);
  }
}

TEST(EmpiricalMeasure, MeanAndValidation) {
  const std::vector<double> xs = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
  const EmpiricalMeasure mu(xs, 2);
  EXPECT_EQ(mu.size(), 3U);
  EXPECT_DOUBLE_EQ(mu.mean()[0], 3.0);
  EXPECT_DOUBLE_EQ(mu.mean()[1], 4.0);
  const std::vector<double> empty;
  EXPECT_THROW(EmpiricalMeasure(empty, 1), mkv::ValidationError);
  EXPECT_THROW(EmpiricalMeasure(xs, 4), mkv::ValidationError);
}

TEST(CustomModel, ReproducesLinearModel) {
  mkv::CustomModelFunctions f;
  f.b = [](const Theta& th, mkv::Point x) { return Eigen::VectorXd::Constant(1, -th[0] * x[0]); };
  f.phi = [](const Theta& th, mkv::Point x, mkv::Point y) { return Eigen::VectorXd::Constant(1, -th[1] * (x[0] - y[0])); };
  f.grad_b = [](const Theta&, mkv::Point x) {
    Eigen::MatrixXd g(2, 1);
    g << -x[0], 0.0;
    return g;
  };
  f.grad_phi = [](const Theta&, mkv::Point x, mkv::Point y) {
    Eigen::MatrixXd g(2, 1);
    g << 0.0, -(x[0] - y[0]);
    return g;
  };
  const auto custom = ModelSpec::custom("lin-copy", 2, 1, 1.0, mkv::Reduction::pairwise, f);
  const auto lin = ModelSpec::linear_mean_field();
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int rep = 0; rep < 100; ++rep) {
    const Theta th{u(gen), u(gen)};
    std::vector<double> ys(9);
    for (double& y : ys) y = u(gen);
    const std::vector<double> x = {u(gen)};
    const EmpiricalMeasure mu(ys, 1);
    EXPECT_NEAR(mkv::drift_B(custom, th, x, mu)[0], mkv::drift_B(lin, th, x, mu)[0], 1e-12);
    EXPECT_NEAR((mkv::grad_theta_B(custom, th, x, mu) - mkv::grad_theta_B(lin, th, x, mu)).norm(), 0.0, 1e-12);
  }
  mkv::CustomModelFunctions missing = f;
  missing.grad_phi = nullptr;
  EXPECT_THROW(ModelSpec::custom("bad", 2, 1, 1.0, mkv::Reduction::pairwise, missing), mkv::ValidationError);
}

}  // namespace
