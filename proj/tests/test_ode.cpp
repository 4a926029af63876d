#include <gtest/gtest.h>

#include <numbers>

#include "ofm/ode.hpp"
#include "ofm/quadrature.hpp"

namespace ofm {
namespace {

OdeOptions rk4(int steps) {
  OdeOptions o;
  o.method = OdeMethod::rk4;
  o.steps = steps;
  return o;
}

OdeOptions dopri(double tol) {
  OdeOptions o;
  o.atol = o.rtol = tol;
  return o;
}

TEST(Integrate, ConstantFieldIsExact) {
  Vector x0(2), c(2);
  x0 << 0.3, -1.2;
  c << 2.0, 0.5;
  auto u = [&](double, const Vector&) { return Vector(c); };
  for (const auto& opt : {rk4(7), dopri(1e-6)}) {
    const auto r = integrate(u, x0, opt);
    EXPECT_LT((r.final_state - (x0 + c)).norm(), 1e-13);
  }
}

TEST(Integrate, LinearGrowthMatchesExp) {
  Vector x0(3);
  x0 << 1.0, -2.0, 0.5;
  auto u = [](double, const Vector& x) { return Vector(x); };
  const auto r = integrate(u, x0, dopri(1e-8));
  EXPECT_LT((r.final_state - std::exp(1.0) * x0).norm() / (std::exp(1.0) * x0.norm()), 1e-6);
  const auto f = integrate(u, x0, rk4(200));
  EXPECT_LT((f.final_state - std::exp(1.0) * x0).norm() / (std::exp(1.0) * x0.norm()), 1e-6);
}

TEST(Integrate, Rk4FourthOrderConvergence) {
  Vector x0 = Vector::Ones(1);
  auto u = [](double, const Vector& x) { return Vector(x); };
  const double e1 = std::abs(integrate(u, x0, rk4(10)).final_state[0] - std::exp(1.0));
  const double e2 = std::abs(integrate(u, x0, rk4(20)).final_state[0] - std::exp(1.0));
  const double ratio = e1 / e2;
  EXPECT_GE(ratio, 12.0);
  EXPECT_LE(ratio, 20.0);
}

TEST(Integrate, SampleTimesAreRecorded) {
  Vector x0 = Vector::Ones(1);
  auto u = [](double, const Vector& x) { return Vector(x); };
  const std::vector<double> ts{0.0, 0.25, 0.5, 0.8};
  for (const auto& opt : {rk4(64), dopri(1e-8)}) {
    const auto r = integrate(u, x0, opt, ts);
    ASSERT_EQ(r.samples.size(), ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) EXPECT_NEAR(r.samples[i][0], std::exp(ts[i]), 1e-7);
  }
}

TEST(Integrate, TimeDependentField) {
  // dz/dt = 2t gives z(1) = z(0) + 1
  auto u = [](double t, const Vector& x) { return Vector(Vector::Constant(x.size(), 2.0 * t)); };
  const auto r = integrate(u, Vector::Zero(2), dopri(1e-8));
  EXPECT_NEAR(r.final_state[0], 1.0, 1e-10);
}

TEST(Integrate, StepUnderflowRaises) {
  // blows up at t = 0.5
  auto u = [](double t, const Vector& x) { return Vector(x / std::pow(0.5 - t, 2)); };
  OdeOptions o = dopri(1e-8);
  o.min_step = 1e-6;
  EXPECT_THROW(integrate(u, Vector::Ones(1), o), OdeError);
}

TEST(Integrate, RejectsBadOptions) {
  auto u = [](double, const Vector& x) { return Vector(x); };
  EXPECT_THROW(integrate(u, Vector::Ones(1), dopri(1e-2)), ConfigError);
  EXPECT_THROW(integrate(u, Vector::Ones(1), rk4(0)), ConfigError);
  EXPECT_THROW(integrate(u, Vector::Ones(1), rk4(4), {0.5, 0.2}), std::invalid_argument);
  EXPECT_EQ(parse_ode_method("dormand-prince-45"), OdeMethod::dopri5);
  EXPECT_THROW(parse_ode_method("euler"), ConfigError);
}

TEST(GaussLegendre, ExactOnPolynomials) {
  for (int n : {1, 2, 3, 8, 64, 256}) {
    const auto q = gauss_legendre(n);
    EXPECT_NEAR(q.weights.sum(), 1.0, 1e-13);
    EXPECT_GT(q.nodes.minCoeff(), 0.0);
    EXPECT_LT(q.nodes.maxCoeff(), 1.0);
    const int deg = std::min(2 * n - 1, 30);
    for (int k = 0; k <= deg; ++k) {
      const double got = q.weights.dot(q.nodes.array().pow(k).matrix());
      EXPECT_NEAR(got, 1.0 / (k + 1), 1e-13) << "n=" << n << " k=" << k;
    }
  }
  EXPECT_THROW(gauss_legendre(0), std::invalid_argument);
}

TEST(GaussLegendre, SmoothIntegrand) {
  const auto q = gauss_legendre(16);
  double s = 0.0;
  for (int i = 0; i < 16; ++i) s += q.weights[i] * std::cos(std::numbers::pi * q.nodes[i] / 2);
  EXPECT_NEAR(s, 2.0 / std::numbers::pi, 1e-14);
}

}  // namespace
}  // namespace ofm
