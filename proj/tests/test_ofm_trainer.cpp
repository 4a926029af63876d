#include <gtest/gtest.h>

#include "ofm/ofm_trainer.hpp"
#include "test_support.hpp"

namespace ofm {
namespace {

using testing::random_icnn;
using testing::random_quadratic;

InversionOptions tight(double eps = 1e-6) {
  InversionOptions o;
  o.tol_grad = 1e-12;
  o.max_iterations = 500;
  o.epsilon = eps;
  return o;
}

PairedBatch gaussian_batch(int b, int d, Rng& rng, double scale = 1.0) {
  return pair_independent(standard_normal(b, d, rng), scale * standard_normal(b, d, rng));
}

Vector random_times(int b, Rng& rng, double eps = 1e-3) {
  Vector t(b);
  for (int i = 0; i < b; ++i) t[i] = uniform(rng, eps, 1 - eps);
  return t;
}

TEST(OfmLoss, IdentityPotentialGivesMeanSquaredDisplacement) {
  Rng rng(1);
  const auto batch = gaussian_batch(32, 3, rng);
  const Vector t = random_times(32, rng);
  const double want = (batch.x1 - batch.x0).rowwise().squaredNorm().mean();
  EXPECT_NEAR(ofm_loss(QuadraticPotential::identity(3), batch, t), want, 1e-12 * want);
}

TEST(OfmLoss, ZeroOnOwnPushforwardCoupling) {
  Rng rng(2);
  auto p = random_icnn(2, rng);
  const Matrix x0 = standard_normal(16, 2, rng);
  const auto batch = pair_independent(x0, transport_rows(p, x0));
  const Vector t = random_times(16, rng);
  EXPECT_LT(ofm_loss(p, batch, t, tight()), 1e-16);
  // stationarity: the parameter gradient vanishes at the fit
  const auto g = ofm_gradient(p, batch, t, tight());
  EXPECT_LT(g.grad.norm(), 1e-8);
}

TEST(OfmLoss, RejectsTimesOutsideOpenInterval) {
  Rng rng(3);
  const auto batch = gaussian_batch(2, 2, rng);
  Vector t(2);
  t << 0.0, 0.5;
  EXPECT_THROW(ofm_loss(QuadraticPotential::identity(2), batch, t), std::invalid_argument);
  EXPECT_THROW(ofm_loss(QuadraticPotential::identity(2), batch, Vector::Constant(3, 0.5)), DimensionError);
}

// Integral over t of the OFM integrand for a single pair equals
// 2 [Psi(x0) + Psi*(x1) - <x0, x1>].
TEST(OfmLoss, TimeIntegralMatchesDualGapForQuadratics) {
  Rng rng(4);
  const auto rule = gauss_legendre(256);
  for (int k = 0; k < 10; ++k) {
    const int d = 1 + k % 4;
    auto q = random_quadratic(d, rng, 0.3, 3.0);
    const Vector x0 = standard_normal(d, rng), x1 = standard_normal(d, rng);
    const Vector r = x1 - q.b();
    const double conj = 0.5 * r.dot(q.a().ldlt().solve(r)) - q.c();
    const double want = 2.0 * (q.value(x0) + conj - x0.dot(x1));
    const auto batch = pair_independent(x0.transpose(), x1.transpose());
    const double got = ofm_loss_time_averaged(q, batch, rule, tight());
    EXPECT_LT(std::abs(got - want) / std::abs(want), 1e-3) << "d=" << d;
  }
}

TEST(OfmLoss, TimeIntegralMatchesDualGapForIcnn) {
  Rng rng(5);
  const auto rule = gauss_legendre(64);
  for (int k = 0; k < 5; ++k) {
    auto p = random_icnn(2, rng);
    const Vector x0 = standard_normal(2, rng), x1 = standard_normal(2, rng);
    const auto c = conjugate(p, x1, tight());
    ASSERT_TRUE(c.converged);
    const double want = 2.0 * (p.value(x0) + c.value - x0.dot(x1));
    const double got = ofm_loss_time_averaged(p, pair_independent(x0.transpose(), x1.transpose()), rule, tight());
    EXPECT_LT(std::abs(got - want) / std::abs(want), 1e-3);
  }
}

// Time-averaged OFM loss = 2 L_OT - 2 E<x0, x1> on any fixed batch and any plan.
TEST(DualOtLoss, LinksToOfmLossOnAnyPlan) {
  Rng rng(6);
  const auto rule = gauss_legendre(64);
  auto p = random_icnn(2, rng, {8, 8});
  for (int sign : {+1, -1}) {
    const auto batch = pair_minibatch_ot(standard_normal(16, 2, rng), 2.0 * standard_normal(16, 2, rng), sign);
    const double lofm = ofm_loss_time_averaged(p, batch, rule, tight());
    const auto dual = dual_ot_loss(p, batch, tight());
    ASSERT_EQ(dual.excluded, 0);
    const double inner = (batch.x0.array() * batch.x1.array()).rowwise().sum().mean();
    const double rhs = 2.0 * dual.value - 2.0 * inner;
    EXPECT_LT(std::abs(lofm - rhs) / std::abs(lofm), 1e-3);
  }
}

TEST(DualOtLoss, IdentityPotentialExamples) {
  Rng rng(7);
  const auto id = QuadraticPotential::identity(2);
  const auto zeros = pair_independent(Matrix::Zero(4, 2), Matrix::Zero(4, 2));
  EXPECT_EQ(dual_ot_loss(id, zeros).value, 0.0);
  const auto batch = gaussian_batch(20, 2, rng);
  const double want = 0.5 * batch.x0.rowwise().squaredNorm().mean() + 0.5 * batch.x1.rowwise().squaredNorm().mean();
  EXPECT_NEAR(dual_ot_loss(id, batch).value, want, 1e-12);
}

TEST(DualOtLoss, DivergentConjugatesAreExcluded) {
  QuadraticPotential flat(Matrix::Zero(1, 1), Vector::Zero(1));
  Matrix x1(2, 1);
  x1 << 0.0, 1.0;
  const auto e = dual_ot_loss(flat, pair_independent(Matrix::Zero(2, 1), x1));
  EXPECT_EQ(e.excluded, 1);
  EXPECT_EQ(e.value, 0.0);
}

TEST(OfmGradient, MatchesFiniteDifferencesOfLoss) {
  Rng rng(8);
  auto p = random_icnn(2, rng, {4, 3});
  ASSERT_LE(p.num_params(), 50);
  const auto batch = gaussian_batch(6, 2, rng, 1.5);
  const Vector t = random_times(6, rng, 0.05);
  const auto g = ofm_gradient(p, batch, t, tight());
  Vector fd(p.num_params());
  const Vector theta = p.params();
  const double h = 1e-5;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    IcnnPotential q = p;
    q.params()[j] = theta[j] + h;
    const double fp = ofm_loss(q, batch, t, tight());
    q.params()[j] = theta[j] - h;
    const double fm = ofm_loss(q, batch, t, tight());
    fd[j] = (fp - fm) / (2 * h);
  }
  EXPECT_LT((g.grad - fd).norm() / fd.norm(), 1e-4);
}

TEST(OfmGradient, ConjugateGradientSolveMatchesDense) {
  Rng rng(9);
  auto p = random_icnn(4, rng, {8, 8});
  const auto batch = gaussian_batch(8, 4, rng);
  const Vector t = random_times(8, rng);
  const auto dense = ofm_gradient(p, batch, t, tight(), HessianSolve::dense);
  const auto cg = ofm_gradient(p, batch, t, tight(), HessianSolve::conjugate_gradient);
  EXPECT_LT((dense.grad - cg.grad).norm() / dense.grad.norm(), 1e-8);
  EXPECT_NEAR(dense.report.surrogate, cg.report.surrogate, 1e-8 * std::abs(dense.report.surrogate));
}

TEST(OfmGradStep, WorkerCountDoesNotChangeResult) {
  Rng rng(10);
  auto p = random_icnn(3, rng);
  const auto batch = gaussian_batch(33, 3, rng);
  const Vector t = random_times(33, rng);
  const auto a = ofm_gradient(p, batch, t, {}, HessianSolve::automatic, 1);
  const auto b = ofm_gradient(p, batch, t, {}, HessianSolve::automatic, 4);
  EXPECT_EQ(a.grad, b.grad);
}

TEST(OfmGradStep, StepKeepsConvexityAndUpdatesEma) {
  Rng rng(11);
  auto p = random_icnn(2, rng);
  Adam adam(0.5);  // large steps push constrained weights below zero
  EmaShadow ema(p.params(), 0.9);
  const Vector before = p.params();
  const auto batch = gaussian_batch(16, 2, rng, 3.0);
  const Vector t = random_times(16, rng);
  const auto rep = ofm_grad_step(p, batch, t, adam, &ema);
  EXPECT_GE(rep.ofm_loss, 0.0);
  for (auto [start, len] : p.net().constrained_blocks()) EXPECT_GE(p.params().segment(start, len).minCoeff(), 0.0);
  EXPECT_LT((ema.shadow() - (0.9 * before + 0.1 * p.params())).norm(), 1e-15);
}

TEST(Ema, ConvergesGeometricallyToConstantParameters) {
  Vector theta = Vector::Ones(3), start = Vector::Zero(3);
  EmaShadow ema(start, 0.999);
  double prev = (ema.shadow() - theta).norm();
  for (int k = 0; k < 50; ++k) {
    ema.update(theta);
    const double cur = (ema.shadow() - theta).norm();
    EXPECT_NEAR(cur / prev, 0.999, 1e-12);
    prev = cur;
  }
}

TEST(Transport, ExamplesAndStraightness) {
  Rng rng(12);
  const Vector x = standard_normal(3, rng);
  EXPECT_EQ(transport(QuadraticPotential::identity(3), x), x);
  auto q = random_quadratic(3, rng);
  EXPECT_LT((transport(q, x) - (q.a() * x + q.b())).norm(), 1e-14);
  auto p = random_icnn(3, rng);
  const Vector y = transport(p, x);
  for (double t : {0.0, 0.25, 0.5, 0.75, 1.0})
    EXPECT_LT((trajectory_point(p, x, t) - ((1 - t) * x + t * y)).norm(), 1e-12);
  const Vector mid = trajectory_point(p, x, 0.5);
  EXPECT_LT((mid - 0.5 * (trajectory_point(p, x, 0.0) + trajectory_point(p, x, 1.0))).norm(), 1e-12);
  // batched transport agrees with the single-point path
  const Matrix xs = standard_normal(300, 3, rng);
  const Matrix ys = transport_rows(p, xs);
  for (int i = 0; i < 300; i += 37) EXPECT_LT((ys.row(i).transpose() - p.gradient(xs.row(i).transpose())).norm(), 1e-12);
}

TEST(OfmDistance, ZeroForIdenticalPotentials) {
  Rng rng(13);
  auto p = random_icnn(2, rng);
  const auto batch = gaussian_batch(16, 2, rng);
  EXPECT_EQ(ofm_distance(p, p, batch, random_times(16, rng)), 0.0);
}

// p0 = N(0, I), x1 = A* x0. For Psi = 1/2 x^T A x the distance is
// 2 (L_OT(Psi) - L_OT(Psi*)) = tr(A*) (c + 1/c - 2) when A = c A*.
TEST(OfmDistance, QuadraticFamilyClosedFormAndMonotone) {
  Rng rng(14);
  const int d = 2, b = 4000;
  const Matrix a_star = testing::random_spd(d, rng, 0.5, 2.0);
  const QuadraticPotential star(a_star, Vector::Zero(d));
  const Matrix x0 = standard_normal(b, d, rng);
  const auto batch = pair_independent(x0, x0 * a_star);
  const Vector t = random_times(b, rng);
  double prev = 0.0;
  for (double c : {1.2, 1.5, 2.0, 3.0}) {
    const QuadraticPotential q(c * a_star, Vector::Zero(d));
    const Vector diff = ofm_loss_terms(q, batch, t) - ofm_loss_terms(star, batch, t);
    const double mean = diff.mean();
    const double se = std::sqrt((diff.array() - mean).square().sum() / (b - 1) / b);
    const double want = a_star.trace() * (c + 1 / c - 2);
    EXPECT_LT(std::abs(mean - want), 3 * se + 1e-12) << "c=" << c;
    EXPECT_GT(mean, prev);
    prev = mean;
  }
}

TEST(OfmDistance, InvariantAcrossPlans) {
  Rng rng(15);
  const int d = 2, b = 512;
  auto star = random_icnn(d, rng);
  auto p = random_icnn(d, rng);
  const auto p1 = DistributionSpec::pushforward(DistributionSpec::standard_gaussian(d), star);
  std::vector<std::pair<double, double>> est;  // mean, squared standard error
  for (PairingTag tag : {PairingTag::independent, PairingTag::minibatch}) {
    PlanSampler plan{DistributionSpec::standard_gaussian(d), p1, tag, 64, std::nullopt};
    const auto batch = plan.sample_batch(b, rng);
    const Vector t = random_times(b, rng);
    const Vector diff = ofm_loss_terms(p, batch, t) - ofm_loss_terms(star, batch, t);
    const double mean = diff.mean();
    est.emplace_back(mean, (diff.array() - mean).square().sum() / (b - 1) / b);
  }
  EXPECT_LT(std::abs(est[0].first - est[1].first), 3 * std::sqrt(est[0].second + est[1].second));
}

PlanSampler small_plan() {
  return {DistributionSpec::standard_gaussian(2), DistributionSpec::eight_gaussians(2.0, 0.3),
          PairingTag::independent, 64, std::nullopt};
}

TrainConfig small_config() {
  TrainConfig c;
  c.iterations = 20;
  c.batch_size = 32;
  c.learning_rate = 1e-2;
  c.log_interval = 5;
  c.seed = 7;
  return c;
}

TEST(TrainOfm, ZeroIterationsReturnsInitialPotential) {
  Rng rng(16);
  auto p = random_icnn(2, rng);
  auto cfg = small_config();
  cfg.iterations = 0;
  const auto r = train_ofm(p, small_plan(), cfg);
  EXPECT_EQ(r.potential.params(), p.params());
}

TEST(TrainOfm, IdenticalSeedsGiveIdenticalTraces) {
  Rng rng(17);
  auto p = random_icnn(2, rng);
  auto cfg = small_config();
  cfg.log_dual = true;
  const auto a = train_ofm(p, small_plan(), cfg);
  cfg.workers = 3;
  const auto b = train_ofm(p, small_plan(), cfg);
  ASSERT_EQ(a.trace.size(), 4u);
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(format_row(a.trace[i]), format_row(b.trace[i]));
  EXPECT_EQ(a.potential.params(), b.potential.params());
}

// With an independent plan the OFM loss keeps a large plan-dependent floor, so
// progress is measured by the distance to a known quadratic optimum instead.
TEST(TrainOfm, ApproachesKnownOptimum) {
  Rng rng(18);
  const auto star = random_quadratic(2, rng, 0.5, 2.0);
  auto p = IcnnPotential::random(2, {{16, 16}, Activation::softplus, 2}, rng);
  const PlanSampler plan{DistributionSpec::standard_gaussian(2),
                         DistributionSpec::pushforward(DistributionSpec::standard_gaussian(2), star),
                         PairingTag::independent, 64, std::nullopt};
  Rng eval(99);
  const auto batch = plan.sample_batch(2048, eval);
  const Vector t = random_times(2048, eval);
  auto cfg = small_config();
  cfg.iterations = 300;
  cfg.batch_size = 64;
  cfg.ema_decay = 0.9;
  cfg.log_interval = 100;
  const auto r = train_ofm(p, plan, cfg);
  ASSERT_EQ(r.trace.size(), 3u);
  const double before = ofm_distance(p, star, batch, t);
  const double after = ofm_distance(r.potential, star, batch, t);
  EXPECT_GT(after, -0.01 * before);  // non-negative up to noise
  EXPECT_LT(after, 0.1 * before);
}

TEST(TrainOfm, AmortizedVariantRuns) {
  Rng rng(19);
  auto p = random_icnn(2, rng);
  auto cfg = small_config();
  cfg.amortize = true;
  cfg.amortizer_hidden = {16};
  const auto r = train_ofm(p, small_plan(), cfg);
  ASSERT_TRUE(r.amortizer.has_value());
  EXPECT_EQ(r.trace.back().iteration, 20);
}

TEST(TrainOfm, AbortsWhenSubproblemsFail) {
  Rng rng(20);
  auto p = random_icnn(2, rng);
  auto cfg = small_config();
  cfg.subproblem.max_iterations = 1;
  cfg.subproblem.tol_grad = 1e-15;
  cfg.failure_window = 5;
  EXPECT_THROW(train_ofm(p, small_plan(), cfg), TrainingAborted);
}

TEST(TrainConfig, Validation) {
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    return c;
  };
  EXPECT_NO_THROW(TrainConfig{}.validate());
  EXPECT_THROW(bad([](TrainConfig& c) { c.batch_size = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.ema_decay = 1.0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.epsilon = 0.0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.epsilon = 0.5; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.iterations = -1; }).validate(), ConfigError);
  EXPECT_EQ(parse_hessian_solve("conjugate-gradient"), HessianSolve::conjugate_gradient);
}

}  // namespace
}  // namespace ofm
