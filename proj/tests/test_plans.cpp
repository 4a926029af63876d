#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "ofm/plans.hpp"
#include "test_support.hpp"

namespace ofm {
namespace {

// brute-force minimum over all permutations
double brute_force_min(const Matrix& cost) {
  std::vector<int> perm(static_cast<std::size_t>(cost.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    best = std::min(best, assignment_cost(cost, perm));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

TEST(Sample, StandardGaussianMeanWithinCltBand) {
  Rng rng(1);
  const int d = 3;
  const Matrix x = sample(DistributionSpec::standard_gaussian(d), 100000, rng);
  const double band = 3.0 * std::sqrt(double(d)) * std::pow(10.0, -2.5);
  EXPECT_LT(x.colwise().mean().norm(), band);
}

TEST(Sample, EightGaussiansClusterProportions) {
  Rng rng(2);
  const auto spec = DistributionSpec::eight_gaussians();
  const int n = 40000;
  const Matrix x = sample(spec, n, rng);
  std::vector<int> counts(8, 0);
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double bd = 1e300;
    for (int k = 0; k < 8; ++k) {
      const double dd = (x.row(i).transpose() - spec.means[k]).squaredNorm();
      if (dd < bd) bd = dd, best = k;
    }
    ++counts[best];
  }
  const double p = 1.0 / 8.0, sd = std::sqrt(n * p * (1 - p));
  for (int c : counts) EXPECT_LT(std::abs(c - n * p), 3.0 * sd);
}

TEST(Sample, PushforwardByIdentityEqualsBase) {
  const auto base = DistributionSpec::standard_gaussian(2);
  const auto push = DistributionSpec::pushforward(base, QuadraticPotential::identity(2));
  Rng a(3), b(3);
  EXPECT_EQ(sample(base, 100, a), sample(push, 100, b));
}

TEST(Sample, SeededDeterminism) {
  const auto spec = DistributionSpec::eight_gaussians();
  Rng a(4), b(4);
  EXPECT_EQ(sample(spec, 500, a), sample(spec, 500, b));
}

TEST(DistributionSpec, RejectsInvalidParameters) {
  EXPECT_THROW(DistributionSpec::gaussian(Vector::Zero(2), -Matrix::Identity(2, 2)), std::invalid_argument);
  EXPECT_THROW(DistributionSpec::mixture({Vector::Zero(1)}, {Matrix::Identity(1, 1)}, Vector::Constant(1, 0.9)),
               std::invalid_argument);
  Rng rng(5);
  EXPECT_THROW(sample(DistributionSpec::standard_gaussian(1), 0, rng), std::invalid_argument);
}

TEST(PairIndependent, Contract) {
  Rng rng(6);
  Matrix x0 = standard_normal(1, 2, rng), x1 = standard_normal(1, 2, rng);
  auto b = pair_independent(x0, x1);
  EXPECT_EQ(b.tag, PairingTag::independent);
  EXPECT_EQ(to_string(b.tag), "independent");
  EXPECT_EQ(b.x0, x0);
  EXPECT_EQ(b.x1, x1);
  EXPECT_THROW(pair_independent(standard_normal(2, 2, rng), standard_normal(3, 2, rng)), DimensionError);
}

TEST(PairMinibatch, SmallExamples) {
  Rng rng(7);
  Matrix one = standard_normal(1, 2, rng), other = standard_normal(1, 2, rng);
  EXPECT_EQ(pair_minibatch_ot(one, other).x1, other);

  Matrix x = standard_normal(16, 3, rng);
  auto same = pair_minibatch_ot(x, x);
  EXPECT_EQ(same.x1, x);
  EXPECT_EQ(pairing_cost(same), 0.0);
  EXPECT_EQ(same.tag, PairingTag::minibatch);
  EXPECT_EQ(pair_minibatch_ot(x, x, -1).tag, PairingTag::antiminibatch);

  for (int k = 0; k < 20; ++k) {
    Matrix a = standard_normal(3, 2, rng), b = standard_normal(3, 2, rng);
    const Matrix cost = squared_distances(a, b);
    auto p = pair_minibatch_ot(a, b);
    EXPECT_NEAR(3.0 * pairing_cost(p), brute_force_min(cost), 1e-12);
  }
  EXPECT_THROW(pair_minibatch_ot(standard_normal(513, 1, rng), standard_normal(513, 1, rng)),
               std::invalid_argument);
  EXPECT_THROW(pair_minibatch_ot(standard_normal(3, 1, rng), standard_normal(2, 1, rng)), DimensionError);
}

TEST(PairMinibatch, CostOrderingAndBijection) {
  Rng rng(8);
  for (int k = 0; k < 20; ++k) {
    Matrix a = standard_normal(64, 2, rng), b = 3.0 * standard_normal(64, 2, rng);
    const double ind = pairing_cost(pair_independent(a, b));
    const auto mb = pair_minibatch_ot(a, b, +1);
    const auto anti = pair_minibatch_ot(a, b, -1);
    EXPECT_LE(pairing_cost(mb), ind + 1e-12);
    EXPECT_GE(pairing_cost(anti), ind - 1e-12);
    // re-pairing only permutes x1 rows
    EXPECT_EQ(mb.x0, a);
    const auto assignment = solve_assignment(squared_distances(a, b));
    std::vector<int> sorted = assignment;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 64; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
  }
}

TEST(Hungarian, MatchesBruteForce) {
  Rng rng(9);
  for (int k = 0; k < 200; ++k) {
    const int n = 1 + k % 8;
    Matrix c = standard_normal(n, n, rng);
    if (k % 3 == 0) c = -c.cwiseAbs();
    EXPECT_NEAR(assignment_cost(c, solve_assignment(c)), brute_force_min(c), 1e-12);
  }
}

TEST(PlanSampler, BlocksAndGroundTruth) {
  Rng rng(10);
  PlanSampler plan{DistributionSpec::standard_gaussian(2), DistributionSpec::eight_gaussians(),
                   PairingTag::minibatch, 16, std::nullopt};
  Rng a(11), b(11);
  const auto batch = plan.sample_batch(64, a);
  EXPECT_EQ(batch.size(), 64);
  EXPECT_EQ(batch.tag, PairingTag::minibatch);
  // same marginal draws as the independent plan with the same stream
  plan.kind = PairingTag::independent;
  const auto ind = plan.sample_batch(64, b);
  EXPECT_EQ(batch.x0, ind.x0);
  EXPECT_LE(pairing_cost(batch), pairing_cost(ind));

  const auto q = testing::random_quadratic(2, rng);
  PlanSampler gt{DistributionSpec::standard_gaussian(2), DistributionSpec::pushforward(
                     DistributionSpec::standard_gaussian(2), q),
                 PairingTag::ground_truth, 64, AnyPotential(q)};
  const auto g = gt.sample_batch(8, rng);
  for (int i = 0; i < 8; ++i)
    EXPECT_LT((g.x1.row(i).transpose() - q.gradient(g.x0.row(i).transpose())).norm(), 1e-14);
}

}  // namespace
}  // namespace ofm
