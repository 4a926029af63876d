#ifndef OFM_TOOLS_CHECK_SUITES_HPP
#define OFM_TOOLS_CHECK_SUITES_HPP

// Identity suites behind `ofm check`: each case compares a quantity computed
// by the library against an independent closed form and reports the
// residual next to its tolerance.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ofm/benchmark.hpp"
#include "ofm/ofm_trainer.hpp"
#include "ofm/quadrature.hpp"

namespace ofm::check {

struct CaseResult {
  std::string name;
  double residual = 0.0;
  double tolerance = 0.0;
  bool pass() const { return residual < tolerance; }  // NaN fails
};

struct SuiteOptions {
  std::uint64_t seed = 0;
  int workers = 1;
};

using Suite = std::function<std::vector<CaseResult>(const SuiteOptions&)>;

inline InversionOptions tight_inversion() {
  InversionOptions o;
  o.tol_grad = 1e-12;
  o.max_iterations = 500;
  return o;
}

inline QuadraticPotential random_quadratic(int d, Rng& rng) {
  const Matrix g = standard_normal(d, d, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix q = qr.householderQ();
  Vector ev(d);
  for (int i = 0; i < d; ++i) ev[i] = uniform(rng, 0.3, 3.0);
  const Matrix a = q * ev.asDiagonal() * q.transpose();
  return {0.5 * (a + a.transpose()), standard_normal(d, rng), uniform(rng, -1.0, 1.0)};
}

inline IcnnPotential random_icnn(int d, Rng& rng, std::vector<int> hidden) {
  IcnnOptions o;
  o.hidden = std::move(hidden);
  o.activation = Activation::softplus;
  ScalarNetInit init;
  init.output_scale = 1.0;
  init.quadratic_skip = 0.5;
  IcnnPotential p = IcnnPotential::random(d, o, rng, init);
  p.params() += 0.2 * standard_normal(p.num_params(), rng);
  p.project_convex();
  return p;
}

/// Closed-form conjugate of 1/2 x'Ax + b'x + c: 1/2 (y-b)' A^-1 (y-b) - c.
inline double quadratic_conjugate(const QuadraticPotential& q, const Vector& y) {
  const Vector r = y - q.b();
  return 0.5 * r.dot(q.a().ldlt().solve(r)) - q.c();
}

/// Time integral of the OFM integrand versus 2 [Psi(x0) + Psi*(x1) - <x0, x1>]
/// with the conjugate in closed form.
inline std::vector<CaseResult> lemma2_quadratic(const SuiteOptions& so) {
  Rng rng(so.seed + 101);
  const auto rule = gauss_legendre(256);
  std::vector<CaseResult> out;
  for (int k = 0; k < 100; ++k) {
    const int d = std::array{1, 2, 8}[k % 3];
    const auto q = random_quadratic(d, rng);
    const Vector x0 = standard_normal(d, rng), x1 = standard_normal(d, rng);
    const double rhs = 2.0 * (q.value(x0) + quadratic_conjugate(q, x1) - x0.dot(x1));
    const double lhs = ofm_loss_time_averaged(q, pair_independent(x0.transpose(), x1.transpose()), rule,
                                              tight_inversion());
    out.push_back({"quadratic#" + std::to_string(k) + " D=" + std::to_string(d),
                   std::abs(lhs - rhs) / std::max(std::abs(rhs), 1e-9), 1e-6});
  }
  return out;
}

/// Same identity for small ICNNs; the conjugate comes from a numeric solve
/// whose optimality is checked by the Fenchel-Young suite.
inline std::vector<CaseResult> lemma2_icnn(const SuiteOptions& so) {
  Rng rng(so.seed + 202);
  std::vector<CaseResult> out;
  for (int k = 0; k < 30; ++k) {
    const auto p = random_icnn(2, rng, {8, 8});
    const auto r = lemma2_check(p, standard_normal(2, rng), standard_normal(2, rng), 256, tight_inversion());
    out.push_back({"icnn#" + std::to_string(k), r.converged ? r.residual : kMissing, 1e-3});
  }
  return out;
}

/// Time-averaged OFM loss versus 2 L_OT - 2 E<x0, x1> on fixed batches of
/// 1024 pairs from independent, minibatch and anti-minibatch plans.
inline std::vector<CaseResult> thm1_identity(const SuiteOptions& so) {
  Rng rng(so.seed + 303);
  const auto rule = gauss_legendre(48);
  const PairingTag plans[] = {PairingTag::independent, PairingTag::minibatch, PairingTag::antiminibatch};
  std::vector<CaseResult> out;
  for (int k = 0; k < 20; ++k) {
    const auto p = random_icnn(2, rng, {8, 8});
    const PairingTag tag = plans[k % 3];
    const PlanSampler plan{DistributionSpec::standard_gaussian(2), DistributionSpec::eight_gaussians(), tag, 64,
                           std::nullopt};
    const PairedBatch batch = plan.sample_batch(1024, rng);
    const double lofm = ofm_loss_time_averaged(p, batch, rule, tight_inversion(), so.workers);
    const auto dual = dual_ot_loss(p, batch, tight_inversion(), so.workers);
    const double inner = (batch.x0.array() * batch.x1.array()).rowwise().sum().mean();
    const double res = dual.excluded ? kMissing : std::abs(lofm - 2.0 * dual.value + 2.0 * inner) / (std::abs(lofm) + 1e-9);
    out.push_back({"icnn#" + std::to_string(k) + " plan=" + to_string(tag), res, 1e-3});
  }
  return out;
}

/// Psi(x) + Psi*(grad Psi(x)) = <x, grad Psi(x)> with the conjugate solved
/// numerically; quadratics are also checked against the closed form.
inline std::vector<CaseResult> fenchel_young(const SuiteOptions& so) {
  Rng rng(so.seed + 404);
  std::vector<CaseResult> out;
  for (int k = 0; k < 30; ++k) {
    const int d = std::array{2, 4, 8}[k % 3];
    const auto p = random_icnn(d, rng, {16, 16});
    const Vector x = standard_normal(d, rng), y = p.gradient(x);
    const auto c = conjugate(p, y, tight_inversion());
    const double gap = p.value(x) + c.value - x.dot(y);
    out.push_back({"icnn#" + std::to_string(k) + " D=" + std::to_string(d),
                   c.converged ? std::abs(gap) / (1.0 + std::abs(x.dot(y))) : kMissing, 1e-8});
  }
  for (int k = 0; k < 30; ++k) {
    const int d = std::array{1, 2, 8}[k % 3];
    const auto q = random_quadratic(d, rng);
    const Vector y = standard_normal(d, rng);
    const auto c = conjugate(q, y, tight_inversion());
    out.push_back({"quadratic#" + std::to_string(k) + " D=" + std::to_string(d),
                   std::abs(c.value - quadratic_conjugate(q, y)) / (1.0 + std::abs(c.value)), 1e-8});
  }
  return out;
}

/// Analytic OFM gradient versus central differences of the OFM loss.
inline std::vector<CaseResult> gradcheck(const SuiteOptions& so) {
  Rng rng(so.seed + 505);
  std::vector<CaseResult> out;
  for (int k = 0; k < 20; ++k) {
    const auto p = random_icnn(2, rng, {6, 5});
    const Eigen::Index b = 8;
    const Matrix x0 = standard_normal(b, 2, rng), x1 = 1.5 * standard_normal(b, 2, rng);
    const PairedBatch batch = pair_independent(x0, x1);
    Vector t(b);
    for (Eigen::Index i = 0; i < b; ++i) t[i] = uniform(rng, 0.05, 0.95);
    const auto g = ofm_gradient(p, batch, t, tight_inversion());
    Vector fd(p.num_params());
    const double h = 1e-5;
    for (Eigen::Index j = 0; j < fd.size(); ++j) {
      IcnnPotential q = p;
      q.params()[j] += h;
      const double fp = ofm_loss(q, batch, t, tight_inversion());
      q.params()[j] -= 2 * h;
      const double fm = ofm_loss(q, batch, t, tight_inversion());
      fd[j] = (fp - fm) / (2 * h);
    }
    out.push_back({"batch#" + std::to_string(k) + " params=" + std::to_string(p.num_params()),
                   (g.grad - fd).norm() / std::max(fd.norm(), 1e-300), 1e-4});
  }
  return out;
}

inline const std::map<std::string, Suite>& suites() {
  static const std::map<std::string, Suite> all{{"lemma2-quadratic", lemma2_quadratic},
                                                {"lemma2-icnn", lemma2_icnn},
                                                {"thm1-identity", thm1_identity},
                                                {"fenchel-young", fenchel_young},
                                                {"gradcheck", gradcheck}};
  return all;
}

}  // namespace ofm::check

#endif  // OFM_TOOLS_CHECK_SUITES_HPP
