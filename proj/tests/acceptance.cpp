// Acceptance run: one PASS/FAIL line per criterion, followed by the numbers
// behind it. Reference values come from oracles written here (closed forms,
// brute force, finite differences), not from the library.
//
//   acceptance            all criteria
//   acceptance 4 5        selected criteria

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "ofm/ofm.hpp"

using namespace ofm;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string summary;
  std::vector<std::string> details;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- oracles and fixtures ---------------------------------------------------

InversionOptions tight() {
  InversionOptions o;
  o.tol_grad = 1e-12;
  o.max_iterations = 500;
  return o;
}

QuadraticPotential random_quadratic(int d, Rng& rng) {
  const Matrix g = standard_normal(d, d, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix q = qr.householderQ();
  Vector ev(d);
  for (int i = 0; i < d; ++i) ev[i] = uniform(rng, 0.3, 3.0);
  const Matrix a = q * ev.asDiagonal() * q.transpose();
  return {0.5 * (a + a.transpose()), standard_normal(d, rng), uniform(rng, -1.0, 1.0)};
}

// conjugate of 1/2 x'Ax + b'x + c in closed form
double quadratic_conjugate(const QuadraticPotential& q, const Vector& y) {
  const Vector r = y - q.b();
  return 0.5 * r.dot(q.a().ldlt().solve(r)) - q.c();
}

IcnnPotential random_icnn(int d, Rng& rng, std::vector<int> hidden) {
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

// Desk-scale OFM settings shared by the training criteria: Table 3's recipe
// (Adam, EMA, uniform times, L-BFGS subproblems) with a smaller network and
// budget; the EMA horizon is scaled to the budget.
TrainConfig desk_ofm(long iterations, std::uint64_t seed) {
  TrainConfig c;
  c.iterations = iterations;
  c.batch_size = 256;
  c.learning_rate = 1e-2;
  c.ema_decay = 1.0 - 10.0 / double(iterations);
  c.seed = seed;
  c.log_interval = iterations;
  return c;
}

IcnnPotential desk_icnn(int d, std::uint64_t seed, std::vector<int> hidden = {64, 64}) {
  IcnnOptions o;
  o.hidden = std::move(hidden);
  o.activation = Activation::softplus;
  Rng rng(seed);
  return IcnnPotential::random(d, o, rng);
}

// ---- criteria ---------------------------------------------------------------

Outcome criterion1() {
  const auto t0 = Clock::now();
  Rng rng(1);
  const auto rule = gauss_legendre(256);
  double worst_q = 0.0;
  for (int k = 0; k < 100; ++k) {
    const int d = std::array{1, 2, 8}[k % 3];
    const auto q = random_quadratic(d, rng);
    const Vector x0 = standard_normal(d, rng), x1 = standard_normal(d, rng);
    const double rhs = 2.0 * (q.value(x0) + quadratic_conjugate(q, x1) - x0.dot(x1));
    const double lhs = ofm_loss_time_averaged(q, pair_independent(x0.transpose(), x1.transpose()), rule, tight());
    worst_q = std::max(worst_q, std::abs(lhs - rhs) / std::max(std::abs(rhs), 1e-9));
  }
  double worst_n = 0.0;
  int unconverged = 0;
  for (int k = 0; k < 30; ++k) {
    const auto p = random_icnn(2, rng, {8, 8});
    const auto r = lemma2_check(p, standard_normal(2, rng), standard_normal(2, rng), 256, tight());
    worst_n = std::max(worst_n, r.residual);
    unconverged += r.converged ? 0 : 1;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_q < 1e-6 && worst_n < 1e-3 && unconverged == 0 && secs < 120.0;
  o.summary = fmt("time integral identity: quadratics %.2e (< 1e-6), ICNNs %.2e (< 1e-3), %.1f s", worst_q, worst_n, secs);
  return o;
}

Outcome criterion2() {
  Rng rng(2);
  const auto rule = gauss_legendre(48);
  const PairingTag plans[] = {PairingTag::independent, PairingTag::minibatch, PairingTag::antiminibatch};
  double worst = 0.0;
  Outcome o;
  for (int k = 0; k < 20; ++k) {
    const auto p = random_icnn(2, rng, {8, 8});
    const PlanSampler plan{DistributionSpec::standard_gaussian(2), DistributionSpec::eight_gaussians(), plans[k % 3],
                           64, std::nullopt};
    const PairedBatch batch = plan.sample_batch(1024, rng);
    const double lofm = ofm_loss_time_averaged(p, batch, rule, tight());
    const auto dual = dual_ot_loss(p, batch, tight());
    const double inner = (batch.x0.array() * batch.x1.array()).rowwise().sum().mean();
    const double res = dual.excluded ? 1.0 : std::abs(lofm - 2.0 * dual.value + 2.0 * inner) / (std::abs(lofm) + 1e-9);
    worst = std::max(worst, res);
  }
  o.pass = worst < 1e-3;
  o.summary = fmt("L_OFM vs 2 L_OT - 2 E<x0,x1> over 20 (potential, plan) pairs, B=1024: max residual %.2e (< 1e-3)", worst);
  return o;
}

Outcome criterion3() {
  Rng rng(3);
  double worst = 0.0;
  Eigen::Index params = 0;
  for (int k = 0; k < 20; ++k) {
    const auto p = random_icnn(2, rng, {6, 5});
    params = p.num_params();
    const Eigen::Index b = 8;
    const PairedBatch batch = pair_independent(standard_normal(b, 2, rng), 1.5 * standard_normal(b, 2, rng));
    Vector t(b);
    for (Eigen::Index i = 0; i < b; ++i) t[i] = uniform(rng, 0.05, 0.95);
    const Vector g = ofm_gradient(p, batch, t, tight()).grad;
    Vector fd(p.num_params());
    for (Eigen::Index j = 0; j < fd.size(); ++j) {
      IcnnPotential q = p;
      q.params()[j] += 1e-5;
      const double fp = ofm_loss(q, batch, t, tight());
      q.params()[j] -= 2e-5;
      fd[j] = (fp - ofm_loss(q, batch, t, tight())) / 2e-5;
    }
    worst = std::max(worst, (g - fd).norm() / fd.norm());
  }
  Outcome o;
  o.pass = worst < 1e-4 && params <= 100;
  o.summary = fmt("analytic gradient vs central differences, %ld-parameter ICNNs, 20 batches: max rel. error %.2e (< 1e-4)",
                  long(params), worst);
  return o;
}

Outcome criterion4() {
  Outcome o;
  o.pass = true;
  int failures = 0;
  double worst_uvp = 0.0, worst_cos = 1.0, slowest = 0.0;
  for (const char* kind : {"gaussian", "convex"}) {
    for (int d : {2, 4, 8}) {
      TaskDescriptor desc;
      desc.kind = kind;
      desc.dim = d;
      desc.seed = 100 + d;
      desc.complexity = 2 * d;
      const BenchmarkTask task = make_task(desc);
      const auto t0 = Clock::now();
      const auto res = train_ofm(desk_icnn(d, 7 + d), task.plan(PairingTag::independent), desk_ofm(2000, d));
      const double secs = seconds_since(t0);
      const auto r = evaluate(gradient_map(res.potential), task, 99);
      Rng rng(5);
      const auto lin = evaluate(gradient_map(fit_linear_baseline(task, 1 << 14, rng)), task, 99);
      const bool ok = r.l2_uvp < 3.0 && r.cosine > 0.99;
      failures += ok ? 0 : 1;
      worst_uvp = std::max(worst_uvp, r.l2_uvp);
      worst_cos = std::min(worst_cos, r.cosine);
      slowest = std::max(slowest, secs);
      o.details.push_back(fmt("%-8s D=%d  L2-UVP %6.3f%% +- %.3f  cosine %.5f  (linear map %6.3f%%)  %5.1f s  %s", kind, d,
                              r.l2_uvp, r.l2_uvp_se, r.cosine, lin.l2_uvp, secs, ok ? "ok" : "MISS"));
    }
  }
  o.pass = failures == 0 && slowest < 1800.0;
  o.summary = fmt("OFM on 6 ground-truth tasks, 2000 iterations: worst L2-UVP %.3f%% (< 3), worst cosine %.5f (> 0.99)",
                  worst_uvp, worst_cos);
  return o;
}

Outcome criterion5() {
  const BenchmarkTask task = make_eight_gaussians_task();
  const PairingTag plans[] = {PairingTag::independent, PairingTag::minibatch, PairingTag::antiminibatch};
  std::vector<IcnnPotential> fits;
  Outcome o;
  for (PairingTag tag : plans) {
    const auto t0 = Clock::now();
    auto cfg = desk_ofm(3000, 11);
    cfg.plan = tag;
    cfg.minibatch_size = 64;
    fits.push_back(train_ofm(desk_icnn(2, 5, {128, 128}), task.plan(tag, 64), cfg).potential);
    o.details.push_back(fmt("trained on %-13s plan in %.1f s", to_string(tag).c_str(), seconds_since(t0)));
  }
  double worst = 0.0;
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b) {
      const double diff = map_difference(gradient_map(fits[a]), gradient_map(fits[b]), task, 21);
      worst = std::max(worst, diff);
      o.details.push_back(fmt("|T_%s - T_%s|^2 / Var(p1) = %.3f%%", to_string(plans[a]).c_str(),
                              to_string(plans[b]).c_str(), diff));
    }
  o.pass = worst < 2.0;
  o.summary = fmt("8-Gaussians maps from independent / minibatch / anti-minibatch plans: max pairwise difference %.3f%% (< 2)",
                  worst);
  return o;
}

Outcome criterion6() {
  Outcome o;
  const BenchmarkTask task = make_eight_gaussians_task();
  Rng rng(6);
  // OFM: sample the trajectory and measure the distance of each point from
  // the line through its end points.
  const auto psi = train_ofm(desk_icnn(2, 3), task.plan(), desk_ofm(500, 6)).potential;
  const Matrix x0 = sample(task.p0, 256, rng);
  double collinear = 0.0;
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    const Vector a = x0.row(i).transpose(), b = trajectory_point(psi, a, 1.0);
    const Vector dir = (b - a).normalized();
    for (int k = 1; k < 16; ++k) {
      const Vector p = trajectory_point(psi, a, k / 16.0) - a;
      collinear = std::max(collinear, (p - p.dot(dir) * dir).norm() / std::max((b - a).norm(), 1e-300));
    }
  }
  // vanilla FM and one rectification on the same task
  FmConfig fm;
  fm.iterations = 3000;
  fm.batch_size = 256;
  fm.learning_rate = 1e-3;
  fm.optimizer = OptimizerKind::adam;
  fm.log_interval = 3000;
  fm.seed = 6;
  RectifyConfig rc;
  rc.fm = fm;
  rc.pool_size = 4096;
  const auto rounds = rectified_flow<TimeField>(
      [](int k) {
        Rng r(60 + k);
        return TimeField::random(2, r, {128, 128, 64});
      },
      task.plan(), rc, 2);
  const Matrix probe = sample(task.p0, 512, rng);
  const double s_fm = straightness(rounds[0].trained.field, probe, OdeOptions{});
  const double s_rf = straightness(rounds[1].trained.field, probe, OdeOptions{});
  const PlanCost c0 = rounds[0].cost, c1 = rounds[1].cost;
  const bool cost_ok = c1.mean <= c0.mean + 3.0 * std::hypot(c0.std_error, c1.std_error);
  o.pass = collinear < 1e-12 && s_fm > 1e-3 && cost_ok;
  o.summary = fmt("OFM collinearity %.1e (< 1e-12); FM straightness %.2e (> 1e-3); RF plan cost %.3f -> %.3f (non-increasing)",
                  collinear, s_fm, c0.mean, c1.mean);
  o.details.push_back(fmt("straightness after one RF round: %.2e", s_rf));
  o.details.push_back(fmt("plan cost SE: %.3f -> %.3f, %d failed integrations", c0.std_error, c1.std_error, rounds[1].failures));
  return o;
}

Outcome criterion7() {
  Rng rng(7);
  int mismatches = 0;
  for (int k = 0; k < 200; ++k) {
    const int b = 1 + k % 8;
    const Matrix cost = squared_distances(standard_normal(b, 2, rng), standard_normal(b, 2, rng));
    std::vector<int> perm(static_cast<std::size_t>(b));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double c = 0.0;
      for (int i = 0; i < b; ++i) c += cost(i, perm[static_cast<std::size_t>(i)]);
      best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const auto assign = solve_assignment(cost);
    std::set<int> cols(assign.begin(), assign.end());
    if (cols.size() != static_cast<std::size_t>(b) || assignment_cost(cost, assign) != best) ++mismatches;
  }
  Outcome o;
  o.pass = mismatches == 0;
  o.summary = fmt("Hungarian vs brute force over 200 instances with B <= 8: %d mismatches", mismatches);
  return o;
}

Outcome criterion8() {
  Rng rng(8);
  int failures = 0;
  double worst = 0.0;
  for (int k = 0; k < 10000; ++k) {
    if (k % 100 == 0) rng.seed(8 + k);
    static IcnnPotential psi;
    if (k % 100 == 0) psi = random_icnn(1 + (k / 100) % 4, rng, {16, 16});
    const Vector z0 = 2.0 * standard_normal(psi.dim(), rng);
    const double t = uniform(rng, 0.0, 0.999);
    const Vector xt = (1.0 - t) * z0 + t * psi.gradient(z0);
    InversionOptions opt;
    opt.tol_grad = 1e-10;
    opt.max_iterations = 200;
    const auto r = invert_flow_map(psi, xt, t, opt);
    const double err = (r.z0 - z0).norm();
    worst = std::max(worst, err);
    if (!r.converged || !(err < 1e-6)) ++failures;
  }
  Outcome o;
  o.pass = failures == 0;
  o.summary = fmt("10^4 inversions of x_t = (1-t) z0 + t grad Psi(z0): max |z0 error| %.2e (< 1e-6), %d failures", worst,
                  failures);
  return o;
}

Outcome criterion9() {
  Outcome o;
  TaskDescriptor desc;
  desc.kind = "convex";
  desc.dim = 8;
  desc.seed = 108;
  desc.complexity = 16;
  const BenchmarkTask task = make_task(desc);
  const long budget = 2000;
  const int batch = 256;

  auto t0 = Clock::now();
  const auto psi = train_ofm(desk_icnn(8, 15), task.plan(PairingTag::independent), desk_ofm(budget, 9)).potential;
  const auto r_ofm = evaluate(gradient_map(psi), task, 99);
  o.details.push_back(fmt("OFM     L2-UVP %7.3f%%  cosine %.4f  (%.1f s)", r_ofm.l2_uvp, r_ofm.cosine, seconds_since(t0)));

  auto baseline = [&](PairingTag plan, const char* name) {
    FmConfig c;
    c.iterations = budget;
    c.batch_size = batch;
    c.learning_rate = 1e-3;
    c.optimizer = OptimizerKind::rmsprop;
    c.plan = plan;
    c.log_interval = budget;
    c.seed = 9;
    const auto start = Clock::now();
    Rng r(15);
    const auto f = train_fm(TimeField::random(8, r), task.plan(plan), c).field;
    const auto rep = evaluate(model_map(f), task, 99);
    o.details.push_back(fmt("%-7s L2-UVP %7.3f%%  cosine %.4f  (%.1f s)", name, rep.l2_uvp, rep.cosine, seconds_since(start)));
    return rep;
  };
  const auto r_ot = baseline(PairingTag::minibatch, "OT-CFM");
  const auto r_fm = baseline(PairingTag::independent, "FM");
  o.details.push_back(fmt("ordering OFM <= OT-CFM: %s; OT-CFM <= FM: %s (reported only)",
                          r_ofm.l2_uvp <= r_ot.l2_uvp ? "yes" : "no", r_ot.l2_uvp <= r_fm.l2_uvp ? "yes" : "no"));
  o.pass = r_ofm.l2_uvp <= r_ot.l2_uvp + 2.0;
  o.summary = fmt("convex D=8, %ld iterations x %d: OFM %.3f%%, OT-CFM %.3f%%, FM %.3f%% (assert OFM <= OT-CFM + 2)", budget,
                  batch, r_ofm.l2_uvp, r_ot.l2_uvp, r_fm.l2_uvp);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Outcome()>> criteria{criterion1, criterion2, criterion3, criterion4, criterion5,
                                                       criterion6, criterion7, criterion8, criterion9};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[k]();
    } catch (const std::exception& e) {
      o.pass = false;
      o.summary = std::string("exception: ") + e.what();
    }
    failed += o.pass ? 0 : 1;
    std::printf("criterion %d: %s  %s  [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", o.summary.c_str(), seconds_since(t0));
    for (const auto& d : o.details) std::printf("    %s\n", d.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
