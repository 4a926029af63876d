#ifndef OFM_BENCHMARK_HPP
#define OFM_BENCHMARK_HPP

// Ground-truth OT tasks built from a known convex potential (its gradient is
// the optimal map by Brenier's theorem) and the map-quality metrics
// L2-UVP and cosine similarity of displacement directions.

#include <functional>
#include <optional>
#include <string>

#include <json.hpp>

#include "ofm/core.hpp"
#include "ofm/inversion.hpp"
#include "ofm/ofm_trainer.hpp"
#include "ofm/plans.hpp"
#include "ofm/potential.hpp"
#include "ofm/quadrature.hpp"

namespace ofm {

inline constexpr Eigen::Index kDefaultEvalSamples = 1 << 14;

/// Reproducible description of a task; everything else derives from it.
struct TaskDescriptor {
  std::string kind = "gaussian";  // gaussian | convex | eight_gaussians
  int dim = 2;
  std::uint64_t seed = 0;
  int complexity = 4;  // softplus ridge terms (convex)
  double radius = 4.0;  // eight_gaussians
  double sigma = 0.3;   // eight_gaussians
  Eigen::Index eval_samples = kDefaultEvalSamples;

  void validate() const {
    if (kind != "gaussian" && kind != "convex" && kind != "eight_gaussians")
      throw ConfigError("task.kind: unknown task kind '" + kind + "'");
    if (dim < 1) throw ConfigError("task.dim must be >= 1");
    if (kind == "eight_gaussians" && dim != 2) throw ConfigError("task.dim must be 2 for eight_gaussians");
    if (complexity < 0) throw ConfigError("task.complexity must be >= 0");
    if (!(radius > 0.0) || !(sigma > 0.0)) throw ConfigError("task.radius and task.sigma must be positive");
    if (eval_samples < 2) throw ConfigError("task.eval_samples must be >= 2");
  }
};

inline void to_json(nlohmann::json& j, const TaskDescriptor& d) {
  j = nlohmann::json{{"kind", d.kind},     {"dim", d.dim},       {"seed", d.seed},
                     {"complexity", d.complexity}, {"radius", d.radius}, {"sigma", d.sigma},
                     {"eval_samples", d.eval_samples}};
}

inline void from_json(const nlohmann::json& j, TaskDescriptor& d) {
  if (!j.is_object()) throw ConfigError("task: expected an object");
  static const char* known[] = {"kind", "dim", "seed", "complexity", "radius", "sigma", "eval_samples"};
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("task." + key + ": unknown field");
  }
  auto get = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(out);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("task.") + key + ": wrong type");
    }
  };
  get("kind", d.kind);
  get("dim", d.dim);
  get("seed", d.seed);
  get("complexity", d.complexity);
  get("radius", d.radius);
  get("sigma", d.sigma);
  get("eval_samples", d.eval_samples);
  d.validate();
}

struct BenchmarkTask {
  TaskDescriptor descriptor;
  DistributionSpec p0, p1;
  std::optional<AnyPotential> ground_truth;  // absent for tasks without a known map
  Eigen::Index eval_samples = kDefaultEvalSamples;

  int dim() const { return p0.dim; }
  /// Ground-truth pairs (x0, grad Psi*(x0)) or independent pairs when unknown.
  PlanSampler plan(PairingTag kind = PairingTag::independent, Eigen::Index minibatch = 64) const {
    return {p0, p1, kind, minibatch, ground_truth};
  }
};

/// p0 = N(0, I), p1 = N(mean, cov); the optimal map x -> mean + cov^(1/2) x is
/// the gradient of Psi*(x) = 1/2 x^T cov^(1/2) x + mean^T x.
inline BenchmarkTask make_gaussian_task_from(const Vector& mean, const Matrix& cov) {
  const int d = static_cast<int>(mean.size());
  BenchmarkTask task;
  task.descriptor.kind = "gaussian";
  task.descriptor.dim = d;
  task.p0 = DistributionSpec::standard_gaussian(d);
  task.p1 = DistributionSpec::gaussian(mean, cov);
  Matrix root = sqrtm_psd(cov);
  root = 0.5 * (root + root.transpose());
  task.ground_truth = QuadraticPotential(root, mean);
  return task;
}

/// Random mean ~ N(0, I) and covariance with eigenvalues in [0.25, 4]
/// (condition number at most 16) and a random orthonormal eigenbasis.
inline BenchmarkTask make_gaussian_task(int dim, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("make_gaussian_task: dim must be >= 1");
  Rng rng(seed);
  const Vector mean = standard_normal(dim, rng);
  Eigen::HouseholderQR<Matrix> qr(standard_normal(dim, dim, rng));
  const Matrix q = qr.householderQ();
  Vector lam(dim);
  for (int i = 0; i < dim; ++i) lam[i] = std::exp(uniform(rng, std::log(0.25), std::log(4.0)));
  Matrix cov = q * lam.asDiagonal() * q.transpose();
  cov = 0.5 * (cov + cov.transpose());
  BenchmarkTask task = make_gaussian_task_from(mean, cov);
  task.descriptor.seed = seed;
  return task;
}

/// Psi*(x) = 1/2 |x|^2 + sum_k a_k softplus(<w_k, x> + c_k) with a_k >= 0,
/// stored as a one-hidden-layer input-convex network.
inline BenchmarkTask make_convex_task(int dim, std::uint64_t seed, int complexity) {
  if (dim < 1) throw std::invalid_argument("make_convex_task: dim must be >= 1");
  if (complexity < 0) throw std::invalid_argument("make_convex_task: complexity must be >= 0");
  BenchmarkTask task;
  task.descriptor.kind = "convex";
  task.descriptor.dim = dim;
  task.descriptor.seed = seed;
  task.descriptor.complexity = complexity;
  task.p0 = DistributionSpec::standard_gaussian(dim);
  if (complexity == 0) {
    task.ground_truth = QuadraticPotential::identity(dim);
  } else {
    Rng rng(seed);
    IcnnPotential psi(dim, IcnnOptions{{complexity}, Activation::softplus, 0});
    auto& net = psi.net();
    net.params().setZero();
    for (int k = 0; k < complexity; ++k) {
      const Vector w = standard_normal(dim, rng);
      net.A(0).row(k) = (2.0 / std::sqrt(double(dim))) * w.transpose();
      net.b(0)[k] = 0.5 * standard_normal(1, rng)[0];
      net.w_out()[k] = uniform(rng, 0.5, 1.5);
    }
    net.skip() = 1.0;
    task.ground_truth = std::move(psi);
  }
  task.p1 = DistributionSpec::pushforward(task.p0, *task.ground_truth);
  return task;
}

/// p0 = N(0, I) in 2D, p1 = eight Gaussians on a circle; no known map.
inline BenchmarkTask make_eight_gaussians_task(double radius = 4.0, double sigma = 0.3) {
  BenchmarkTask task;
  task.descriptor.kind = "eight_gaussians";
  task.descriptor.radius = radius;
  task.descriptor.sigma = sigma;
  task.p0 = DistributionSpec::standard_gaussian(2);
  task.p1 = DistributionSpec::eight_gaussians(radius, sigma);
  return task;
}

inline BenchmarkTask make_task(const TaskDescriptor& d) {
  d.validate();
  BenchmarkTask task;
  if (d.kind == "gaussian")
    task = make_gaussian_task(d.dim, d.seed);
  else if (d.kind == "convex")
    task = make_convex_task(d.dim, d.seed, d.complexity);
  else
    task = make_eight_gaussians_task(d.radius, d.sigma);
  task.descriptor = d;
  task.eval_samples = d.eval_samples;
  return task;
}

/// A map applied to the rows of a matrix.
using MapFn = std::function<Matrix(const Matrix&)>;

template <ConvexPotential P>
MapFn gradient_map(const P& psi, int workers = 1) {
  return [psi, workers](const Matrix& x) { return transport_rows(psi, x, workers); };
}

struct MetricsReport {
  double l2_uvp = 0.0;       // percent
  double l2_uvp_se = 0.0;    // Monte-Carlo standard error of l2_uvp
  double cosine = kMissing;  // NaN when undefined (zero displacement)
  Eigen::Index samples = 0;
  std::uint64_t seed = 0;
};

namespace detail {

inline double total_variance(const Matrix& y) {
  const Matrix centered = y.rowwise() - y.colwise().mean();
  return centered.squaredNorm() / double(y.rows() - 1);
}

inline double cosine_of(const Matrix& d, const Matrix& d_star) {
  const double nd = d.squaredNorm(), ns = d_star.squaredNorm();
  const double scale = double(d.rows());
  if (nd / scale < 1e-24 || ns / scale < 1e-24)
    throw UndefinedMetricError("cosine: displacement T - id vanishes, direction undefined");
  return std::clamp((d.array() * d_star.array()).sum() / std::sqrt(nd * ns), -1.0, 1.0);
}

}  // namespace detail

/// 100 * |T - T*|^2_{L2(p0)} / Var(p1) with Var the trace of the covariance
/// of p1 = T*#p0, both estimated on the same eval samples.
inline MetricsReport l2_uvp(const MapFn& t, const BenchmarkTask& task, std::uint64_t seed) {
  if (!task.ground_truth) throw UndefinedMetricError("l2_uvp: task has no ground-truth map");
  Rng rng(seed);
  const Matrix x0 = sample(task.p0, task.eval_samples, rng);
  const Matrix y_star = transport_rows(*task.ground_truth, x0);
  const Matrix y = t(x0);
  check_dim(y.rows(), x0.rows(), "l2_uvp map output");
  check_dim(y.cols(), x0.cols(), "l2_uvp map output");
  const double var = detail::total_variance(y_star);
  if (var < 1e-12) throw UndefinedMetricError("l2_uvp: target variance below 1e-12");
  const Vector err = (y - y_star).rowwise().squaredNorm();
  const double n = double(err.size());
  MetricsReport r;
  r.samples = x0.rows();
  r.seed = seed;
  r.l2_uvp = 100.0 * err.mean() / var;
  r.l2_uvp_se = 100.0 * std::sqrt((err.array() - err.mean()).square().sum() / (n - 1) / n) / var;
  return r;
}

/// cos(T - id, T* - id) in L2(p0).
inline double cosine_metric(const MapFn& t, const BenchmarkTask& task, std::uint64_t seed) {
  if (!task.ground_truth) throw UndefinedMetricError("cosine: task has no ground-truth map");
  Rng rng(seed);
  const Matrix x0 = sample(task.p0, task.eval_samples, rng);
  return detail::cosine_of(t(x0) - x0, transport_rows(*task.ground_truth, x0) - x0);
}

/// Both metrics on one set of samples; cosine stays NaN where undefined.
inline MetricsReport evaluate(const MapFn& t, const BenchmarkTask& task, std::uint64_t seed) {
  MetricsReport r = l2_uvp(t, task, seed);
  try {
    r.cosine = cosine_metric(t, task, seed);
  } catch (const UndefinedMetricError&) {
    r.cosine = kMissing;
  }
  return r;
}

/// Map difference |T_a - T_b|^2_{L2(p0)} / Var(p1) in percent, for tasks
/// with or without a ground truth (Var from p1 samples).
inline double map_difference(const MapFn& a, const MapFn& b, const BenchmarkTask& task, std::uint64_t seed) {
  Rng rng(seed);
  const Matrix x0 = sample(task.p0, task.eval_samples, rng);
  const Matrix x1 = sample(task.p1, task.eval_samples, rng);
  const double var = detail::total_variance(x1);
  if (var < 1e-12) throw UndefinedMetricError("map_difference: target variance below 1e-12");
  return 100.0 * (a(x0) - b(x0)).rowwise().squaredNorm().mean() / var;
}

/// Affine map matching the sample mean and covariance of p1: the Gaussian OT
/// map between the two moment-matched Gaussians, as a quadratic potential.
inline QuadraticPotential fit_linear_baseline(const Matrix& x0, const Matrix& x1) {
  check_dim(x0.cols(), x1.cols(), "linear baseline");
  const Vector m0 = x0.colwise().mean(), m1 = x1.colwise().mean();
  const Matrix c0 = (x0.rowwise() - m0.transpose()).transpose() * (x0.rowwise() - m0.transpose()) / double(x0.rows() - 1);
  const Matrix c1 = (x1.rowwise() - m1.transpose()).transpose() * (x1.rowwise() - m1.transpose()) / double(x1.rows() - 1);
  const Matrix r0 = sqrtm_psd(c0);
  Eigen::SelfAdjointEigenSolver<Matrix> es(c0);
  const Matrix r0_inv = es.eigenvectors() * es.eigenvalues().cwiseMax(1e-300).cwiseSqrt().cwiseInverse().asDiagonal() *
                        es.eigenvectors().transpose();
  Matrix a = r0_inv * sqrtm_psd(r0 * c1 * r0) * r0_inv;
  a = 0.5 * (a + a.transpose());
  return QuadraticPotential(a, m1 - a * m0);
}

inline QuadraticPotential fit_linear_baseline(const BenchmarkTask& task, Eigen::Index n, Rng& rng) {
  return fit_linear_baseline(sample(task.p0, n, rng), sample(task.p1, n, rng));
}

struct Lemma2Result {
  double lhs = 0.0;  // time integral of the OFM integrand
  double rhs = 0.0;  // 2 [Psi(x0) + Psi*(x1) - <x0, x1>]
  double residual = 0.0;
  bool converged = true;
};

/// Checks that the time integral of |(z0(t) - x0) / t|^2 (n-point
/// Gauss-Legendre rule) equals 2 [Psi(x0) + Psi*(x1) - <x0, x1>].
template <ConvexPotential P>
Lemma2Result lemma2_check(const P& psi, const Vector& x0, const Vector& x1, int n = 256,
                          InversionOptions opt = {}) {
  if (opt.tol_grad <= 0.0) opt.tol_grad = 1e-12;
  opt.max_iterations = std::max(opt.max_iterations, 200);
  const auto rule = gauss_legendre(n);
  const PairedBatch pair = pair_independent(x0.transpose(), x1.transpose());
  Lemma2Result r;
  r.lhs = ofm_loss_time_averaged(psi, pair, rule, opt);
  const auto c = conjugate(psi, x1, opt);
  r.converged = c.converged;
  r.rhs = 2.0 * (psi.value(x0) + c.value - x0.dot(x1));
  r.residual = std::abs(r.lhs - r.rhs) / std::max(std::abs(r.rhs), 1e-12);
  return r;
}

}  // namespace ofm

#endif  // OFM_BENCHMARK_HPP
