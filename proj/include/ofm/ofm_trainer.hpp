#ifndef OFM_OFM_TRAINER_HPP
#define OFM_OFM_TRAINER_HPP

// Optimal Flow Matching: fit a convex potential Psi so that the straight paths
// z_t = (1 - t) z_0 + t grad Psi(z_0) explain the interpolants of a plan.
//
// Per batch item the loss is |(z_0 - x_0) / t|^2 where z_0 inverts the flow
// map at x_t. Its parameter gradient equals that of <v, grad Psi_theta(z_0)>
// with z_0 and v = 2 (t H + (1 - t) I)^{-1} (x_0 - z_0) / t held constant,
// H the Hessian of Psi at z_0 (implicit differentiation of the inversion).

#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ofm/core.hpp"
#include "ofm/inversion.hpp"
#include "ofm/metrics_log.hpp"
#include "ofm/optim.hpp"
#include "ofm/parallel.hpp"
#include "ofm/plans.hpp"
#include "ofm/potential.hpp"
#include "ofm/quadrature.hpp"

namespace ofm {

enum class HessianSolve { automatic, dense, conjugate_gradient };

inline HessianSolve parse_hessian_solve(std::string_view s) {
  if (s == "auto" || s == "automatic") return HessianSolve::automatic;
  if (s == "dense") return HessianSolve::dense;
  if (s == "cg" || s == "conjugate-gradient") return HessianSolve::conjugate_gradient;
  throw ConfigError("unknown hessian solve '" + std::string(s) + "'");
}

inline std::string to_string(HessianSolve h) {
  switch (h) {
    case HessianSolve::automatic: return "auto";
    case HessianSolve::dense: return "dense";
    case HessianSolve::conjugate_gradient: return "cg";
  }
  return "?";
}

/// The linear system t H + (1 - t) I was not positive definite.
class SingularSystemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training stopped because too many subproblems failed to converge.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  long iterations = 30000;
  int batch_size = 1024;
  double learning_rate = 1e-3;
  double ema_decay = 0.999;
  double epsilon = 1e-3;  // times are drawn from U[epsilon, 1 - epsilon]
  PairingTag plan = PairingTag::independent;
  Eigen::Index minibatch_size = 64;
  InversionOptions subproblem;
  HessianSolve hessian_solve = HessianSolve::automatic;
  std::uint64_t seed = 0;
  int workers = 1;
  long log_interval = 100;
  bool log_dual = false;  // dual OT loss on the logged batch (one conjugate per item)
  // amortized initializer for the subproblem solver
  bool amortize = false;
  std::vector<int> amortizer_hidden{128, 128};
  double amortizer_learning_rate = 1e-3;
  // abort when the failed-subproblem rate over the last `failure_window`
  // iterations exceeds `max_failure_rate`
  double max_failure_rate = 0.1;
  long failure_window = 100;

  void validate() const {
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay must lie in [0, 1)");
    if (!(epsilon > 0.0 && epsilon < 0.5)) throw ConfigError("epsilon must lie in (0, 0.5)");
    if (minibatch_size < 1 || minibatch_size > kMaxAssignmentBatch)
      throw ConfigError("minibatch_size must lie in [1, 512]");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (log_interval < 1) throw ConfigError("log_interval must be >= 1");
    if (!(max_failure_rate >= 0.0 && max_failure_rate <= 1.0)) throw ConfigError("max_failure_rate must lie in [0, 1]");
    if (failure_window < 1) throw ConfigError("failure_window must be >= 1");
    subproblem.validate();
  }

  InversionOptions inversion() const {
    InversionOptions o = subproblem;
    o.epsilon = epsilon;
    return o;
  }
};

struct LossReport {
  long iteration = 0;
  double ofm_loss = 0.0;   // batch mean of |(z0 - x0) / t|^2 before the step
  double surrogate = 0.0;  // batch mean of <v, grad Psi(z0)>
  std::optional<double> dual_ot_loss;
  int subproblems = 0;
  int failures = 0;  // subproblems that stopped before the gradient tolerance
  double mean_sub_iterations = 0.0;
  double grad_norm = 0.0;  // norm of the parameter gradient
};

/// Straight-line inference: T(x0) = grad Psi(x0), no ODE solve.
template <ConvexPotential P>
Vector transport(const P& psi, const Vector& x0) {
  return psi.gradient(x0);
}

/// Point on the generated path at time t.
template <ConvexPotential P>
Vector trajectory_point(const P& psi, const Vector& x0, double t) {
  return (1.0 - t) * x0 + t * psi.gradient(x0);
}

/// Transport every row of x0.
template <ConvexPotential P>
Matrix transport_rows(const P& psi, const Matrix& x0, int workers = 1) {
  check_dim(x0.cols(), psi.dim(), "transport");
  if constexpr (std::same_as<P, IcnnPotential>) {
    // one batched sweep per worker chunk
    Matrix out(x0.rows(), x0.cols());
    const std::size_t chunk = 256;
    const std::size_t n_chunks = (static_cast<std::size_t>(x0.rows()) + chunk - 1) / chunk;
    parallel_for(n_chunks, workers, [&](std::size_t k) {
      const Eigen::Index lo = static_cast<Eigen::Index>(k * chunk);
      const Eigen::Index len = std::min<Eigen::Index>(chunk, x0.rows() - lo);
      const Matrix xs = x0.middleRows(lo, len).transpose();
      ScalarNetCache<Matrix> c;
      psi.net().forward(xs, c);
      out.middleRows(lo, len) = psi.net().input_gradient(xs, c).transpose();
    });
    return out;
  } else {
    Matrix out(x0.rows(), x0.cols());
    parallel_for(static_cast<std::size_t>(x0.rows()), workers, [&](std::size_t i) {
      const auto r = static_cast<Eigen::Index>(i);
      out.row(r) = psi.gradient(x0.row(r).transpose()).transpose();
    });
    return out;
  }
}

struct SubproblemStats {
  int solved = 0;
  int failures = 0;
  double mean_iterations = 0.0;
};

namespace detail {

inline void check_times(const PairedBatch& batch, const Vector& times) {
  check_dim(times.size(), batch.size(), "times");
  for (Eigen::Index i = 0; i < times.size(); ++i)
    if (!(times[i] > 0.0 && times[i] < 1.0)) throw std::invalid_argument("OFM loss: times must lie in (0, 1)");
}

// z0 for every batch item, as columns; fills stats.
template <ConvexPotential P>
Matrix solve_subproblems(const P& psi, const PairedBatch& batch, const Vector& times, const InversionOptions& opt,
                         int workers, SubproblemStats& stats, const AmortizerNet* amortizer = nullptr) {
  const Eigen::Index b = batch.size();
  Matrix z0(batch.dim(), b);
  std::vector<int> iters(static_cast<std::size_t>(b)), ok(static_cast<std::size_t>(b));
  parallel_for(static_cast<std::size_t>(b), workers, [&](std::size_t k) {
    const auto i = static_cast<Eigen::Index>(k);
    const double t = times[i];
    const Vector xt = (1.0 - t) * batch.x0.row(i).transpose() + t * batch.x1.row(i).transpose();
    InversionResult r;
    if (amortizer) {
      const Vector init = amortizer->predict(xt, t);
      r = invert_flow_map(psi, xt, t, opt, &init);
    } else {
      r = invert_flow_map(psi, xt, t, opt);
    }
    z0.col(i) = r.z0;
    iters[k] = r.iterations;
    ok[k] = r.converged && r.z0.allFinite();
  });
  stats.solved = static_cast<int>(b);
  stats.failures = 0;
  double it_sum = 0.0;
  for (std::size_t k = 0; k < iters.size(); ++k) {
    stats.failures += ok[k] ? 0 : 1;
    it_sum += iters[k];
  }
  stats.mean_iterations = it_sum / static_cast<double>(b);
  return z0;
}

// Conjugate gradients for (t H + (1 - t) I) v = r using Hessian-vector products.
template <ConvexPotential P>
Vector cg_solve(const P& psi, const Vector& z, double t, const Vector& r) {
  Vector x = Vector::Zero(r.size()), res = r, p = r;
  double rr = res.squaredNorm();
  const double stop = 1e-24 * std::max(rr, 1e-300);
  for (Eigen::Index k = 0; k < 2 * r.size() + 10 && rr > stop; ++k) {
    const Vector ap = t * psi.hvp(z, p) + (1.0 - t) * p;
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) throw SingularSystemError("OFM step: system matrix is not positive definite");
    const double alpha = rr / pap;
    x += alpha * p;
    res -= alpha * ap;
    const double rr_new = res.squaredNorm();
    p = res + (rr_new / rr) * p;
    rr = rr_new;
  }
  return x;
}

}  // namespace detail

/// Per-item values |(z0 - x0) / t|^2 with z0 from the flow-map inversion.
template <ConvexPotential P>
Vector ofm_loss_terms(const P& psi, const PairedBatch& batch, const Vector& times, const InversionOptions& opt = {},
                      int workers = 1, SubproblemStats* stats = nullptr) {
  check_dim(batch.dim(), psi.dim(), "ofm_loss");
  detail::check_times(batch, times);
  SubproblemStats s;
  const Matrix z0 = detail::solve_subproblems(psi, batch, times, opt, workers, s);
  if (stats) *stats = s;
  Vector terms(batch.size());
  for (Eigen::Index i = 0; i < batch.size(); ++i)
    terms[i] = ((z0.col(i) - batch.x0.row(i).transpose()) / times[i]).squaredNorm();
  return terms;
}

/// Batch mean of |(z0 - x0) / t|^2 (diagnostic value, no parameter gradient).
template <ConvexPotential P>
double ofm_loss(const P& psi, const PairedBatch& batch, const Vector& times, const InversionOptions& opt = {},
                int workers = 1, SubproblemStats* stats = nullptr) {
  return ofm_loss_terms(psi, batch, times, opt, workers, stats).mean();
}

/// OFM loss integrated over time with a quadrature rule instead of sampled
/// times: sum_k w_k ofm_loss(t_k) on a fixed batch.
template <ConvexPotential P>
double ofm_loss_time_averaged(const P& psi, const PairedBatch& batch, const QuadratureRule& rule,
                              InversionOptions opt = {}, int workers = 1) {
  opt.epsilon = std::min(opt.epsilon, 1.0 - rule.nodes.maxCoeff());
  double s = 0.0;
  for (Eigen::Index k = 0; k < rule.nodes.size(); ++k)
    s += rule.weights[k] * ofm_loss(psi, batch, Vector::Constant(batch.size(), rule.nodes[k]), opt, workers);
  return s;
}

struct DualOtEstimate {
  double value = 0.0;  // mean of Psi(x0) + Psi*(x1) over kept pairs
  int excluded = 0;    // pairs dropped because the conjugate diverged
};

/// Monte-Carlo estimate of the dual OT objective E Psi(x0) + E Psi*(x1).
template <ConvexPotential P>
DualOtEstimate dual_ot_loss(const P& psi, const PairedBatch& batch, const InversionOptions& opt = {},
                            int workers = 1) {
  check_dim(batch.dim(), psi.dim(), "dual_ot_loss");
  const auto n = static_cast<std::size_t>(batch.size());
  std::vector<double> terms(n);
  std::vector<char> keep(n);
  parallel_for(n, workers, [&](std::size_t k) {
    const auto i = static_cast<Eigen::Index>(k);
    const auto c = conjugate(psi, batch.x1.row(i).transpose(), opt);
    keep[k] = !c.diverged;
    terms[k] = psi.value(batch.x0.row(i).transpose()) + c.value;
  });
  DualOtEstimate e;
  double sum = 0.0;
  int kept = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!keep[k]) {
      ++e.excluded;
      continue;
    }
    sum += terms[k];
    ++kept;
  }
  e.value = kept > 0 ? sum / kept : kMissing;
  return e;
}

/// Distance between the straight fields of Psi and Psi*, evaluated as the
/// difference of the two OFM losses on the same batch and times.
template <ConvexPotential P, ConvexPotential Q>
double ofm_distance(const P& psi, const Q& psi_star, const PairedBatch& batch, const Vector& times,
                    const InversionOptions& opt = {}, int workers = 1) {
  return ofm_loss(psi, batch, times, opt, workers) - ofm_loss(psi_star, batch, times, opt, workers);
}

struct GradientResult {
  Vector grad;  // d/dtheta of the batch OFM loss
  LossReport report;
  Matrix z0;    // columns
};

/// Parameter gradient of the batch OFM loss via the NO-GRAD surrogate.
inline GradientResult ofm_gradient(const IcnnPotential& psi, const PairedBatch& batch, const Vector& times,
                                   const InversionOptions& opt = {}, HessianSolve solve = HessianSolve::automatic,
                                   int workers = 1, const AmortizerNet* amortizer = nullptr) {
  const int d = psi.dim();
  check_dim(batch.dim(), d, "ofm_gradient");
  detail::check_times(batch, times);
  if (solve == HessianSolve::dense && d > kDenseHessianLimit)
    throw ConfigError("dense Hessian solve requested above dimension 512");
  const bool dense = solve == HessianSolve::dense || (solve == HessianSolve::automatic && d <= kDenseHessianLimit);
  const Eigen::Index b = batch.size();

  GradientResult out;
  SubproblemStats stats;
  out.z0 = detail::solve_subproblems(psi, batch, times, opt, workers, stats, amortizer);
  Matrix v(d, b);
  std::vector<double> sq(static_cast<std::size_t>(b));
  std::vector<std::string> errors(static_cast<std::size_t>(b));
  parallel_for(static_cast<std::size_t>(b), workers, [&](std::size_t k) {
    const auto i = static_cast<Eigen::Index>(k);
    const double t = times[i];
    const Vector z = out.z0.col(i);
    const Vector r = (batch.x0.row(i).transpose() - z) / t;
    sq[k] = r.squaredNorm();
    if (dense) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(hessian(psi, z));
      const Vector lam = t * es.eigenvalues().array() + (1.0 - t);
      if (psi.is_convex() && lam.minCoeff() < (1.0 - t) - 1e-8) {
        std::ostringstream os;
        os << "OFM step: min eigenvalue " << lam.minCoeff() << " below " << (1.0 - t) << " at t = " << t;
        errors[k] = os.str();
        return;
      }
      if (lam.minCoeff() <= 0.0) {
        errors[k] = "OFM step: system matrix is not positive definite";
        return;
      }
      v.col(i) = 2.0 * es.eigenvectors() * ((es.eigenvectors().transpose() * r).array() / lam.array()).matrix();
    } else {
      v.col(i) = 2.0 * detail::cg_solve(psi, z, t, r);
    }
  });
  for (const auto& e : errors)
    if (!e.empty()) throw SingularSystemError(e);

  ScalarNetCache<Matrix> c;
  psi.net().forward(out.z0, c);
  out.grad = psi.net().param_grad_directional(out.z0, v, c) / static_cast<double>(b);
  const Matrix g = psi.net().input_gradient(out.z0, c);

  LossReport& rep = out.report;
  double loss = 0.0;
  for (double s : sq) loss += s;
  rep.ofm_loss = loss / static_cast<double>(b);
  rep.surrogate = (v.array() * g.array()).sum() / static_cast<double>(b);
  rep.subproblems = stats.solved;
  rep.failures = stats.failures;
  rep.mean_sub_iterations = stats.mean_iterations;
  rep.grad_norm = out.grad.norm();
  return out;
}

/// One training step: gradient, optimizer update, convexity projection and EMA.
template <class Opt>
LossReport ofm_grad_step(IcnnPotential& psi, const PairedBatch& batch, const Vector& times, Opt& optimizer,
                         EmaShadow* ema = nullptr, const InversionOptions& opt = {},
                         HessianSolve solve = HessianSolve::automatic, int workers = 1,
                         const AmortizerNet* amortizer = nullptr) {
  GradientResult g = ofm_gradient(psi, batch, times, opt, solve, workers, amortizer);
  optimizer.step(psi.params(), g.grad);
  psi.project_convex();
  if (ema) ema->update(psi.params());
  return g.report;
}

struct OfmTrainResult {
  IcnnPotential potential;  // EMA weights, used for evaluation
  IcnnPotential last;       // raw weights after the final step
  std::vector<MetricsRow> trace;
  std::vector<std::pair<long, double>> timings;
  std::optional<AmortizerNet> amortizer;
};

/// Called at every logged iteration with the current EMA potential; fills the
/// ground-truth columns of the row when the task has them.
using EvalHook = std::function<void(const IcnnPotential&, MetricsRow&)>;

/// The full training loop: K steps on fresh plan batches and uniform times.
inline OfmTrainResult train_ofm(IcnnPotential psi, const PlanSampler& plan, const TrainConfig& cfg,
                                const EvalHook& hook = {}) {
  cfg.validate();
  check_dim(plan.p0.dim, psi.dim(), "train_ofm plan");
  PlanSampler sampler = plan;
  sampler.kind = cfg.plan;
  sampler.minibatch_size = cfg.minibatch_size;
  const InversionOptions inv = cfg.inversion();

  Rng rng(cfg.seed);
  Adam adam(cfg.learning_rate);
  EmaShadow ema(psi.params(), cfg.ema_decay);
  std::optional<AmortizerNet> amortizer;
  std::optional<Adam> amortizer_opt;
  if (cfg.amortize) {
    Rng arng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    amortizer = AmortizerNet::random(psi.dim(), arng, cfg.amortizer_hidden);
    amortizer_opt.emplace(cfg.amortizer_learning_rate);
  }

  OfmTrainResult res;
  std::deque<std::pair<int, int>> window;  // (failures, solved) per iteration
  long win_fail = 0, win_total = 0;
  const auto start = std::chrono::steady_clock::now();

  auto log_row = [&](long it, const LossReport* rep, const PairedBatch* batch) {
    MetricsRow row;
    row.iteration = it;
    row.method = "ofm";
    IcnnPotential current = psi;
    current.set_params(ema.shadow());
    if (rep) {
      row.loss = rep->surrogate;
      row.ofm_loss = rep->ofm_loss;
      row.sub_converged = 1.0 - double(rep->failures) / std::max(rep->subproblems, 1);
      row.sub_iterations = rep->mean_sub_iterations;
      if (cfg.log_dual && batch) row.dual_ot_loss = dual_ot_loss(current, *batch, inv, cfg.workers).value;
    }
    if (hook) hook(current, row);
    res.trace.push_back(row);
    res.timings.emplace_back(it, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  };

  for (long it = 0; it < cfg.iterations; ++it) {
    const PairedBatch batch = sampler.sample_batch(cfg.batch_size, rng);
    Vector times(cfg.batch_size);
    for (int i = 0; i < cfg.batch_size; ++i) times[i] = uniform(rng, cfg.epsilon, 1.0 - cfg.epsilon);

    GradientResult g = ofm_gradient(psi, batch, times, inv, cfg.hessian_solve, cfg.workers,
                                    amortizer ? &*amortizer : nullptr);
    adam.step(psi.params(), g.grad);
    psi.project_convex();
    ema.update(psi.params());
    if (amortizer) {
      Matrix xt(cfg.batch_size, psi.dim());
      for (int i = 0; i < cfg.batch_size; ++i)
        xt.row(i) = (1.0 - times[i]) * batch.x0.row(i) + times[i] * batch.x1.row(i);
      train_amortizer(*amortizer, *amortizer_opt, xt, times, g.z0.transpose());
    }
    LossReport& rep = g.report;
    rep.iteration = it + 1;

    window.emplace_back(rep.failures, rep.subproblems);
    win_fail += rep.failures;
    win_total += rep.subproblems;
    if (static_cast<long>(window.size()) > cfg.failure_window) {
      win_fail -= window.front().first;
      win_total -= window.front().second;
      window.pop_front();
    }
    if (static_cast<long>(window.size()) == std::min(cfg.failure_window, cfg.iterations) &&
        double(win_fail) > cfg.max_failure_rate * double(win_total)) {
      std::ostringstream os;
      os << "training aborted at iteration " << it + 1 << ": " << win_fail << " of " << win_total
         << " subproblems failed to converge over the last " << window.size() << " iterations";
      throw TrainingAborted(os.str());
    }
    if ((it + 1) % cfg.log_interval == 0 || it + 1 == cfg.iterations) log_row(it + 1, &rep, &batch);
  }
  if (cfg.iterations == 0) log_row(0, nullptr, nullptr);

  res.last = psi;
  psi.set_params(ema.shadow());
  res.potential = std::move(psi);
  res.amortizer = std::move(amortizer);
  return res;
}

}  // namespace ofm

#endif  // OFM_OFM_TRAINER_HPP
