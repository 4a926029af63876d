#ifndef OFM_BASELINES_HPP
#define OFM_BASELINES_HPP

// Comparison trainers built on plain flow matching: regress a time-dependent
// field onto x1 - x0 along straight interpolants of a plan, then generate by
// integrating the ODE. Covers vanilla FM (independent plan), OT-CFM (minibatch
// OT plan), Rectified Flow rounds and c-RF (field restricted to gradients).

#include <chrono>
#include <concepts>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ofm/core.hpp"
#include "ofm/inversion.hpp"
#include "ofm/metrics_log.hpp"
#include "ofm/mlp.hpp"
#include "ofm/ode.hpp"
#include "ofm/optim.hpp"
#include "ofm/parallel.hpp"
#include "ofm/plans.hpp"
#include "ofm/scalar_net.hpp"

namespace ofm {

/// Time-dependent vector field with a trainable flat parameter vector.
template <class F>
concept TrainableField = requires(const F& f, F& g, double t, const Vector& x, const Matrix& xs, const Vector& ts) {
  { f.dim() } -> std::convertible_to<int>;
  { f.velocity(t, x) } -> std::convertible_to<Vector>;
  { f.velocity(xs, ts) } -> std::convertible_to<Matrix>;  // columns are points
  { f.fm_loss_and_grad(xs, ts, xs) } -> std::convertible_to<std::pair<double, Vector>>;
  { g.params() } -> std::same_as<Vector&>;
};

/// u_theta(x, t): feed-forward net on R^(D+1) with time as the last input.
class TimeField {
 public:
  TimeField() = default;
  TimeField(int dim, std::vector<int> hidden = {128, 128, 64}, Activation act = Activation::relu)
      : dim_(dim), net_(dim + 1, dim, std::move(hidden), act) {}

  static TimeField random(int dim, Rng& rng, std::vector<int> hidden = {128, 128, 64},
                          Activation act = Activation::relu) {
    TimeField f(dim, std::move(hidden), act);
    f.net_.initialize(rng);
    return f;
  }

  int dim() const { return dim_; }
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  Vector& params() { return net_.params(); }
  const Vector& params() const { return net_.params(); }

  Vector velocity(double t, const Vector& x) const {
    check_dim(x.size(), dim_, "time field");
    Vector in(dim_ + 1);
    in << x, t;
    return net_.forward(in);
  }
  Matrix velocity(const Matrix& xs, const Vector& ts) const { return net_.forward(append_time(xs, ts)); }

  /// mean |u(x_j, t_j) - y_j|^2 and its parameter gradient.
  std::pair<double, Vector> fm_loss_and_grad(const Matrix& xs, const Vector& ts, const Matrix& targets) const {
    Mlp::Cache cache;
    const Matrix diff = net_.forward(append_time(xs, ts), &cache) - targets;
    const double b = static_cast<double>(xs.cols());
    return {diff.squaredNorm() / b, net_.backward(cache, (2.0 / b) * diff)};
  }

 private:
  int dim_ = 1;
  Mlp net_;
};

/// u_t(x) = grad_x f_theta(x, t) for a scalar network f, so the field is a
/// gradient at every time (curl-free by construction).
class ScalarTimeField {
 public:
  ScalarTimeField() = default;
  ScalarTimeField(int dim, std::vector<int> hidden = {128, 128, 64}, Activation act = Activation::softplus)
      : dim_(dim), net_(ScalarNetShape{dim + 1, std::move(hidden), act, 0, false}) {}

  static ScalarTimeField random(int dim, Rng& rng, std::vector<int> hidden = {128, 128, 64},
                                Activation act = Activation::softplus) {
    ScalarTimeField f(dim, std::move(hidden), act);
    ScalarNetInit init;
    init.output_scale = 1.0;
    init.quadratic_skip = 0.0;  // start near the zero field
    f.net_.initialize(rng, init);
    return f;
  }

  int dim() const { return dim_; }
  ScalarNet& net() { return net_; }
  const ScalarNet& net() const { return net_; }
  Vector& params() { return net_.params(); }
  const Vector& params() const { return net_.params(); }

  double potential(double t, const Vector& x) const {
    Vector in(dim_ + 1);
    in << x, t;
    return net_.value(in);
  }

  Vector velocity(double t, const Vector& x) const {
    check_dim(x.size(), dim_, "scalar time field");
    Vector in(dim_ + 1);
    in << x, t;
    return net_.gradient(in).head(dim_);
  }
  Matrix velocity(const Matrix& xs, const Vector& ts) const {
    const Matrix in = append_time(xs, ts);
    ScalarNetCache<Matrix> c;
    net_.forward(in, c);
    return net_.input_gradient(in, c).topRows(dim_);
  }

  /// The squared error |grad_x f - y|^2 differentiates to <v, d/dtheta grad f>
  /// with v = 2 (grad_x f - y) padded by 0 in the time coordinate.
  std::pair<double, Vector> fm_loss_and_grad(const Matrix& xs, const Vector& ts, const Matrix& targets) const {
    const Matrix in = append_time(xs, ts);
    ScalarNetCache<Matrix> c;
    net_.forward(in, c);
    const Matrix diff = net_.input_gradient(in, c).topRows(dim_) - targets;
    const double b = static_cast<double>(xs.cols());
    Matrix v = Matrix::Zero(dim_ + 1, xs.cols());
    v.topRows(dim_) = (2.0 / b) * diff;
    return {diff.squaredNorm() / b, net_.param_grad_directional(in, v, c)};
  }

 private:
  int dim_ = 1;
  ScalarNet net_;
};

static_assert(TrainableField<TimeField>);
static_assert(TrainableField<ScalarTimeField>);

/// The straight-path field of a convex potential, u_t(x) = grad Psi(z0) - z0
/// with z0 the inverse flow map at (x, t). Integrating it reproduces grad Psi.
template <ConvexPotential P>
class PotentialFlowField {
 public:
  explicit PotentialFlowField(const P& psi, InversionOptions opt = {}) : psi_(&psi), opt_(opt) {
    opt_.epsilon = 0.0;  // t = 1 is fine when Psi is strongly convex
    if (opt_.tol_grad <= 0.0) opt_.tol_grad = 1e-12;
    opt_.max_iterations = std::max(opt_.max_iterations, 200);
  }
  int dim() const { return psi_->dim(); }
  Vector velocity(double t, const Vector& x) const {
    const auto r = invert_flow_map(*psi_, x, t, opt_);
    return psi_->gradient(r.z0) - r.z0;
  }

 private:
  const P* psi_;
  InversionOptions opt_;
};

/// mean |u_t(x_t) - (x1 - x0)|^2 over the batch, x_t = (1 - t) x0 + t x1.
template <class F>
double fm_loss(const F& u, const PairedBatch& batch, const Vector& times) {
  check_dim(times.size(), batch.size(), "fm_loss times");
  for (Eigen::Index i = 0; i < times.size(); ++i)
    if (!(times[i] >= 0.0 && times[i] <= 1.0)) throw std::invalid_argument("fm_loss: times must lie in [0, 1]");
  const Matrix x0 = batch.x0.transpose(), x1 = batch.x1.transpose();
  const Matrix xt = x0 * (1.0 - times.array()).matrix().asDiagonal() + x1 * times.asDiagonal();
  return (u.velocity(xt, times) - (x1 - x0)).colwise().squaredNorm().mean();
}

struct FmConfig {
  long iterations = 200000;
  int batch_size = 1024;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::rmsprop;
  PairingTag plan = PairingTag::independent;
  Eigen::Index minibatch_size = 64;
  std::uint64_t seed = 0;
  long log_interval = 100;
  std::string method = "fm";  // tag written to the metrics log

  void validate() const {
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (minibatch_size < 1 || minibatch_size > kMaxAssignmentBatch)
      throw ConfigError("minibatch_size must lie in [1, 512]");
    if (log_interval < 1) throw ConfigError("log_interval must be >= 1");
    if (plan == PairingTag::ground_truth) throw ConfigError("flow matching baselines do not use a ground-truth plan");
  }
};

template <class F>
struct FmTrainResult {
  F field;
  std::vector<MetricsRow> trace;
  std::vector<std::pair<long, double>> timings;
};

/// Source of paired batches: a plan sampler or a fixed pool of pairs.
using BatchSource = std::function<PairedBatch(Eigen::Index, Rng&)>;

inline BatchSource from_plan(PlanSampler plan) {
  return [plan = std::move(plan)](Eigen::Index b, Rng& rng) { return plan.sample_batch(b, rng); };
}

/// Uniformly resample rows of a fixed pool of pairs.
inline BatchSource from_pool(PairedBatch pool) {
  return [pool = std::move(pool)](Eigen::Index b, Rng& rng) {
    std::uniform_int_distribution<Eigen::Index> pick(0, pool.size() - 1);
    PairedBatch out{Matrix(b, pool.dim()), Matrix(b, pool.dim()), pool.tag};
    for (Eigen::Index i = 0; i < b; ++i) {
      const Eigen::Index j = pick(rng);
      out.x0.row(i) = pool.x0.row(j);
      out.x1.row(i) = pool.x1.row(j);
    }
    return out;
  };
}

template <class F>
using FieldHook = std::function<void(const F&, MetricsRow&)>;

/// Stochastic minimization of the FM loss on batches from `source`.
template <TrainableField F>
FmTrainResult<F> train_fm(F u, const BatchSource& source, const FmConfig& cfg, const FieldHook<F>& hook = {}) {
  cfg.validate();
  Rng rng(cfg.seed);
  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  FmTrainResult<F> res;
  const auto start = std::chrono::steady_clock::now();
  auto log_row = [&](long it, double loss) {
    MetricsRow row;
    row.iteration = it;
    row.method = cfg.method;
    row.loss = loss;
    if (hook) hook(u, row);
    res.trace.push_back(row);
    res.timings.emplace_back(it, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  };
  for (long it = 0; it < cfg.iterations; ++it) {
    const PairedBatch batch = source(cfg.batch_size, rng);
    check_dim(batch.dim(), u.dim(), "train_fm batch");
    Vector t(cfg.batch_size);
    for (int i = 0; i < cfg.batch_size; ++i) t[i] = uniform(rng);
    const Matrix x0 = batch.x0.transpose(), x1 = batch.x1.transpose();
    const Matrix xt = x0 * (1.0 - t.array()).matrix().asDiagonal() + x1 * t.asDiagonal();
    auto [loss, grad] = u.fm_loss_and_grad(xt, t, x1 - x0);
    opt.step(u.params(), grad);
    if ((it + 1) % cfg.log_interval == 0 || it + 1 == cfg.iterations) log_row(it + 1, loss);
  }
  if (cfg.iterations == 0) log_row(0, kMissing);
  res.field = std::move(u);
  return res;
}

template <TrainableField F>
FmTrainResult<F> train_fm(F u, const PlanSampler& plan, const FmConfig& cfg, const FieldHook<F>& hook = {}) {
  PlanSampler p = plan;
  p.kind = cfg.plan;
  p.minibatch_size = cfg.minibatch_size;
  return train_fm(std::move(u), from_plan(std::move(p)), cfg, hook);
}

/// Solve dz/dt = u_t(z) from z(0) = x0 to t = 1.
template <class F>
OdeResult integrate_field(const F& u, const Vector& x0, const OdeOptions& opt, std::vector<double> sample_times = {}) {
  check_dim(x0.size(), u.dim(), "integrate");
  return integrate([&u](double t, const Vector& z) { return Vector(u.velocity(t, z)); }, x0, opt,
                   std::move(sample_times));
}

struct PushResult {
  Matrix x1;                // rows; rows of failed items are NaN
  std::vector<char> ok;     // per-row success flag
  int failures = 0;
};

namespace detail {

template <class F>
void push_one(const F& u, const Matrix& x0, Eigen::Index i, const OdeOptions& opt, PushResult& r) {
  try {
    const auto res = integrate_field(u, Vector(x0.row(i).transpose()), opt);
    r.x1.row(i) = res.final_state.transpose();
    r.ok[static_cast<std::size_t>(i)] = res.final_state.allFinite();
  } catch (const OdeError&) {
    r.x1.row(i).setConstant(kMissing);
  }
}

/// Integrate a block of rows as one stacked system using the batched
/// velocity; returns false if the joint solve failed.
template <TrainableField F>
bool push_block(const F& u, const Matrix& x0, Eigen::Index begin, Eigen::Index count, const OdeOptions& opt,
                PushResult& r) {
  const Eigen::Index d = x0.cols();
  const Matrix cols = x0.middleRows(begin, count).transpose();
  const Vector state = Eigen::Map<const Vector>(cols.data(), cols.size());
  try {
    const auto res = integrate(
        [&](double t, const Vector& z) {
          const Eigen::Map<const Matrix> zs(z.data(), d, count);
          const Matrix v = u.velocity(Matrix(zs), Vector::Constant(count, t));
          return Vector(Eigen::Map<const Vector>(v.data(), v.size()));
        },
        state, opt);
    const Eigen::Map<const Matrix> out(res.final_state.data(), d, count);
    r.x1.middleRows(begin, count) = out.transpose();
    for (Eigen::Index j = 0; j < count; ++j)
      r.ok[static_cast<std::size_t>(begin + j)] = out.col(j).allFinite();
    return true;
  } catch (const OdeError&) {
    return false;
  }
}

}  // namespace detail

/// Push every row of x0 through the flow to t = 1. Fields with a batched
/// velocity are integrated in blocks of `block` rows as one stacked system
/// (shared step sizes); a block whose solve fails falls back to per-row
/// integration so that failures are attributed to individual items.
template <class F>
PushResult push_rows(const F& u, const Matrix& x0, const OdeOptions& opt, int workers = 1,
                     Eigen::Index block = 256) {
  PushResult r;
  r.x1.resize(x0.rows(), x0.cols());
  r.ok.assign(static_cast<std::size_t>(x0.rows()), 0);
  if constexpr (TrainableField<F>) {
    const Eigen::Index n = x0.rows(), blocks = (n + block - 1) / block;
    parallel_for(static_cast<std::size_t>(blocks), workers, [&](std::size_t k) {
      const Eigen::Index begin = static_cast<Eigen::Index>(k) * block, count = std::min(block, n - begin);
      if (!detail::push_block(u, x0, begin, count, opt, r))
        for (Eigen::Index i = begin; i < begin + count; ++i) detail::push_one(u, x0, i, opt, r);
    });
  } else {
    parallel_for(static_cast<std::size_t>(x0.rows()), workers,
                 [&](std::size_t k) { detail::push_one(u, x0, static_cast<Eigen::Index>(k), opt, r); });
  }
  for (char c : r.ok) r.failures += c ? 0 : 1;
  return r;
}

/// Mean over samples and 16 uniform times of |z_t - chord_t|^2 / |z1 - z0|^2,
/// the relative deviation of each trajectory from its own chord. Items with
/// |z1 - z0| below `min_chord` are skipped.
template <class F>
double straightness(const F& u, const Matrix& x0, const OdeOptions& opt, int workers = 1,
                    double min_chord = 1e-8) {
  std::vector<double> ts(16);
  for (int k = 0; k < 16; ++k) ts[static_cast<std::size_t>(k)] = (k + 0.5) / 16.0;
  const auto n = static_cast<std::size_t>(x0.rows());
  std::vector<double> dev(n, 0.0);
  std::vector<char> used(n, 0);
  parallel_for(n, workers, [&](std::size_t k) {
    const Vector z0 = x0.row(static_cast<Eigen::Index>(k)).transpose();
    const auto r = integrate_field(u, z0, opt, ts);
    const Vector chord = r.final_state - z0;
    const double len2 = chord.squaredNorm();
    if (len2 < min_chord * min_chord) return;
    double s = 0.0;
    for (std::size_t j = 0; j < ts.size(); ++j) s += (r.samples[j] - (z0 + ts[j] * chord)).squaredNorm();
    dev[k] = s / (16.0 * len2);
    used[k] = 1;
  });
  double sum = 0.0;
  int count = 0;
  for (std::size_t k = 0; k < n; ++k)
    if (used[k]) sum += dev[k], ++count;
  if (count == 0) throw UndefinedMetricError("straightness: every trajectory has a degenerate chord");
  return sum / count;
}

struct PlanCost {
  double mean = 0.0;      // mean of 1/2 |x1 - x0|^2
  double std_error = 0.0;
  Eigen::Index count = 0;
};

inline PlanCost transport_cost(const PairedBatch& b) {
  const Vector c = 0.5 * (b.x1 - b.x0).rowwise().squaredNorm();
  PlanCost out;
  out.count = c.size();
  out.mean = c.mean();
  out.std_error = c.size() > 1 ? std::sqrt((c.array() - out.mean).square().sum() / double(c.size() - 1) / double(c.size()))
                               : 0.0;
  return out;
}

struct RectifyConfig {
  FmConfig fm;
  OdeOptions ode;
  Eigen::Index pool_size = 16384;  // pairs generated per round
  int workers = 1;
};

template <class F>
struct RectifyRound {
  FmTrainResult<F> trained;
  PairedBatch plan;  // the coupling this round was trained on (a pool)
  PlanCost cost;
  int failures = 0;
};

/// One rectification: couple fresh p0 samples with their images under the
/// flow of `u_prev`, then train `fresh` on that coupling.
template <TrainableField F>
RectifyRound<F> rectify_round(const F& u_prev, F fresh, const DistributionSpec& p0, const RectifyConfig& cfg,
                              Rng& rng, const FieldHook<F>& hook = {}) {
  const Matrix x0 = sample(p0, cfg.pool_size, rng);
  const PushResult pushed = push_rows(u_prev, x0, cfg.ode, cfg.workers);
  const Eigen::Index kept = x0.rows() - pushed.failures;
  if (kept == 0) throw OdeError("rectify_round: every integration failed");
  PairedBatch pool{Matrix(kept, x0.cols()), Matrix(kept, x0.cols()), PairingTag::independent};
  for (Eigen::Index i = 0, j = 0; i < x0.rows(); ++i) {
    if (!pushed.ok[static_cast<std::size_t>(i)]) continue;
    pool.x0.row(j) = x0.row(i);
    pool.x1.row(j) = pushed.x1.row(i);
    ++j;
  }
  RectifyRound<F> out;
  out.cost = transport_cost(pool);
  out.failures = pushed.failures;
  out.trained = train_fm(std::move(fresh), from_pool(pool), cfg.fm, hook);
  out.plan = std::move(pool);
  return out;
}

/// Rectified Flow: FM on the initial plan, then `rounds - 1` rectifications.
/// `make_field(k)` returns the fresh initial field for round k. The round-0
/// cost is measured on a pool drawn from the initial plan.
template <TrainableField F>
std::vector<RectifyRound<F>> rectified_flow(const std::function<F(int)>& make_field, const PlanSampler& plan,
                                            const RectifyConfig& cfg, int rounds,
                                            const FieldHook<F>& hook = {}) {
  if (rounds < 1) throw ConfigError("rectified flow needs at least one round");
  std::vector<RectifyRound<F>> out;
  Rng rng(cfg.fm.seed ^ 0x5bd1e995ULL);
  PlanSampler first = plan;
  first.kind = cfg.fm.plan;
  first.minibatch_size = cfg.fm.minibatch_size;
  RectifyRound<F> r0;
  r0.plan = first.sample_batch(cfg.pool_size, rng);
  r0.cost = transport_cost(r0.plan);
  FmConfig c0 = cfg.fm;
  r0.trained = train_fm(make_field(0), first, c0, hook);
  out.push_back(std::move(r0));
  for (int k = 1; k < rounds; ++k) {
    RectifyConfig ck = cfg;
    ck.fm.seed = cfg.fm.seed + static_cast<std::uint64_t>(k);
    out.push_back(rectify_round(out.back().trained.field, make_field(k), plan.p0, ck, rng, hook));
  }
  return out;
}

}  // namespace ofm

#endif  // OFM_BASELINES_HPP
