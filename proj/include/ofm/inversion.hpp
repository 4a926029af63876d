#ifndef OFM_INVERSION_HPP
#define OFM_INVERSION_HPP

// Flow-map inversion and convex conjugation.
//
// A point x_t on the straight path z_t = (1-t) z_0 + t grad Psi(z_0) determines
// z_0 as the unique minimizer of the (1-t)-strongly convex
//
//   F(z) = (1-t)/2 |z|^2 + t Psi(z) - <x_t, z>,
//
// and the conjugate Psi*(y) = sup_x <y, x> - Psi(x) is attained where
// grad Psi(x) = y. Both are solved with L-BFGS.

#include <cmath>
#include <sstream>

#include "ofm/lbfgs.hpp"
#include "ofm/mlp.hpp"
#include "ofm/optim.hpp"
#include "ofm/potential.hpp"

namespace ofm {

struct InversionOptions {
  /// Gradient-norm stopping threshold; non-positive selects 1e-8 * sqrt(D).
  double tol_grad = 0.0;
  int max_iterations = 50;
  int memory = 10;
  /// Times are restricted to [0, 1 - epsilon].
  double epsilon = 1e-3;
  double divergence_bound = 1e6;

  double tolerance(int dim) const { return tol_grad > 0.0 ? tol_grad : 1e-8 * std::sqrt(double(dim)); }

  void validate() const {
    if (max_iterations < 1) throw ConfigError("subproblem max_iterations must be >= 1");
    if (memory < 1) throw ConfigError("subproblem memory must be >= 1");
    if (!(epsilon >= 0.0 && epsilon < 0.5)) throw ConfigError("epsilon must lie in [0, 0.5)");
    if (!(divergence_bound > 0.0)) throw ConfigError("divergence_bound must be positive");
  }

  LbfgsOptions lbfgs(int dim) const {
    LbfgsOptions o;
    o.max_iterations = max_iterations;
    o.memory = memory;
    o.tol_grad = tolerance(dim);
    o.divergence_bound = divergence_bound;
    return o;
  }
};

struct InversionResult {
  Vector z0;
  double grad_norm_final = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct ConjugateResult {
  double value = 0.0;
  Vector argmax;
  double grad_norm_final = 0.0;
  int iterations = 0;
  bool converged = false;
  bool diverged = false;
};

/// Recover z_0 with (1-t) z_0 + t grad Psi(z_0) = x_t, starting from `init`
/// (x_t when null).
template <ConvexPotential P>
InversionResult invert_flow_map(const P& psi, const Vector& x_t, double t, const InversionOptions& opt = {},
                                const Vector* init = nullptr) {
  const int d = psi.dim();
  check_dim(x_t.size(), d, "invert_flow_map");
  if (!(t >= 0.0 && t <= 1.0 - opt.epsilon)) {
    std::ostringstream os;
    os << "invert_flow_map: t = " << t << " outside [0, " << 1.0 - opt.epsilon << "]";
    throw std::invalid_argument(os.str());
  }
  InversionResult res;
  if (t == 0.0) {
    res.z0 = x_t;
    res.converged = true;
    return res;
  }
  const double a = 1.0 - t;
  Vector gpsi(d);
  auto fg = [&](const Vector& z, Vector& g) {
    const double v = psi.value_and_gradient(z, gpsi);
    g = a * z + t * gpsi - x_t;
    return 0.5 * a * z.squaredNorm() + t * v - x_t.dot(z);
  };
  LbfgsResult r = lbfgs_minimize(fg, init ? *init : x_t, opt.lbfgs(d));
  res.z0 = std::move(r.x);
  res.grad_norm_final = r.grad_norm;
  res.iterations = r.iterations;
  res.converged = r.converged;
  return res;
}

/// Psi*(y) by maximizing <y, z> - Psi(z), started at y.
template <ConvexPotential P>
ConjugateResult conjugate(const P& psi, const Vector& y, const InversionOptions& opt = {}) {
  const int d = psi.dim();
  check_dim(y.size(), d, "conjugate");
  auto fg = [&](const Vector& z, Vector& g) {
    const double v = psi.value_and_gradient(z, g);
    g -= y;
    return v - y.dot(z);
  };
  LbfgsResult r = lbfgs_minimize(fg, y, opt.lbfgs(d));
  ConjugateResult res;
  res.argmax = std::move(r.x);
  res.value = y.dot(res.argmax) - psi.value(res.argmax);
  res.grad_norm_final = r.grad_norm;
  res.iterations = r.iterations;
  res.diverged = r.diverged || !std::isfinite(res.value);
  res.converged = r.converged && !res.diverged;
  return res;
}

/// Amortized initializer A_phi(x_t, t) for the inversion subproblem: a plain
/// feed-forward net with the time appended as an extra input coordinate.
class AmortizerNet {
 public:
  AmortizerNet() = default;
  AmortizerNet(int dim, std::vector<int> hidden = {128, 128}, Activation act = Activation::relu)
      : dim_(dim), net_(dim + 1, dim, std::move(hidden), act) {}

  static AmortizerNet random(int dim, Rng& rng, std::vector<int> hidden = {128, 128}) {
    AmortizerNet a(dim, std::move(hidden));
    a.net_.initialize(rng);
    return a;
  }

  int dim() const { return dim_; }
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

  Vector predict(const Vector& x_t, double t) const {
    check_dim(x_t.size(), dim_, "amortizer");
    Vector in(dim_ + 1);
    in << x_t, t;
    return net_.forward(in);
  }

  /// Batched prediction; rows of x_t are samples.
  Matrix predict(const Matrix& x_t, const Vector& t) const {
    check_dim(x_t.cols(), dim_, "amortizer");
    return net_.forward(append_time(x_t.transpose(), t)).transpose();
  }

 private:
  int dim_ = 1;
  Mlp net_;
};

template <ConvexPotential P>
InversionResult amortized_invert(const P& psi, const AmortizerNet& amortizer, const Vector& x_t, double t,
                                 const InversionOptions& opt = {}) {
  const Vector init = amortizer.predict(x_t, t);
  return invert_flow_map(psi, x_t, t, opt, &init);
}

/// One optimizer step on the amortizer for L = (1/B) sum |A(x_t, t) - z0|^2.
/// Returns the loss at the parameters before the step.
template <class Opt>
double train_amortizer(AmortizerNet& amortizer, Opt& optimizer, const Matrix& x_t, const Vector& t,
                       const Matrix& z0) {
  check_dim(x_t.rows(), t.size(), "train_amortizer times");
  check_dim(z0.rows(), x_t.rows(), "train_amortizer targets");
  const double b = static_cast<double>(x_t.rows());
  Mlp::Cache cache;
  const Matrix pred = amortizer.net().forward(append_time(x_t.transpose(), t), &cache);
  const Matrix diff = pred - z0.transpose();
  const double loss = diff.squaredNorm() / b;
  const Vector g = amortizer.net().backward(cache, (2.0 / b) * diff);
  optimizer.step(amortizer.net().params(), g);
  return loss;
}

}  // namespace ofm

#endif  // OFM_INVERSION_HPP
