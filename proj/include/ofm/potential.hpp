#ifndef OFM_POTENTIAL_HPP
#define OFM_POTENTIAL_HPP

#include <concepts>
#include <variant>

#include "ofm/core.hpp"
#include "ofm/scalar_net.hpp"

namespace ofm {

/// A convex scalar function of a D-vector with exact first and second
/// derivative oracles.
template <class P>
concept ConvexPotential = requires(const P& p, const Vector& x, const Vector& v, Vector& g) {
  { p.dim() } -> std::convertible_to<int>;
  { p.value(x) } -> std::convertible_to<double>;
  { p.value_and_gradient(x, g) } -> std::convertible_to<double>;
  { p.gradient(x) } -> std::convertible_to<Vector>;
  { p.hvp(x, v) } -> std::convertible_to<Vector>;
};

/// Psi(x) = 1/2 x^T A x + b^T x + c with A symmetric positive semidefinite.
class QuadraticPotential {
 public:
  QuadraticPotential() = default;

  QuadraticPotential(Matrix a, Vector b, double c = 0.0) : a_(std::move(a)), b_(std::move(b)), c_(c) {
    if (a_.rows() != a_.cols()) throw DimensionError("quadratic potential: A must be square");
    check_dim(b_.size(), a_.rows(), "quadratic potential b");
    if ((a_ - a_.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw std::invalid_argument("quadratic potential: A must be symmetric");
    if (a_.rows() > 0) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(a_, Eigen::EigenvaluesOnly);
      if (es.eigenvalues().minCoeff() < -1e-10)
        throw std::invalid_argument("quadratic potential: A must be positive semidefinite");
    }
  }

  static QuadraticPotential identity(int d) { return {Matrix::Identity(d, d), Vector::Zero(d), 0.0}; }

  int dim() const { return static_cast<int>(a_.rows()); }
  const Matrix& a() const { return a_; }
  const Vector& b() const { return b_; }
  double c() const { return c_; }

  double value(const Vector& x) const {
    check_dim(x.size(), dim(), "quadratic potential");
    return 0.5 * x.dot(a_ * x) + b_.dot(x) + c_;
  }
  double value_and_gradient(const Vector& x, Vector& g) const {
    check_dim(x.size(), dim(), "quadratic potential");
    g.noalias() = a_ * x;
    const double v = 0.5 * x.dot(g) + b_.dot(x) + c_;
    g += b_;
    return v;
  }
  Vector gradient(const Vector& x) const {
    check_dim(x.size(), dim(), "quadratic potential");
    return a_ * x + b_;
  }
  Vector hvp(const Vector& x, const Vector& v) const {
    check_dim(x.size(), dim(), "quadratic potential");
    check_dim(v.size(), dim(), "quadratic potential direction");
    return a_ * v;
  }

 private:
  Matrix a_;
  Vector b_;
  double c_ = 0.0;
};

struct IcnnOptions {
  std::vector<int> hidden{128, 128, 64};
  Activation activation = Activation::celu;
  int quadratic_rank = 0;
  // false drops the sign constraints (an unconstrained scalar MLP); convexity
  // and therefore the inversion guarantees are then lost
  bool convex = true;
};

/// Input-convex network Psi_theta. Convexity relies on non-negative
/// hidden-to-hidden weights, non-negative output weights and skip coefficient,
/// restored by project_convex() after every optimizer step.
class IcnnPotential {
 public:
  IcnnPotential() = default;

  IcnnPotential(int dim, const IcnnOptions& opt)
      : net_(ScalarNetShape{dim, opt.hidden, opt.activation, opt.quadratic_rank, opt.convex}) {
    if (opt.convex && opt.activation == Activation::relu)
      throw ConfigError("icnn: activation must be softplus or celu");
  }

  explicit IcnnPotential(ScalarNet net) : net_(std::move(net)) {}

  static IcnnPotential random(int dim, const IcnnOptions& opt, Rng& rng, const ScalarNetInit& init = {}) {
    IcnnPotential p(dim, opt);
    p.net_.initialize(rng, init);
    return p;
  }

  int dim() const { return net_.input_dim(); }
  bool is_convex() const { return net_.shape().convex; }
  IcnnOptions options() const {
    const auto& sh = net_.shape();
    return {sh.hidden, sh.activation, sh.quadratic_rank, sh.convex};
  }
  const ScalarNet& net() const { return net_; }
  ScalarNet& net() { return net_; }
  const Vector& params() const { return net_.params(); }
  Vector& params() { return net_.params(); }
  void set_params(const Vector& theta) { net_.set_params(theta); }
  Eigen::Index num_params() const { return net_.num_params(); }

  double value(const Vector& x) const { return net_.value(x); }
  double value_and_gradient(const Vector& x, Vector& g) const { return net_.value_and_gradient(x, g); }
  Vector gradient(const Vector& x) const { return net_.gradient(x); }
  Vector hvp(const Vector& x, const Vector& v) const { return net_.hvp(x, v); }

  /// d/dtheta <v, grad Psi_theta(x)> with x and v held constant.
  Vector param_grad_directional(const Vector& x, const Vector& v) const {
    return net_.param_grad_directional(x, v);
  }

  void project_convex() { net_.project_convex(); }

 private:
  ScalarNet net_;
};

/// Runtime-polymorphic potential (checkpoints, CLI, distribution specs).
class AnyPotential {
 public:
  using Storage = std::variant<QuadraticPotential, IcnnPotential>;

  AnyPotential() : p_(QuadraticPotential::identity(1)) {}
  AnyPotential(QuadraticPotential q) : p_(std::move(q)) {}
  AnyPotential(IcnnPotential n) : p_(std::move(n)) {}

  const Storage& storage() const { return p_; }
  bool is_icnn() const { return std::holds_alternative<IcnnPotential>(p_); }
  bool is_quadratic() const { return std::holds_alternative<QuadraticPotential>(p_); }

  int dim() const {
    return std::visit([](const auto& p) { return p.dim(); }, p_);
  }
  double value(const Vector& x) const {
    return std::visit([&](const auto& p) { return p.value(x); }, p_);
  }
  double value_and_gradient(const Vector& x, Vector& g) const {
    return std::visit([&](const auto& p) { return p.value_and_gradient(x, g); }, p_);
  }
  Vector gradient(const Vector& x) const {
    return std::visit([&](const auto& p) { return p.gradient(x); }, p_);
  }
  Vector hvp(const Vector& x, const Vector& v) const {
    return std::visit([&](const auto& p) { return p.hvp(x, v); }, p_);
  }

 private:
  Storage p_;
};

static_assert(ConvexPotential<QuadraticPotential>);
static_assert(ConvexPotential<IcnnPotential>);
static_assert(ConvexPotential<AnyPotential>);

template <ConvexPotential P>
double eval(const P& psi, const Vector& x) {
  return psi.value(x);
}

template <ConvexPotential P>
Vector grad(const P& psi, const Vector& x) {
  return psi.gradient(x);
}

template <ConvexPotential P>
Vector hvp(const P& psi, const Vector& x, const Vector& v) {
  return psi.hvp(x, v);
}

inline constexpr int kDenseHessianLimit = 512;

/// Dense Hessian from D basis-vector hvp calls, symmetrized.
template <ConvexPotential P>
Matrix hessian(const P& psi, const Vector& x, int dense_limit = kDenseHessianLimit) {
  const int d = psi.dim();
  check_dim(x.size(), d, "hessian");
  if (d > dense_limit) throw DimensionError("hessian: dimension exceeds dense limit");
  if constexpr (std::same_as<P, QuadraticPotential>) {
    return 0.5 * (psi.a() + psi.a().transpose());
  } else if constexpr (std::same_as<P, IcnnPotential>) {
    // all D directions in one batched tangent sweep
    const ScalarNet& net = psi.net();
    Matrix xs = x.replicate(1, d);
    ScalarNetCache<Matrix> c;
    net.forward(xs, c);
    const Matrix eye = Matrix::Identity(d, d);
    Matrix h = net.input_hvp(xs, eye, c);
    return 0.5 * (h + h.transpose());
  } else {
    Matrix h(d, d);
    for (int j = 0; j < d; ++j) h.col(j) = psi.hvp(x, Vector::Unit(d, j));
    return 0.5 * (h + h.transpose());
  }
}

}  // namespace ofm

#endif  // OFM_POTENTIAL_HPP
