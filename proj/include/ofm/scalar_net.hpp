#ifndef OFM_SCALAR_NET_HPP
#define OFM_SCALAR_NET_HPP

// Layered scalar network f_theta : R^n -> R with hand-written derivative sweeps.
//
//   h_0     = act(A_0 x + b_0)
//   h_l     = act(W_l h_{l-1} + A_l x + b_l)          l = 1 .. L-1
//   f(x)    = w_out . h_{L-1} + a_out . x + b_out + (s/2)|x|^2 + (1/2)|Q x|^2
//
// With `convex = true` the entries of W_l, w_out and s are kept non-negative
// (see project_convex) and the activation is convex and non-decreasing, which
// makes f convex in x. The same engine backs the unconstrained scalar field of
// the c-RF baseline.
//
// All sweeps are templated on the block type: Vector for a single point or
// Matrix (columns = points) for a batch.

#include <cstddef>
#include <utility>
#include <vector>

#include "ofm/activation.hpp"
#include "ofm/core.hpp"

namespace ofm {

struct ScalarNetShape {
  int input_dim = 1;
  std::vector<int> hidden{64, 64};
  Activation activation = Activation::softplus;
  int quadratic_rank = 0;  // rows of Q; 0 disables the free quadratic term
  bool convex = true;
};

struct ScalarNetInit {
  double input_scale = 1.0;     // std of A_l entries is input_scale / sqrt(n)
  double hidden_scale = 1.0;    // W_l ~ U(0, 2 * hidden_scale / width_in) when convex
  double output_scale = 0.1;    // magnitude of w_out entries
  double quadratic_skip = 1.0;  // initial s
};

/// Forward-pass cache of one evaluation (pre-activations and activation derivatives).
template <class M>
struct ScalarNetCache {
  std::vector<M> z, h, dh, ddh;
};

class ScalarNet {
 public:
  ScalarNet() = default;

  explicit ScalarNet(ScalarNetShape shape) : shape_(std::move(shape)) {
    if (shape_.input_dim < 1) throw ConfigError("scalar net: input_dim must be >= 1");
    if (shape_.hidden.empty()) throw ConfigError("scalar net: at least one hidden layer required");
    for (int w : shape_.hidden)
      if (w < 1) throw ConfigError("scalar net: hidden widths must be >= 1");
    if (shape_.quadratic_rank < 0) throw ConfigError("scalar net: quadratic_rank must be >= 0");
    act_.kind = shape_.activation;
    build_layout();
    theta_ = Vector::Zero(n_params_);
  }

  const ScalarNetShape& shape() const { return shape_; }
  int input_dim() const { return shape_.input_dim; }
  Eigen::Index num_params() const { return n_params_; }
  int num_layers() const { return static_cast<int>(shape_.hidden.size()); }

  const Vector& params() const { return theta_; }
  Vector& params() { return theta_; }
  void set_params(const Vector& theta) {
    check_dim(theta.size(), n_params_, "scalar net params");
    theta_ = theta;
  }

  // ---- parameter views --------------------------------------------------

  using MatMap = Eigen::Map<Matrix>;
  using CMatMap = Eigen::Map<const Matrix>;
  using VecMap = Eigen::Map<Vector>;
  using CVecMap = Eigen::Map<const Vector>;

  CMatMap W(int l) const { return {theta_.data() + lay_[l].w, width(l), width(l - 1)}; }
  MatMap W(int l) { return {theta_.data() + lay_[l].w, width(l), width(l - 1)}; }
  CMatMap A(int l) const { return {theta_.data() + lay_[l].a, width(l), shape_.input_dim}; }
  MatMap A(int l) { return {theta_.data() + lay_[l].a, width(l), shape_.input_dim}; }
  CVecMap b(int l) const { return {theta_.data() + lay_[l].b, width(l)}; }
  VecMap b(int l) { return {theta_.data() + lay_[l].b, width(l)}; }
  CVecMap w_out() const { return {theta_.data() + off_w_out_, width(num_layers() - 1)}; }
  VecMap w_out() { return {theta_.data() + off_w_out_, width(num_layers() - 1)}; }
  CVecMap a_out() const { return {theta_.data() + off_a_out_, shape_.input_dim}; }
  VecMap a_out() { return {theta_.data() + off_a_out_, shape_.input_dim}; }
  double b_out() const { return theta_[off_b_out_]; }
  double& b_out() { return theta_[off_b_out_]; }
  double skip() const { return theta_[off_skip_]; }
  double& skip() { return theta_[off_skip_]; }
  CMatMap Q() const { return {theta_.data() + off_q_, shape_.quadratic_rank, shape_.input_dim}; }
  MatMap Q() { return {theta_.data() + off_q_, shape_.quadratic_rank, shape_.input_dim}; }

  Eigen::Index skip_index() const { return off_skip_; }

  /// Flat parameter offsets of the non-negativity-constrained blocks (start, length).
  std::vector<std::pair<Eigen::Index, Eigen::Index>> constrained_blocks() const {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
    if (!shape_.convex) return out;
    for (int l = 1; l < num_layers(); ++l) out.emplace_back(lay_[l].w, width(l) * width(l - 1));
    out.emplace_back(off_w_out_, width(num_layers() - 1));
    out.emplace_back(off_skip_, 1);
    return out;
  }

  /// Clamp every constrained entry to max(entry, 0). Free weights are untouched.
  void project_convex() {
    for (auto [start, len] : constrained_blocks())
      theta_.segment(start, len) = theta_.segment(start, len).cwiseMax(0.0);
  }

  void initialize(Rng& rng, const ScalarNetInit& init = {}) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const double din = shape_.input_dim;
    for (int l = 0; l < num_layers(); ++l) {
      auto a = A(l);
      const double sa = init.input_scale / std::sqrt(din);
      for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = sa * normal(rng);
      auto bb = b(l);
      for (Eigen::Index i = 0; i < bb.size(); ++i) bb[i] = 0.5 * normal(rng);
      if (l > 0) {
        auto w = W(l);
        const double fan_in = width(l - 1);
        for (Eigen::Index j = 0; j < w.cols(); ++j)
          for (Eigen::Index i = 0; i < w.rows(); ++i) {
            if (shape_.convex)
              w(i, j) = uniform(rng, 0.0, 2.0 * init.hidden_scale / fan_in);
            else
              w(i, j) = init.hidden_scale * normal(rng) / std::sqrt(fan_in);
          }
      }
    }
    auto wo = w_out();
    const double last = width(num_layers() - 1);
    for (Eigen::Index i = 0; i < wo.size(); ++i) {
      if (shape_.convex)
        wo[i] = uniform(rng, 0.0, 2.0 * init.output_scale / last);
      else
        wo[i] = init.output_scale * normal(rng) / std::sqrt(last);
    }
    a_out().setZero();
    b_out() = 0.0;
    skip() = init.quadratic_skip;
    Q().setZero();
  }

  // ---- evaluation -------------------------------------------------------

  template <class M>
  void forward(const M& x, ScalarNetCache<M>& c) const {
    const int L = num_layers();
    c.z.resize(L);
    c.h.resize(L);
    c.dh.resize(L);
    c.ddh.resize(L);
    for (int l = 0; l < L; ++l) {
      M z = A(l) * x;
      z.colwise() += b(l);
      if (l > 0) z.noalias() += W(l) * c.h[l - 1];
      c.z[l] = std::move(z);
      apply_act(c.z[l], c.h[l], c.dh[l], c.ddh[l]);
    }
  }

  /// Values of f at the columns of x (one entry per column).
  template <class M>
  Vector values(const M& x, const ScalarNetCache<M>& c) const {
    const int L = num_layers();
    Vector out = (w_out().transpose() * c.h[L - 1]).transpose();
    out.noalias() += (a_out().transpose() * x).transpose();
    out.array() += b_out();
    out += 0.5 * skip() * x.colwise().squaredNorm().transpose();
    if (shape_.quadratic_rank > 0) out += 0.5 * (Q() * x).colwise().squaredNorm().transpose();
    return out;
  }

  /// Input gradient at the columns of x (reverse sweep).
  template <class M>
  M input_gradient(const M& x, const ScalarNetCache<M>& c) const {
    const int L = num_layers();
    const Eigen::Index B = x.cols();
    M dh = w_out() * Eigen::RowVectorXd::Ones(B);
    M g = skip() * x;
    g.colwise() += a_out();
    if (shape_.quadratic_rank > 0) g.noalias() += Q().transpose() * (Q() * x);
    for (int l = L - 1; l >= 0; --l) {
      M dz = c.dh[l].cwiseProduct(dh);
      g.noalias() += A(l).transpose() * dz;
      if (l > 0) dh.noalias() = W(l).transpose() * dz;
    }
    return g;
  }

  /// Hessian-vector products d/de grad f(x + e v), forward-over-reverse.
  template <class M>
  M input_hvp(const M& x, const M& v, const ScalarNetCache<M>& c) const {
    const int L = num_layers();
    const Eigen::Index B = x.cols();
    // tangent channel of the forward pass
    std::vector<M> zt(L);
    M ht;
    for (int l = 0; l < L; ++l) {
      M z = A(l) * v;
      if (l > 0) z.noalias() += W(l) * ht;
      ht = c.dh[l].cwiseProduct(z);
      zt[l] = std::move(z);
    }
    // reverse sweep carrying (adjoint, tangent of adjoint)
    M dh = w_out() * Eigen::RowVectorXd::Ones(B);
    M dht = M::Zero(dh.rows(), B);
    M gt = skip() * v;
    if (shape_.quadratic_rank > 0) gt.noalias() += Q().transpose() * (Q() * v);
    for (int l = L - 1; l >= 0; --l) {
      M dzt = c.ddh[l].cwiseProduct(zt[l]).cwiseProduct(dh) + c.dh[l].cwiseProduct(dht);
      gt.noalias() += A(l).transpose() * dzt;
      if (l > 0) {
        M dz = c.dh[l].cwiseProduct(dh);
        dh.noalias() = W(l).transpose() * dz;
        dht.noalias() = W(l).transpose() * dzt;
      }
    }
    return gt;
  }

  /// d/dtheta of sum_j <v_j, grad_x f(x_j)>: reverse sweep over the forward
  /// tangent pass, since <v, grad f(x)> is the directional derivative along v.
  template <class M>
  Vector param_grad_directional(const M& x, const M& v, const ScalarNetCache<M>& c) const {
    const int L = num_layers();
    Vector grad = Vector::Zero(n_params_);
    std::vector<M> zt(L), ht(L);
    for (int l = 0; l < L; ++l) {
      M z = A(l) * v;
      if (l > 0) z.noalias() += W(l) * ht[l - 1];
      ht[l] = c.dh[l].cwiseProduct(z);
      zt[l] = std::move(z);
    }
    // output head: w_out . ht + a_out . v + s x.v + (Qx).(Qv)
    VecMap(grad.data() + off_w_out_, width(L - 1)) = ht[L - 1].rowwise().sum();
    VecMap(grad.data() + off_a_out_, shape_.input_dim) = v.rowwise().sum();
    grad[off_skip_] = x.cwiseProduct(v).sum();
    if (shape_.quadratic_rank > 0) {
      MatMap(grad.data() + off_q_, shape_.quadratic_rank, shape_.input_dim) =
          (Q() * v) * x.transpose() + (Q() * x) * v.transpose();
    }
    const Eigen::Index B = x.cols();
    M adj_h = M::Zero(width(L - 1), B);                      // adjoint of h_l
    M adj_ht = w_out() * Eigen::RowVectorXd::Ones(B);        // adjoint of tangent h_l
    for (int l = L - 1; l >= 0; --l) {
      M adj_zt = c.dh[l].cwiseProduct(adj_ht);
      M adj_z = c.ddh[l].cwiseProduct(zt[l]).cwiseProduct(adj_ht) + c.dh[l].cwiseProduct(adj_h);
      MatMap gA(grad.data() + lay_[l].a, width(l), shape_.input_dim);
      gA.noalias() += adj_zt * v.transpose();
      gA.noalias() += adj_z * x.transpose();
      VecMap(grad.data() + lay_[l].b, width(l)) += adj_z.rowwise().sum();
      if (l > 0) {
        MatMap gW(grad.data() + lay_[l].w, width(l), width(l - 1));
        gW.noalias() += adj_zt * ht[l - 1].transpose();
        gW.noalias() += adj_z * c.h[l - 1].transpose();
        adj_h.noalias() = W(l).transpose() * adj_z;
        adj_ht.noalias() = W(l).transpose() * adj_zt;
      }
    }
    return grad;
  }

  // ---- single-point convenience -----------------------------------------

  double value(const Vector& x) const {
    check_dim(x.size(), shape_.input_dim, "scalar net value");
    ScalarNetCache<Vector> c;
    forward(x, c);
    return values(x, c)[0];
  }

  double value_and_gradient(const Vector& x, Vector& g) const {
    check_dim(x.size(), shape_.input_dim, "scalar net gradient");
    ScalarNetCache<Vector> c;
    forward(x, c);
    g = input_gradient(x, c);
    return values(x, c)[0];
  }

  Vector gradient(const Vector& x) const {
    Vector g;
    value_and_gradient(x, g);
    return g;
  }

  Vector hvp(const Vector& x, const Vector& v) const {
    check_dim(x.size(), shape_.input_dim, "scalar net hvp");
    check_dim(v.size(), shape_.input_dim, "scalar net hvp direction");
    ScalarNetCache<Vector> c;
    forward(x, c);
    return input_hvp(x, v, c);
  }

  Vector param_grad_directional(const Vector& x, const Vector& v) const {
    check_dim(x.size(), shape_.input_dim, "scalar net param grad");
    check_dim(v.size(), shape_.input_dim, "scalar net param grad direction");
    ScalarNetCache<Vector> c;
    forward(x, c);
    return param_grad_directional(x, v, c);
  }

 private:
  struct LayerOffsets {
    Eigen::Index w = -1, a = 0, b = 0;
  };

  Eigen::Index width(int l) const { return shape_.hidden[static_cast<std::size_t>(l)]; }

  void build_layout() {
    Eigen::Index off = 0;
    lay_.resize(shape_.hidden.size());
    for (int l = 0; l < num_layers(); ++l) {
      if (l > 0) {
        lay_[l].w = off;
        off += width(l) * width(l - 1);
      }
      lay_[l].a = off;
      off += width(l) * shape_.input_dim;
      lay_[l].b = off;
      off += width(l);
    }
    off_w_out_ = off;
    off += width(num_layers() - 1);
    off_a_out_ = off;
    off += shape_.input_dim;
    off_b_out_ = off++;
    off_skip_ = off++;
    off_q_ = off;
    off += static_cast<Eigen::Index>(shape_.quadratic_rank) * shape_.input_dim;
    n_params_ = off;
  }

  template <class M>
  void apply_act(const M& z, M& h, M& dh, M& ddh) const {
    h.resize(z.rows(), z.cols());
    dh.resize(z.rows(), z.cols());
    ddh.resize(z.rows(), z.cols());
    act_.apply(z.data(), h.data(), dh.data(), ddh.data(), z.size());
  }

  ScalarNetShape shape_;
  ActivationFn act_;
  std::vector<LayerOffsets> lay_;
  Eigen::Index off_w_out_ = 0, off_a_out_ = 0, off_b_out_ = 0, off_skip_ = 0, off_q_ = 0;
  Eigen::Index n_params_ = 0;
  Vector theta_;
};

}  // namespace ofm

#endif  // OFM_SCALAR_NET_HPP
