#ifndef OFM_MLP_HPP
#define OFM_MLP_HPP

#include <vector>

#include "ofm/activation.hpp"
#include "ofm/core.hpp"

namespace ofm {

/// Fully-connected network R^in -> R^out with one activation on every hidden
/// layer and a linear head. Parameters live in one flat vector; the batched
/// methods take column-major blocks (columns = samples).
class Mlp {
 public:
  Mlp() = default;

  Mlp(int in, int out, std::vector<int> hidden, Activation act = Activation::relu)
      : in_(in), out_(out), hidden_(std::move(hidden)) {
    if (in < 1 || out < 1) throw ConfigError("mlp: input/output dims must be >= 1");
    act_.kind = act;
    widths_.push_back(in_);
    for (int h : hidden_) {
      if (h < 1) throw ConfigError("mlp: hidden widths must be >= 1");
      widths_.push_back(h);
    }
    widths_.push_back(out_);
    Eigen::Index off = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      w_off_.push_back(off);
      off += static_cast<Eigen::Index>(widths_[l + 1]) * widths_[l];
      b_off_.push_back(off);
      off += widths_[l + 1];
    }
    theta_ = Vector::Zero(off);
  }

  int input_dim() const { return in_; }
  int output_dim() const { return out_; }
  const std::vector<int>& hidden() const { return hidden_; }
  Activation activation() const { return act_.kind; }
  Eigen::Index num_params() const { return theta_.size(); }
  const Vector& params() const { return theta_; }
  Vector& params() { return theta_; }
  void set_params(const Vector& p) {
    check_dim(p.size(), theta_.size(), "mlp params");
    theta_ = p;
  }

  /// PyTorch-style uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; the head is
  /// scaled by `head_scale`.
  void initialize(Rng& rng, double head_scale = 1.0) {
    for (std::size_t l = 0; l < w_off_.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(widths_[l]));
      const double scale = (l + 1 == w_off_.size()) ? head_scale : 1.0;
      auto w = weight(l);
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * uniform(rng, -bound, bound);
      auto b = bias(l);
      for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = scale * uniform(rng, -bound, bound);
    }
  }

  struct Cache {
    std::vector<Matrix> pre, post;  // post[0] = input
  };

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const {
    check_dim(x.rows(), in_, "mlp forward");
    Matrix h = x;
    if (cache) {
      cache->pre.clear();
      cache->post.assign(1, x);
    }
    const std::size_t L = w_off_.size();
    for (std::size_t l = 0; l < L; ++l) {
      Matrix z = weight(l) * h;
      z.colwise() += bias(l);
      if (l + 1 < L) {
        Matrix a(z.rows(), z.cols());
        for (Eigen::Index i = 0; i < z.size(); ++i) a.data()[i] = act_.value(z.data()[i]);
        if (cache) {
          cache->pre.push_back(z);
          cache->post.push_back(a);
        }
        h = std::move(a);
      } else {
        h = std::move(z);
      }
    }
    return h;
  }

  Vector forward(const Vector& x) const { return forward(Matrix(x)).col(0); }

  /// Parameter gradient of sum_j <dout_j, f(x_j)> given a forward cache.
  Vector backward(const Cache& cache, const Matrix& dout) const {
    Vector grad = Vector::Zero(theta_.size());
    Matrix delta = dout;
    for (std::size_t l = w_off_.size(); l-- > 0;) {
      const Matrix& input = cache.post[l];
      Eigen::Map<Matrix>(grad.data() + w_off_[l], widths_[l + 1], widths_[l]).noalias() =
          delta * input.transpose();
      Eigen::Map<Vector>(grad.data() + b_off_[l], widths_[l + 1]) = delta.rowwise().sum();
      if (l > 0) {
        Matrix up = weight(l).transpose() * delta;
        const Matrix& z = cache.pre[l - 1];
        for (Eigen::Index i = 0; i < up.size(); ++i) up.data()[i] *= act_.d1(z.data()[i]);
        delta = std::move(up);
      }
    }
    return grad;
  }

 private:
  Eigen::Map<Matrix> weight(std::size_t l) {
    return {theta_.data() + w_off_[l], widths_[l + 1], widths_[l]};
  }
  Eigen::Map<const Matrix> weight(std::size_t l) const {
    return {theta_.data() + w_off_[l], widths_[l + 1], widths_[l]};
  }
  Eigen::Map<Vector> bias(std::size_t l) { return {theta_.data() + b_off_[l], widths_[l + 1]}; }
  Eigen::Map<const Vector> bias(std::size_t l) const { return {theta_.data() + b_off_[l], widths_[l + 1]}; }

  int in_ = 1, out_ = 1;
  std::vector<int> hidden_, widths_;
  ActivationFn act_;
  std::vector<Eigen::Index> w_off_, b_off_;
  Vector theta_;
};

/// Stack x (D x B) with a row of times (B) into a (D+1) x B block.
inline Matrix append_time(const Matrix& x, const Vector& t) {
  Matrix out(x.rows() + 1, x.cols());
  out.topRows(x.rows()) = x;
  out.row(x.rows()) = t.transpose();
  return out;
}

}  // namespace ofm

#endif  // OFM_MLP_HPP
