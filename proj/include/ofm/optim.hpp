#ifndef OFM_OPTIM_HPP
#define OFM_OPTIM_HPP

#include <cmath>
#include <string>
#include <string_view>

#include "ofm/core.hpp"

namespace ofm {

/// Adam with PyTorch defaults.
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(Vector& params, const Vector& grad) {
    if (m_.size() != params.size()) {
      m_ = Vector::Zero(params.size());
      v_ = Vector::Zero(params.size());
      t_ = 0;
    }
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    params.array() -= lr_ * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + eps_);
  }

  double learning_rate() const { return lr_; }
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  Vector m_, v_;
  long t_ = 0;
};

/// RMSprop with PyTorch defaults (alpha 0.99, eps 1e-8, no momentum).
class RmsProp {
 public:
  explicit RmsProp(double lr = 1e-3, double alpha = 0.99, double eps = 1e-8)
      : lr_(lr), alpha_(alpha), eps_(eps) {}

  void step(Vector& params, const Vector& grad) {
    if (sq_.size() != params.size()) sq_ = Vector::Zero(params.size());
    sq_ = alpha_ * sq_ + (1.0 - alpha_) * grad.cwiseAbs2();
    params.array() -= lr_ * grad.array() / (sq_.array().sqrt() + eps_);
  }

 private:
  double lr_, alpha_, eps_;
  Vector sq_;
};

enum class OptimizerKind { adam, rmsprop };

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "rmsprop") return OptimizerKind::rmsprop;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "rmsprop"; }

/// Either optimizer behind one interface.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr) : kind_(kind), adam_(lr), rms_(lr) {}
  void step(Vector& params, const Vector& grad) {
    if (kind_ == OptimizerKind::adam)
      adam_.step(params, grad);
    else
      rms_.step(params, grad);
  }

 private:
  OptimizerKind kind_;
  Adam adam_;
  RmsProp rms_;
};

/// Exponential moving average of a parameter vector:
/// shadow <- decay * shadow + (1 - decay) * theta.
class EmaShadow {
 public:
  EmaShadow() = default;
  EmaShadow(const Vector& theta, double decay) : shadow_(theta), decay_(decay) {
    if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("ema decay must lie in [0, 1)");
  }

  void update(const Vector& theta) {
    check_dim(theta.size(), shadow_.size(), "ema update");
    shadow_ = decay_ * shadow_ + (1.0 - decay_) * theta;
  }

  const Vector& shadow() const { return shadow_; }
  double decay() const { return decay_; }

 private:
  Vector shadow_;
  double decay_ = 0.999;
};

}  // namespace ofm

#endif  // OFM_OPTIM_HPP
