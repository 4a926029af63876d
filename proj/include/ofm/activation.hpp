#ifndef OFM_ACTIVATION_HPP
#define OFM_ACTIVATION_HPP

#include <cmath>
#include <string>
#include <string_view>

#include "ofm/core.hpp"

namespace ofm {

enum class Activation { softplus, celu, relu };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::softplus: return "softplus";
    case Activation::celu: return "celu";
    case Activation::relu: return "relu";
  }
  return "?";
}

inline Activation parse_activation(std::string_view name) {
  if (name == "softplus") return Activation::softplus;
  if (name == "celu") return Activation::celu;
  if (name == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

/// Convex, non-decreasing scalar activations with first and second derivatives.
/// CELU uses alpha = 1; second derivatives on linear branches are 0.
struct ActivationFn {
  Activation kind = Activation::softplus;

  double value(double z) const {
    switch (kind) {
      case Activation::softplus:
        return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
      case Activation::celu:
        return z > 0 ? z : std::expm1(z);
      case Activation::relu:
        return z > 0 ? z : 0.0;
    }
    return 0.0;
  }

  double d1(double z) const {
    switch (kind) {
      case Activation::softplus:
        return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      case Activation::celu:
        return z > 0 ? 1.0 : std::exp(z);
      case Activation::relu:
        return z > 0 ? 1.0 : 0.0;
    }
    return 0.0;
  }

  double d2(double z) const {
    switch (kind) {
      case Activation::softplus: {
        const double s = d1(z);
        return s * (1.0 - s);
      }
      case Activation::celu:
        return z > 0 ? 0.0 : std::exp(z);
      case Activation::relu:
        return 0.0;
    }
    return 0.0;
  }

  /// Fills value, first and second derivative in one pass over `z`.
  void apply(const double* z, double* h, double* dh, double* ddh, Eigen::Index n) const {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double zi = z[i];
      switch (kind) {
        case Activation::softplus: {
          const double e = std::exp(-std::abs(zi));
          const double sig = zi >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
          h[i] = std::max(zi, 0.0) + std::log1p(e);
          dh[i] = sig;
          ddh[i] = sig * (1.0 - sig);
          break;
        }
        case Activation::celu:
          if (zi > 0) {
            h[i] = zi;
            dh[i] = 1.0;
            ddh[i] = 0.0;
          } else {
            const double e = std::exp(zi);
            h[i] = e - 1.0;
            dh[i] = e;
            ddh[i] = e;
          }
          break;
        case Activation::relu:
          h[i] = zi > 0 ? zi : 0.0;
          dh[i] = zi > 0 ? 1.0 : 0.0;
          ddh[i] = 0.0;
          break;
      }
    }
  }
};

}  // namespace ofm

#endif  // OFM_ACTIVATION_HPP
