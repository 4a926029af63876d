#ifndef OFM_PLANS_HPP
#define OFM_PLANS_HPP

// Distribution samplers and transport-plan samplers (couplings of p0 and p1).

#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ofm/core.hpp"
#include "ofm/hungarian.hpp"
#include "ofm/potential.hpp"

namespace ofm {

enum class DistributionKind { gaussian, gaussian_mixture, pushforward };

/// Gaussian, Gaussian mixture, or the pushforward of a base distribution by
/// the gradient of a convex potential.
struct DistributionSpec {
  DistributionKind kind = DistributionKind::gaussian;
  int dim = 1;
  // gaussian / mixture components: means and Cholesky factors of covariances
  std::vector<Vector> means;
  std::vector<Matrix> chols;
  Vector weights;  // mixture weights
  // pushforward
  std::shared_ptr<const DistributionSpec> base;
  std::shared_ptr<const AnyPotential> map;

  static DistributionSpec gaussian(const Vector& mean, const Matrix& cov) {
    check_dim(cov.rows(), mean.size(), "gaussian covariance");
    check_dim(cov.cols(), mean.size(), "gaussian covariance");
    Eigen::LLT<Matrix> llt(0.5 * (cov + cov.transpose()));
    if (llt.info() != Eigen::Success) throw std::invalid_argument("gaussian: covariance must be positive definite");
    DistributionSpec s;
    s.kind = DistributionKind::gaussian;
    s.dim = static_cast<int>(mean.size());
    s.means = {mean};
    s.chols = {llt.matrixL()};
    s.weights = Vector::Ones(1);
    return s;
  }

  static DistributionSpec standard_gaussian(int d) {
    return gaussian(Vector::Zero(d), Matrix::Identity(d, d));
  }

  static DistributionSpec mixture(const std::vector<Vector>& means, const std::vector<Matrix>& covs,
                                  const Vector& weights) {
    if (means.empty() || means.size() != covs.size() || static_cast<Eigen::Index>(means.size()) != weights.size())
      throw std::invalid_argument("mixture: means, covariances and weights must have equal non-zero length");
    if (std::abs(weights.sum() - 1.0) > 1e-12 || weights.minCoeff() < 0.0)
      throw std::invalid_argument("mixture: weights must be non-negative and sum to 1");
    DistributionSpec s;
    s.kind = DistributionKind::gaussian_mixture;
    s.dim = static_cast<int>(means.front().size());
    for (std::size_t k = 0; k < means.size(); ++k) {
      auto g = gaussian(means[k], covs[k]);
      check_dim(g.dim, s.dim, "mixture component");
      s.means.push_back(g.means[0]);
      s.chols.push_back(g.chols[0]);
    }
    s.weights = weights;
    return s;
  }

  /// Eight isotropic Gaussians equally spaced on a circle.
  static DistributionSpec eight_gaussians(double radius = 4.0, double sigma = 0.3) {
    std::vector<Vector> means;
    std::vector<Matrix> covs;
    for (int k = 0; k < 8; ++k) {
      const double a = 2.0 * std::numbers::pi * k / 8.0;
      Vector m(2);
      m << radius * std::cos(a), radius * std::sin(a);
      means.push_back(m);
      covs.push_back(sigma * sigma * Matrix::Identity(2, 2));
    }
    return mixture(means, covs, Vector::Constant(8, 1.0 / 8.0));
  }

  static DistributionSpec pushforward(DistributionSpec base_spec, AnyPotential potential) {
    check_dim(potential.dim(), base_spec.dim, "pushforward potential");
    DistributionSpec s;
    s.kind = DistributionKind::pushforward;
    s.dim = base_spec.dim;
    s.base = std::make_shared<const DistributionSpec>(std::move(base_spec));
    s.map = std::make_shared<const AnyPotential>(std::move(potential));
    return s;
  }
};

/// n i.i.d. samples as rows of an n x D matrix.
inline Matrix sample(const DistributionSpec& spec, Eigen::Index n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
  Matrix out(n, spec.dim);
  switch (spec.kind) {
    case DistributionKind::gaussian: {
      const Matrix z = standard_normal(n, spec.dim, rng);
      out = (z * spec.chols[0].transpose()).rowwise() + spec.means[0].transpose();
      break;
    }
    case DistributionKind::gaussian_mixture: {
      std::discrete_distribution<int> pick(spec.weights.data(), spec.weights.data() + spec.weights.size());
      for (Eigen::Index i = 0; i < n; ++i) {
        const int k = pick(rng);
        out.row(i) = (spec.means[k] + spec.chols[k] * standard_normal(spec.dim, rng)).transpose();
      }
      break;
    }
    case DistributionKind::pushforward: {
      const Matrix base = sample(*spec.base, n, rng);
      for (Eigen::Index i = 0; i < n; ++i) out.row(i) = spec.map->gradient(base.row(i).transpose()).transpose();
      break;
    }
  }
  return out;
}

enum class PairingTag { independent, minibatch, antiminibatch, ground_truth };

inline std::string to_string(PairingTag t) {
  switch (t) {
    case PairingTag::independent: return "independent";
    case PairingTag::minibatch: return "minibatch";
    case PairingTag::antiminibatch: return "antiminibatch";
    case PairingTag::ground_truth: return "ground-truth";
  }
  return "?";
}

inline PairingTag parse_plan(std::string_view s) {
  if (s == "independent") return PairingTag::independent;
  if (s == "minibatch") return PairingTag::minibatch;
  if (s == "antiminibatch") return PairingTag::antiminibatch;
  if (s == "ground-truth" || s == "ground_truth") return PairingTag::ground_truth;
  throw ConfigError("unknown plan kind '" + std::string(s) + "'");
}

/// Rows x0[i] and x1[i] form the i-th pair.
struct PairedBatch {
  Matrix x0, x1;
  PairingTag tag = PairingTag::independent;

  Eigen::Index size() const { return x0.rows(); }
  int dim() const { return static_cast<int>(x0.cols()); }
};

inline PairedBatch pair_independent(Matrix x0, Matrix x1) {
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols())
    throw DimensionError("pair_independent: batches must have equal shape");
  return {std::move(x0), std::move(x1), PairingTag::independent};
}

inline constexpr Eigen::Index kMaxAssignmentBatch = 512;

inline Matrix squared_distances(const Matrix& x0, const Matrix& x1) {
  const Vector n0 = x0.rowwise().squaredNorm(), n1 = x1.rowwise().squaredNorm();
  Matrix c = -2.0 * x0 * x1.transpose();
  c.colwise() += n0;
  c.rowwise() += n1.transpose();
  return c.cwiseMax(0.0);
}

/// Re-pair x1 by the exact assignment minimizing sign * sum |x0_i - x1_j|^2.
inline PairedBatch pair_minibatch_ot(Matrix x0, const Matrix& x1, int sign = +1) {
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols())
    throw DimensionError("pair_minibatch_ot: batches must have equal shape");
  if (x0.rows() > kMaxAssignmentBatch) throw std::invalid_argument("pair_minibatch_ot: batch exceeds 512");
  if (sign != 1 && sign != -1) throw std::invalid_argument("pair_minibatch_ot: sign must be +1 or -1");
  const Matrix cost = double(sign) * squared_distances(x0, x1);
  const auto assignment = solve_assignment(cost);
  Matrix paired(x1.rows(), x1.cols());
  for (Eigen::Index i = 0; i < x0.rows(); ++i) paired.row(i) = x1.row(assignment[static_cast<std::size_t>(i)]);
  return {std::move(x0), std::move(paired), sign > 0 ? PairingTag::minibatch : PairingTag::antiminibatch};
}

/// Mean squared pair distance (the quadratic transport cost is half of it).
inline double pairing_cost(const PairedBatch& b) { return (b.x0 - b.x1).rowwise().squaredNorm().mean(); }

/// Draws paired batches from a plan between p0 and p1.
struct PlanSampler {
  DistributionSpec p0, p1;
  PairingTag kind = PairingTag::independent;
  Eigen::Index minibatch_size = 64;  // assignment block size for (anti)minibatch plans
  std::optional<AnyPotential> ground_truth;

  PairedBatch sample_batch(Eigen::Index b, Rng& rng) const {
    Matrix x0 = sample(p0, b, rng);
    if (kind == PairingTag::ground_truth) {
      if (!ground_truth) throw std::invalid_argument("ground-truth plan requires a ground-truth potential");
      Matrix x1(b, p0.dim);
      for (Eigen::Index i = 0; i < b; ++i) x1.row(i) = ground_truth->gradient(x0.row(i).transpose()).transpose();
      return {std::move(x0), std::move(x1), PairingTag::ground_truth};
    }
    Matrix x1 = sample(p1, b, rng);
    if (kind == PairingTag::independent) return pair_independent(std::move(x0), std::move(x1));
    const int sign = kind == PairingTag::minibatch ? 1 : -1;
    const Eigen::Index block = std::clamp<Eigen::Index>(minibatch_size, 1, kMaxAssignmentBatch);
    PairedBatch out{x0, x1, kind};
    for (Eigen::Index s = 0; s < b; s += block) {
      const Eigen::Index len = std::min(block, b - s);
      auto part = pair_minibatch_ot(x0.middleRows(s, len), x1.middleRows(s, len), sign);
      out.x1.middleRows(s, len) = part.x1;
    }
    return out;
  }
};

}  // namespace ofm

#endif  // OFM_PLANS_HPP
