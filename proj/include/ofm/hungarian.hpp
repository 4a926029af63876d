#ifndef OFM_HUNGARIAN_HPP
#define OFM_HUNGARIAN_HPP

// Exact square assignment (Hungarian method, shortest augmenting paths with
// dual potentials, O(n^3)). Costs may be negative.

#include <limits>
#include <vector>

#include "ofm/core.hpp"

namespace ofm {

/// Returns assignment[i] = column matched to row i, minimizing sum_i cost(i, assignment[i]).
inline std::vector<int> solve_assignment(const Matrix& cost) {
  if (cost.rows() != cost.cols()) throw DimensionError("assignment: cost matrix must be square");
  const int n = static_cast<int>(cost.rows());
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; index 0 is the virtual root
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

inline double assignment_cost(const Matrix& cost, const std::vector<int>& assignment) {
  double s = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) s += cost(static_cast<Eigen::Index>(i), assignment[i]);
  return s;
}

}  // namespace ofm

#endif  // OFM_HUNGARIAN_HPP
