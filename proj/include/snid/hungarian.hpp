#pragma once

#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "snid/error.hpp"

namespace snid {

/// Minimum-cost perfect assignment on a square cost matrix (shortest
/// augmenting path with potentials, O(n^3)). Returns assign[row] = column.
inline std::vector<Eigen::Index> hungarian_min(const Eigen::MatrixXd& cost) {
  const Eigen::Index n = cost.rows();
  if (cost.cols() != n) throw ValidationError("hungarian: cost matrix must be square");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; index 0 is the virtual source column.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<Eigen::Index> p(n + 1, 0), way(n + 1, 0);
  for (Eigen::Index i = 1; i <= n; ++i) {
    p[0] = i;
    Eigen::Index j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const Eigen::Index i0 = p[j0];
      double delta = inf;
      Eigen::Index j1 = 0;
      for (Eigen::Index j = 1; j <= n; ++j) {
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
      for (Eigen::Index j = 0; j <= n; ++j) {
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
      const Eigen::Index j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Eigen::Index> assign(static_cast<std::size_t>(n));
  for (Eigen::Index j = 1; j <= n; ++j) assign[static_cast<std::size_t>(p[j] - 1)] = j - 1;
  return assign;
}

/// Assignment maximizing the total score.
inline std::vector<Eigen::Index> hungarian_max(const Eigen::MatrixXd& score) {
  return hungarian_min(-score);
}

}  // namespace snid
