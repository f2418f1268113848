#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "snid/error.hpp"

namespace snid {

/// Nodes and weights integrating against the standard normal density,
/// so that sum_i weights[i] * f(nodes[i]) ~= E[f(X)], X ~ N(0, 1).
struct GaussHermiteRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;

  template <class F>
  double expectation(F&& f) const {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < nodes.size(); ++i) acc += weights[i] * f(nodes[i]);
    return acc;
  }
};

/// Golub-Welsch on the Jacobi matrix of the probabilists' Hermite
/// polynomials (zero diagonal, off-diagonal sqrt(k)).
inline GaussHermiteRule gauss_hermite(int n) {
  if (n < 1) throw ValidationError("gauss_hermite: need at least one node");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    jacobi(k, k - 1) = std::sqrt(static_cast<double>(k));
    jacobi(k - 1, k) = jacobi(k, k - 1);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  GaussHermiteRule rule;
  rule.nodes = eig.eigenvalues();
  rule.weights = eig.eigenvectors().row(0).transpose().array().square();
  rule.weights /= rule.weights.sum();
  return rule;
}

/// Orthonormal probabilists' Hermite polynomials h_0..h_rmax at y, by the
/// recurrence h_{r+1} = (y h_r - sqrt(r) h_{r-1}) / sqrt(r+1).
inline std::vector<double> hermite_values(double y, int r_max) {
  std::vector<double> h(static_cast<std::size_t>(r_max) + 1);
  h[0] = 1.0;
  if (r_max >= 1) h[1] = y;
  for (int r = 1; r < r_max; ++r) {
    h[r + 1] = (y * h[r] - std::sqrt(static_cast<double>(r)) * h[r - 1]) /
               std::sqrt(static_cast<double>(r + 1));
  }
  return h;
}

}  // namespace snid
