#pragma once

#include <cmath>
#include <sstream>

#include <Eigen/Dense>

#include "snid/error.hpp"

namespace snid {

/// Stencil spacing for the central difference operators.
struct FDConfig {
  double step_h = 0.01;

  void validate() const {
    if (!(step_h >= 1e-8 && step_h <= 1.0))
      throw ValidationError("finite-difference step must lie in [1e-8, 1]");
  }
};

namespace detail {

template <class F>
double probe(F& f, const Eigen::VectorXd& x) {
  const double v = f(x);
  if (!std::isfinite(v)) {
    std::ostringstream os;
    os << "non-finite function value at stencil point [" << x.transpose() << "]";
    throw NumericalError(os.str());
  }
  return v;
}

}  // namespace detail

/// Central differences, 2D queries.
template <class F>
Eigen::VectorXd fd_gradient(F&& f, const Eigen::VectorXd& x, const FDConfig& cfg) {
  cfg.validate();
  const double h = cfg.step_h;
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd p = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    p[i] = x[i] + h;
    const double fp = detail::probe(f, p);
    p[i] = x[i] - h;
    const double fm = detail::probe(f, p);
    p[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Four-point cross for mixed partials, three-point rule on the diagonal.
/// Uses 2D(D-1) + 2D + 1 queries; the result is symmetric by construction.
template <class F>
Eigen::MatrixXd fd_hessian(F&& f, const Eigen::VectorXd& x, const FDConfig& cfg) {
  cfg.validate();
  const double h = cfg.step_h;
  const Eigen::Index n = x.size();
  Eigen::MatrixXd H(n, n);
  Eigen::VectorXd p = x;
  const double f0 = detail::probe(f, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    p[i] = x[i] + h;
    const double fp = detail::probe(f, p);
    p[i] = x[i] - h;
    const double fm = detail::probe(f, p);
    p[i] = x[i];
    H(i, i) = (fp - 2.0 * f0 + fm) / (h * h);
  }
  const double denom = 4.0 * h * h;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      p[i] = x[i] + h;
      p[j] = x[j] + h;
      const double fpp = detail::probe(f, p);
      p[j] = x[j] - h;
      const double fpm = detail::probe(f, p);
      p[i] = x[i] - h;
      const double fmm = detail::probe(f, p);
      p[j] = x[j] + h;
      const double fmp = detail::probe(f, p);
      p[i] = x[i];
      p[j] = x[j];
      H(i, j) = H(j, i) = (fpp - fpm - fmp + fmm) / denom;
    }
  }
  return H;
}

/// n-th derivative of t -> f(x + t u) at t = 0, n in {1, 2, 3}; uses 2, 3 and 4
/// queries respectively.
template <class F>
double fd_directional(F&& f, const Eigen::VectorXd& x, const Eigen::VectorXd& u, int n,
                      const FDConfig& cfg) {
  cfg.validate();
  if (u.size() != x.size()) throw ValidationError("fd_directional: dimension mismatch");
  if (!(std::abs(u.norm() - 1.0) <= 1e-8))
    throw ValidationError("fd_directional: direction must have unit norm");
  const double h = cfg.step_h;
  auto phi = [&](double t) { return detail::probe(f, Eigen::VectorXd(x + t * u)); };
  switch (n) {
    case 1:
      return (phi(h) - phi(-h)) / (2.0 * h);
    case 2:
      return (phi(h) - 2.0 * phi(0.0) + phi(-h)) / (h * h);
    case 3:
      return (phi(2.0 * h) - 2.0 * phi(h) + 2.0 * phi(-h) - phi(-2.0 * h)) / (2.0 * h * h * h);
    default:
      throw ValidationError("fd_directional: order must be 1, 2 or 3");
  }
}

/// Selects between black-box finite differences and the analytic test oracle
/// (the exact mode corresponds to zero differentiation error).
struct DerivativeMode {
  bool exact = false;
  FDConfig fd;
};

/// Number of network queries spent by one fd_hessian call.
inline long long fd_hessian_queries(long long D) { return 2 * D * (D - 1) + 2 * D + 1; }

}  // namespace snid
