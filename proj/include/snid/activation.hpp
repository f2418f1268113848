#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>

#include "snid/error.hpp"
#include "snid/quadrature.hpp"

namespace snid {

enum class ActivationKind { Tanh, Sigmoid, Custom };

/// User-supplied activation: g and its first three derivatives plus the
/// shift radius on which g'' is strictly monotone.
struct CustomActivation {
  std::function<double(double)> g, d1, d2, d3;
  double tau_inf = 0.0;
  std::string name = "custom";
};

/// An activation with exact derivatives up to order three.
///
/// Immutable after construction. `tau_inf` is the radius of the shift
/// interval on which g'' is strictly monotone and g' keeps its sign;
/// `kappa` bounds |g^(n)| for n = 1, 2, 3.
class Activation {
 public:
  ActivationKind kind() const noexcept { return kind_; }
  double tau_inf() const noexcept { return tau_inf_; }
  double kappa() const noexcept { return kappa_; }
  /// +1 if g'' increases on [-tau_inf, tau_inf], -1 if it decreases.
  int g2_monotone_sign() const noexcept { return g2_sign_; }
  const std::string& name() const noexcept { return name_; }

  double operator()(double t) const { return derivative(0, t); }

  double derivative(int n, double t) const {
    switch (kind_) {
      case ActivationKind::Tanh: {
        const double th = std::tanh(t);
        const double s = 1.0 - th * th;
        switch (n) {
          case 0: return th;
          case 1: return s;
          case 2: return -2.0 * th * s;
          case 3: return -2.0 * s * (1.0 - 3.0 * th * th);
        }
        break;
      }
      case ActivationKind::Sigmoid: {
        const double p = logistic(t);
        const double q = p * (1.0 - p);
        switch (n) {
          case 0: return p;
          case 1: return q;
          case 2: return q * (1.0 - 2.0 * p);
          case 3: return q * (1.0 - 6.0 * p + 6.0 * p * p);
        }
        break;
      }
      case ActivationKind::Custom:
        switch (n) {
          case 0: return custom_.g(t);
          case 1: return custom_.d1(t);
          case 2: return custom_.d2(t);
          case 3: return custom_.d3(t);
        }
        break;
    }
    throw ValidationError("activation derivative order must be in 0..3, got " +
                          std::to_string(n));
  }

  double d1(double t) const { return derivative(1, t); }
  double d2(double t) const { return derivative(2, t); }
  double d3(double t) const { return derivative(3, t); }

  friend Activation make_activation(ActivationKind kind);
  friend Activation make_activation(CustomActivation bundle);

 private:
  Activation() = default;

  static double logistic(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
  }

  void finalize() {
    kappa_ = 0.0;
    // Symmetric grid so that the origin, where tanh and sigmoid peak, is a node.
    constexpr int grid = 100001;
    for (int i = 0; i < grid; ++i) {
      const double t = -20.0 + 40.0 * i / (grid - 1);
      for (int n = 1; n <= 3; ++n) kappa_ = std::max(kappa_, std::abs(derivative(n, t)));
    }
    g2_sign_ = d2(tau_inf_) > d2(-tau_inf_) ? 1 : -1;
  }

  void validate() const {
    constexpr int grid = 1000;
    const double step = 2.0 * tau_inf_ / (grid - 1);
    double prev = d2(-tau_inf_);
    for (int i = 1; i < grid; ++i) {
      const double t = -tau_inf_ + step * i;
      const double cur = d2(t);
      const double diff = cur - prev;
      if (!(diff * g2_sign_ > 0.0)) {
        std::ostringstream os;
        os << "activation '" << name_ << "': g'' is not strictly monotone on [-"
           << tau_inf_ << ", " << tau_inf_ << "], violation between t="
           << (t - step) << " and t=" << t;
        throw ValidationError(os.str());
      }
      prev = cur;
    }
    const double sign0 = d1(0.0) > 0.0 ? 1.0 : -1.0;
    for (int i = 1; i < grid - 1; ++i) {
      const double t = -tau_inf_ + step * i;
      if (!(d1(t) * sign0 > 0.0)) {
        std::ostringstream os;
        os << "activation '" << name_ << "': g' changes sign at t=" << t;
        throw ValidationError(os.str());
      }
    }
  }

  ActivationKind kind_ = ActivationKind::Tanh;
  CustomActivation custom_;
  double tau_inf_ = 0.0;
  double kappa_ = 0.0;
  int g2_sign_ = 1;
  std::string name_;
};

/// Built-in activations. Tanh uses tau_inf = 0.6 (g'' turns at
/// atanh(1/sqrt(3)) ~ 0.658); sigmoid uses 1.3 (g'' turns at
/// log(2 + sqrt(3)) ~ 1.317).
inline Activation make_activation(ActivationKind kind) {
  Activation a;
  a.kind_ = kind;
  switch (kind) {
    case ActivationKind::Tanh:
      a.tau_inf_ = 0.6;
      a.name_ = "tanh";
      break;
    case ActivationKind::Sigmoid:
      a.tau_inf_ = 1.3;
      a.name_ = "sigmoid";
      break;
    case ActivationKind::Custom:
      throw ValidationError("custom activations need a CustomActivation bundle");
  }
  a.finalize();
  return a;
}

inline Activation make_activation(CustomActivation bundle) {
  if (!bundle.g || !bundle.d1 || !bundle.d2 || !bundle.d3)
    throw ValidationError("custom activation bundle is incomplete");
  if (!(bundle.tau_inf > 0.0) || !std::isfinite(bundle.tau_inf))
    throw ValidationError("custom activation needs a positive finite tau_inf");
  Activation a;
  a.kind_ = ActivationKind::Custom;
  a.tau_inf_ = bundle.tau_inf;
  a.name_ = bundle.name;
  a.custom_ = std::move(bundle);
  a.finalize();
  a.validate();
  return a;
}

/// Parses the textual descriptor used in config and network files.
inline Activation parse_activation(const std::string& text) {
  if (text == "tanh") return make_activation(ActivationKind::Tanh);
  if (text == "sigmoid") return make_activation(ActivationKind::Sigmoid);
  throw ValidationError("unknown activation '" + text + "' (expected tanh | sigmoid)");
}

/// The t in [-tau_inf, tau_inf] minimizing |g''(t) - y|. Values outside the
/// image of g'' clamp to the nearer endpoint.
inline double invert_g2(const Activation& act, double y) {
  if (!std::isfinite(y)) throw ValidationError("invert_g2: non-finite argument");
  double lo = -act.tau_inf();
  double hi = act.tau_inf();
  // Work with an increasing function: s * g''.
  const double s = act.g2_monotone_sign();
  const double target = s * y;
  if (target <= s * act.d2(lo)) return lo;
  if (target >= s * act.d2(hi)) return hi;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (s * act.d2(mid) < target)
      lo = mid;
    else
      hi = mid;
  }
  return std::abs(act.d2(lo) - y) <= std::abs(act.d2(hi) - y) ? lo : hi;
}

/// Numerical certificate for the sign constant of the activation: the sign of
/// E[g'(X + tau)] over a grid of tau in [-tau_inf, tau_inf], by Gauss-Hermite
/// quadrature. Returns +1 or -1 when the sign is constant, 0 otherwise.
inline int certify_sign_constant(const Activation& act, int tau_grid = 101,
                                 int nodes = 80) {
  const GaussHermiteRule rule = gauss_hermite(nodes);
  int sign = 0;
  for (int i = 0; i < tau_grid; ++i) {
    const double tau =
        tau_grid == 1 ? 0.0 : -act.tau_inf() + 2.0 * act.tau_inf() * i / (tau_grid - 1);
    const double e = rule.expectation([&](double t) { return act.d1(t + tau); });
    const int si = e > 0.0 ? 1 : (e < 0.0 ? -1 : 0);
    if (si == 0 || (sign != 0 && si != sign)) return 0;
    sign = si;
  }
  return sign;
}

}  // namespace snid
