#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "snid/error.hpp"
#include "snid/random.hpp"
#include "snid/subspace.hpp"

namespace snid {

struct SpmConfig {
  double gamma = 2.0;
  int max_steps = 1000;
  double conv_tol = 1e-12;
  double beta = 0.5;
  double dedup_cos = 0.99;
  /// 0 selects ceil(5 m log m).
  long long max_restarts = 0;

  void validate() const {
    if (!(gamma > 0.0)) throw ValidationError("spm: gamma must be positive");
    if (!(beta > 0.0 && beta < 1.0)) throw ValidationError("spm: beta must lie in (0, 1)");
    if (!(dedup_cos > 0.9 && dedup_cos < 1.0))
      throw ValidationError("spm: dedup_cos must lie in (0.9, 1)");
    if (max_steps < 1) throw ValidationError("spm: max_steps must be positive");
    if (max_restarts < 0) throw ValidationError("spm: max_restarts must be non-negative");
  }
};

inline long long default_restarts(Eigen::Index m) {
  return static_cast<long long>(
      std::ceil(5.0 * static_cast<double>(m) * std::log(static_cast<double>(std::max<Eigen::Index>(m, 2)))));
}

namespace detail {
inline void require_unit(const Eigen::VectorXd& u, const char* who) {
  if (!(std::abs(u.norm() - 1.0) <= 1e-8))
    throw ValidationError(std::string(who) + ": vector must have unit norm");
}
}  // namespace detail

/// ||P(u u^T)||_F^2.
inline double spm_objective(const SubspaceProjector& p, const Eigen::VectorXd& u) {
  detail::require_unit(u, "spm_objective");
  if (u.size() != p.dim()) throw ValidationError("spm_objective: dimension mismatch");
  return p.coefficients(hvec_outer(u)).squaredNorm();
}

struct AscentResult {
  Eigen::VectorXd u;
  double objective = 0.0;
  int steps = 0;
  bool converged = false;
  /// Objective after each step (starting with the objective of u0), when requested.
  std::vector<double> trace;
};

/// Projected gradient ascent u <- normalize(u + 2 gamma P(u u^T) u).
inline AscentResult spm_ascend(const SubspaceProjector& p, const Eigen::VectorXd& u0,
                               const SpmConfig& cfg, bool record_trace = false) {
  detail::require_unit(u0, "spm_ascend");
  if (u0.size() != p.dim()) throw ValidationError("spm_ascend: dimension mismatch");
  AscentResult r;
  r.u = u0;
  const Eigen::Index D = p.dim();
  Eigen::VectorXd coef = p.coefficients(hvec_outer(r.u));
  if (record_trace) r.trace.push_back(coef.squaredNorm());
  for (int step = 0; step < cfg.max_steps; ++step) {
    const Eigen::MatrixXd pm = unhvec(p.basis() * coef, D);
    Eigen::VectorXd next = r.u + 2.0 * cfg.gamma * (pm * r.u);
    const double norm = next.norm();
    if (!(norm > 0.0) || !std::isfinite(norm))
      throw NumericalError("spm_ascend: iterate vanished before normalization");
    next /= norm;
    const double moved = (next - r.u).norm();
    r.u = next;
    r.steps = step + 1;
    coef = p.coefficients(hvec_outer(r.u));
    if (record_trace) r.trace.push_back(coef.squaredNorm());
    if (moved <= cfg.conv_tol) {
      r.converged = true;
      break;
    }
  }
  r.objective = coef.squaredNorm();
  return r;
}

/// Flips u so that its first nonzero coordinate is positive.
inline Eigen::VectorXd canonical_sign(Eigen::VectorXd u) {
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    if (u[i] != 0.0) {
      if (u[i] < 0.0) u = -u;
      break;
    }
  }
  return u;
}

enum class RestartOutcome { Accepted, Duplicate, Rejected, Failed };

inline const char* to_string(RestartOutcome o) {
  switch (o) {
    case RestartOutcome::Accepted: return "accepted";
    case RestartOutcome::Duplicate: return "duplicate";
    case RestartOutcome::Rejected: return "rejected";
    case RestartOutcome::Failed: return "failed";
  }
  return "?";
}

struct RestartRecord {
  long long index = 0;
  int steps = 0;
  double objective = 0.0;
  RestartOutcome outcome = RestartOutcome::Rejected;
};

struct CollectResult {
  Eigen::MatrixXd weights;  // D x (number accepted), sign-canonical columns
  std::vector<RestartRecord> restarts;
  long long accepted() const { return weights.cols(); }
  long long count(RestartOutcome o) const {
    long long c = 0;
    for (const auto& r : restarts) c += r.outcome == o;
    return c;
  }
};

inline void write_restart_log(std::ostream& out, const CollectResult& r) {
  for (const auto& rec : r.restarts)
    out << "restart " << rec.index << " steps " << rec.steps << " objective " << rec.objective
        << ' ' << to_string(rec.outcome) << '\n';
}

/// Fewer than m distinct maximizers were found within the restart budget.
class IncompleteRecoveryError : public NumericalError {
 public:
  IncompleteRecoveryError(const std::string& what, CollectResult partial)
      : NumericalError(what), partial_(std::move(partial)) {}
  const CollectResult& partial() const noexcept { return partial_; }

 private:
  CollectResult partial_;
};

/// Coupon-collector loop: ascend from independent uniform starts, keep
/// maximizers above the beta level that are not duplicates up to sign.
/// Restart i draws its start from derive_seed(seed, stream::spm, i), so the
/// accepted set depends only on the seed.
inline CollectResult collect_weights(const SubspaceProjector& p, Eigen::Index m,
                                     const SpmConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (p.rank() != m) throw ValidationError("collect_weights: projector rank differs from m");
  const long long budget = cfg.max_restarts > 0 ? cfg.max_restarts : default_restarts(m);
  const Eigen::Index D = p.dim();
  CollectResult out;
  std::vector<Eigen::VectorXd> found;
  for (long long i = 0; i < budget && static_cast<Eigen::Index>(found.size()) < m; ++i) {
    Rng rng(derive_seed(seed, stream::spm, static_cast<std::uint64_t>(i)));
    RestartRecord rec;
    rec.index = i;
    try {
      const AscentResult a = spm_ascend(p, sphere_vector(rng, D), cfg);
      rec.steps = a.steps;
      rec.objective = a.objective;
      if (!(a.objective > cfg.beta)) {
        rec.outcome = RestartOutcome::Rejected;
      } else {
        bool dup = false;
        for (const auto& v : found) dup = dup || std::abs(v.dot(a.u)) > cfg.dedup_cos;
        if (dup) {
          rec.outcome = RestartOutcome::Duplicate;
        } else {
          rec.outcome = RestartOutcome::Accepted;
          found.push_back(canonical_sign(a.u));
        }
      }
    } catch (const NumericalError&) {
      rec.outcome = RestartOutcome::Failed;
    }
    out.restarts.push_back(rec);
  }
  out.weights.resize(D, static_cast<Eigen::Index>(found.size()));
  for (std::size_t k = 0; k < found.size(); ++k) out.weights.col(static_cast<Eigen::Index>(k)) = found[k];
  if (static_cast<Eigen::Index>(found.size()) < m) {
    throw IncompleteRecoveryError(
        "incomplete recovery: found " + std::to_string(found.size()) + " of " +
            std::to_string(m) + " weights after " + std::to_string(out.restarts.size()) +
            " restarts (accepted " + std::to_string(out.count(RestartOutcome::Accepted)) +
            ", duplicate " + std::to_string(out.count(RestartOutcome::Duplicate)) +
            ", rejected " + std::to_string(out.count(RestartOutcome::Rejected)) + ")",
        std::move(out));
  }
  return out;
}

}  // namespace snid
