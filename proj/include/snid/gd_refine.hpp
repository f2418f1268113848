#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "snid/error.hpp"
#include "snid/random.hpp"
#include "snid/teacher.hpp"

namespace snid {

/// Labelled Gaussian inputs (x_i, f(x_i)).
struct Samples {
  Eigen::MatrixXd x;  // D x N
  Eigen::VectorXd y;
  Eigen::Index size() const { return y.size(); }
};

/// Draws n standard Gaussian inputs and labels them through the counted
/// teacher interface.
inline Samples draw_samples(const TeacherNetwork& net, Eigen::Index n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("draw_samples: need at least one sample");
  Rng rng(seed);
  Samples s;
  s.x = gaussian_matrix(rng, net.dim(), n);
  s.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) s.y[i] = net(s.x.col(i));
  return s;
}

struct RefineConfig {
  /// 0 selects m * D^2.
  long long n_train = 0;
  double gamma = 1e-3;
  /// Replace gamma by 0.9 / lambda_max of the empirical kernel at tau^(0).
  bool auto_step = false;
  /// 0 runs full-batch gradient descent.
  long long batch = 64;
  long long max_steps = 10000;
  double stop_loss = 1e-8;
  double timeout_s = 180.0;
  /// Trajectory sampling period; 0 records every step for full batch and
  /// once per epoch for mini-batches.
  long long record_every = 0;
  int divergence_window = 50;

  void validate() const {
    if (!(gamma > 0.0)) throw ValidationError("refine: gamma must be positive");
    if (n_train < 0) throw ValidationError("refine: n_train must be positive");
    if (batch < 0) throw ValidationError("refine: batch must be non-negative");
    if (max_steps < 0) throw ValidationError("refine: max_steps must be non-negative");
    if (divergence_window < 1) throw ValidationError("refine: divergence window must be positive");
  }
};

/// Least-squares objective in the shifts with frozen weights. The projections
/// s_k <w_k, x_i> are computed once.
class ShiftObjective {
 public:
  ShiftObjective(const StudentNetwork& student, const Samples& samples)
      : act_(student.act), y_(samples.y) {
    if (samples.x.rows() != student.dim())
      throw ValidationError("shift objective: sample dimension does not match the student");
    if (samples.size() < 1) throw ValidationError("shift objective: empty sample set");
    proj_ = student.effective_weights().transpose() * samples.x;  // m x N
  }

  Eigen::Index size() const { return y_.size(); }
  Eigen::Index neurons() const { return proj_.rows(); }

  double residual(const Eigen::VectorXd& tau, Eigen::Index i) const {
    double f = 0.0;
    for (Eigen::Index k = 0; k < proj_.rows(); ++k) f += act_(proj_(k, i) + tau[k]);
    return f - y_[i];
  }

  /// (1 / 2n) sum (f^(x_i) - y_i)^2 over the given sample indices.
  template <class Idx>
  double loss(const Eigen::VectorXd& tau, const Idx& idx) const {
    double acc = 0.0;
    for (auto i : idx) {
      const double r = residual(tau, static_cast<Eigen::Index>(i));
      acc += r * r;
    }
    return acc / (2.0 * static_cast<double>(std::size(idx)));
  }

  /// Returns the loss and writes the gradient.
  template <class Idx>
  double loss_and_grad(const Eigen::VectorXd& tau, const Idx& idx, Eigen::VectorXd& grad) const {
    grad.setZero(proj_.rows());
    double acc = 0.0;
    for (auto ii : idx) {
      const auto i = static_cast<Eigen::Index>(ii);
      const double r = residual(tau, i);
      acc += r * r;
      for (Eigen::Index k = 0; k < proj_.rows(); ++k) grad[k] += r * act_.d1(proj_(k, i) + tau[k]);
    }
    const double n = static_cast<double>(std::size(idx));
    grad /= n;
    return acc / (2.0 * n);
  }

  std::vector<Eigen::Index> all() const {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(size()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    return idx;
  }

  /// Kernel (1 / 2N) sum F_i F_i^T with F_i = grad_tau f^(x_i).
  Eigen::MatrixXd kernel(const Eigen::VectorXd& tau) const {
    Eigen::MatrixXd f(proj_.rows(), proj_.cols());
    for (Eigen::Index i = 0; i < proj_.cols(); ++i)
      for (Eigen::Index k = 0; k < proj_.rows(); ++k) f(k, i) = act_.d1(proj_(k, i) + tau[k]);
    return (f * f.transpose()) / (2.0 * static_cast<double>(proj_.cols()));
  }

 private:
  Activation act_;
  Eigen::VectorXd y_;
  Eigen::MatrixXd proj_;
};

inline double loss(const StudentNetwork& student, const Samples& samples) {
  ShiftObjective obj(student, samples);
  return obj.loss(student.shifts, obj.all());
}

inline Eigen::VectorXd grad_loss(const StudentNetwork& student, const Samples& samples) {
  ShiftObjective obj(student, samples);
  Eigen::VectorXd g;
  obj.loss_and_grad(student.shifts, obj.all(), g);
  return g;
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
inline double power_iteration(const Eigen::MatrixXd& a, int iters = 500, double tol = 1e-12) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(a.rows()) / std::sqrt(static_cast<double>(a.rows()));
  double lambda = 0.0;
  for (int it = 0; it < iters; ++it) {
    Eigen::VectorXd w = a * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    const double next = v.dot(w);
    v = w / norm;
    if (std::abs(next - lambda) <= tol * std::abs(next)) return next;
    lambda = next;
  }
  return lambda;
}

enum class StopReason { MaxSteps, StopLoss, Timeout };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::MaxSteps: return "max_steps";
    case StopReason::StopLoss: return "stop_loss";
    case StopReason::Timeout: return "timeout";
  }
  return "?";
}

struct TrajectoryPoint {
  long long step = 0;
  double loss = 0.0;
  double shift_error = std::numeric_limits<double>::quiet_NaN();
};

struct RefineResult {
  StudentNetwork student;
  std::vector<TrajectoryPoint> trajectory;
  long long steps = 0;
  StopReason stop = StopReason::MaxSteps;
  double gamma = 0.0;
  double lambda_max = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  /// Fitted per-step ratio of the shift error (or loss, without ground truth).
  double contraction = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t queries = 0;
};

/// The loss stayed above its starting value for a whole divergence window.
class DivergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Gradient descent on the shifts, weights frozen. `truth` (aligned to the
/// student's neurons) is used only to record the shift error.
inline RefineResult refine(const StudentNetwork& student, const Samples& samples,
                           const RefineConfig& cfg, std::uint64_t seed,
                           const std::optional<Eigen::VectorXd>& truth = std::nullopt) {
  cfg.validate();
  if (truth && truth->size() != student.neurons())
    throw ValidationError("refine: ground-truth shift vector has the wrong length");
  const auto t_start = std::chrono::steady_clock::now();
  ShiftObjective obj(student, samples);
  const Eigen::Index n = obj.size();
  const std::vector<Eigen::Index> everything = obj.all();

  RefineResult r{student, {}, 0, StopReason::MaxSteps, cfg.gamma, 0.0, 0.0, 0.0,
                 std::numeric_limits<double>::quiet_NaN(), 0};
  Eigen::VectorXd tau = student.shifts;
  r.lambda_max = power_iteration(obj.kernel(tau));
  if (cfg.auto_step) {
    if (!(r.lambda_max > 0.0)) throw NumericalError("refine: empirical kernel vanishes");
    r.gamma = 0.9 / r.lambda_max;
  }

  const bool full = cfg.batch == 0 || cfg.batch >= n;
  const long long batch = full ? n : cfg.batch;
  const long long per_epoch = (n + batch - 1) / batch;
  const long long record_every = cfg.record_every > 0 ? cfg.record_every : (full ? 1 : per_epoch);

  auto shift_err = [&](const Eigen::VectorXd& t) {
    return truth ? (t - *truth).norm() : std::numeric_limits<double>::quiet_NaN();
  };

  r.initial_loss = obj.loss(tau, everything);
  r.trajectory.push_back({0, r.initial_loss, shift_err(tau)});

  Rng rng(seed);
  std::vector<Eigen::Index> order = everything;
  Eigen::VectorXd grad(obj.neurons());
  double current = r.initial_loss;
  int above = 0;
  long long step = 0;
  bool stopped = current < cfg.stop_loss;
  if (stopped) r.stop = StopReason::StopLoss;
  while (!stopped && step < cfg.max_steps) {
    const long long pos = step % per_epoch;
    if (!full && pos == 0) std::shuffle(order.begin(), order.end(), rng);
    double step_loss;
    if (full) {
      step_loss = obj.loss_and_grad(tau, everything, grad);
    } else {
      const auto first = order.begin() + pos * batch;
      const auto last = order.begin() + std::min<long long>((pos + 1) * batch, n);
      const std::vector<Eigen::Index> idx(first, last);
      step_loss = obj.loss_and_grad(tau, idx, grad);
    }
    if (!std::isfinite(step_loss)) throw DivergenceError("refine: loss became non-finite");
    above = step_loss > r.initial_loss ? above + 1 : 0;
    if (above >= cfg.divergence_window) {
      std::ostringstream os;
      os << "refine: loss exceeded its initial value for " << above
         << " consecutive steps (step size " << r.gamma << ", 1/lambda_max = "
         << (r.lambda_max > 0 ? 1.0 / r.lambda_max : 0.0) << ")";
      throw DivergenceError(os.str());
    }
    tau -= r.gamma * grad;
    ++step;

    if (full) current = step_loss;
    const bool epoch_end = full || (step % per_epoch == 0);
    if (!full && epoch_end) current = obj.loss(tau, everything);
    if (step % record_every == 0) {
      const double l = full ? obj.loss(tau, everything) : (epoch_end ? current : obj.loss(tau, everything));
      r.trajectory.push_back({step, l, shift_err(tau)});
      if (full) current = l;
    }
    if (epoch_end && current < cfg.stop_loss) {
      r.stop = StopReason::StopLoss;
      break;
    }
    if ((step & 255) == 0) {
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      if (elapsed > cfg.timeout_s) {
        r.stop = StopReason::Timeout;
        break;
      }
    }
  }
  r.steps = step;
  r.final_loss = obj.loss(tau, everything);
  if (r.trajectory.back().step != step) r.trajectory.push_back({step, r.final_loss, shift_err(tau)});
  r.student.shifts = tau;

  const auto& a = r.trajectory.front();
  const auto& b = r.trajectory.back();
  if (b.step > a.step) {
    const double e0 = truth ? a.shift_error : a.loss;
    const double e1 = truth ? b.shift_error : b.loss;
    if (e0 > 0.0 && e1 > 0.0) r.contraction = std::pow(e1 / e0, 1.0 / static_cast<double>(b.step - a.step));
  }
  return r;
}

/// Draws cfg.n_train (default m D^2) fresh samples from the teacher and refines.
inline RefineResult refine(const StudentNetwork& student, const TeacherNetwork& teacher,
                           const RefineConfig& cfg, std::uint64_t seed,
                           const std::optional<Eigen::VectorXd>& truth = std::nullopt) {
  const long long n = cfg.n_train > 0 ? cfg.n_train
                                      : static_cast<long long>(student.neurons() * student.dim() * student.dim());
  const std::uint64_t q0 = teacher.query_count();
  const Samples s = draw_samples(teacher, n, derive_seed(seed, stream::refine, 0));
  RefineResult r = refine(student, s, cfg, derive_seed(seed, stream::refine, 1), truth);
  r.queries = teacher.query_count() - q0;
  return r;
}

inline void write_trajectory_csv(std::ostream& out, const RefineResult& r) {
  out << std::setprecision(17) << "step,loss,shift_error\n";
  for (const auto& p : r.trajectory) {
    out << p.step << ',' << p.loss << ',';
    if (std::isfinite(p.shift_error)) out << p.shift_error;
    out << '\n';
  }
}

}  // namespace snid
