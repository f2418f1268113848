#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "snid/activation.hpp"
#include "snid/error.hpp"
#include "snid/hungarian.hpp"
#include "snid/numdiff.hpp"
#include "snid/quadrature.hpp"
#include "snid/random.hpp"
#include "snid/shift_init.hpp"
#include "snid/subspace.hpp"
#include "snid/teacher.hpp"

namespace snid {

// ---------------------------------------------------------------------------
// Incoherence

struct RipSample {
  Eigen::Index p = 0;
  double delta = 0.0;
};

struct IncoherenceReport {
  double max_sq_corr = 0.0;
  /// max_sq_corr * D / log m (0 when m = 1).
  double c2_hat = 0.0;
  /// Entry n-2 holds the value for the order-n Hadamard Grammian, n = 2..4.
  std::vector<double> gram_min_eig;
  std::vector<double> gram_norms;
  std::vector<double> gram_inv_norms;
  std::vector<RipSample> rip_samples;
  double rip_worst = 0.0;
  /// rip_worst <= the requested delta.
  bool rip_ok = true;
};

/// Extreme eigenvalues of a symmetric matrix.
inline std::pair<double, double> extreme_eigenvalues(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a, Eigen::EigenvaluesOnly);
  return {eig.eigenvalues().minCoeff(), eig.eigenvalues().maxCoeff()};
}

inline double max_abs_correlation(const Eigen::MatrixXd& w) {
  const Eigen::MatrixXd g = w.transpose() * w;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = 0; j < g.cols(); ++j)
      if (i != j) worst = std::max(worst, std::abs(g(i, j)));
  return worst;
}

/// Measures the incoherence assumptions on W. RIP is probed on `rip_trials`
/// random column subsets of size ceil(D / (4 log m)); this is a sampled
/// certificate, not a proof.
inline IncoherenceReport check_incoherence(const Eigen::MatrixXd& w, double delta, int rip_trials,
                                           std::uint64_t seed) {
  detail::check_unit_columns(w, "check_incoherence");
  const Eigen::Index D = w.rows();
  const Eigen::Index m = w.cols();
  IncoherenceReport r;
  const double c = max_abs_correlation(w);
  r.max_sq_corr = std::min(1.0, c * c);
  r.c2_hat = m > 1 ? r.max_sq_corr * static_cast<double>(D) / std::log(static_cast<double>(m)) : 0.0;
  for (int n = 2; n <= 4; ++n) {
    const auto [lmin, lmax] = extreme_eigenvalues(grammian(w, n));
    r.gram_min_eig.push_back(lmin);
    r.gram_norms.push_back(lmax);
    r.gram_inv_norms.push_back(lmin > 0.0 ? 1.0 / lmin : std::numeric_limits<double>::infinity());
  }
  const double logm = m > 1 ? std::log(static_cast<double>(m)) : 1.0;
  const Eigen::Index p = std::clamp<Eigen::Index>(
      static_cast<Eigen::Index>(std::ceil(static_cast<double>(D) / (4.0 * logm))), 1, m);
  Rng rng(seed);
  std::vector<Eigen::Index> cols(static_cast<std::size_t>(m));
  for (int t = 0; t < rip_trials; ++t) {
    std::iota(cols.begin(), cols.end(), Eigen::Index{0});
    std::shuffle(cols.begin(), cols.end(), rng);
    Eigen::MatrixXd sub(D, p);
    for (Eigen::Index j = 0; j < p; ++j) sub.col(j) = w.col(cols[static_cast<std::size_t>(j)]);
    const auto [lmin, lmax] =
        extreme_eigenvalues(sub.transpose() * sub - Eigen::MatrixXd::Identity(p, p));
    const double d = std::max(std::abs(lmin), std::abs(lmax));
    r.rip_samples.push_back({p, d});
    r.rip_worst = std::max(r.rip_worst, d);
  }
  r.rip_ok = r.rip_worst <= delta;
  return r;
}

/// 1 + (m - 1) max_{i != j} |<w_i, w_j>|^n, an upper bound on ||G_n||.
inline double gershgorin_bound(const Eigen::MatrixXd& w, int n) {
  return 1.0 + static_cast<double>(w.cols() - 1) * std::pow(max_abs_correlation(w), n);
}

/// sum_k <T, w_k w_k^T>^2, bounded by ||G_2|| ||T||_F^2.
inline double frame_energy(const Eigen::MatrixXd& w, const Eigen::MatrixXd& t) {
  double acc = 0.0;
  for (Eigen::Index k = 0; k < w.cols(); ++k) {
    const double v = w.col(k).dot(t * w.col(k));
    acc += v * v;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Learnability

/// m-th eigenvalue of the empirical second moment (1/N) sum hvec(H_i) hvec(H_i)^T
/// of Hessians at N_mc Gaussian points.
inline double estimate_alpha(const TeacherNetwork& net, Eigen::Index n_mc,
                             const DerivativeMode& mode, std::uint64_t seed) {
  const Eigen::Index m = net.neurons();
  if (n_mc < m) throw ValidationError("estimate_alpha: need N_mc >= m");
  const HessianSample hs = build_hessian_matrix(net, n_mc, mode, seed);
  const Eigen::Index n = hs.columns.rows();
  if (m > n) return 0.0;
  // The nonzero spectrum is shared by the n x n and N x N forms.
  const Eigen::MatrixXd moment = n_mc <= n ? Eigen::MatrixXd(hs.columns.transpose() * hs.columns)
                                           : Eigen::MatrixXd(hs.columns * hs.columns.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(moment / static_cast<double>(n_mc),
                                                     Eigen::EigenvaluesOnly);
  const Eigen::VectorXd& ev = eig.eigenvalues();
  return std::max(0.0, ev[ev.size() - m]);
}

inline double estimate_alpha(const TeacherNetwork& net, Eigen::Index n_mc, std::uint64_t seed) {
  return estimate_alpha(net, n_mc, DerivativeMode{true, {}}, seed);
}

// ---------------------------------------------------------------------------
// Finite-difference accuracy

/// Measured accuracy of the difference operators on this network: the largest
/// entrywise deviation of the FD Hessian from the analytic one over n_probe
/// Gaussian points. Costs n_probe (2D^2 + 1) queries.
inline double fd_accuracy(const TeacherNetwork& net, const FDConfig& cfg, int n_probe, std::uint64_t seed) {
  if (n_probe < 1) throw ValidationError("fd_accuracy: need at least one probe point");
  Rng rng(seed);
  double worst = 0.0;
  for (int i = 0; i < n_probe; ++i) {
    const Eigen::VectorXd x = gaussian_vector(rng, net.dim());
    const Eigen::MatrixXd fd = fd_hessian(net, x, cfg);
    worst = std::max(worst, (fd - net.analytic_hessian(x)).cwiseAbs().maxCoeff());
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Hermite expansions

struct HermiteCoefficients {
  std::vector<double> mu;
  /// r_max exceeds half the quadrature order.
  bool accuracy_warning = false;

  double operator[](std::size_t r) const { return mu[r]; }
  std::size_t size() const { return mu.size(); }
};

inline constexpr int kDefaultQuadNodes = 200;

/// mu_r = E[fn(X) h_r(X)], X ~ N(0, 1), for the orthonormal Hermite
/// polynomials h_r, by Gauss-Hermite quadrature.
inline HermiteCoefficients hermite_coeffs(const std::function<double(double)>& fn, int r_max,
                                          const GaussHermiteRule& rule) {
  if (r_max < 0) throw ValidationError("hermite_coeffs: r_max must be non-negative");
  HermiteCoefficients out;
  out.mu.assign(static_cast<std::size_t>(r_max) + 1, 0.0);
  out.accuracy_warning = 2 * r_max > static_cast<int>(rule.nodes.size());
  for (Eigen::Index i = 0; i < rule.nodes.size(); ++i) {
    const double y = rule.nodes[i];
    const double fy = fn(y) * rule.weights[i];
    const std::vector<double> h = hermite_values(y, r_max);
    for (int r = 0; r <= r_max; ++r) out.mu[static_cast<std::size_t>(r)] += fy * h[static_cast<std::size_t>(r)];
  }
  return out;
}

inline HermiteCoefficients hermite_coeffs(const std::function<double(double)>& fn, int r_max,
                                          int quad_nodes = kDefaultQuadNodes) {
  return hermite_coeffs(fn, r_max, gauss_hermite(quad_nodes));
}

struct OmegaResult {
  double omega = 0.0;
  double tau_min = 0.0;
  /// Upper bound on the discarded sum over r > r_max, worst over the grid.
  double tail_bound = 0.0;
};

inline constexpr int kOmegaRMax = 20;

/// omega = 1/2 min_tau sum_{r=4}^{r_max} mu_r(g'(. + tau))^2 over a uniform
/// grid on [-tau_inf, tau_inf]. `g2` (optional) is used for the tail bound
/// sum_{r > R} mu_r(g')^2 <= (||g''||^2 - sum_{q < R} mu_q(g'')^2) / (R + 1).
inline OmegaResult kernel_floor_omega(const std::function<double(double)>& g1,
                                      const std::function<double(double)>& g2, double tau_inf,
                                      int tau_grid = 101, int r_max = kOmegaRMax,
                                      int quad_nodes = kDefaultQuadNodes) {
  if (tau_grid < 1) throw ValidationError("kernel_floor_omega: tau_grid must be positive");
  const GaussHermiteRule rule = gauss_hermite(quad_nodes);
  OmegaResult out;
  out.omega = std::numeric_limits<double>::infinity();
  for (int i = 0; i < tau_grid; ++i) {
    const double tau =
        tau_grid == 1 ? 0.0 : -tau_inf + 2.0 * tau_inf * static_cast<double>(i) / (tau_grid - 1);
    const auto mu = hermite_coeffs([&](double y) { return g1(y + tau); }, r_max, rule);
    double tail = 0.0;
    for (int r = 4; r <= r_max; ++r) tail += mu[static_cast<std::size_t>(r)] * mu[static_cast<std::size_t>(r)];
    if (0.5 * tail < out.omega) {
      out.omega = 0.5 * tail;
      out.tau_min = tau;
    }
    if (g2) {
      const auto nu = hermite_coeffs([&](double y) { return g2(y + tau); }, r_max, rule);
      const double norm2 = rule.expectation([&](double y) {
        const double v = g2(y + tau);
        return v * v;
      });
      double head = 0.0;
      for (int q = 0; q < r_max; ++q) head += nu[static_cast<std::size_t>(q)] * nu[static_cast<std::size_t>(q)];
      out.tail_bound = std::max(out.tail_bound, std::max(0.0, norm2 - head) / (r_max + 1));
    }
  }
  return out;
}

inline OmegaResult kernel_floor_omega(const Activation& act, int tau_grid = 101) {
  return kernel_floor_omega([&](double t) { return act.d1(t); },
                            [&](double t) { return act.d2(t); }, act.tau_inf(), tau_grid);
}

// ---------------------------------------------------------------------------
// Matching and error functionals

struct Metrics {
  double E_inf = 0.0;
  double max_weight_err = 0.0;
  double shift_rms = 0.0;
  double delta_W1 = 0.0;
  double delta_WO = 0.0;
  double delta_WS = 0.0;
  double weight_frob = 0.0;
  /// Fraction of matched neurons whose effective weight points along the
  /// true weight (sign resolved correctly).
  double sign_accuracy = 0.0;
  /// perm[k] = student neuron matched to teacher neuron k.
  std::vector<Eigen::Index> perm;
  /// Sign s_k aligning the matched effective weight with w_k.
  std::vector<int> signs;
  std::uint64_t eval_queries = 0;
};

/// The three weight-error functionals for aligned error vectors e_k = w_k - w^_k.
struct WeightErrors {
  double frob = 0.0, overlap = 0.0, sum = 0.0, w1 = 0.0;
};

inline WeightErrors weight_errors(const Eigen::MatrixXd& err) {
  const double D = static_cast<double>(err.rows());
  const double m = static_cast<double>(err.cols());
  WeightErrors e;
  e.frob = err.norm();
  const Eigen::MatrixXd g = err.transpose() * err;
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = 0; j < g.cols(); ++j)
      if (i != j) e.overlap += std::abs(g(i, j));
  e.sum = err.rowwise().sum().norm();
  const double logm = m > 1 ? std::log(m) : 0.0;
  e.w1 = std::sqrt(m) * std::pow(logm, 0.75) / std::pow(D, 0.25) *
         (e.frob + std::sqrt(e.overlap) / std::sqrt(D) + e.sum);
  return e;
}

/// Worst-case initial shift error sqrt(m) eps + m^{3/2} (log m / D)^{3/4} delta_max
/// with unit constants.
inline double init_shift_bound(Eigen::Index m, Eigen::Index D, double eps, double delta_max) {
  const double md = static_cast<double>(m);
  const double logm = m > 1 ? std::log(md) : 0.0;
  return std::sqrt(md) * eps + std::pow(md, 1.5) * std::pow(logm / static_cast<double>(D), 0.75) * delta_max;
}

/// Aligns the recovered network to the truth (Hungarian on |cos| of the
/// effective weights) and scores it. E_inf uses `n_eval` fresh Gaussian points
/// drawn from `seed`; the teacher evaluations are counted in eval_queries.
inline Metrics match_and_score(const StudentNetwork& rec, const TeacherNetwork& truth,
                               Eigen::Index n_eval, std::uint64_t seed) {
  const Eigen::Index D = truth.dim();
  const Eigen::Index m = truth.neurons();
  if (rec.dim() != D || rec.neurons() != m)
    throw ValidationError("match_and_score: student and teacher differ in D or m");
  const Eigen::MatrixXd& w = truth.weights();
  const Eigen::MatrixXd wh = rec.effective_weights();

  Eigen::MatrixXd score(m, m);
  for (Eigen::Index k = 0; k < m; ++k)
    for (Eigen::Index j = 0; j < m; ++j) score(k, j) = std::abs(w.col(k).dot(wh.col(j)));
  Metrics out;
  out.perm = hungarian_max(score);

  Eigen::MatrixXd err(D, m);
  Eigen::VectorXd tau_err(m);
  int aligned = 0;
  for (Eigen::Index k = 0; k < m; ++k) {
    const Eigen::Index j = out.perm[static_cast<std::size_t>(k)];
    const int s = w.col(k).dot(wh.col(j)) < 0.0 ? -1 : 1;
    out.signs.push_back(s);
    aligned += s == 1;
    err.col(k) = w.col(k) - static_cast<double>(s) * wh.col(j);
    out.max_weight_err = std::max(out.max_weight_err, err.col(k).norm());
    tau_err[k] = truth.shifts()[k] - rec.shifts[j];
  }
  out.sign_accuracy = static_cast<double>(aligned) / static_cast<double>(m);
  out.shift_rms = tau_err.norm() / std::sqrt(static_cast<double>(m));
  const WeightErrors we = weight_errors(err);
  out.weight_frob = we.frob;
  out.delta_WO = we.overlap;
  out.delta_WS = we.sum;
  out.delta_W1 = we.w1;

  if (n_eval > 0) {
    const std::uint64_t q0 = truth.query_count();
    Rng rng(seed);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < n_eval; ++i) {
      const Eigen::VectorXd x = gaussian_vector(rng, D);
      // Student summed in matched order so the value is invariant under
      // relabelling of the recovered neurons.
      double fh = 0.0;
      for (Eigen::Index k = 0; k < m; ++k) {
        const Eigen::Index j = out.perm[static_cast<std::size_t>(k)];
        fh += rec.act(wh.col(j).dot(x) + rec.shifts[j]);
      }
      worst = std::max(worst, std::abs(truth(x) - fh));
    }
    out.E_inf = worst / static_cast<double>(m);
    out.eval_queries = truth.query_count() - q0;
  }
  return out;
}

inline void write_metrics(std::ostream& out, const Metrics& mt) {
  out << std::setprecision(17) << "E_inf " << mt.E_inf << "\nmax_weight_err " << mt.max_weight_err
      << "\nshift_rms " << mt.shift_rms << "\nsign_accuracy " << mt.sign_accuracy << "\ndelta_W1 "
      << mt.delta_W1 << "\ndelta_WO " << mt.delta_WO << "\ndelta_WS " << mt.delta_WS << "\nperm";
  for (auto p : mt.perm) out << ' ' << p;
  out << "\nsigns";
  for (auto s : mt.signs) out << ' ' << s;
  out << '\n';
}

inline void write_incoherence(std::ostream& out, const IncoherenceReport& r) {
  out << std::setprecision(10) << "max_sq_corr " << r.max_sq_corr << "\nc2_hat " << r.c2_hat;
  for (std::size_t i = 0; i < r.gram_inv_norms.size(); ++i)
    out << "\ngram" << i + 2 << "_min_eig " << r.gram_min_eig[i] << "\ngram" << i + 2 << "_norm "
        << r.gram_norms[i] << "\ngram" << i + 2 << "_inv_norm " << r.gram_inv_norms[i];
  out << "\nrip_p " << (r.rip_samples.empty() ? 0 : r.rip_samples.front().p) << "\nrip_trials "
      << r.rip_samples.size() << "\nrip_worst " << r.rip_worst << "\nrip_ok " << (r.rip_ok ? 1 : 0)
      << '\n';
}

}  // namespace snid
