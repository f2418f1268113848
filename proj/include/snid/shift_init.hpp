#pragma once

#include <cmath>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "snid/activation.hpp"
#include "snid/error.hpp"
#include "snid/numdiff.hpp"
#include "snid/teacher.hpp"

namespace snid {

/// Signs and initial shifts recovered from second and third directional
/// derivatives at the origin.
struct InitResult {
  Eigen::VectorXd signs;  // +-1
  Eigen::VectorXd tau0;   // within [-tau_inf, tau_inf]
  Eigen::VectorXd c2, c3;
  double cond_g2 = 0.0;
  double cond_g3 = 0.0;
  /// Neurons whose sign came from g'''(tau0_k) instead of g'''(0), or whose
  /// C3 coefficient was exactly zero.
  std::vector<Eigen::Index> sign_fallbacks;
  std::uint64_t queries = 0;
  std::uint64_t oracle_calls = 0;
};

/// Hadamard power (W^T W)^{.n}.
inline Eigen::MatrixXd grammian(const Eigen::MatrixXd& w, int n) {
  if (n < 1) throw ValidationError("grammian: order must be >= 1");
  return (w.transpose() * w).array().pow(static_cast<double>(n)).matrix();
}

/// T~_{n,k} = Delta^n[f(. w_k)](0) for every column, by finite differences.
template <class F>
Eigen::VectorXd directional_derivs_at_zero(F&& f, const Eigen::MatrixXd& wh, int n,
                                           const FDConfig& cfg) {
  if (n != 2 && n != 3) throw ValidationError("directional_derivs_at_zero: order must be 2 or 3");
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(wh.rows());
  Eigen::VectorXd t(wh.cols());
  for (Eigen::Index k = 0; k < wh.cols(); ++k)
    t[k] = fd_directional(f, zero, Eigen::VectorXd(wh.col(k)), n, cfg);
  return t;
}

/// Same quantity from the teacher, either by finite differences (counted
/// queries) or from the analytic oracle.
inline Eigen::VectorXd directional_derivs_at_zero(const TeacherNetwork& net,
                                                  const Eigen::MatrixXd& wh, int n,
                                                  const DerivativeMode& mode) {
  if (!mode.exact) return directional_derivs_at_zero(net, wh, n, mode.fd);
  if (n != 2 && n != 3) throw ValidationError("directional_derivs_at_zero: order must be 2 or 3");
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(wh.rows());
  Eigen::VectorXd t(wh.cols());
  for (Eigen::Index k = 0; k < wh.cols(); ++k)
    t[k] = net.analytic_directional(zero, wh.col(k), n);
  return t;
}

inline constexpr double kMaxGrammianCondition = 1e10;
inline constexpr double kSignFallbackThreshold = 1e-8;

namespace detail {

/// Solves the symmetric positive definite system with one step of
/// iterative refinement; returns the 2-norm condition number.
inline double spd_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, Eigen::VectorXd& x,
                        const char* name) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a, Eigen::EigenvaluesOnly);
  const double lmin = eig.eigenvalues().minCoeff();
  const double lmax = eig.eigenvalues().maxCoeff();
  const double cond = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
  if (!(cond <= kMaxGrammianCondition)) {
    std::ostringstream os;
    os << name << " is singular or ill-conditioned (condition number " << cond
       << "); the recovered weights are not incoherent enough";
    throw NumericalError(os.str());
  }
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw NumericalError(std::string(name) + " is not positive definite");
  x = llt.solve(b);
  x += llt.solve(Eigen::VectorXd(b - a * x));
  return cond;
}

inline InitResult solve_signs_shifts(const Eigen::MatrixXd& wh, const Activation& act,
                                     const Eigen::VectorXd& t2, const Eigen::VectorXd& t3) {
  InitResult r;
  r.cond_g2 = spd_solve(grammian(wh, 2), t2, r.c2, "G2");
  r.cond_g3 = spd_solve(grammian(wh, 3), t3, r.c3, "G3");
  const Eigen::Index m = wh.cols();
  r.tau0.resize(m);
  r.signs.resize(m);
  const double g3_zero = act.d3(0.0);
  for (Eigen::Index k = 0; k < m; ++k) {
    r.tau0[k] = invert_g2(act, r.c2[k]);
    double ref = g3_zero;
    bool fallback = std::abs(g3_zero) < kSignFallbackThreshold;
    if (fallback) ref = act.d3(r.tau0[k]);
    const double prod = r.c3[k] * ref;
    // C3 carries no sign information at all when it is exactly zero; +1 is kept
    // and the neuron reported.
    if (prod == 0.0) fallback = true;
    r.signs[k] = prod < 0.0 ? -1.0 : 1.0;
    if (fallback) r.sign_fallbacks.push_back(k);
  }
  return r;
}

}  // namespace detail

/// Solves G2 C2 = T2 and G3 C3 = T3, inverts g'' on C2 and reads signs
/// off C3 * g'''(0).
inline InitResult init_signs_shifts(const TeacherNetwork& net, const Eigen::MatrixXd& wh,
                                    const Activation& act, const DerivativeMode& mode) {
  if (wh.rows() != net.dim()) throw ValidationError("init_signs_shifts: dimension mismatch");
  detail::check_unit_columns(wh, "init_signs_shifts");
  const std::uint64_t q0 = net.query_count();
  const std::uint64_t o0 = net.oracle_calls();
  const Eigen::VectorXd t2 = directional_derivs_at_zero(net, wh, 2, mode);
  const Eigen::VectorXd t3 = directional_derivs_at_zero(net, wh, 3, mode);
  InitResult r = detail::solve_signs_shifts(wh, act, t2, t3);
  r.queries = net.query_count() - q0;
  r.oracle_calls = net.oracle_calls() - o0;
  return r;
}

/// Black-box variant for any callable f: R^D -> R.
template <class F>
InitResult init_signs_shifts(F&& f, const Eigen::MatrixXd& wh, const Activation& act,
                             const FDConfig& cfg) {
  detail::check_unit_columns(wh, "init_signs_shifts");
  const Eigen::VectorXd t2 = directional_derivs_at_zero(f, wh, 2, cfg);
  const Eigen::VectorXd t3 = directional_derivs_at_zero(f, wh, 3, cfg);
  InitResult r = detail::solve_signs_shifts(wh, act, t2, t3);
  r.queries = static_cast<std::uint64_t>(wh.cols()) * 7;
  return r;
}

/// InitResult file: a signs line, a shifts line, then the two condition numbers.
inline void write_init_result(std::ostream& out, const InitResult& r) {
  out << std::setprecision(17);
  out << "signs";
  for (Eigen::Index k = 0; k < r.signs.size(); ++k) out << ' ' << static_cast<int>(r.signs[k]);
  out << "\nshifts";
  for (Eigen::Index k = 0; k < r.tau0.size(); ++k) out << ' ' << r.tau0[k];
  out << "\ncond_g2 " << r.cond_g2 << "\ncond_g3 " << r.cond_g3 << '\n';
}

inline InitResult read_init_result(std::istream& in) {
  const auto lines = detail::content_lines(in);
  InitResult r;
  bool have_signs = false, have_shifts = false;
  for (const auto& [no, text] : lines) {
    const auto tok = detail::tokens(text);
    if (tok.empty()) continue;
    const auto values = [&, no = no] {
      Eigen::VectorXd v(static_cast<Eigen::Index>(tok.size()) - 1);
      for (std::size_t i = 1; i < tok.size(); ++i)
        v[static_cast<Eigen::Index>(i) - 1] = detail::parse_double(tok[i], no);
      return v;
    };
    if (tok[0] == "signs") {
      r.signs = values();
      for (Eigen::Index k = 0; k < r.signs.size(); ++k)
        if (r.signs[k] != 1.0 && r.signs[k] != -1.0) throw ParseError("signs must be +-1", no);
      have_signs = true;
    } else if (tok[0] == "shifts") {
      r.tau0 = values();
      have_shifts = true;
    } else if (tok[0] == "cond_g2" && tok.size() == 2) {
      r.cond_g2 = detail::parse_double(tok[1], no);
    } else if (tok[0] == "cond_g3" && tok.size() == 2) {
      r.cond_g3 = detail::parse_double(tok[1], no);
    } else {
      throw ParseError("unexpected entry '" + tok[0] + "'", no);
    }
  }
  if (!have_signs || !have_shifts || r.signs.size() != r.tau0.size())
    throw ParseError("init file needs matching 'signs' and 'shifts' lines", 0);
  return r;
}

}  // namespace snid
