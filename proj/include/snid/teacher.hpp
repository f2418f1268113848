#pragma once

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "snid/activation.hpp"
#include "snid/error.hpp"
#include "snid/random.hpp"

namespace snid {

/// Thread-safe counter that stays copyable (copies take a snapshot).
class Counter {
 public:
  Counter() = default;
  Counter(const Counter& other) : value_(other.get()) {}
  Counter& operator=(const Counter& other) {
    value_.store(other.get(), std::memory_order_relaxed);
    return *this;
  }
  void add(std::uint64_t n = 1) const { value_.fetch_add(n, std::memory_order_relaxed); }
  std::uint64_t get() const { return value_.load(std::memory_order_relaxed); }
  void reset() const { value_.store(0, std::memory_order_relaxed); }

 private:
  mutable std::atomic<std::uint64_t> value_{0};
};

inline constexpr double kUnitNormTolerance = 1e-12;

namespace detail {
inline void check_unit_columns(const Eigen::MatrixXd& w, const char* who) {
  for (Eigen::Index k = 0; k < w.cols(); ++k) {
    const double n = w.col(k).norm();
    if (!(std::abs(n - 1.0) <= kUnitNormTolerance)) {
      std::ostringstream os;
      os << who << ": column " << k << " has norm " << std::setprecision(17) << n
         << ", expected 1";
      throw ValidationError(os.str());
    }
  }
}
}  // namespace detail

/// The planted network f(x) = sum_k g(<w_k, x> + tau_k), reachable through a
/// counted black-box query. The analytic derivative oracles are for tests and
/// the exact-derivative pipeline mode; they are tallied separately.
class TeacherNetwork {
 public:
  TeacherNetwork(Eigen::MatrixXd weights, Eigen::VectorXd shifts, Activation act,
                 std::uint64_t seed = 0)
      : w_(std::move(weights)), tau_(std::move(shifts)), act_(std::move(act)), seed_(seed) {
    if (w_.rows() < 1 || w_.cols() < 1)
      throw ValidationError("teacher network needs D >= 1 and m >= 1");
    if (tau_.size() != w_.cols())
      throw ValidationError("teacher network: shift vector length does not match m");
    detail::check_unit_columns(w_, "teacher network");
    for (Eigen::Index k = 0; k < tau_.size(); ++k) {
      if (!(std::abs(tau_[k]) <= act_.tau_inf())) {
        std::ostringstream os;
        os << "teacher network: shift " << k << " = " << tau_[k]
           << " outside [-tau_inf, tau_inf] with tau_inf = " << act_.tau_inf();
        throw ValidationError(os.str());
      }
    }
  }

  Eigen::Index dim() const noexcept { return w_.rows(); }
  Eigen::Index neurons() const noexcept { return w_.cols(); }
  const Eigen::MatrixXd& weights() const noexcept { return w_; }
  const Eigen::VectorXd& shifts() const noexcept { return tau_; }
  const Activation& activation() const noexcept { return act_; }
  std::uint64_t seed() const noexcept { return seed_; }

  /// Black-box query. Counts one network evaluation.
  double operator()(const Eigen::VectorXd& x) const {
    check_dim(x);
    queries_.add();
    return evaluate(x);
  }
  double eval(const Eigen::VectorXd& x) const { return (*this)(x); }

  std::uint64_t query_count() const { return queries_.get(); }
  std::uint64_t oracle_calls() const { return oracle_.get(); }
  void reset_counters() const {
    queries_.reset();
    oracle_.reset();
  }

  Eigen::VectorXd analytic_gradient(const Eigen::VectorXd& x) const {
    check_dim(x);
    oracle_.add();
    const Eigen::VectorXd z = w_.transpose() * x + tau_;
    Eigen::VectorXd c(z.size());
    for (Eigen::Index k = 0; k < z.size(); ++k) c[k] = act_.d1(z[k]);
    return w_ * c;
  }

  Eigen::MatrixXd analytic_hessian(const Eigen::VectorXd& x) const {
    check_dim(x);
    oracle_.add();
    const Eigen::VectorXd z = w_.transpose() * x + tau_;
    Eigen::VectorXd c(z.size());
    for (Eigen::Index k = 0; k < z.size(); ++k) c[k] = act_.d2(z[k]);
    return w_ * c.asDiagonal() * w_.transpose();
  }

  /// <grad^n f(x), u^{(x)n}> = sum_k g^(n)(<w_k, x> + tau_k) <w_k, u>^n.
  double analytic_directional(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                              int n) const {
    check_dim(x);
    check_dim(u);
    oracle_.add();
    const Eigen::VectorXd z = w_.transpose() * x + tau_;
    const Eigen::VectorXd p = w_.transpose() * u;
    double acc = 0.0;
    for (Eigen::Index k = 0; k < z.size(); ++k)
      acc += act_.derivative(n, z[k]) * std::pow(p[k], n);
    return acc;
  }

 private:
  void check_dim(const Eigen::VectorXd& x) const {
    if (x.size() != w_.rows())
      throw ValidationError("dimension mismatch: expected input of length " +
                            std::to_string(w_.rows()) + ", got " +
                            std::to_string(x.size()));
  }

  double evaluate(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd z = w_.transpose() * x + tau_;
    double acc = 0.0;
    for (Eigen::Index k = 0; k < z.size(); ++k) acc += act_(z[k]);
    return acc;
  }

  Eigen::MatrixXd w_;
  Eigen::VectorXd tau_;
  Activation act_;
  std::uint64_t seed_;
  Counter queries_;
  Counter oracle_;
};

/// Student f^(x) = sum_k g(s_k <w^_k, x> + tau^_k) of identical architecture.
struct StudentNetwork {
  Eigen::MatrixXd weights;  // D x m, unit columns
  Eigen::VectorXd signs;    // entries +-1
  Eigen::VectorXd shifts;
  Activation act;

  StudentNetwork(Eigen::MatrixXd w, Eigen::VectorXd s, Eigen::VectorXd tau, Activation a)
      : weights(std::move(w)), signs(std::move(s)), shifts(std::move(tau)), act(std::move(a)) {
    if (signs.size() != weights.cols() || shifts.size() != weights.cols())
      throw ValidationError("student network: inconsistent neuron counts");
    for (Eigen::Index k = 0; k < signs.size(); ++k)
      if (signs[k] != 1.0 && signs[k] != -1.0)
        throw ValidationError("student network: signs must be +-1");
    detail::check_unit_columns(weights, "student network");
  }

  Eigen::Index dim() const noexcept { return weights.rows(); }
  Eigen::Index neurons() const noexcept { return weights.cols(); }

  /// Columns s_k w^_k.
  Eigen::MatrixXd effective_weights() const { return weights * signs.asDiagonal(); }

  /// Folds the signs into the columns, leaving all signs +1.
  void fold_signs() {
    weights = effective_weights();
    signs.setOnes();
  }

  double operator()(const Eigen::VectorXd& x) const {
    if (x.size() != weights.rows()) throw ValidationError("student network: dimension mismatch");
    const Eigen::VectorXd z = (weights.transpose() * x).cwiseProduct(signs) + shifts;
    double acc = 0.0;
    for (Eigen::Index k = 0; k < z.size(); ++k) acc += act(z[k]);
    return acc;
  }
};

struct UniformShift {
  double a = -0.5, b = 0.5;
};
struct GaussianShift {
  double sigma = 0.05;
};
struct FixedShift {
  Eigen::VectorXd values;
};
using ShiftLaw = std::variant<UniformShift, GaussianShift, FixedShift>;

/// Parses "uniform:a,b", "gaussian:sigma" or "fixed:t1,t2,...".
inline ShiftLaw parse_shift_law(const std::string& text) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  std::vector<double> args;
  if (colon != std::string::npos) {
    std::stringstream ss(text.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        args.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw ValidationError("shift law '" + text + "': bad number '" + item + "'");
      }
    }
  }
  if (kind == "uniform" && args.size() == 2) return UniformShift{args[0], args[1]};
  if (kind == "gaussian" && args.size() == 1) return GaussianShift{args[0]};
  if (kind == "fixed" && !args.empty())
    return FixedShift{Eigen::Map<Eigen::VectorXd>(args.data(), static_cast<Eigen::Index>(args.size()))};
  throw ValidationError("shift law '" + text +
                        "' not understood (uniform:a,b | gaussian:sigma | fixed:t1,...)");
}

inline std::string to_string(const ShiftLaw& law) {
  std::ostringstream os;
  // Shortest decimal that round-trips.
  auto num = [](double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  if (auto u = std::get_if<UniformShift>(&law)) {
    os << "uniform:" << num(u->a) << "," << num(u->b);
  } else if (auto g = std::get_if<GaussianShift>(&law)) {
    os << "gaussian:" << num(g->sigma);
  } else {
    const auto& f = std::get<FixedShift>(law);
    os << "fixed:";
    for (Eigen::Index i = 0; i < f.values.size(); ++i) os << (i ? "," : "") << num(f.values[i]);
  }
  return os.str();
}

struct SampledTeacher {
  TeacherNetwork net;
  std::size_t clamp_events = 0;  // Gaussian shifts clamped to +-tau_inf
};

/// Weights i.i.d. uniform on the sphere, shifts from `law`.
inline SampledTeacher sample_teacher(Eigen::Index D, Eigen::Index m, const ShiftLaw& law,
                                     const Activation& act, std::uint64_t seed) {
  if (D < 1 || m < 1) throw ValidationError("sample_teacher: need D >= 1 and m >= 1");
  const double tmax = act.tau_inf();
  Rng rng(seed);
  Eigen::MatrixXd w = sphere_columns(rng, D, m);
  Eigen::VectorXd tau(m);
  std::size_t clamped = 0;
  if (auto u = std::get_if<UniformShift>(&law)) {
    if (!(u->a <= u->b) || u->a < -tmax || u->b > tmax)
      throw ValidationError("sample_teacher: uniform shift law exceeds [-tau_inf, tau_inf]");
    std::uniform_real_distribution<double> dist(u->a, u->b);
    for (Eigen::Index k = 0; k < m; ++k) tau[k] = dist(rng);
  } else if (auto g = std::get_if<GaussianShift>(&law)) {
    if (!(g->sigma >= 0.0)) throw ValidationError("sample_teacher: negative sigma");
    std::normal_distribution<double> dist(0.0, g->sigma);
    for (Eigen::Index k = 0; k < m; ++k) {
      const double t = g->sigma > 0.0 ? dist(rng) : 0.0;
      tau[k] = std::clamp(t, -tmax, tmax);
      if (tau[k] != t) ++clamped;
    }
  } else {
    const auto& f = std::get<FixedShift>(law);
    if (f.values.size() != m) throw ValidationError("sample_teacher: fixed shifts need m values");
    if (f.values.cwiseAbs().maxCoeff() > tmax)
      throw ValidationError("sample_teacher: fixed shifts exceed [-tau_inf, tau_inf]");
    tau = f.values;
  }
  return {TeacherNetwork(std::move(w), std::move(tau), act, seed), clamped};
}

// ---------------------------------------------------------------------------
// Text formats

namespace detail {

inline std::string strip_comment(const std::string& line) {
  const auto hash = line.find('#');
  return hash == std::string::npos ? line : line.substr(0, hash);
}

/// Reads non-blank, comment-stripped lines together with their line numbers.
inline std::vector<std::pair<std::size_t, std::string>> content_lines(std::istream& in) {
  std::vector<std::pair<std::size_t, std::string>> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    std::string s = strip_comment(line);
    if (s.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.emplace_back(no, std::move(s));
  }
  return out;
}

inline std::vector<std::string> tokens(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

inline double parse_double(const std::string& tok, std::size_t line) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (!tok.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v))
    throw ParseError("expected a finite decimal, got '" + tok + "'", line);
  return v;
}

inline long long parse_int(const std::string& tok, std::size_t line) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError("expected an integer, got '" + tok + "'", line);
  return v;
}

inline std::uint64_t parse_u64(const std::string& tok, std::size_t line) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError("expected an unsigned integer, got '" + tok + "'", line);
  return v;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << std::setprecision(17);
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  return in;
}

}  // namespace detail

/// Network file: header `D m activation tau_inf seed`, then one line per
/// neuron with the D weight entries followed by the shift.
inline void write_network(std::ostream& out, const Eigen::MatrixXd& w,
                          const Eigen::VectorXd& tau, const Activation& act,
                          std::uint64_t seed) {
  if (act.kind() == ActivationKind::Custom)
    throw ValidationError("custom activations cannot be written to a network file");
  out << std::setprecision(17);
  out << w.rows() << ' ' << w.cols() << ' ' << act.name() << ' ' << act.tau_inf() << ' '
      << seed << '\n';
  for (Eigen::Index k = 0; k < w.cols(); ++k) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) out << w(i, k) << ' ';
    out << tau[k] << '\n';
  }
}

inline void save(const TeacherNetwork& net, const std::string& path) {
  auto out = detail::open_out(path);
  write_network(out, net.weights(), net.shifts(), net.activation(), net.seed());
}

/// Parsed contents of a network file before any model validation.
struct NetworkData {
  Eigen::MatrixXd weights;
  Eigen::VectorXd shifts;
  Activation act;
  std::uint64_t seed = 0;
};

inline NetworkData read_network_data(std::istream& in) {
  const auto lines = detail::content_lines(in);
  if (lines.empty()) throw ParseError("empty network file", 0);
  const auto head = detail::tokens(lines[0].second);
  const std::size_t hl = lines[0].first;
  if (head.size() != 5) throw ParseError("header must be 'D m activation tau_inf seed'", hl);
  const long long D = detail::parse_int(head[0], hl);
  const long long m = detail::parse_int(head[1], hl);
  if (D < 1 || m < 1) throw ParseError("D and m must be positive", hl);
  Activation act = [&] {
    try {
      return parse_activation(head[2]);
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), hl);
    }
  }();
  const double tau_inf = detail::parse_double(head[3], hl);
  if (std::abs(tau_inf - act.tau_inf()) > 1e-12)
    throw ParseError("tau_inf " + head[3] + " does not match activation " + act.name(), hl);
  const std::uint64_t seed = detail::parse_u64(head[4], hl);
  if (lines.size() != static_cast<std::size_t>(m) + 1) {
    const std::size_t where = lines.back().first;
    throw ParseError("expected " + std::to_string(m) + " neuron lines, found " +
                         std::to_string(lines.size() - 1),
                     where);
  }
  Eigen::MatrixXd w(D, m);
  Eigen::VectorXd tau(m);
  for (long long k = 0; k < m; ++k) {
    const auto& [no, text] = lines[static_cast<std::size_t>(k) + 1];
    const auto tok = detail::tokens(text);
    if (tok.size() != static_cast<std::size_t>(D) + 1)
      throw ParseError("expected " + std::to_string(D + 1) + " values, found " +
                           std::to_string(tok.size()),
                       no);
    for (long long i = 0; i < D; ++i) w(i, k) = detail::parse_double(tok[i], no);
    tau[k] = detail::parse_double(tok[D], no);
  }
  return {std::move(w), std::move(tau), std::move(act), seed};
}

inline TeacherNetwork read_network(std::istream& in) {
  NetworkData d = read_network_data(in);
  return TeacherNetwork(std::move(d.weights), std::move(d.shifts), std::move(d.act), d.seed);
}

/// A student stored in the network format carries its signs folded into the
/// weights; its shifts need not respect tau_inf.
inline StudentNetwork read_student(std::istream& in) {
  NetworkData d = read_network_data(in);
  const Eigen::Index m = d.weights.cols();
  return StudentNetwork(std::move(d.weights), Eigen::VectorXd::Ones(m), std::move(d.shifts),
                        std::move(d.act));
}

inline void write_student(std::ostream& out, const StudentNetwork& s, std::uint64_t seed = 0) {
  write_network(out, s.effective_weights(), s.shifts, s.act, seed);
}

inline TeacherNetwork load(const std::string& path) {
  auto in = detail::open_in(path);
  return read_network(in);
}

inline StudentNetwork load_student(const std::string& path) {
  auto in = detail::open_in(path);
  return read_student(in);
}

/// Recovered-weights file: header `D m`, then one line of D decimals per column.
inline void write_weights(std::ostream& out, const Eigen::MatrixXd& w) {
  out << std::setprecision(17) << w.rows() << ' ' << w.cols() << '\n';
  for (Eigen::Index k = 0; k < w.cols(); ++k) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) out << (i ? " " : "") << w(i, k);
    out << '\n';
  }
}

inline Eigen::MatrixXd read_weights(std::istream& in) {
  const auto lines = detail::content_lines(in);
  if (lines.empty()) throw ParseError("empty weights file", 0);
  const auto head = detail::tokens(lines[0].second);
  if (head.size() != 2) throw ParseError("header must be 'D m'", lines[0].first);
  const long long D = detail::parse_int(head[0], lines[0].first);
  const long long m = detail::parse_int(head[1], lines[0].first);
  if (D < 1 || m < 1) throw ParseError("D and m must be positive", lines[0].first);
  if (lines.size() != static_cast<std::size_t>(m) + 1)
    throw ParseError("expected " + std::to_string(m) + " weight lines", lines.back().first);
  Eigen::MatrixXd w(D, m);
  for (long long k = 0; k < m; ++k) {
    const auto& [no, text] = lines[static_cast<std::size_t>(k) + 1];
    const auto tok = detail::tokens(text);
    if (tok.size() != static_cast<std::size_t>(D))
      throw ParseError("expected " + std::to_string(D) + " values", no);
    for (long long i = 0; i < D; ++i) w(i, k) = detail::parse_double(tok[i], no);
  }
  detail::check_unit_columns(w, "weights file");
  return w;
}

}  // namespace snid
