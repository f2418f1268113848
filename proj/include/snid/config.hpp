#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <string>
#include <utility>
#include <vector>

#include "snid/activation.hpp"
#include "snid/error.hpp"
#include "snid/gd_refine.hpp"
#include "snid/numdiff.hpp"
#include "snid/spm.hpp"
#include "snid/teacher.hpp"

namespace snid {

/// Joint SGD baseline over weights and shifts.
struct BaselineConfig {
  double lr = 0.005;
  long long batch = 64;
  /// 0 selects ceil(5/2 m D^2).
  long long n_train = 0;
  long long max_epochs = 50;
  double timeout_s = 480.0;
  /// Held-out points for the per-epoch E_inf curve.
  long long curve_points = 2000;
};

struct PipelineConfig {
  Eigen::Index D = 10;
  /// Order of neurons; when positive, m = ceil(2/5 D^beta) unless m is set.
  double beta_order = 0.0;
  Eigen::Index m = 0;
  std::string activation = "tanh";
  std::string shift_law = "uniform:-0.5,0.5";
  DerivativeMode deriv;
  /// 0 selects ceil(log(D) m).
  Eigen::Index n_hessians = 0;
  SpmConfig spm;
  RefineConfig refine;
  BaselineConfig baseline;
  Eigen::Index n_eval = 100000;
  std::uint64_t seed = 1;
  std::string out_dir;
  bool dump_spectrum = false;

  Eigen::Index resolved_m() const {
    if (m > 0) return m;
    if (beta_order > 0.0) {
      // Guard against 0.4 * D^beta landing a hair above an integer.
      const double v = 0.4 * std::pow(static_cast<double>(D), beta_order);
      return static_cast<Eigen::Index>(std::ceil(v - 1e-9));
    }
    return 0;
  }

  Eigen::Index resolved_n_hessians() const {
    if (n_hessians > 0) return n_hessians;
    return static_cast<Eigen::Index>(
        std::ceil(std::log(static_cast<double>(D)) * static_cast<double>(resolved_m()) - 1e-9));
  }

  void validate() const {
    if (D < 2) throw ValidationError("config: D must be at least 2");
    if (resolved_m() < 1) throw ValidationError("config: set m or a positive beta-order");
    if (resolved_m() > D * (D + 1) / 2)
      throw ValidationError("config: m exceeds D(D+1)/2, the Hessian span cannot separate the neurons");
    if (resolved_n_hessians() < resolved_m()) throw ValidationError("config: n-hessians must be >= m");
    if (n_eval < 0) throw ValidationError("config: n-eval must be non-negative");
    parse_activation(activation);
    parse_shift_law(shift_law);
    if (!deriv.exact) deriv.fd.validate();
    spm.validate();
    refine.validate();
    if (!(baseline.lr > 0.0) || baseline.batch < 1 || baseline.max_epochs < 0)
      throw ValidationError("config: invalid baseline settings");
  }
};

namespace detail {

inline double to_double(const std::string& key, const std::string& v) {
  try {
    return parse_double(v, 0);
  } catch (const ParseError&) {
    throw ValidationError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

inline long long to_int(const std::string& key, const std::string& v) {
  try {
    return parse_int(v, 0);
  } catch (const ParseError&) {
    throw ValidationError("config: '" + key + "' expects an integer, got '" + v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ValidationError("config: '" + key + "' expects a boolean, got '" + v + "'");
}

}  // namespace detail

/// Names accepted by apply_setting; identical to the CLI flag names.
inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "D", "m", "beta-order", "activation", "shift-law", "fd-step", "exact-derivatives",
      "n-hessians", "spm-gamma", "spm-steps", "spm-tol", "spm-beta", "spm-dedup", "spm-restarts",
      "lr", "auto-step", "batch", "n-train", "max-steps", "stop-loss", "timeout-s", "n-eval",
      "seed", "out", "dump-spectrum", "baseline-lr", "baseline-batch", "baseline-n-train",
      "baseline-epochs", "baseline-timeout-s"};
  return keys;
}

inline void apply_setting(PipelineConfig& c, const std::string& key, const std::string& v) {
  using namespace detail;
  if (key == "D") c.D = to_int(key, v);
  else if (key == "m") c.m = to_int(key, v);
  else if (key == "beta-order") c.beta_order = to_double(key, v);
  else if (key == "activation") c.activation = v;
  else if (key == "shift-law") c.shift_law = v;
  else if (key == "fd-step") c.deriv.fd.step_h = to_double(key, v);
  else if (key == "exact-derivatives") c.deriv.exact = to_bool(key, v);
  else if (key == "n-hessians") c.n_hessians = to_int(key, v);
  else if (key == "spm-gamma") c.spm.gamma = to_double(key, v);
  else if (key == "spm-steps") c.spm.max_steps = static_cast<int>(to_int(key, v));
  else if (key == "spm-tol") c.spm.conv_tol = to_double(key, v);
  else if (key == "spm-beta") c.spm.beta = to_double(key, v);
  else if (key == "spm-dedup") c.spm.dedup_cos = to_double(key, v);
  else if (key == "spm-restarts") c.spm.max_restarts = to_int(key, v);
  else if (key == "lr") c.refine.gamma = to_double(key, v);
  else if (key == "auto-step") c.refine.auto_step = to_bool(key, v);
  else if (key == "batch") c.refine.batch = to_int(key, v);
  else if (key == "n-train") c.refine.n_train = to_int(key, v);
  else if (key == "max-steps") c.refine.max_steps = to_int(key, v);
  else if (key == "stop-loss") c.refine.stop_loss = to_double(key, v);
  else if (key == "timeout-s") c.refine.timeout_s = to_double(key, v);
  else if (key == "n-eval") c.n_eval = to_int(key, v);
  else if (key == "seed") {
    try {
      c.seed = parse_u64(v, 0);
    } catch (const ParseError&) {
      throw ValidationError("config: 'seed' expects an unsigned integer, got '" + v + "'");
    }
  }
  else if (key == "out") c.out_dir = v;
  else if (key == "dump-spectrum") c.dump_spectrum = to_bool(key, v);
  else if (key == "baseline-lr") c.baseline.lr = to_double(key, v);
  else if (key == "baseline-batch") c.baseline.batch = to_int(key, v);
  else if (key == "baseline-n-train") c.baseline.n_train = to_int(key, v);
  else if (key == "baseline-epochs") c.baseline.max_epochs = to_int(key, v);
  else if (key == "baseline-timeout-s") c.baseline.timeout_s = to_double(key, v);
  else throw ValidationError("config: unknown key '" + key + "'");
}

/// Flat `key = value` lines; `[section]` headers only group keys visually
/// and `#` starts a comment.
inline std::vector<std::pair<std::string, std::string>> read_config_entries(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [no, raw] : detail::content_lines(in)) {
    const auto first = raw.find_first_not_of(" \t");
    const auto last = raw.find_last_not_of(" \t\r");
    const std::string line = raw.substr(first, last - first + 1);
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("unterminated section header", no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", no);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t");
      return s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ParseError("empty key or value", no);
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline void apply_config(PipelineConfig& c, std::istream& in) {
  for (const auto& [k, v] : read_config_entries(in)) apply_setting(c, k, v);
}

/// Settings echoed into result files, in a fixed order.
inline std::vector<std::pair<std::string, std::string>> config_echo(const PipelineConfig& c) {
  auto num = [](double x) {
    std::ostringstream os;
    os << std::setprecision(17) << x;
    return os.str();
  };
  return {{"D", std::to_string(c.D)},
          {"m", std::to_string(c.resolved_m())},
          {"beta-order", num(c.beta_order)},
          {"activation", c.activation},
          {"shift-law", c.shift_law},
          {"exact-derivatives", c.deriv.exact ? "1" : "0"},
          {"fd-step", num(c.deriv.fd.step_h)},
          {"n-hessians", std::to_string(c.resolved_n_hessians())},
          {"spm-gamma", num(c.spm.gamma)},
          {"spm-steps", std::to_string(c.spm.max_steps)},
          {"spm-beta", num(c.spm.beta)},
          {"spm-restarts", std::to_string(c.spm.max_restarts > 0 ? c.spm.max_restarts
                                                                 : default_restarts(c.resolved_m()))},
          {"lr", num(c.refine.gamma)},
          {"auto-step", c.refine.auto_step ? "1" : "0"},
          {"batch", std::to_string(c.refine.batch)},
          {"n-train", std::to_string(c.refine.n_train)},
          {"max-steps", std::to_string(c.refine.max_steps)},
          {"stop-loss", num(c.refine.stop_loss)},
          {"n-eval", std::to_string(c.n_eval)},
          {"seed", std::to_string(c.seed)}};
}

}  // namespace snid
