#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "snid/activation.hpp"
#include "snid/config.hpp"
#include "snid/diagnostics.hpp"
#include "snid/error.hpp"
#include "snid/gd_refine.hpp"
#include "snid/random.hpp"
#include "snid/shift_init.hpp"
#include "snid/spm.hpp"
#include "snid/subspace.hpp"
#include "snid/teacher.hpp"

namespace snid {

/// A pipeline stage failed; wraps the underlying error with the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what, bool validation)
      : Error(stage + ": " + what), stage_(std::move(stage)), message_(what), validation_(validation) {}
  const std::string& stage() const noexcept { return stage_; }
  const std::string& message() const noexcept { return message_; }
  /// The underlying error was a ValidationError.
  bool validation() const noexcept { return validation_; }

 private:
  std::string stage_;
  std::string message_;
  bool validation_;
};

struct ExperimentResult {
  std::string kind = "pipeline";
  Eigen::Index D = 0, m = 0, n_hessians = 0;
  double beta = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> config;

  bool ok = true;
  std::string error_stage, error;

  Metrics metrics;
  bool scored = false;

  double sigma_ratio = std::numeric_limits<double>::quiet_NaN();
  double projector_err = std::numeric_limits<double>::quiet_NaN();
  /// FD step (0 in exact mode) and the measured deviation of FD Hessians from
  /// the analytic ones on a few probe points; probe queries are not counted.
  double fd_step = 0.0;
  double fd_eps_hat = 0.0;

  long long spm_restarts = 0, spm_accepted = 0, spm_duplicate = 0, spm_rejected = 0, spm_failed = 0;

  double cond_g2 = std::numeric_limits<double>::quiet_NaN();
  double cond_g3 = std::numeric_limits<double>::quiet_NaN();
  long long sign_fallbacks = 0;
  double init_max_weight_err = std::numeric_limits<double>::quiet_NaN();
  double init_shift_err = std::numeric_limits<double>::quiet_NaN();
  double init_shift_bound = std::numeric_limits<double>::quiet_NaN();
  double init_sign_accuracy = std::numeric_limits<double>::quiet_NaN();
  double final_shift_err = std::numeric_limits<double>::quiet_NaN();

  long long refine_steps = 0;
  std::string refine_stop;
  double refine_gamma = std::numeric_limits<double>::quiet_NaN();
  double lambda_max = std::numeric_limits<double>::quiet_NaN();
  double initial_loss = std::numeric_limits<double>::quiet_NaN();
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  double contraction = std::numeric_limits<double>::quiet_NaN();

  /// Baseline only: E_inf on a fixed held-out set after each epoch.
  std::vector<double> epoch_E_inf;
  long long epochs = 0;

  std::uint64_t queries_hessian = 0, queries_init = 0, queries_refine = 0, oracle_calls = 0;
  std::uint64_t eval_queries = 0;
  double query_ceiling = 0.0;

  std::vector<std::pair<std::string, double>> stage_times;
  double total_time = 0.0;

  std::uint64_t queries_total() const { return queries_hessian + queries_init + queries_refine; }
  double query_ratio() const {
    return query_ceiling > 0.0 ? static_cast<double>(queries_total()) / query_ceiling : 0.0;
  }
};

/// Soft ceiling 10 D m^2 log^2 m on the algorithm's network queries.
inline double query_ceiling(Eigen::Index D, Eigen::Index m) {
  const double lm = std::log(static_cast<double>(std::max<Eigen::Index>(m, 2)));
  return 10.0 * static_cast<double>(D) * static_cast<double>(m * m) * lm * lm;
}

// ---------------------------------------------------------------------------
// Artifacts

/// Writes named files under a run directory; a no-op when the directory is empty.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::string dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) std::filesystem::create_directories(dir_);
  }
  bool enabled() const { return !dir_.empty(); }
  std::string path(const std::string& name) const {
    return (std::filesystem::path(dir_) / name).string();
  }
  void write(const std::string& name, const std::function<void(std::ostream&)>& fn) const {
    if (!enabled()) return;
    auto out = detail::open_out(path(name));
    fn(out);
    if (!out) throw Error("failed writing '" + path(name) + "'");
  }

 private:
  std::string dir_;
};

// ---------------------------------------------------------------------------
// Stages

struct WeightRecovery {
  SubspaceProjector projector;
  CollectResult collected;
  std::uint64_t queries = 0;
  std::uint64_t oracle_calls = 0;
};

/// Hessian PCA followed by the subspace power method.
inline WeightRecovery recover_weights(const TeacherNetwork& net, Eigen::Index m, Eigen::Index n_h,
                                      const DerivativeMode& mode, const SpmConfig& spm,
                                      std::uint64_t seed) {
  const HessianSample hs = build_hessian_matrix(net, n_h, mode, derive_seed(seed, stream::hessian));
  SubspaceProjector p = top_m_projector(hs.columns, m, net.dim());
  CollectResult c = collect_weights(p, m, spm, derive_seed(seed, stream::spm));
  return {std::move(p), std::move(c), hs.queries, hs.oracle_calls};
}

/// Index map from a matching: truth value k goes to the student neuron perm[k].
inline Eigen::VectorXd align_to_student(const Eigen::VectorXd& truth,
                                        const std::vector<Eigen::Index>& perm) {
  Eigen::VectorXd out(truth.size());
  for (Eigen::Index k = 0; k < truth.size(); ++k) out[perm[static_cast<std::size_t>(k)]] = truth[k];
  return out;
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <class Fn>
auto run_stage(ExperimentResult& r, const std::string& name, Fn&& fn) {
  const auto t0 = Clock::now();
  try {
    auto v = fn();
    r.stage_times.emplace_back(name, seconds_since(t0));
    return v;
  } catch (const StageError&) {
    throw;
  } catch (const ValidationError& e) {
    r.stage_times.emplace_back(name, seconds_since(t0));
    throw StageError(name, e.what(), true);
  } catch (const std::exception& e) {
    r.stage_times.emplace_back(name, seconds_since(t0));
    throw StageError(name, e.what(), false);
  }
}

inline constexpr int kFdAccuracyProbes = 3;

inline void fill_header(ExperimentResult& r, const PipelineConfig& cfg) {
  r.D = cfg.D;
  r.m = cfg.resolved_m();
  r.n_hessians = cfg.resolved_n_hessians();
  r.beta = cfg.beta_order;
  r.seed = cfg.seed;
  r.fd_step = cfg.deriv.exact ? 0.0 : cfg.deriv.fd.step_h;
  r.config = config_echo(cfg);
  r.query_ceiling = query_ceiling(r.D, r.m);
}

inline void write_timings(const ArtifactWriter& art, const ExperimentResult& r) {
  art.write("timings.csv", [&](std::ostream& out) {
    out << "stage,seconds\n";
    for (const auto& [s, t] : r.stage_times) out << s << ',' << t << '\n';
    out << "total," << r.total_time << '\n';
  });
}

}  // namespace detail

void write_result_csv(std::ostream& out, const std::vector<ExperimentResult>& rows, bool with_times);

inline void write_result_csv(std::ostream& out, const ExperimentResult& r) {
  write_result_csv(out, std::vector<ExperimentResult>{r}, false);
}

/// Runs the full identification pipeline on a freshly sampled teacher. Stage
/// failures are rethrown as StageError after the artifacts produced so far
/// (and any partial weights) have been written.
inline ExperimentResult run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  const auto t_total = detail::Clock::now();
  ExperimentResult r;
  detail::fill_header(r, cfg);
  const ArtifactWriter art(cfg.out_dir);
  const Activation act = parse_activation(cfg.activation);
  const Eigen::Index m = r.m;
  const Eigen::Index D = cfg.D;

  try {
    const SampledTeacher st = detail::run_stage(r, "generate", [&] {
      return sample_teacher(D, m, parse_shift_law(cfg.shift_law), act,
                            derive_seed(cfg.seed, stream::teacher));
    });
    const TeacherNetwork& net = st.net;
    art.write("teacher.txt", [&](std::ostream& o) {
      write_network(o, net.weights(), net.shifts(), net.activation(), net.seed());
    });

    const HessianSample hs = detail::run_stage(r, "hessians", [&] {
      const std::uint64_t q0 = net.query_count();
      HessianSample h = build_hessian_matrix(net, r.n_hessians, cfg.deriv,
                                             derive_seed(cfg.seed, stream::hessian));
      h.queries = net.query_count() - q0;
      return h;
    });
    r.queries_hessian = hs.queries;
    r.oracle_calls += hs.oracle_calls;

    const SubspaceProjector proj = detail::run_stage(
        r, "subspace", [&] { return top_m_projector(hs.columns, m, D); });
    const Eigen::VectorXd& sv = proj.singular_values();
    r.sigma_ratio = sv.size() > m ? sv[m] / sv[m - 1] : 0.0;
    if (cfg.dump_spectrum) art.write("spectrum.csv", [&](std::ostream& o) { write_spectrum_csv(o, proj); });
    r.projector_err = projector_distance(proj, exact_projector(net.weights()));
    if (!cfg.deriv.exact)
      r.fd_eps_hat = fd_accuracy(net, cfg.deriv.fd, detail::kFdAccuracyProbes, derive_seed(cfg.seed, stream::diagnostics));

    const CollectResult col = detail::run_stage(r, "spm", [&] {
      try {
        return collect_weights(proj, m, cfg.spm, derive_seed(cfg.seed, stream::spm));
      } catch (const IncompleteRecoveryError& e) {
        const CollectResult& part = e.partial();
        r.spm_restarts = static_cast<long long>(part.restarts.size());
        r.spm_accepted = part.accepted();
        art.write("weights.partial.txt", [&](std::ostream& o) { write_weights(o, part.weights); });
        art.write("restarts.log", [&](std::ostream& o) { write_restart_log(o, part); });
        throw;
      }
    });
    r.spm_restarts = static_cast<long long>(col.restarts.size());
    r.spm_accepted = col.count(RestartOutcome::Accepted);
    r.spm_duplicate = col.count(RestartOutcome::Duplicate);
    r.spm_rejected = col.count(RestartOutcome::Rejected);
    r.spm_failed = col.count(RestartOutcome::Failed);
    art.write("weights.txt", [&](std::ostream& o) { write_weights(o, col.weights); });
    art.write("restarts.log", [&](std::ostream& o) { write_restart_log(o, col); });

    const InitResult init = detail::run_stage(
        r, "init", [&] { return init_signs_shifts(net, col.weights, act, cfg.deriv); });
    r.queries_init = init.queries;
    r.oracle_calls += init.oracle_calls;
    r.cond_g2 = init.cond_g2;
    r.cond_g3 = init.cond_g3;
    r.sign_fallbacks = static_cast<long long>(init.sign_fallbacks.size());
    art.write("init.txt", [&](std::ostream& o) { write_init_result(o, init); });

    StudentNetwork student(col.weights, init.signs, init.tau0, act);
    // Evaluation-only view of the initialization quality.
    const Metrics m0 = match_and_score(student, net, 0, 0);
    r.init_max_weight_err = m0.max_weight_err;
    r.init_shift_err = m0.shift_rms * std::sqrt(static_cast<double>(m));
    r.init_sign_accuracy = m0.sign_accuracy;
    const double eps = cfg.deriv.exact ? 0.0 : cfg.deriv.fd.step_h * cfg.deriv.fd.step_h;
    r.init_shift_bound = init_shift_bound(m, D, eps, m0.max_weight_err);
    student.fold_signs();
    art.write("student_init.txt", [&](std::ostream& o) { write_student(o, student, cfg.seed); });

    const RefineResult ref = detail::run_stage(r, "refine", [&] {
      return refine(student, net, cfg.refine, derive_seed(cfg.seed, stream::refine),
                    align_to_student(net.shifts(), m0.perm));
    });
    r.queries_refine = ref.queries;
    r.refine_steps = ref.steps;
    r.refine_stop = to_string(ref.stop);
    r.refine_gamma = ref.gamma;
    r.lambda_max = ref.lambda_max;
    r.initial_loss = ref.initial_loss;
    r.final_loss = ref.final_loss;
    r.contraction = ref.contraction;
    art.write("trajectory.csv", [&](std::ostream& o) { write_trajectory_csv(o, ref); });
    art.write("student.txt", [&](std::ostream& o) { write_student(o, ref.student, cfg.seed); });

    r.metrics = detail::run_stage(r, "evaluate", [&] {
      return match_and_score(ref.student, net, cfg.n_eval, derive_seed(cfg.seed, stream::eval));
    });
    r.scored = true;
    r.eval_queries = r.metrics.eval_queries;
    r.final_shift_err = r.metrics.shift_rms * std::sqrt(static_cast<double>(m));
    art.write("metrics.txt", [&](std::ostream& o) { write_metrics(o, r.metrics); });
  } catch (const StageError& e) {
    r.ok = false;
    r.error_stage = e.stage();
    r.error = e.message();
    r.total_time = detail::seconds_since(t_total);
    art.write("result.csv", [&](std::ostream& o) { write_result_csv(o, r); });
    art.write("error.txt", [&](std::ostream& o) { o << e.what() << '\n'; });
    detail::write_timings(art, r);
    throw;
  }
  r.total_time = detail::seconds_since(t_total);
  art.write("result.csv", [&](std::ostream& o) { write_result_csv(o, r); });
  detail::write_timings(art, r);
  return r;
}

// ---------------------------------------------------------------------------
// Baseline

/// Joint SGD on weights and shifts of a same-architecture student started
/// from uniform random unit weights and zero shifts. Columns are renormalized
/// after every step to stay in the unit-weight model class.
inline ExperimentResult run_baseline_sgd(const PipelineConfig& cfg) {
  cfg.validate();
  const auto t_total = detail::Clock::now();
  ExperimentResult r;
  r.kind = "baseline";
  detail::fill_header(r, cfg);
  const ArtifactWriter art(cfg.out_dir);
  const Activation act = parse_activation(cfg.activation);
  const Eigen::Index m = r.m;
  const Eigen::Index D = cfg.D;
  const BaselineConfig& b = cfg.baseline;

  try {
    const SampledTeacher st = detail::run_stage(r, "generate", [&] {
      return sample_teacher(D, m, parse_shift_law(cfg.shift_law), act,
                            derive_seed(cfg.seed, stream::teacher));
    });
    const TeacherNetwork& net = st.net;
    art.write("teacher.txt", [&](std::ostream& o) {
      write_network(o, net.weights(), net.shifts(), net.activation(), net.seed());
    });

    const StudentNetwork trained = detail::run_stage(r, "baseline", [&] {
      Rng init_rng(derive_seed(cfg.seed, stream::baseline, 0));
      Eigen::MatrixXd w = sphere_columns(init_rng, D, m);
      Eigen::VectorXd tau = Eigen::VectorXd::Zero(m);

      const long long n = b.n_train > 0 ? b.n_train
                                        : static_cast<long long>(std::ceil(2.5 * static_cast<double>(m * D * D)));
      const std::uint64_t q0 = net.query_count();
      const Samples s = draw_samples(net, n, derive_seed(cfg.seed, stream::baseline, 1));
      r.queries_refine = net.query_count() - q0;

      const std::uint64_t e0 = net.query_count();
      const Samples held = draw_samples(net, std::max<long long>(b.curve_points, 1),
                                        derive_seed(cfg.seed, stream::baseline, 2));
      r.eval_queries += net.query_count() - e0;
      auto curve_point = [&] {
        const Eigen::MatrixXd z = (w.transpose() * held.x).colwise() + tau;
        double worst = 0.0;
        for (Eigen::Index i = 0; i < z.cols(); ++i) {
          double f = 0.0;
          for (Eigen::Index k = 0; k < m; ++k) f += act(z(k, i));
          worst = std::max(worst, std::abs(f - held.y[i]));
        }
        return worst / static_cast<double>(m);
      };

      Rng order_rng(derive_seed(cfg.seed, stream::baseline, 3));
      std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), Eigen::Index{0});
      Eigen::MatrixXd gw(D, m);
      Eigen::VectorXd gt(m), z(m), d1(m);
      const auto t0 = detail::Clock::now();
      r.epoch_E_inf.push_back(curve_point());
      for (long long epoch = 0; epoch < b.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        for (long long start = 0; start < n; start += b.batch) {
          const long long stop = std::min(n, start + b.batch);
          gw.setZero();
          gt.setZero();
          for (long long t = start; t < stop; ++t) {
            const Eigen::Index i = order[static_cast<std::size_t>(t)];
            z.noalias() = w.transpose() * s.x.col(i);
            z += tau;
            double f = 0.0;
            for (Eigen::Index k = 0; k < m; ++k) {
              f += act(z[k]);
              d1[k] = act.d1(z[k]);
            }
            const double res = f - s.y[i];
            gt += res * d1;
            gw.noalias() += s.x.col(i) * (res * d1).transpose();
          }
          const double scale = b.lr / static_cast<double>(stop - start);
          w -= scale * gw;
          tau -= scale * gt;
          for (Eigen::Index k = 0; k < m; ++k) {
            const double nk = w.col(k).norm();
            if (!(nk > 0.0) || !std::isfinite(nk)) throw NumericalError("baseline: weight column collapsed");
            w.col(k) /= nk;
          }
        }
        ++r.epochs;
        r.epoch_E_inf.push_back(curve_point());
        if (!std::isfinite(r.epoch_E_inf.back())) throw NumericalError("baseline: training diverged");
        if (detail::seconds_since(t0) > b.timeout_s) break;
      }
      return StudentNetwork(w, Eigen::VectorXd::Ones(m), tau, act);
    });
    art.write("student.txt", [&](std::ostream& o) { write_student(o, trained, cfg.seed); });
    art.write("curve.csv", [&](std::ostream& o) {
      o << "epoch,E_inf\n";
      for (std::size_t e = 0; e < r.epoch_E_inf.size(); ++e) o << e << ',' << r.epoch_E_inf[e] << '\n';
    });

    r.metrics = detail::run_stage(r, "evaluate", [&] {
      return match_and_score(trained, net, cfg.n_eval, derive_seed(cfg.seed, stream::eval));
    });
    r.scored = true;
    r.eval_queries += r.metrics.eval_queries;
    r.final_shift_err = r.metrics.shift_rms * std::sqrt(static_cast<double>(m));
    art.write("metrics.txt", [&](std::ostream& o) { write_metrics(o, r.metrics); });
  } catch (const StageError& e) {
    r.ok = false;
    r.error_stage = e.stage();
    r.error = e.message();
    r.total_time = detail::seconds_since(t_total);
    art.write("result.csv", [&](std::ostream& o) { write_result_csv(o, r); });
    art.write("error.txt", [&](std::ostream& o) { o << e.what() << '\n'; });
    throw;
  }
  r.total_time = detail::seconds_since(t_total);
  art.write("result.csv", [&](std::ostream& o) { write_result_csv(o, r); });
  detail::write_timings(art, r);
  return r;
}

// ---------------------------------------------------------------------------
// Result table

namespace detail {

inline std::string fmt_num(double x) {
  if (!std::isfinite(x)) return std::isnan(x) ? "" : (x > 0 ? "inf" : "-inf");
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + '"';
}

using Column = std::pair<const char*, std::function<std::string(const ExperimentResult&)>>;

inline const std::vector<Column>& result_columns() {
  auto metric = [](double Metrics::*field) {
    return [field](const ExperimentResult& r) {
      return r.scored ? fmt_num(r.metrics.*field) : std::string();
    };
  };
  auto num = [](double ExperimentResult::*field) {
    return [field](const ExperimentResult& r) { return fmt_num(r.*field); };
  };
  auto integer = [](auto field) {
    return [field](const ExperimentResult& r) { return std::to_string(r.*field); };
  };
  static const std::vector<Column> cols = {
      {"kind", [](const ExperimentResult& r) { return r.kind; }},
      {"D", integer(&ExperimentResult::D)},
      {"beta", num(&ExperimentResult::beta)},
      {"m", integer(&ExperimentResult::m)},
      {"seed", integer(&ExperimentResult::seed)},
      {"n_hessians", integer(&ExperimentResult::n_hessians)},
      {"status", [](const ExperimentResult& r) { return std::string(r.ok ? "ok" : "error"); }},
      {"error_stage", [](const ExperimentResult& r) { return r.error_stage; }},
      {"error", [](const ExperimentResult& r) { return csv_quote(r.error); }},
      {"E_inf", metric(&Metrics::E_inf)},
      {"max_weight_err", metric(&Metrics::max_weight_err)},
      {"shift_rms", metric(&Metrics::shift_rms)},
      {"sign_accuracy", metric(&Metrics::sign_accuracy)},
      {"delta_W1", metric(&Metrics::delta_W1)},
      {"delta_WO", metric(&Metrics::delta_WO)},
      {"delta_WS", metric(&Metrics::delta_WS)},
      {"init_max_weight_err", num(&ExperimentResult::init_max_weight_err)},
      {"init_shift_err", num(&ExperimentResult::init_shift_err)},
      {"init_shift_bound", num(&ExperimentResult::init_shift_bound)},
      {"init_sign_accuracy", num(&ExperimentResult::init_sign_accuracy)},
      {"final_shift_err", num(&ExperimentResult::final_shift_err)},
      {"sigma_ratio", num(&ExperimentResult::sigma_ratio)},
      {"projector_err", num(&ExperimentResult::projector_err)},
      {"fd_step", num(&ExperimentResult::fd_step)},
      {"fd_eps_hat", num(&ExperimentResult::fd_eps_hat)},
      {"spm_restarts", integer(&ExperimentResult::spm_restarts)},
      {"spm_accepted", integer(&ExperimentResult::spm_accepted)},
      {"spm_duplicate", integer(&ExperimentResult::spm_duplicate)},
      {"spm_rejected", integer(&ExperimentResult::spm_rejected)},
      {"spm_failed", integer(&ExperimentResult::spm_failed)},
      {"cond_g2", num(&ExperimentResult::cond_g2)},
      {"cond_g3", num(&ExperimentResult::cond_g3)},
      {"sign_fallbacks", integer(&ExperimentResult::sign_fallbacks)},
      {"refine_steps", integer(&ExperimentResult::refine_steps)},
      {"refine_stop", [](const ExperimentResult& r) { return r.refine_stop; }},
      {"refine_gamma", num(&ExperimentResult::refine_gamma)},
      {"lambda_max", num(&ExperimentResult::lambda_max)},
      {"initial_loss", num(&ExperimentResult::initial_loss)},
      {"final_loss", num(&ExperimentResult::final_loss)},
      {"contraction", num(&ExperimentResult::contraction)},
      {"epochs", integer(&ExperimentResult::epochs)},
      {"queries_hessian", integer(&ExperimentResult::queries_hessian)},
      {"queries_init", integer(&ExperimentResult::queries_init)},
      {"queries_refine", integer(&ExperimentResult::queries_refine)},
      {"queries_total", [](const ExperimentResult& r) { return std::to_string(r.queries_total()); }},
      {"oracle_calls", integer(&ExperimentResult::oracle_calls)},
      {"eval_queries", integer(&ExperimentResult::eval_queries)},
      {"query_ceiling", num(&ExperimentResult::query_ceiling)},
      {"query_ratio", [](const ExperimentResult& r) { return fmt_num(r.query_ratio()); }},
  };
  return cols;
}

inline const std::vector<std::string>& timing_stages() {
  static const std::vector<std::string> s = {"generate", "hessians", "subspace", "spm",
                                             "init",     "refine",   "baseline", "evaluate"};
  return s;
}

}  // namespace detail

/// Long-format result table, one row per run. Wall times are only included
/// when requested, so the default table is reproducible byte for byte.
inline void write_result_csv(std::ostream& out, const std::vector<ExperimentResult>& rows,
                             bool with_times) {
  const auto& cols = detail::result_columns();
  for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c].first;
  if (with_times) {
    for (const auto& s : detail::timing_stages()) out << ",time_" << s;
    out << ",time_total";
  }
  out << '\n';
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c].second(r);
    if (with_times) {
      for (const auto& s : detail::timing_stages()) {
        double t = std::numeric_limits<double>::quiet_NaN();
        for (const auto& [name, v] : r.stage_times)
          if (name == s) t = v;
        out << ',' << detail::fmt_num(t);
      }
      out << ',' << detail::fmt_num(r.total_time);
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Scaling study

/// Runs every grid cell `repetitions` times with seeds derived from the
/// cell's master seed. Failures become error rows and the study continues.
inline std::vector<ExperimentResult> run_scaling_study(
    const std::vector<PipelineConfig>& grid, int repetitions,
    const std::function<void(const ExperimentResult&)>& on_row = {}) {
  if (grid.empty()) throw ValidationError("study: the grid is empty");
  if (repetitions < 1) throw ValidationError("study: repetitions must be positive");
  std::vector<ExperimentResult> rows;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    for (int rep = 0; rep < repetitions; ++rep) {
      PipelineConfig cfg = grid[c];
      cfg.seed = derive_seed(grid[c].seed, stream::study, static_cast<std::uint64_t>(c) * 1000003u + rep);
      if (!grid[c].out_dir.empty())
        cfg.out_dir = (std::filesystem::path(grid[c].out_dir) /
                       ("cell" + std::to_string(c) + "_rep" + std::to_string(rep)))
                          .string();
      ExperimentResult r;
      try {
        r = run_pipeline(cfg);
      } catch (const StageError& e) {
        detail::fill_header(r, cfg);
        r.ok = false;
        r.error_stage = e.stage();
        r.error = e.message();
      } catch (const ValidationError& e) {
        r.D = cfg.D;
        r.beta = cfg.beta_order;
        r.seed = cfg.seed;
        r.ok = false;
        r.error_stage = "config";
        r.error = e.what();
      }
      if (on_row) on_row(r);
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

}  // namespace snid
