#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "snid/snid.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitStage = 3;

/// Shared settings: an optional config file plus one flag per config key.
struct Settings {
  std::string config_file;
  std::map<std::string, std::string> flags;

  snid::PipelineConfig resolve() const {
    snid::PipelineConfig cfg;
    if (!config_file.empty()) {
      auto in = snid::detail::open_in(config_file);
      snid::apply_config(cfg, in);
    }
    for (const auto& key : snid::config_keys()) {
      auto it = flags.find(key);
      if (it != flags.end() && !it->second.empty()) snid::apply_setting(cfg, key, it->second);
    }
    return cfg;
  }
};

void add_settings(CLI::App* app, Settings& s) {
  app->add_option("--config", s.config_file, "key = value config file")->check(CLI::ExistingFile);
  for (const auto& key : snid::config_keys()) {
    app->add_option("--" + key, s.flags[key], "overrides '" + key + "' from the config file");
  }
}

void print_kv(std::ostream& out, const std::string& k, double v) {
  out << k << ' ' << std::setprecision(10) << v << '\n';
}

void write_file(const std::string& path, const std::function<void(std::ostream&)>& fn) {
  auto out = snid::detail::open_out(path);
  fn(out);
  if (!out) throw snid::Error("failed writing '" + path + "'");
}

void print_summary(const snid::ExperimentResult& r) {
  std::cout << std::setprecision(6) << r.kind << " D=" << r.D << " m=" << r.m << " seed=" << r.seed
            << "\n  max_weight_err " << r.metrics.max_weight_err << "\n  shift_rms " << r.metrics.shift_rms
            << "\n  sign_accuracy " << r.metrics.sign_accuracy << "\n  E_inf " << r.metrics.E_inf
            << "\n  fd_step " << r.fd_step << " fd_eps_hat " << r.fd_eps_hat
            << "\n  queries " << r.queries_total() << " (ratio to ceiling " << r.query_ratio() << ")"
            << "\n  time " << r.total_time << " s\n";
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(snid::detail::to_double("grid", tok));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Identification of shallow networks from black-box queries"};
  app.require_subcommand(1);

  // generate
  Settings gen_s;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "sample a random teacher network");
  add_settings(gen, gen_s);
  gen->add_option("--network", gen_out, "output network file")->required();

  // recover-weights
  Settings rw_s;
  std::string rw_net, rw_out, rw_spectrum;
  auto* rw = app.add_subcommand("recover-weights", "Hessian PCA and subspace power method");
  add_settings(rw, rw_s);
  rw->add_option("--network", rw_net, "teacher network file")->required()->check(CLI::ExistingFile);
  rw->add_option("--weights", rw_out, "output recovered-weights file")->required();
  rw->add_option("--spectrum", rw_spectrum, "optional singular-value CSV");

  // init-shifts
  Settings is_s;
  std::string is_net, is_weights, is_out, is_student;
  auto* is = app.add_subcommand("init-shifts", "signs and initial shifts from directional derivatives");
  add_settings(is, is_s);
  is->add_option("--network", is_net, "teacher network file")->required()->check(CLI::ExistingFile);
  is->add_option("--weights", is_weights, "recovered-weights file")->required()->check(CLI::ExistingFile);
  is->add_option("--init", is_out, "output init file")->required();
  is->add_option("--student", is_student, "optional output student network with signs folded");

  // refine
  Settings rf_s;
  std::string rf_net, rf_student, rf_out, rf_traj;
  auto* rf = app.add_subcommand("refine", "gradient descent on the shifts");
  add_settings(rf, rf_s);
  rf->add_option("--network", rf_net, "teacher network file")->required()->check(CLI::ExistingFile);
  rf->add_option("--student", rf_student, "initial student network file")->required()->check(CLI::ExistingFile);
  rf->add_option("--output", rf_out, "output student network file")->required();
  rf->add_option("--trajectory", rf_traj, "optional trajectory CSV");

  // pipeline / baseline
  Settings pl_s, bl_s;
  auto* pl = app.add_subcommand("pipeline", "full identification run on a sampled teacher");
  add_settings(pl, pl_s);
  auto* bl = app.add_subcommand("baseline", "joint SGD on a same-architecture student");
  add_settings(bl, bl_s);

  // diagnose
  Settings dg_s;
  std::string dg_net, dg_student;
  double dg_delta = 0.5;
  int dg_rip = 50, dg_tau_grid = 101;
  long long dg_mc = 0;
  auto* dg = app.add_subcommand("diagnose", "incoherence, learnability and kernel-floor report");
  add_settings(dg, dg_s);
  dg->add_option("--network", dg_net, "teacher network file")->required()->check(CLI::ExistingFile);
  dg->add_option("--student", dg_student, "optional recovered network to score")->check(CLI::ExistingFile);
  dg->add_option("--rip-delta", dg_delta, "RIP tolerance reported against");
  dg->add_option("--rip-trials", dg_rip, "random column subsets probed");
  dg->add_option("--alpha-samples", dg_mc, "Hessians for the learnability estimate (0: 50 m)");
  dg->add_option("--tau-grid", dg_tau_grid, "shift grid for the kernel floor");

  // study
  Settings st_s;
  std::string st_dims = "10", st_betas = "1.0,1.5", st_csv;
  int st_reps = 3;
  bool st_times = false;
  auto* st = app.add_subcommand("study", "scaling study over a D x beta grid");
  add_settings(st, st_s);
  st->add_option("--dims", st_dims, "comma-separated D values");
  st->add_option("--betas", st_betas, "comma-separated neuron orders");
  st->add_option("--reps", st_reps, "repetitions per cell");
  st->add_option("--csv", st_csv, "output CSV (default: stdout)");
  st->add_flag("--with-times", st_times, "append wall-time columns");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*gen) {
      const auto cfg = gen_s.resolve();
      cfg.validate();
      const auto t = snid::sample_teacher(cfg.D, cfg.resolved_m(), snid::parse_shift_law(cfg.shift_law),
                                          snid::parse_activation(cfg.activation),
                                          snid::derive_seed(cfg.seed, snid::stream::teacher));
      snid::save(t.net, gen_out);
      if (t.clamp_events) std::cerr << "note: " << t.clamp_events << " shifts clamped to +-tau_inf\n";
    } else if (*rw) {
      const auto cfg = rw_s.resolve();
      const auto net = snid::load(rw_net);
      snid::PipelineConfig c = cfg;
      c.D = net.dim();
      c.m = cfg.m > 0 ? cfg.m : net.neurons();
      c.validate();
      const auto rec = snid::recover_weights(net, c.resolved_m(), c.resolved_n_hessians(), c.deriv, c.spm, c.seed);
      write_file(rw_out, [&](std::ostream& o) { snid::write_weights(o, rec.collected.weights); });
      if (!rw_spectrum.empty())
        write_file(rw_spectrum, [&](std::ostream& o) { snid::write_spectrum_csv(o, rec.projector); });
      std::cout << "accepted " << rec.collected.accepted() << " of " << c.resolved_m() << " after "
                << rec.collected.restarts.size() << " restarts, " << rec.queries << " queries\n";
    } else if (*is) {
      const auto cfg = is_s.resolve();
      if (!cfg.deriv.exact) cfg.deriv.fd.validate();
      const auto net = snid::load(is_net);
      auto in = snid::detail::open_in(is_weights);
      const Eigen::MatrixXd wh = snid::read_weights(in);
      const auto r = snid::init_signs_shifts(net, wh, net.activation(), cfg.deriv);
      write_file(is_out, [&](std::ostream& o) { snid::write_init_result(o, r); });
      if (!is_student.empty()) {
        snid::StudentNetwork s(wh, r.signs, r.tau0, net.activation());
        write_file(is_student, [&](std::ostream& o) { snid::write_student(o, s, net.seed()); });
      }
      std::cout << "cond_g2 " << r.cond_g2 << " cond_g3 " << r.cond_g3 << " queries " << r.queries << '\n';
    } else if (*rf) {
      const auto cfg = rf_s.resolve();
      cfg.refine.validate();
      const auto net = snid::load(rf_net);
      const auto student = snid::load_student(rf_student);
      if (student.dim() != net.dim() || student.neurons() != net.neurons())
        throw snid::ValidationError("refine: student and teacher differ in D or m");
      const auto r = snid::refine(student, net, cfg.refine, snid::derive_seed(cfg.seed, snid::stream::refine));
      write_file(rf_out, [&](std::ostream& o) { snid::write_student(o, r.student, net.seed()); });
      if (!rf_traj.empty()) write_file(rf_traj, [&](std::ostream& o) { snid::write_trajectory_csv(o, r); });
      std::cout << "steps " << r.steps << " (" << snid::to_string(r.stop) << ") loss " << r.initial_loss
                << " -> " << r.final_loss << '\n';
    } else if (*pl) {
      const auto r = snid::run_pipeline(pl_s.resolve());
      print_summary(r);
    } else if (*bl) {
      const auto r = snid::run_baseline_sgd(bl_s.resolve());
      print_summary(r);
      std::cout << "  epochs " << r.epochs << '\n';
    } else if (*dg) {
      const auto cfg = dg_s.resolve();
      const auto net = snid::load(dg_net);
      const std::uint64_t seed = snid::derive_seed(cfg.seed, snid::stream::diagnostics);
      snid::write_incoherence(std::cout, snid::check_incoherence(net.weights(), dg_delta, dg_rip, seed));
      const long long n_mc = dg_mc > 0 ? dg_mc : 50 * net.neurons();
      print_kv(std::cout, "alpha_hat", snid::estimate_alpha(net, n_mc, seed + 1));
      const auto om = snid::kernel_floor_omega(net.activation(), dg_tau_grid);
      print_kv(std::cout, "omega", om.omega);
      print_kv(std::cout, "omega_tau", om.tau_min);
      print_kv(std::cout, "omega_tail_bound", om.tail_bound);
      if (!dg_student.empty()) {
        const auto s = snid::load_student(dg_student);
        snid::write_metrics(std::cout, snid::match_and_score(s, net, cfg.n_eval, seed + 2));
      }
    } else if (*st) {
      const auto base = st_s.resolve();
      std::vector<snid::PipelineConfig> grid;
      for (double d : parse_list(st_dims))
        for (double b : parse_list(st_betas)) {
          snid::PipelineConfig c = base;
          c.D = static_cast<Eigen::Index>(d);
          c.beta_order = b;
          c.m = 0;
          grid.push_back(c);
        }
      const auto rows = snid::run_scaling_study(grid, st_reps, [](const snid::ExperimentResult& r) {
        std::cerr << "D=" << r.D << " beta=" << r.beta << " seed=" << r.seed << ' '
                  << (r.ok ? "ok" : "error: " + r.error) << '\n';
      });
      if (st_csv.empty()) {
        snid::write_result_csv(std::cout, rows, st_times);
      } else {
        write_file(st_csv, [&](std::ostream& o) { snid::write_result_csv(o, rows, st_times); });
      }
    }
  } catch (const snid::StageError& e) {
    std::cerr << "error in stage " << e.stage() << ": " << e.message() << '\n';
    return e.validation() ? kExitValidation : kExitStage;
  } catch (const snid::ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kExitValidation;
  } catch (const snid::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitStage;
  }
  return kExitOk;
}
