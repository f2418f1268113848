#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace snid;
using namespace snid::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("snid_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Small, fast configuration in finite-difference mode.
PipelineConfig small_config(std::uint64_t seed) {
  PipelineConfig c;
  c.D = 8;
  c.m = 6;
  c.seed = seed;
  c.n_eval = 2000;
  c.refine.max_steps = 2000;
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SNID_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(PipelineConfig, ResolvedNeuronCount) {
  PipelineConfig c;
  c.D = 20;
  c.beta_order = 1.5;
  EXPECT_EQ(c.resolved_m(), 36);
  EXPECT_EQ(c.resolved_n_hessians(), 108);
  c.beta_order = 2.0;
  EXPECT_EQ(c.resolved_m(), 160);
  c.D = 10;
  c.beta_order = 1.0;
  EXPECT_EQ(c.resolved_m(), 4);
  c.m = 7;
  EXPECT_EQ(c.resolved_m(), 7);
  EXPECT_EQ(c.resolved_n_hessians(), static_cast<Eigen::Index>(std::ceil(std::log(10.0) * 7)));
}

TEST(PipelineConfig, Validation) {
  PipelineConfig c;
  EXPECT_THROW(c.validate(), ValidationError);  // no m, no beta
  c.m = 3;
  EXPECT_NO_THROW(c.validate());
  c.D = 1;
  EXPECT_THROW(c.validate(), ValidationError);
  c.D = 3;
  c.m = 7;
  EXPECT_THROW(c.validate(), ValidationError);  // more neurons than D(D+1)/2
  c.m = 3;
  c.n_hessians = 2;
  EXPECT_THROW(c.validate(), ValidationError);
  c.n_hessians = 0;
  c.shift_law = "uniform:-1,1";
  EXPECT_NO_THROW(c.validate());  // the range is checked when sampling
  c.activation = "relu";
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(ConfigFile, SectionsCommentsAndOverrides) {
  std::stringstream in(
      "# experiment\n[teacher]\nD = 12\nbeta-order = 1.5\nshift-law = gaussian:0.05\n\n"
      "[spm]\nspm-gamma = 1.5\nspm-restarts=40\n[refine]\nlr = 0.002\nbatch = 0\n"
      "exact-derivatives = true\nseed = 18446744073709551615\n");
  PipelineConfig c;
  apply_config(c, in);
  EXPECT_EQ(c.D, 12);
  EXPECT_DOUBLE_EQ(c.beta_order, 1.5);
  EXPECT_EQ(c.shift_law, "gaussian:0.05");
  EXPECT_DOUBLE_EQ(c.spm.gamma, 1.5);
  EXPECT_EQ(c.spm.max_restarts, 40);
  EXPECT_DOUBLE_EQ(c.refine.gamma, 0.002);
  EXPECT_EQ(c.refine.batch, 0);
  EXPECT_TRUE(c.deriv.exact);
  EXPECT_EQ(c.seed, 18446744073709551615ull);
  apply_setting(c, "D", "14");
  EXPECT_EQ(c.D, 14);
  EXPECT_THROW(apply_setting(c, "nonsense", "1"), ValidationError);
  EXPECT_THROW(apply_setting(c, "D", "ten"), ValidationError);
  EXPECT_THROW(apply_setting(c, "auto-step", "maybe"), ValidationError);

  std::stringstream bad("D = 3\njust words\n");
  try {
    read_config_entries(bad);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  for (const auto& key : config_keys()) {
    PipelineConfig d;
    EXPECT_NO_THROW(apply_setting(d, key, key == "activation" ? "tanh"
                                          : key == "shift-law" ? "uniform:-0.1,0.1"
                                          : key == "out"       ? "dir"
                                                               : "1"))
        << key;
  }
}

TEST(Pipeline, ExactModeEndToEnd) {
  PipelineConfig c;
  c.D = 10;
  c.m = 12;
  c.n_hessians = 24;
  c.deriv.exact = true;
  c.refine.batch = 0;
  c.refine.max_steps = 10000;
  c.n_eval = 10000;
  c.seed = 3;
  const ExperimentResult r = run_pipeline(c);
  EXPECT_TRUE(r.ok);
  EXPECT_LE(r.metrics.max_weight_err, 1e-6);
  EXPECT_LE(r.metrics.shift_rms, 1e-6);
  EXPECT_DOUBLE_EQ(r.metrics.sign_accuracy, 1.0);
  EXPECT_EQ(r.queries_hessian, 0u);
  EXPECT_EQ(r.queries_init, 0u);
  EXPECT_EQ(r.fd_eps_hat, 0.0);
  EXPECT_GT(r.oracle_calls, 0u);
  EXPECT_EQ(r.spm_accepted, 12);
}

TEST(Pipeline, FiniteDifferenceRunWritesArtifacts) {
  const fs::path dir = scratch("artifacts");
  PipelineConfig c = small_config(5);
  c.out_dir = dir.string();
  c.dump_spectrum = true;
  const ExperimentResult r = run_pipeline(c);
  EXPECT_TRUE(r.ok);
  for (const char* f : {"teacher.txt", "spectrum.csv", "weights.txt", "restarts.log", "init.txt",
                        "student_init.txt", "trajectory.csv", "student.txt", "metrics.txt", "result.csv",
                        "timings.csv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(r.queries_hessian, static_cast<std::uint64_t>(r.n_hessians * (2 * 8 * 8 + 1)));
  EXPECT_EQ(r.queries_init, 6u * 7u);
  EXPECT_EQ(r.queries_refine, static_cast<std::uint64_t>(6 * 8 * 8));
  EXPECT_EQ(r.oracle_calls, 0u);
  EXPECT_EQ(r.eval_queries, 2000u);
  EXPECT_LE(r.metrics.max_weight_err, 1e-2);
  EXPECT_DOUBLE_EQ(r.fd_step, 0.01);
  EXPECT_GT(r.fd_eps_hat, 0.0);
  EXPECT_LT(r.fd_eps_hat, 1e-3);

  double staged = 0.0;
  for (const auto& [s, t] : r.stage_times) staged += t;
  EXPECT_LE(staged, r.total_time + 1e-9);

  // Stage isolation: the saved student scores identically to the in-memory one.
  const Metrics reload = match_and_score(load_student((dir / "student.txt").string()),
                                         load((dir / "teacher.txt").string()), 0, 0);
  EXPECT_NEAR(reload.max_weight_err, r.metrics.max_weight_err, 1e-15);
  EXPECT_NEAR(reload.shift_rms, r.metrics.shift_rms, 1e-15);
}

TEST(Pipeline, QueryBudgetBelowCeiling) {
  for (Eigen::Index D : {Eigen::Index{10}, Eigen::Index{14}}) {
    PipelineConfig c;
    c.D = D;
    c.beta_order = 1.5;
    c.n_eval = 1000;
    c.refine.max_steps = 500;
    c.seed = 11;
    const ExperimentResult r = run_pipeline(c);
    EXPECT_GT(r.queries_total(), 0u);
    EXPECT_LE(static_cast<double>(r.queries_total()), r.query_ceiling) << "D=" << D;
    EXPECT_NEAR(r.query_ceiling, query_ceiling(D, r.m), 1e-9);
  }
}

TEST(Pipeline, ResultCsvIsReproducible) {
  const ExperimentResult a = run_pipeline(small_config(21));
  const ExperimentResult b = run_pipeline(small_config(21));
  std::stringstream sa, sb;
  write_result_csv(sa, a);
  write_result_csv(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
  const ExperimentResult c = run_pipeline(small_config(22));
  std::stringstream sc;
  write_result_csv(sc, c);
  EXPECT_NE(sa.str(), sc.str());
}

TEST(Pipeline, StageFailureKeepsPartialArtifacts) {
  const fs::path dir = scratch("failure");
  PipelineConfig c = small_config(4);
  c.spm.max_restarts = 1;
  c.out_dir = dir.string();
  try {
    run_pipeline(c);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "spm");
    EXPECT_FALSE(e.validation());
  }
  EXPECT_TRUE(fs::exists(dir / "weights.partial.txt"));
  EXPECT_TRUE(fs::exists(dir / "error.txt"));
  const std::string csv = slurp(dir / "result.csv");
  EXPECT_NE(csv.find(",error,spm,"), std::string::npos);
}

TEST(Study, CardinalityAndColumns) {
  std::vector<PipelineConfig> grid;
  for (double beta : {1.0, 1.5}) {
    PipelineConfig c = small_config(1);
    c.D = 10;
    c.m = 0;
    c.beta_order = beta;
    c.refine.max_steps = 300;
    c.n_eval = 500;
    grid.push_back(c);
  }
  int seen = 0;
  const auto rows = run_scaling_study(grid, 3, [&](const ExperimentResult&) { ++seen; });
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(seen, 6);
  EXPECT_EQ(rows[0].m, 4);
  EXPECT_EQ(rows[3].m, 13);
  EXPECT_NE(rows[0].seed, rows[1].seed);
  std::stringstream ss;
  write_result_csv(ss, rows, true);
  std::string header;
  std::getline(ss, header);
  for (const char* col : {"D", "beta", "m", "seed", "E_inf", "max_weight_err", "shift_rms", "delta_W1",
                          "delta_WO", "delta_WS", "init_shift_bound", "fd_step", "fd_eps_hat", "queries_total", "time_total"})
    EXPECT_NE(("," + header + ",").find(std::string(",") + col + ","), std::string::npos) << col;
  int lines = 0;
  std::string line;
  while (std::getline(ss, line)) ++lines;
  EXPECT_EQ(lines, 6);
}

TEST(Study, ErrorsBecomeRows) {
  PipelineConfig bad = small_config(1);
  bad.spm.max_restarts = 1;
  const auto rows = run_scaling_study({bad}, 2);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_FALSE(r.ok);
    EXPECT_EQ(r.error_stage, "spm");
  }
  EXPECT_THROW(run_scaling_study({}, 3), ValidationError);
}

TEST(Baseline, EpochCurveDecreases) {
  int monotone = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    PipelineConfig c;
    c.D = 5;
    c.m = 3;
    c.seed = seed;
    c.n_eval = 1000;
    c.baseline.max_epochs = 100;
    const ExperimentResult r = run_baseline_sgd(c);
    ASSERT_EQ(r.epoch_E_inf.size(), 101u);
    bool dec = true;
    for (std::size_t e = 1; e < r.epoch_E_inf.size(); ++e) dec = dec && r.epoch_E_inf[e] <= r.epoch_E_inf[e - 1];
    monotone += dec;
    EXPECT_EQ(r.kind, "baseline");
    EXPECT_EQ(r.queries_refine, 188u);  // ceil(5/2 m D^2)
  }
  EXPECT_GE(monotone, 8);
}

TEST(Baseline, GaussianShiftLaw) {
  const fs::path dir = scratch("baseline_gauss");
  PipelineConfig c;
  c.D = 6;
  c.m = 20;
  c.shift_law = "gaussian:0.05";
  c.baseline.max_epochs = 1;
  c.n_eval = 100;
  c.out_dir = dir.string();
  run_baseline_sgd(c);
  const TeacherNetwork t = load((dir / "teacher.txt").string());
  EXPECT_LE(t.shifts().cwiseAbs().maxCoeff(), 0.25);
  const double sd = std::sqrt(t.shifts().squaredNorm() / 20.0);
  EXPECT_GT(sd, 0.02);
  EXPECT_LT(sd, 0.1);
  EXPECT_TRUE(fs::exists(dir / "curve.csv"));
}

TEST(Baseline, PipelineRecoversWeightsMoreAccurately) {
  // Reduced-size version of the weight-error ordering between the two methods.
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    PipelineConfig c;
    c.D = 10;
    c.beta_order = 1.5;
    c.seed = seed;
    c.n_eval = 1000;
    c.refine.max_steps = 1000;
    c.baseline.max_epochs = 10;
    const double pipe = run_pipeline(c).metrics.max_weight_err;
    const double sgd = run_baseline_sgd(c).metrics.max_weight_err;
    EXPECT_LT(pipe, sgd) << "seed " << seed;
  }
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("cli");
  const std::string net = (dir / "teacher.txt").string();
  EXPECT_EQ(run_cli("generate --D 6 --m 4 --seed 3 --network " + net), 0);
  EXPECT_EQ(run_cli("generate --D 1 --m 4 --network " + net), 2);
  EXPECT_EQ(run_cli("generate --D six --m 4 --network " + net), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("pipeline --D 6 --m 4 --spm-restarts 1 --n-eval 10"), 3);
  EXPECT_EQ(run_cli("pipeline --D 6 --m 4 --max-steps 50 --n-eval 10 --out " + (dir / "run").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "run" / "result.csv"));

  std::ofstream(dir / "bad.cfg") << "colour = blue\n";
  EXPECT_EQ(run_cli("pipeline --config " + (dir / "bad.cfg").string()), 2);
  std::ofstream(dir / "good.cfg") << "[teacher]\nD = 6\nm = 4\n[refine]\nmax-steps = 20\nn-eval = 10\n";
  EXPECT_EQ(run_cli("pipeline --config " + (dir / "good.cfg").string() + " --m 5"), 0);
}

TEST(Cli, StagewiseCommandsChain) {
  const fs::path dir = scratch("cli_chain");
  auto p = [&](const char* f) { return (dir / f).string(); };
  ASSERT_EQ(run_cli("generate --D 7 --m 5 --seed 9 --network " + p("t.txt")), 0);
  ASSERT_EQ(run_cli("recover-weights --network " + p("t.txt") + " --weights " + p("w.txt") +
                    " --spectrum " + p("s.csv")),
            0);
  ASSERT_EQ(run_cli("init-shifts --network " + p("t.txt") + " --weights " + p("w.txt") + " --init " +
                    p("i.txt") + " --student " + p("s0.txt")),
            0);
  ASSERT_EQ(run_cli("refine --network " + p("t.txt") + " --student " + p("s0.txt") + " --output " +
                    p("s1.txt") + " --trajectory " + p("traj.csv") + " --max-steps 200"),
            0);
  EXPECT_EQ(run_cli("diagnose --network " + p("t.txt") + " --student " + p("s1.txt") + " --n-eval 100"), 0);
  const Metrics mt = match_and_score(load_student(p("s1.txt")), load(p("t.txt")), 0, 0);
  EXPECT_LE(mt.max_weight_err, 1e-2);
  EXPECT_DOUBLE_EQ(mt.sign_accuracy, 1.0);
  EXPECT_EQ(run_cli("refine --network " + p("t.txt") + " --student " + p("missing.txt") + " --output " +
                    p("x.txt")),
            2);
}
