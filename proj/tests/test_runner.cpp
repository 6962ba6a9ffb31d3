#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "misreport/runner.hpp"

using namespace misreport;

namespace fs = std::filesystem;

namespace {

SweepSpec small_sweep() {
  SweepSpec s;
  s.base.n = 4000;
  s.base.seed = 3;
  s.parameter = SweptParameter::BetaA;
  s.values = {0.0, 0.3};
  s.replications = 3;
  s.run.learner.gbt.n_rounds = 30;
  return s;
}

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("misreport_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) rows.push_back(detail::split_csv_line(line));
  return rows;
}

}  // namespace

TEST(Replication, OneRecordPerEstimator) {
  SimulationSpec spec;
  spec.n = 4000;
  RunConfig cfg;
  cfg.learner.gbt.n_rounds = 30;
  const auto r = run_replication(spec, cfg, 5);
  ASSERT_EQ(r.records.size(), std::size(kAllEstimators));
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    EXPECT_EQ(r.records[i].estimator, kAllEstimators[i]);
    EXPECT_EQ(r.records[i].agent, AgentId("1"));
    EXPECT_EQ(r.records[i].true_mr, r.realized_mr);
  }
  EXPECT_TRUE(r.records.front().ok()) << r.records.front().failure;
}

TEST(Replication, Deterministic) {
  SimulationSpec spec;
  spec.n = 3000;
  RunConfig cfg;
  cfg.learner.gbt.n_rounds = 20;
  const auto a = run_replication(spec, cfg, 8);
  const auto b = run_replication(spec, cfg, 8);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    ASSERT_EQ(a.records[i].ok(), b.records[i].ok());
    if (a.records[i].ok()) {
      EXPECT_EQ(a.records[i].estimate->value, b.records[i].estimate->value);
    }
  }
}

TEST(Replication, BootstrapAttachesIntervals) {
  SimulationSpec spec;
  spec.n = 3000;
  RunConfig cfg;
  cfg.learner.gbt.n_rounds = 20;
  cfg.estimators = {EstimatorKind::CMRE, EstimatorKind::NMRE};
  cfg.bootstrap = BootstrapConfig{20, 0.9, BootstrapMode::EvalOnly};
  const auto r = run_replication(spec, cfg, 2);
  ASSERT_EQ(r.records.size(), 2u);
  for (const auto& rec : r.records) {
    ASSERT_TRUE(rec.ok()) << rec.failure;
    ASSERT_TRUE(rec.estimate->ci);
    EXPECT_LE(rec.estimate->ci->lower, rec.estimate->ci->upper);
  }
  EXPECT_TRUE(r.records[0].estimate->variance);
}

TEST(Sweep, ThreadCountDoesNotChangeResults) {
  const auto spec = small_sweep();
  const auto one = run_sweep(spec, 1);
  const auto many = run_sweep(spec, 8);
  ASSERT_EQ(one.aggregate.size(), many.aggregate.size());
  for (std::size_t i = 0; i < one.aggregate.size(); ++i) {
    const auto& x = one.aggregate[i];
    const auto& y = many.aggregate[i];
    EXPECT_EQ(x.estimator, y.estimator);
    if (std::isnan(x.mean)) {
      EXPECT_TRUE(std::isnan(y.mean));
    } else {
      EXPECT_EQ(x.mean, y.mean);
      EXPECT_EQ(x.std, y.std);
    }
  }
  ASSERT_EQ(one.replications.size(), many.replications.size());
  for (std::size_t i = 0; i < one.replications.size(); ++i) EXPECT_EQ(one.replications[i].seed, many.replications[i].seed);
}

TEST(Sweep, PanelShapeAndSeeds) {
  const auto spec = small_sweep();
  const auto r = run_sweep(spec, 2);
  EXPECT_EQ(r.aggregate.size(), spec.values.size() * std::size(kAllEstimators));
  EXPECT_EQ(r.replications.size(), spec.values.size() * spec.replications * std::size(kAllEstimators));
  for (const auto& row : r.replications) EXPECT_EQ(row.seed, derive_seed(3, {row.value_index, row.rep}));
  for (const auto& a : r.aggregate) EXPECT_EQ(a.n_ok + a.n_fail, spec.replications);
}

TEST(Sweep, AggregateMatchesReplicationsFile) {
  const auto spec = small_sweep();
  const auto r = run_sweep(spec, 2);
  const auto dir = scratch_dir("aggregate");
  write_sweep_outputs(spec, r, nlohmann::json::object(), dir.string());
  const auto reps = read_csv(dir / "replications.csv");
  const auto agg = read_csv(dir / "aggregate.csv");
  ASSERT_EQ(reps.front()[7], "value");
  ASSERT_EQ(agg.front(), (std::vector<std::string>{"param_value", "estimator", "mean", "std", "n_ok", "n_fail",
                                                    "true_mr", "agent"}));
  std::map<std::pair<std::string, std::string>, std::vector<double>> values;
  for (std::size_t i = 1; i < reps.size(); ++i) {
    if (reps[i][6] == "ok") values[{reps[i][0], reps[i][5]}].push_back(std::stod(reps[i][7]));
  }
  for (std::size_t i = 1; i < agg.size(); ++i) {
    const std::string v_index = std::stod(agg[i][0]) == 0.0 ? "0" : "1";
    const auto& xs = values[{v_index, agg[i][1]}];
    if (xs.empty()) {
      EXPECT_EQ(agg[i][2], "nan");
      continue;
    }
    double mean = 0.0;
    for (double x : xs) mean += x / static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean) / static_cast<double>(xs.size());
    EXPECT_NEAR(std::stod(agg[i][2]), mean, 1e-12);
    EXPECT_NEAR(std::stod(agg[i][3]), std::sqrt(var), 1e-12);
    EXPECT_EQ(std::stoul(agg[i][4]), xs.size());
  }
  std::ifstream m(dir / "manifest.json");
  const auto manifest = nlohmann::json::parse(m);
  EXPECT_EQ(manifest["seeds"][1][2].get<std::uint64_t>(), spec.seed_at(1, 2));
}

TEST(Sweep, SingleReplicationHasZeroStd) {
  auto spec = small_sweep();
  spec.values = {0.3};
  spec.replications = 1;
  spec.run.estimators = {EstimatorKind::CMRE};
  const auto r = run_sweep(spec, 1);
  ASSERT_EQ(r.aggregate.size(), 1u);
  EXPECT_EQ(r.aggregate[0].std, 0.0);
}

TEST(Sweep, AllFailuresGiveDegenerateCell) {
  auto spec = small_sweep();
  spec.values = {0.3};
  spec.replications = 2;
  spec.run.estimators = {EstimatorKind::CMRE};
  spec.run.min_abs_delta = 1e6;
  const auto r = run_sweep(spec, 1);
  ASSERT_EQ(r.aggregate.size(), 1u);
  EXPECT_TRUE(r.aggregate[0].degenerate());
  EXPECT_TRUE(std::isnan(r.aggregate[0].mean));
  EXPECT_EQ(r.aggregate[0].n_fail, 2u);
  EXPECT_FALSE(r.replications[0].record.failure.empty());
}

TEST(Sweep, InfeasibleCellIsRecordedNotFatal) {
  auto spec = small_sweep();
  spec.parameter = SweptParameter::TargetMr;
  spec.values = {0.2, 0.97};
  spec.replications = 1;
  spec.run.estimators = {EstimatorKind::NMRE};
  const auto r = run_sweep(spec, 1);
  ASSERT_EQ(r.aggregate.size(), 2u);
  EXPECT_FALSE(r.aggregate[0].degenerate());
  EXPECT_TRUE(r.aggregate[1].degenerate());
}

TEST(SweepConfig, ParsesJson) {
  const auto j = nlohmann::json::parse(R"({
    "base": {"scenario": "sim2", "n": 5000, "seed": 4},
    "sweep": {"parameter": "beta_xstar", "values": [0.1, 0.5]},
    "replications": 7,
    "estimators": ["cmre", "ndee-nos"],
    "bootstrap": {"b": 50, "level": 0.9, "mode": "refit"},
    "learner": {"kind": "gbt", "n_rounds": 40, "max_depth": 2},
    "ocsvm": {"nu": 0.05},
    "train_fraction": 0.7
  })");
  const auto s = sweep_spec_from_json(j);
  EXPECT_EQ(s.base.scenario, Scenario::Sim2);
  EXPECT_EQ(s.parameter, SweptParameter::BetaXstar);
  EXPECT_EQ(s.values, (std::vector<double>{0.1, 0.5}));
  EXPECT_EQ(s.replications, 7u);
  EXPECT_EQ(s.run.estimators, (std::vector<EstimatorKind>{EstimatorKind::CMRE, EstimatorKind::NDEE_NoS}));
  ASSERT_TRUE(s.run.bootstrap);
  EXPECT_EQ(s.run.bootstrap->mode, BootstrapMode::FullRefit);
  EXPECT_EQ(s.run.learner.gbt.n_rounds, 40);
  EXPECT_EQ(s.run.ocsvm.nu, 0.05);
  EXPECT_EQ(s.run.train_fraction, 0.7);
  EXPECT_EQ(s.spec_at(0.5).beta_xstar, 0.5);
  EXPECT_EQ(*s.spec_at(0.5).covariate_seed, 4u);

  EXPECT_THROW(sweep_spec_from_json(nlohmann::json::parse(R"({"replications": 2})")), Error);
  EXPECT_THROW(sweep_spec_from_json(nlohmann::json::parse(R"({"sweep": {"parameter": "bogus", "values": [1]}})")),
               Error);
}

#ifdef MISREPORT_CLI
TEST(Cli, SimulateThenEstimate) {
  const auto dir = scratch_dir("cli");
  const std::string cli = MISREPORT_CLI;
  const std::string sim = cli + " simulate --scenario sim1 --n 3000 --seed 2 --out-dir " + dir.string();
  ASSERT_EQ(std::system(sim.c_str()), 0);
  EXPECT_TRUE(fs::exists(dir / "manipulated.csv"));
  EXPECT_TRUE(fs::exists(dir / "roles.json"));
  const auto out = dir / "estimates.jsonl";
  const auto csv = dir / "estimates.csv";
  const std::string est = cli + " estimate --manipulated " + (dir / "manipulated.csv").string() +
                          " --unmanipulated " + (dir / "unmanipulated.csv").string() +
                          " --estimator cmre,nmre --estimand mr,dim --roles " + (dir / "roles.json").string() +
                          " --csv " + csv.string() + " > " + out.string();
  ASSERT_EQ(std::system(est.c_str()), 0);
  std::ifstream in(out);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("value"));
    ++lines;
  }
  EXPECT_EQ(lines, 4u);
  const auto rows = read_csv(csv);
  ASSERT_FALSE(rows.empty());
  for (const char* col : {"agent", "estimator", "value", "ci_lower", "ci_upper"}) {
    EXPECT_NE(std::find(rows[0].begin(), rows[0].end(), col), rows[0].end()) << col;
  }

  const std::string bad = cli + " estimate --manipulated " + (dir / "manipulated.csv").string() +
                          " --unmanipulated " + (dir / "unmanipulated.csv").string() +
                          " --estimator ndee-nos > /dev/null 2>&1";
  EXPECT_NE(std::system(bad.c_str()), 0);
}

TEST(Cli, SweepWritesOutputs) {
  const auto dir = scratch_dir("cli_sweep");
  {
    std::ofstream cfg(dir / "config.json");
    cfg << R"({"base": {"n": 3000, "seed": 1}, "sweep": {"parameter": "target_mr", "values": [0.1]},
               "replications": 2, "estimators": ["cmre"], "learner": {"n_rounds": 20}})";
  }
  const std::string cmd = std::string(MISREPORT_CLI) + " sweep --config " + (dir / "config.json").string() +
                          " --out-dir " + (dir / "out").string() + " --jobs 2 > /dev/null";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_EQ(read_csv(dir / "out" / "aggregate.csv").size(), 2u);
  EXPECT_EQ(read_csv(dir / "out" / "replications.csv").size(), 3u);
  EXPECT_TRUE(fs::exists(dir / "out" / "manifest.json"));
}
#endif
