// Command-line front end: estimate, simulate, sweep.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "misreport/misreport.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace misreport;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

json estimate_json(const MrEstimate& e) {
  json j;
  j["agent"] = e.agent.str();
  j["estimator"] = to_string(e.estimator);
  j["estimand"] = to_string(e.estimand);
  j["value"] = e.value;
  j["variance"] = e.variance ? json(*e.variance) : json(nullptr);
  j["ci"] = e.ci ? json{{"lower", e.ci->lower}, {"upper", e.ci->upper}, {"level", e.ci->level}} : json(nullptr);
  j["diagnostics"] = {{"overlap_warning", e.diagnostics.overlap_warning},
                      {"n_x1", e.diagnostics.n_x1},
                      {"n_x0", e.diagnostics.n_x0},
                      {"notes", e.diagnostics.notes}};
  return j;
}

struct EstimateArgs {
  std::string manipulated, unmanipulated, agent = "all", estimators = "cmre", estimands = "mr";
  std::string col_x = "x", col_y = "y", col_agent = "a", col_xstar, cols_c, roles, csv_out, dump_models;
  std::string mode = "eval";
  std::size_t bootstrap_b = 0;
  double ci_level = 0.95, train_fraction = 0.8;
  std::uint64_t seed = 0;
};

int run_estimate(const EstimateArgs& args) {
  Schema schema;
  schema.feature = args.col_x;
  schema.outcome = args.col_y;
  schema.agent = args.col_agent;
  if (!args.col_xstar.empty()) schema.true_feature = args.col_xstar;
  schema.covariates = split_list(args.cols_c);
  std::vector<std::string> warnings;
  const auto d = load_dataset(args.manipulated, schema, Role::Manipulated, &warnings);
  Schema ref_schema = schema;
  ref_schema.agent.reset();
  ref_schema.true_feature.reset();
  ref_schema.covariates = d.covariate_names();
  const auto d_star = load_dataset(args.unmanipulated, ref_schema, Role::Unmanipulated, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';

  std::vector<EstimatorKind> kinds;
  for (const auto& e : split_list(args.estimators)) kinds.push_back(parse_estimator(e));
  std::vector<Estimand> estimands;
  for (const auto& e : split_list(args.estimands)) estimands.push_back(parse_estimand(e));

  std::map<EstimatorKind, std::vector<std::string>> covariates;
  for (auto k : kinds) covariates[k] = d.covariate_names();
  if (!args.roles.empty()) {
    std::ifstream in(args.roles);
    if (!in) throw Error(ErrorKind::Io, "cannot open '" + args.roles + "'");
    const auto roles = json::parse(in);
    for (auto k : kinds) {
      const auto key = to_string(k);
      if (roles.contains("adjustment_sets") && roles["adjustment_sets"].contains(key)) {
        covariates[k] = roles["adjustment_sets"][key].get<std::vector<std::string>>();
      }
    }
  } else {
    for (auto k : kinds) {
      if (k == EstimatorKind::NDEE_NoC || k == EstimatorKind::NDEE_NoS) {
        throw Error(ErrorKind::Usage, to_string(k) + " needs --roles to know which covariates to drop");
      }
    }
  }

  RunConfig cfg;
  cfg.train_fraction = args.train_fraction;
  if (args.bootstrap_b > 0) cfg.bootstrap = BootstrapConfig{args.bootstrap_b, args.ci_level, parse_bootstrap_mode(args.mode)};

  const auto parts = split(d, cfg.train_fraction, derive_seed(args.seed, {7}));
  std::vector<AgentId> agents;
  if (args.agent == "all") {
    agents = d.agents();
  } else {
    agents.emplace_back(args.agent);
  }

  if (!args.dump_models.empty()) {
    fs::create_directories(args.dump_models);
    for (auto k : kinds) {
      if (k != EstimatorKind::CMRE) continue;
      const auto th = fit_s_learner(d_star.select_covariates(covariates[k]), cfg.learner);
      std::ofstream(fs::path(args.dump_models) / "theta_ref.json") << th.outcome_model().to_json().dump() << '\n';
      for (const auto& a : agents) {
        auto own = filter_by_agent(parts.train, a);
        if (!own) continue;
        const auto ta = fit_s_learner(own->select_covariates(covariates[k]), cfg.learner);
        std::ofstream(fs::path(args.dump_models) / ("theta_" + a.str() + ".json"))
            << ta.outcome_model().to_json().dump() << '\n';
      }
    }
  }

  std::ofstream csv;
  if (!args.csv_out.empty()) {
    csv.open(args.csv_out);
    if (!csv) throw Error(ErrorKind::Io, "cannot write '" + args.csv_out + "'");
    csv << "agent,estimator,estimand,value,ci_lower,ci_upper\n";
  }
  int failures = 0;
  for (const auto& a : agents) {
    const auto rows = agent_rows(d, a);
    double reported = 0.0;
    for (std::size_t i : rows) reported += d.feature(i);
    const double p_x1 = rows.empty() ? 0.0 : reported / static_cast<double>(rows.size());
    for (auto k : kinds) {
      try {
        const auto mr = estimate_agent(k, parts.train, parts.eval, d_star, a, covariates[k], cfg, args.seed);
        std::vector<MrEstimate> out;
        for (auto target : estimands) {
          if (target == Estimand::MR) {
            out.push_back(mr);
          } else {
            const auto derived = derived_estimands(mr, p_x1);
            out.push_back(target == Estimand::DIM ? derived.dim : derived.fpr);
          }
        }
        for (const auto& e : out) {
          std::cout << estimate_json(e).dump() << '\n';
          if (csv.is_open()) {
            csv << e.agent.str() << ',' << to_string(e.estimator) << ',' << to_string(e.estimand) << ','
                << detail::format_real(e.value) << ',' << (e.ci ? detail::format_real(e.ci->lower) : "") << ','
                << (e.ci ? detail::format_real(e.ci->upper) : "") << '\n';
          }
        }
      } catch (const Error& e) {
        ++failures;
        std::cout << json{{"agent", a.str()}, {"estimator", to_string(k)}, {"error", e.what()},
                          {"error_kind", std::string(to_string(e.kind()))}}
                         .dump()
                  << '\n';
      }
    }
  }
  return failures == 0 ? 0 : 3;
}

struct SimulateArgs {
  std::string scenario = "sim1", out_dir, covariates_csv;
  std::size_t n = 30000;
  std::optional<double> beta_a, a_intercept;
  double beta_m = 0.2, beta_xstar = 0.4, target_mr = 0.2;
  std::string agent_targets;
  std::uint64_t seed = 0;
};

int run_simulate(const SimulateArgs& args) {
  SimulationSpec spec;
  spec.scenario = parse_scenario(args.scenario);
  spec.n = args.n;
  spec.beta_a = args.beta_a;
  spec.beta_m = args.beta_m;
  spec.beta_xstar = args.beta_xstar;
  spec.target_mr = args.target_mr;
  spec.a_intercept = args.a_intercept;
  spec.seed = args.seed;
  for (const auto& t : split_list(args.agent_targets)) spec.agent_target_mrs.push_back(std::stod(t));
  if (!args.covariates_csv.empty()) spec.covariates.csv_path = args.covariates_csv;
  const auto pair = simulate(spec);
  fs::create_directories(args.out_dir);
  const fs::path dir(args.out_dir);
  write_dataset(pair.d, (dir / "manipulated.csv").string());
  write_dataset(pair.d_star, (dir / "unmanipulated.csv").string());
  std::ofstream(dir / "roles.json") << to_json(role_manifest(spec.scenario)).dump(2) << '\n';
  json meta;
  meta["spec"] = to_json(spec);
  meta["mu_used"] = pair.mu_used;
  meta["realized_mr"] = pair.realized_mr;
  meta["rows"] = {{"manipulated", pair.d.rows()}, {"unmanipulated", pair.d_star.rows()}};
  meta["agents"] = json::array();
  for (const auto& a : pair.agents) {
    meta["agents"].push_back({{"agent", a.agent.str()}, {"target_mr", a.target_mr}, {"mu", a.mu},
                              {"p1", a.p1}, {"realized_mr", a.realized_mr}, {"rows", a.rows}});
  }
  meta["version"] = kVersion;
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
  std::cout << meta.dump() << '\n';
  return 0;
}

int run_sweep_command(const std::string& config_path, const std::string& out_dir, std::size_t jobs) {
  std::ifstream in(config_path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + config_path + "'");
  json config;
  try {
    config = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Schema, std::string("config is not valid JSON: ") + e.what());
  }
  const auto spec = sweep_spec_from_json(config);
  const auto result = run_sweep(spec, jobs);
  write_sweep_outputs(spec, result, config, out_dir);
  std::size_t degenerate = 0;
  for (const auto& row : result.aggregate) degenerate += row.degenerate();
  std::cerr << "wrote " << result.aggregate.size() << " aggregate rows and " << result.replications.size()
            << " replication rows to " << out_dir;
  if (degenerate > 0) std::cerr << " (" << degenerate << " degenerate cells)";
  std::cerr << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Misreporting-rate estimation"};
  app.require_subcommand(1);

  EstimateArgs est;
  auto* estimate = app.add_subcommand("estimate", "Estimate per-agent misreporting rates from two CSV files");
  estimate->add_option("--manipulated", est.manipulated, "CSV with agent ids (D)")->required()->check(CLI::ExistingFile);
  estimate->add_option("--unmanipulated", est.unmanipulated, "CSV of the trusted reference (D*)")
      ->required()
      ->check(CLI::ExistingFile);
  estimate->add_option("--agent", est.agent, "Agent id or 'all'");
  estimate->add_option("--estimator", est.estimators, "Comma list of cmre|nmre|ndee|ndee-noc|ndee-nos|ocsvm");
  estimate->add_option("--estimand", est.estimands, "Comma list of mr|dim|fpr");
  estimate->add_option("--bootstrap", est.bootstrap_b, "Bootstrap resamples (0 = none)");
  estimate->add_option("--ci-level", est.ci_level, "CI level");
  estimate->add_option("--bootstrap-mode", est.mode, "eval|refit");
  estimate->add_option("--seed", est.seed, "Seed for the split and the bootstrap");
  estimate->add_option("--train-fraction", est.train_fraction, "Share of D used to fit per-agent models");
  estimate->add_option("--col-x", est.col_x, "Reported feature column");
  estimate->add_option("--col-y", est.col_y, "Outcome column");
  estimate->add_option("--col-agent", est.col_agent, "Agent column");
  estimate->add_option("--col-xstar", est.col_xstar, "True feature column (optional)");
  estimate->add_option("--cols-c", est.cols_c, "Comma list of covariates (default: every c_* column)");
  estimate->add_option("--roles", est.roles, "roles.json with per-estimator adjustment sets");
  estimate->add_option("--csv", est.csv_out, "Also write agent,estimator,estimand,value,ci_lower,ci_upper");
  estimate->add_option("--dump-models", est.dump_models, "Directory for fitted CATE models as JSON");

  SimulateArgs sim;
  auto* simulate_cmd = app.add_subcommand("simulate", "Draw a simulated (D, D*) pair");
  simulate_cmd->add_option("--scenario", sim.scenario, "sim1..sim5");
  simulate_cmd->add_option("--n", sim.n, "Total sample size");
  simulate_cmd->add_option("--beta-a", sim.beta_a, "Direct effect of A on X*");
  simulate_cmd->add_option("--beta-m", sim.beta_m, "Mediator modification strength");
  simulate_cmd->add_option("--beta-xstar", sim.beta_xstar, "Effect of X* on Y");
  simulate_cmd->add_option("--target-mr", sim.target_mr, "Target misreporting rate");
  simulate_cmd->add_option("--agent-targets", sim.agent_targets, "Comma list of per-agent target rates");
  simulate_cmd->add_option("--a-intercept", sim.a_intercept, "Intercept of the A equation");
  simulate_cmd->add_option("--covariates", sim.covariates_csv, "CSV with c_e,c_s,c_m,c_a columns");
  simulate_cmd->add_option("--seed", sim.seed, "Seed");
  simulate_cmd->add_option("--out-dir", sim.out_dir, "Output directory")->required();

  std::string config_path, sweep_out;
  std::size_t jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "Run a parameter sweep from a JSON config");
  sweep->add_option("--config", config_path, "Sweep config JSON")->required()->check(CLI::ExistingFile);
  sweep->add_option("--out-dir", sweep_out, "Output directory")->required();
  sweep->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*estimate) return run_estimate(est);
    if (*simulate_cmd) return run_simulate(sim);
    if (*sweep) return run_sweep_command(config_path, sweep_out, jobs);
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
