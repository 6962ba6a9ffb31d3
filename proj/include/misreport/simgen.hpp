#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "misreport/data.hpp"
#include "misreport/error.hpp"
#include "misreport/estimators.hpp"
#include "misreport/random.hpp"

namespace misreport {

enum class Scenario { Sim1, Sim2, Sim3, Sim4, Sim5 };

inline std::string to_string(Scenario s) {
  return "sim" + std::to_string(static_cast<int>(s) + 1);
}

inline Scenario parse_scenario(const std::string& s) {
  for (int k = 0; k < 5; ++k) {
    if (s == "sim" + std::to_string(k + 1)) return static_cast<Scenario>(k);
  }
  throw Error(ErrorKind::Parameter, "unknown scenario '" + s + "' (expected sim1..sim5)");
}

/// Age column: by default integer ages on a grid, min-max normalized to [0, 1];
/// `Uniform` draws a continuous uniform on [0, 1].
struct AgeDistribution {
  enum class Kind { IntegerGrid, Uniform };
  Kind kind = Kind::IntegerGrid;
  int min_age = 21;
  int max_age = 79;
};

struct CovariateMarginals {
  double c_e = 0.47;
  double c_s = 0.40;
  double c_m = 0.53;
  AgeDistribution age;
};

/// Synthetic covariates from marginals, or the columns c_e, c_s, c_m, c_a of
/// a CSV file (c_a is min-max normalized when it leaves [0, 1]).
struct CovariateSource {
  CovariateMarginals marginals;
  std::optional<std::string> csv_path;
};

inline const std::vector<std::string>& covariate_columns() {
  static const std::vector<std::string> cols{"c_e", "c_s", "c_m", "c_a"};
  return cols;
}

struct SimulationSpec {
  Scenario scenario = Scenario::Sim1;
  std::size_t n = 30000;
  std::optional<double> beta_a;  // Sim1 0.3, otherwise 0.1
  double beta_m = 0.2;           // unused in Sim1
  double beta_xstar = 0.4;
  double target_mr = 0.2;
  /// Per-agent targets; when non-empty the A=1 rows are split uniformly at
  /// random among agents "1".."K" and `target_mr` is ignored.
  std::vector<double> agent_target_mrs;
  /// Intercept of the A equation; 0.05 when unset.
  std::optional<double> a_intercept;
  CovariateSource covariates;
  std::uint64_t seed = 0;
  /// Seed of the covariate draw; defaults to `seed`. Holding it fixed while
  /// varying `seed` mimics repeated draws over one fixed covariate table.
  std::optional<std::uint64_t> covariate_seed;

  double resolved_beta_a() const { return beta_a.value_or(scenario == Scenario::Sim1 ? 0.3 : 0.1); }
  std::vector<double> resolved_targets() const {
    return agent_target_mrs.empty() ? std::vector<double>{target_mr} : agent_target_mrs;
  }

  void validate() const {
    if (n < 2) throw Error(ErrorKind::Parameter, "n must be at least 2");
    for (double t : resolved_targets()) {
      if (!(t >= 0.0 && t < 1.0)) throw Error(ErrorKind::Parameter, "target MR must lie in [0, 1)");
    }
    if (!(beta_m >= 0.0 && beta_m <= 1.0)) throw Error(ErrorKind::Parameter, "beta_m must lie in [0, 1]");
    const auto& m = covariates.marginals;
    for (double p : {m.c_e, m.c_s, m.c_m}) {
      if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::Parameter, "covariate marginal outside [0, 1]");
    }
    if (m.age.kind == AgeDistribution::Kind::IntegerGrid && m.age.max_age <= m.age.min_age) {
      throw Error(ErrorKind::Parameter, "age grid needs max_age > min_age");
    }
  }
};

struct AgentTruth {
  AgentId agent;
  double target_mr = 0.0;
  double mu = 0.0;
  double p1 = 0.0;           // empirical P(X*=1 | A=1, agent)
  double realized_mr = 0.0;  // empirical P(X*=0 | X=1, A=1, agent)
  std::size_t rows = 0;
};

struct SimulatedPair {
  TabularDataset d;
  TabularDataset d_star;
  double realized_mr = 0.0;
  double mu_used = 0.0;
  std::vector<AgentTruth> agents;
};

/// mu such that X = X* + (1 - X*) Bern(mu) gives P(X*=0 | X=1) = target:
///   mu = target p1 / ((1 - p1)(1 - target)).
inline double mu_for_target_mr(double target_mr, double p1) {
  if (!(target_mr >= 0.0 && target_mr < 1.0)) throw Error(ErrorKind::Parameter, "target MR must lie in [0, 1)");
  if (!(p1 >= 0.0 && p1 <= 1.0)) throw Error(ErrorKind::Parameter, "p1 must lie in [0, 1]");
  if (target_mr == 0.0) return 0.0;
  if (p1 >= 1.0) {
    throw InfeasibleTargetError("every agent row has X*=1, so no misreporting is possible", target_mr, p1);
  }
  const double mu = target_mr * p1 / ((1.0 - p1) * (1.0 - target_mr));
  if (mu > 1.0) {
    throw InfeasibleTargetError("target MR " + std::to_string(target_mr) + " needs mu = " + std::to_string(mu) +
                                    " > 1 at p1 = " + std::to_string(p1),
                                target_mr, p1);
  }
  return mu;
}

/// n x 4 matrix with columns c_e, c_s, c_m, c_a. Each column has its own
/// stream so changing one marginal leaves the others unchanged.
inline Matrix gen_covariates(std::size_t n, const CovariateMarginals& m, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorKind::Parameter, "n must be at least 1");
  for (double p : {m.c_e, m.c_s, m.c_m}) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::Parameter, "covariate marginal outside [0, 1]");
  }
  Matrix out(n, 4);
  const double probs[3] = {m.c_e, m.c_s, m.c_m};
  for (std::size_t j = 0; j < 3; ++j) {
    Rng rng(derive_seed(seed, {100, j}));
    for (std::size_t i = 0; i < n; ++i) out(i, j) = rng.bernoulli(probs[j]) ? 1.0 : 0.0;
  }
  Rng rng(derive_seed(seed, {100, 3}));
  if (m.age.kind == AgeDistribution::Kind::Uniform) {
    for (std::size_t i = 0; i < n; ++i) out(i, 3) = rng.uniform();
  } else {
    if (m.age.max_age <= m.age.min_age) throw Error(ErrorKind::Parameter, "age grid needs max_age > min_age");
    const auto levels = static_cast<std::uint64_t>(m.age.max_age - m.age.min_age + 1);
    const double span = static_cast<double>(m.age.max_age - m.age.min_age);
    for (std::size_t i = 0; i < n; ++i) out(i, 3) = static_cast<double>(rng.index(levels)) / span;
  }
  return out;
}

inline Matrix load_covariates(const std::string& path, std::size_t n) {
  const auto& names = covariate_columns();
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::Size, "'" + path + "' is empty");
  const auto header = detail::split_csv_line(line);
  std::vector<std::size_t> pos;
  for (const auto& name : names) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorKind::Schema, "missing column '" + name + "' in '" + path + "'");
    pos.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  Matrix m(0, 4);
  std::vector<double> row(4);
  std::size_t r = 0;
  while (m.rows() < n && std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size()) throw Error(ErrorKind::Validation, "ragged row " + std::to_string(r));
    for (std::size_t k = 0; k < 4; ++k) {
      row[k] = k < 3 ? detail::parse_binary(fields[pos[k]], r, names[k])
                     : detail::parse_real(fields[pos[k]], r, names[k]);
    }
    m.append_row(row);
    ++r;
  }
  if (m.rows() < n) {
    throw Error(ErrorKind::Size, "'" + path + "' has " + std::to_string(m.rows()) + " rows, need " + std::to_string(n));
  }
  double lo = m(0, 3), hi = m(0, 3);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    lo = std::min(lo, m(i, 3));
    hi = std::max(hi, m(i, 3));
  }
  if ((lo < 0.0 || hi > 1.0) && hi > lo) {
    for (std::size_t i = 0; i < m.rows(); ++i) m(i, 3) = (m(i, 3) - lo) / (hi - lo);
  }
  return m;
}

namespace detail {

inline double checked(double p, const char* equation, Scenario s, std::size_t row) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw Error(ErrorKind::Spec, "probability " + std::to_string(p) + " outside [0, 1] in the " + equation +
                                     " equation of " + to_string(s) + " at row " + std::to_string(row) +
                                     "; check the coefficient set");
  }
  return p;
}

enum Stage : std::uint64_t { kStageA = 1, kStageMediator, kStageXstar, kStageY, kStageMisreport, kStageAgent };

}  // namespace detail

inline SimulatedPair simulate(const SimulationSpec& spec) {
  spec.validate();
  const auto s = spec.scenario;
  const Matrix c = spec.covariates.csv_path
                       ? load_covariates(*spec.covariates.csv_path, spec.n)
                       : gen_covariates(spec.n, spec.covariates.marginals, spec.covariate_seed.value_or(spec.seed));
  const std::size_t n = spec.n;
  const double beta_a = spec.resolved_beta_a();
  const double a0 = spec.a_intercept.value_or(0.05);
  const double bx = spec.beta_xstar;

  Rng rng_a(derive_seed(spec.seed, {detail::kStageA}));
  Rng rng_med(derive_seed(spec.seed, {detail::kStageMediator}));
  Rng rng_xs(derive_seed(spec.seed, {detail::kStageXstar}));
  Rng rng_y(derive_seed(spec.seed, {detail::kStageY}));
  Rng rng_mis(derive_seed(spec.seed, {detail::kStageMisreport}));
  Rng rng_agent(derive_seed(spec.seed, {detail::kStageAgent}));

  std::vector<std::uint8_t> a(n), xs(n), y(n), x(n);
  std::vector<double> ce_used(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double ce = c(i, 0), cs = c(i, 1), cm = c(i, 2), ca = c(i, 3);
    const double ca2 = ca * ca;
    double pa = 0.0;
    if (s == Scenario::Sim1) {
      pa = a0 + 0.3 * (1.0 - cs) + 0.3 * (1.0 - cm);
    } else {
      pa = a0 + 0.4 * (1.0 - cm);
    }
    a[i] = rng_a.uniform() < detail::checked(pa, "A", s, i);
    const bool genuine = rng_med.uniform() < spec.beta_m;
    const double ce2 = (s == Scenario::Sim1) ? ce : ce + (1.0 - ce) * a[i] * (genuine ? 1.0 : 0.0);
    ce_used[i] = ce2;

    double px = 0.0, py0 = 0.0, slope = bx;
    switch (s) {
      case Scenario::Sim1:
        px = 0.05 + 0.05 * ce + 0.3 * cs * cm + 0.1 * ca2;
        py0 = px;
        break;
      case Scenario::Sim2:
        px = 0.05 + 0.25 * cm + 0.1 * ce2 * cs + 0.1 * ca2;
        py0 = 0.05 + 0.2 * ce2 * cs + 0.1 * ca2;
        slope = bx + 0.1 * ce2;
        break;
      case Scenario::Sim3:
        px = 0.05 + 0.1 * ce2 * cs + 0.1 * ca2;
        py0 = 0.05 + 0.2 * cm + 0.1 * ce2 * cs + 0.05 * ca2;
        slope = bx + 0.1 * ce2;
        break;
      case Scenario::Sim4:
        px = 0.05 + 0.3 * ce2 * cs + 0.1 * ca2;
        py0 = 0.05 + 0.2 * cm + 0.1 * cs + 0.05 * ca2;
        break;
      case Scenario::Sim5:
        px = 0.05 + 0.2 * cm + 0.3 * ce2 * cs + 0.1 * ca2;
        py0 = 0.05 + 0.3 * cs + 0.05 * ca2;
        break;
    }
    px += beta_a * a[i];
    xs[i] = rng_xs.uniform() < detail::checked(px, "X*", s, i);
    y[i] = rng_y.uniform() < detail::checked(py0 + slope * xs[i], "Y", s, i);
  }

  // Agents and per-agent mu from the realized X* draw.
  const auto targets = spec.resolved_targets();
  const std::size_t k_agents = targets.size();
  std::vector<std::uint32_t> agent_of(n, 0);
  std::vector<double> ones(k_agents, 0.0), count(k_agents, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::uint32_t>(rng_agent.index(k_agents));
    if (!a[i]) continue;
    agent_of[i] = k;
    count[k] += 1.0;
    ones[k] += xs[i];
  }
  std::vector<AgentTruth> truth(k_agents);
  for (std::size_t k = 0; k < k_agents; ++k) {
    truth[k].agent = AgentId(std::to_string(k + 1));
    truth[k].target_mr = targets[k];
    truth[k].rows = static_cast<std::size_t>(count[k]);
    if (count[k] == 0.0) throw Error(ErrorKind::Size, "agent " + truth[k].agent.str() + " received no rows");
    truth[k].p1 = ones[k] / count[k];
    truth[k].mu = mu_for_target_mr(targets[k], truth[k].p1);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const bool flip = rng_mis.uniform() < truth[agent_of[i]].mu;
    x[i] = static_cast<std::uint8_t>(xs[i] | (a[i] && flip ? 1 : 0));
  }

  std::vector<std::size_t> idx_d, idx_star;
  for (std::size_t i = 0; i < n; ++i) (a[i] ? idx_d : idx_star).push_back(i);
  if (idx_d.empty() || idx_star.empty()) throw Error(ErrorKind::Size, "one of the two populations is empty");

  auto build = [&](const std::vector<std::size_t>& idx, bool manipulated) {
    Matrix m(idx.size(), 4);
    std::vector<std::uint8_t> fx, fy, fxs;
    std::vector<AgentId> ag;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const std::size_t i = idx[r];
      m(r, 0) = ce_used[i];
      m(r, 1) = c(i, 1);
      m(r, 2) = c(i, 2);
      m(r, 3) = c(i, 3);
      fy.push_back(y[i]);
      if (manipulated) {
        fx.push_back(x[i]);
        fxs.push_back(xs[i]);
        ag.push_back(truth[agent_of[i]].agent);
      } else {
        fx.push_back(xs[i]);
      }
    }
    if (manipulated) {
      return TabularDataset(Role::Manipulated, covariate_columns(), std::move(m), std::move(fx), std::move(fy),
                            std::move(ag), std::move(fxs));
    }
    return TabularDataset(Role::Unmanipulated, covariate_columns(), std::move(m), std::move(fx), std::move(fy));
  };

  SimulatedPair pair{build(idx_d, true), build(idx_star, false), 0.0, truth.front().mu, {}};
  std::vector<double> reported(k_agents, 0.0), misreported(k_agents, 0.0);
  double rep_all = 0.0, mis_all = 0.0;
  for (std::size_t i : idx_d) {
    if (!x[i]) continue;
    reported[agent_of[i]] += 1.0;
    rep_all += 1.0;
    if (!xs[i]) {
      misreported[agent_of[i]] += 1.0;
      mis_all += 1.0;
    }
  }
  for (std::size_t k = 0; k < k_agents; ++k) {
    truth[k].realized_mr = reported[k] > 0.0 ? misreported[k] / reported[k] : 0.0;
  }
  pair.realized_mr = rep_all > 0.0 ? mis_all / rep_all : 0.0;
  pair.agents = std::move(truth);
  return pair;
}

/// Which covariate columns each estimator adjusts for in a scenario.
struct RoleManifest {
  Scenario scenario = Scenario::Sim1;
  std::vector<std::string> all;
  std::vector<std::string> cmre;
  std::vector<std::string> ndee;
  std::vector<std::string> ndee_noc;
  std::vector<std::string> ndee_nos;
  std::map<std::string, std::string> roles;
};

inline RoleManifest role_manifest(Scenario s) {
  RoleManifest r;
  r.scenario = s;
  r.all = covariate_columns();
  r.ndee = r.all;
  switch (s) {
    case Scenario::Sim1:
      r.cmre = r.all;
      r.ndee_noc = {"c_s", "c_m"};
      r.ndee_nos = {"c_e", "c_a"};
      r.roles = {{"c_e", "confounder of X* and Y"},
                 {"c_s", "confounder of X* and Y; cause of A"},
                 {"c_m", "confounder of X* and Y; cause of A"},
                 {"c_a", "confounder of X* and Y"}};
      break;
    case Scenario::Sim2:
      r.cmre = {"c_e", "c_s", "c_a"};
      r.ndee_noc = {"c_m"};
      r.ndee_nos = {"c_e", "c_s", "c_a"};
      r.roles = {{"c_e", "mediator of A and X*; confounder of X* and Y; effect modifier"},
                 {"c_s", "confounder of X* and Y"},
                 {"c_m", "common cause of A and X*"},
                 {"c_a", "confounder of X* and Y"}};
      break;
    case Scenario::Sim3:
      r.cmre = {"c_e", "c_s", "c_a"};
      r.ndee_noc = {"c_m"};
      r.ndee_nos = r.all;
      r.roles = {{"c_e", "mediator of A and X*; confounder of X* and Y; effect modifier"},
                 {"c_s", "confounder of X* and Y"},
                 {"c_m", "common cause of A and Y"},
                 {"c_a", "confounder of X* and Y"}};
      break;
    case Scenario::Sim4:
      r.cmre = {"c_s", "c_a"};
      r.ndee_noc = {"c_m", "c_e"};
      r.ndee_nos = r.all;
      r.roles = {{"c_e", "mediator of A and X*"},
                 {"c_s", "confounder of X* and Y"},
                 {"c_m", "common cause of A and Y"},
                 {"c_a", "confounder of X* and Y"}};
      break;
    case Scenario::Sim5:
      r.cmre = {"c_s", "c_a"};
      r.ndee_noc = {"c_m", "c_e"};
      r.ndee_nos = {"c_e", "c_s", "c_a"};
      r.roles = {{"c_e", "mediator of A and X*"},
                 {"c_s", "confounder of X* and Y"},
                 {"c_m", "common cause of A and X*"},
                 {"c_a", "confounder of X* and Y"}};
      break;
  }
  return r;
}

inline const std::vector<std::string>& covariates_for(const RoleManifest& r, EstimatorKind e) {
  switch (e) {
    case EstimatorKind::CMRE: return r.cmre;
    case EstimatorKind::NDEE: return r.ndee;
    case EstimatorKind::NDEE_NoC: return r.ndee_noc;
    case EstimatorKind::NDEE_NoS: return r.ndee_nos;
    default: return r.all;
  }
}

inline nlohmann::json to_json(const RoleManifest& r) {
  nlohmann::json j;
  j["scenario"] = to_string(r.scenario);
  j["covariates"] = r.all;
  j["roles"] = r.roles;
  j["adjustment_sets"] = {{"cmre", r.cmre}, {"ndee", r.ndee}, {"ndee-noc", r.ndee_noc}, {"ndee-nos", r.ndee_nos}};
  return j;
}

inline nlohmann::json to_json(const SimulationSpec& s) {
  nlohmann::json j;
  j["scenario"] = to_string(s.scenario);
  j["n"] = s.n;
  j["beta_a"] = s.resolved_beta_a();
  j["beta_m"] = s.beta_m;
  j["beta_xstar"] = s.beta_xstar;
  j["target_mr"] = s.target_mr;
  if (!s.agent_target_mrs.empty()) j["agent_target_mrs"] = s.agent_target_mrs;
  j["a_intercept"] = s.a_intercept.value_or(0.05);
  j["seed"] = s.seed;
  j["covariate_seed"] = s.covariate_seed.value_or(s.seed);
  const auto& m = s.covariates.marginals;
  if (s.covariates.csv_path) {
    j["covariates"] = {{"csv", *s.covariates.csv_path}};
  } else {
    j["covariates"] = {{"c_e", m.c_e}, {"c_s", m.c_s}, {"c_m", m.c_m},
                       {"age", m.age.kind == AgeDistribution::Kind::Uniform ? "uniform" : "integer-grid"},
                       {"min_age", m.age.min_age}, {"max_age", m.age.max_age}};
  }
  return j;
}

/// Parses the SimulationSpec fields of a JSON object; absent keys keep defaults.
inline SimulationSpec simulation_spec_from_json(const nlohmann::json& j) {
  SimulationSpec s;
  auto real = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<double>();
  };
  if (j.contains("scenario")) s.scenario = parse_scenario(j.at("scenario").get<std::string>());
  if (j.contains("n")) s.n = j.at("n").get<std::size_t>();
  if (j.contains("beta_a")) s.beta_a = j.at("beta_a").get<double>();
  real("beta_m", s.beta_m);
  real("beta_xstar", s.beta_xstar);
  real("target_mr", s.target_mr);
  if (j.contains("agent_target_mrs")) s.agent_target_mrs = j.at("agent_target_mrs").get<std::vector<double>>();
  if (j.contains("a_intercept")) s.a_intercept = j.at("a_intercept").get<double>();
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("covariate_seed")) s.covariate_seed = j.at("covariate_seed").get<std::uint64_t>();
  if (j.contains("covariates")) {
    const auto& c = j.at("covariates");
    if (c.contains("csv")) s.covariates.csv_path = c.at("csv").get<std::string>();
    auto& m = s.covariates.marginals;
    if (c.contains("c_e")) m.c_e = c.at("c_e").get<double>();
    if (c.contains("c_s")) m.c_s = c.at("c_s").get<double>();
    if (c.contains("c_m")) m.c_m = c.at("c_m").get<double>();
    if (c.contains("age")) {
      const auto kind = c.at("age").get<std::string>();
      if (kind == "uniform") {
        m.age.kind = AgeDistribution::Kind::Uniform;
      } else if (kind == "integer-grid") {
        m.age.kind = AgeDistribution::Kind::IntegerGrid;
      } else {
        throw Error(ErrorKind::Parameter, "unknown age distribution '" + kind + "'");
      }
    }
    if (c.contains("min_age")) m.age.min_age = c.at("min_age").get<int>();
    if (c.contains("max_age")) m.age.max_age = c.at("max_age").get<int>();
  }
  s.validate();
  return s;
}

}  // namespace misreport
