#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "misreport/data.hpp"
#include "misreport/error.hpp"
#include "misreport/estimators.hpp"
#include "misreport/learners.hpp"
#include "misreport/ocsvm.hpp"
#include "misreport/simgen.hpp"
#include "misreport/uncertainty.hpp"

namespace misreport {

inline constexpr const char* kVersion = "1.0.0";

struct BootstrapConfig {
  std::size_t b = 100;
  double level = 0.95;
  BootstrapMode mode = BootstrapMode::EvalOnly;
};

struct RunConfig {
  std::vector<EstimatorKind> estimators{std::begin(kAllEstimators), std::end(kAllEstimators)};
  LearnerSpec learner;
  OcSvmParams ocsvm;
  double train_fraction = 0.8;
  double min_abs_delta = kDefaultMinAbsDelta;
  /// Bootstrap CIs for CMRE; skipped when unset.
  std::optional<BootstrapConfig> bootstrap;
};

struct EstimateRecord {
  AgentId agent;
  EstimatorKind estimator = EstimatorKind::CMRE;
  std::optional<MrEstimate> estimate;
  std::string failure;
  double true_mr = 0.0;
  double target_mr = 0.0;

  bool ok() const noexcept { return estimate.has_value(); }
};

struct ReplicationResult {
  std::uint64_t seed = 0;
  double realized_mr = 0.0;
  std::vector<AgentTruth> agents;
  std::vector<EstimateRecord> records;
};

namespace detail {

/// Positions of agent `a`'s rows within the evaluation split, or -1.
inline std::vector<std::ptrdiff_t> agent_positions(const TabularDataset& eval, const AgentId& a) {
  std::vector<std::ptrdiff_t> pos(eval.rows(), -1);
  std::ptrdiff_t next = 0;
  for (std::size_t i = 0; i < eval.rows(); ++i) {
    if (eval.agent(i) == a) pos[i] = next++;
  }
  return pos;
}

}  // namespace detail

/// Bootstrap of CMRE for one agent. EvalOnly resamples the evaluation split
/// and reuses the fitted CATE models; FullRefit also resamples the training
/// split of D and D*, refitting both models on every draw.
inline BootstrapResult bootstrap_cmre(const TabularDataset& train, const TabularDataset& eval,
                                      const TabularDataset& d_star, const AgentId& a,
                                      const std::vector<std::string>& covariates, const CateModel& theta_ref,
                                      const CateModel& theta_agent, const RunConfig& cfg,
                                      const BootstrapConfig& boot, std::uint64_t seed) {
  const auto rows = effect_rows(theta_ref, theta_agent, eval, a);
  const auto positions = detail::agent_positions(eval, a);
  const auto train_sel = train.select_covariates(covariates);
  const auto ref_sel = d_star.select_covariates(covariates);
  Pipeline pipeline = [&](const ResampleIndices& idx) {
    PipelineOutput out;
    if (boot.mode == BootstrapMode::EvalOnly) {
      std::vector<std::size_t> picked;
      picked.reserve(idx.eval.size());
      for (std::size_t i : idx.eval) {
        if (positions[i] >= 0) picked.push_back(static_cast<std::size_t>(positions[i]));
      }
      if (picked.empty()) throw Error(ErrorKind::EmptyStratum, "resample has no rows for agent " + a.str());
      out.effects = summarize_effects(rows, picked);
    } else {
      const auto train_b = train_sel.take(idx.train);
      const auto agent_train = train_b ? filter_by_agent(*train_b, a) : std::nullopt;
      if (!agent_train) throw Error(ErrorKind::EmptyStratum, "resample has no training rows for agent " + a.str());
      const auto ref_b = ref_sel.take(idx.reference);
      const auto eval_b = eval.take(idx.eval);
      const auto th_ref = fit_s_learner(*ref_b, cfg.learner);
      const auto th_a = fit_s_learner(*agent_train, cfg.learner);
      out.effects = plugin_effects(th_ref, th_a, *eval_b, a);
    }
    out.value = cmre(*out.effects, cfg.min_abs_delta).value;
    return out;
  };
  BootstrapSizes sizes{train.rows(), eval.rows(), d_star.rows()};
  return bootstrap(pipeline, sizes, boot.b, boot.level, seed, boot.mode);
}

/// One estimator for one agent without any resampling. CMRE fits theta* on
/// all of D* and theta_a on the agent's training rows.
inline MrEstimate estimate_once(EstimatorKind kind, const TabularDataset& train, const TabularDataset& eval,
                                const TabularDataset& d_star, const AgentId& a,
                                const std::vector<std::string>& covariates, const RunConfig& cfg,
                                std::uint64_t seed) {
  switch (kind) {
    case EstimatorKind::CMRE: {
      auto own = filter_by_agent(train, a);
      if (!own) throw Error(ErrorKind::EmptyStratum, "agent " + a.str() + " has no training rows");
      const auto th_ref = fit_s_learner(d_star.select_covariates(covariates), cfg.learner);
      const auto th_a = fit_s_learner(own->select_covariates(covariates), cfg.learner);
      return cmre(plugin_effects(th_ref, th_a, eval, a), cfg.min_abs_delta);
    }
    case EstimatorKind::NMRE:
      return nmre(d_star, eval, a);
    case EstimatorKind::NDEE:
    case EstimatorKind::NDEE_NoC:
    case EstimatorKind::NDEE_NoS:
      return ndee(train, eval, d_star, a, cfg.learner, covariates, seed, kind);
    case EstimatorKind::OCSVM:
      return ocsvm_rate(d_star, eval, a, cfg.ocsvm);
  }
  throw Error(ErrorKind::Parameter, "unknown estimator");
}

/// estimate_once plus, when cfg.bootstrap is set, a percentile CI. CMRE
/// uses bootstrap_cmre (and reports a delta-method variance); the other
/// estimators are recomputed on each resample.
inline MrEstimate estimate_agent(EstimatorKind kind, const TabularDataset& train, const TabularDataset& eval,
                                 const TabularDataset& d_star, const AgentId& a,
                                 const std::vector<std::string>& covariates, const RunConfig& cfg,
                                 std::uint64_t seed) {
  if (kind == EstimatorKind::CMRE) {
    auto own = filter_by_agent(train, a);
    if (!own) throw Error(ErrorKind::EmptyStratum, "agent " + a.str() + " has no training rows");
    const auto th_ref = fit_s_learner(d_star.select_covariates(covariates), cfg.learner);
    const auto th_a = fit_s_learner(own->select_covariates(covariates), cfg.learner);
    const auto effects = plugin_effects(th_ref, th_a, eval, a);
    auto est = cmre(effects, cfg.min_abs_delta);
    if (cfg.bootstrap) {
      const auto boot = bootstrap_cmre(train, eval, d_star, a, covariates, th_ref, th_a, cfg, *cfg.bootstrap,
                                       derive_seed(seed, {11}));
      est.ci = boot.ci;
      if (boot.cov) est.variance = delta_variance(effects, *boot.cov);
    }
    return est;
  }
  auto est = estimate_once(kind, train, eval, d_star, a, covariates, cfg, seed);
  if (cfg.bootstrap) {
    const auto& boot_cfg = *cfg.bootstrap;
    Pipeline pipeline = [&](const ResampleIndices& idx) {
      const auto eval_b = eval.take(idx.eval);
      PipelineOutput out;
      if (boot_cfg.mode == BootstrapMode::EvalOnly) {
        out.value = estimate_once(kind, train, *eval_b, d_star, a, covariates, cfg, seed).value;
      } else {
        out.value = estimate_once(kind, *train.take(idx.train), *eval_b, *d_star.take(idx.reference), a, covariates,
                                  cfg, seed)
                        .value;
      }
      return out;
    };
    const auto boot = bootstrap(pipeline, {train.rows(), eval.rows(), d_star.rows()}, boot_cfg.b, boot_cfg.level,
                                derive_seed(seed, {11}), boot_cfg.mode);
    est.ci = boot.ci;
  }
  return est;
}

/// One simulated pair, an 80/20 split of D, theta* fitted on all of D* and
/// theta_a per agent on the training split, every requested estimator
/// evaluated on the evaluation split. Estimator failures become records.
inline ReplicationResult run_replication(SimulationSpec spec, const RunConfig& cfg, std::uint64_t seed) {
  spec.seed = seed;
  if (!spec.covariate_seed) spec.covariate_seed = seed;
  const auto pair = simulate(spec);
  const auto manifest = role_manifest(spec.scenario);
  const auto parts = split(pair.d, cfg.train_fraction, derive_seed(seed, {7}));

  ReplicationResult result;
  result.seed = seed;
  result.realized_mr = pair.realized_mr;
  result.agents = pair.agents;

  std::map<std::vector<std::string>, CateModel> reference_models;
  auto reference_for = [&](const std::vector<std::string>& cols) -> const CateModel& {
    auto it = reference_models.find(cols);
    if (it == reference_models.end()) {
      it = reference_models.emplace(cols, fit_s_learner(pair.d_star.select_covariates(cols), cfg.learner)).first;
    }
    return it->second;
  };

  for (const auto& truth : pair.agents) {
    const AgentId& a = truth.agent;
    std::optional<CateModel> theta_agent;
    for (auto kind : cfg.estimators) {
      EstimateRecord rec;
      rec.agent = a;
      rec.estimator = kind;
      rec.true_mr = truth.realized_mr;
      rec.target_mr = truth.target_mr;
      try {
        const auto& cols = covariates_for(manifest, kind);
        switch (kind) {
          case EstimatorKind::CMRE: {
            const auto& th_ref = reference_for(cols);
            if (!theta_agent) {
              auto own = filter_by_agent(parts.train, a);
              if (!own) throw Error(ErrorKind::EmptyStratum, "agent " + a.str() + " has no training rows");
              theta_agent.emplace(fit_s_learner(own->select_covariates(cols), cfg.learner));
            }
            auto est = cmre(plugin_effects(th_ref, *theta_agent, parts.eval, a), cfg.min_abs_delta);
            if (cfg.bootstrap) {
              const auto boot = bootstrap_cmre(parts.train, parts.eval, pair.d_star, a, cols, th_ref, *theta_agent,
                                               cfg, *cfg.bootstrap, derive_seed(seed, {11}));
              est.ci = boot.ci;
              if (boot.cov) {
                est.variance = delta_variance(plugin_effects(th_ref, *theta_agent, parts.eval, a), *boot.cov);
              }
            }
            rec.estimate = std::move(est);
            break;
          }
          default:
            rec.estimate = estimate_agent(kind, parts.train, parts.eval, pair.d_star, a, cols, cfg, seed);
            break;
        }
      } catch (const Error& e) {
        rec.failure = e.what();
      }
      result.records.push_back(std::move(rec));
    }
  }
  return result;
}

enum class SweptParameter { BetaA, BetaXstar, TargetMr };

inline std::string to_string(SweptParameter p) {
  switch (p) {
    case SweptParameter::BetaA: return "beta_a";
    case SweptParameter::BetaXstar: return "beta_xstar";
    case SweptParameter::TargetMr: return "target_mr";
  }
  return "unknown";
}

inline SweptParameter parse_swept_parameter(const std::string& s) {
  for (auto p : {SweptParameter::BetaA, SweptParameter::BetaXstar, SweptParameter::TargetMr}) {
    if (to_string(p) == s) return p;
  }
  throw Error(ErrorKind::Parameter, "unknown sweep parameter '" + s + "'");
}

struct SweepSpec {
  SimulationSpec base;
  SweptParameter parameter = SweptParameter::BetaA;
  std::vector<double> values;
  std::size_t replications = 100;
  RunConfig run;

  void validate() const {
    if (values.empty()) throw Error(ErrorKind::Parameter, "sweep needs at least one value");
    if (replications < 1) throw Error(ErrorKind::Parameter, "replications must be at least 1");
    if (run.estimators.empty()) throw Error(ErrorKind::Parameter, "sweep needs at least one estimator");
  }

  SimulationSpec spec_at(double value) const {
    SimulationSpec s = base;
    switch (parameter) {
      case SweptParameter::BetaA: s.beta_a = value; break;
      case SweptParameter::BetaXstar: s.beta_xstar = value; break;
      case SweptParameter::TargetMr: s.target_mr = value; break;
    }
    s.covariate_seed = base.covariate_seed.value_or(base.seed);
    return s;
  }

  std::uint64_t seed_at(std::size_t value_index, std::size_t rep) const {
    return derive_seed(base.seed, {value_index, rep});
  }
};

struct ReplicationRow {
  std::size_t value_index = 0;
  double param_value = 0.0;
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  EstimateRecord record;
};

struct AggregateRow {
  double param_value = 0.0;
  EstimatorKind estimator = EstimatorKind::CMRE;
  AgentId agent;
  double mean = 0.0;  // NaN when every replication failed
  double std = 0.0;
  std::size_t n_ok = 0;
  std::size_t n_fail = 0;
  double true_mr = 0.0;

  bool degenerate() const noexcept { return n_ok == 0; }
};

struct SweepResult {
  std::vector<AggregateRow> aggregate;
  std::vector<ReplicationRow> replications;
};

/// Mean and population standard deviation of the successful values; the
/// true MR is the mean realized MR over all replications of the cell.
inline std::vector<AggregateRow> aggregate(const std::vector<ReplicationRow>& rows,
                                           const std::vector<double>& values,
                                           const std::vector<EstimatorKind>& estimators) {
  std::vector<AggregateRow> out;
  std::vector<AgentId> agents;
  for (const auto& r : rows) {
    if (std::find(agents.begin(), agents.end(), r.record.agent) == agents.end()) agents.push_back(r.record.agent);
  }
  std::sort(agents.begin(), agents.end(), [](const AgentId& x, const AgentId& y) {
    if (x.str().size() != y.str().size()) return x.str().size() < y.str().size();
    return x < y;
  });
  for (std::size_t v = 0; v < values.size(); ++v) {
    for (const auto& a : agents) {
      for (auto e : estimators) {
        AggregateRow agg;
        agg.param_value = values[v];
        agg.estimator = e;
        agg.agent = a;
        std::vector<double> ok;
        double truth = 0.0;
        std::size_t total = 0;
        for (const auto& r : rows) {
          if (r.value_index != v || r.record.agent != a || r.record.estimator != e) continue;
          ++total;
          truth += r.record.true_mr;
          if (r.record.ok()) {
            ok.push_back(r.record.estimate->value);
          } else {
            ++agg.n_fail;
          }
        }
        if (total == 0) continue;
        agg.n_ok = ok.size();
        agg.true_mr = truth / static_cast<double>(total);
        if (ok.empty()) {
          agg.mean = std::nan("");
          agg.std = std::nan("");
        } else {
          double s = 0.0;
          for (double x : ok) s += x;
          agg.mean = s / static_cast<double>(ok.size());
          double ss = 0.0;
          for (double x : ok) ss += (x - agg.mean) * (x - agg.mean);
          agg.std = std::sqrt(ss / static_cast<double>(ok.size()));
        }
        out.push_back(agg);
      }
    }
  }
  return out;
}

/// Runs values x replications jobs on `parallelism` worker threads. Results
/// are stored by job index, so the output does not depend on scheduling.
inline SweepResult run_sweep(const SweepSpec& sweep, std::size_t parallelism) {
  sweep.validate();
  const std::size_t n_jobs = sweep.values.size() * sweep.replications;
  std::vector<std::vector<ReplicationRow>> per_job(n_jobs);
  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;
  std::mutex fatal_mutex;

  auto worker = [&] {
    for (;;) {
      const std::size_t job = next.fetch_add(1);
      if (job >= n_jobs) return;
      const std::size_t v = job / sweep.replications;
      const std::size_t rep = job % sweep.replications;
      const std::uint64_t seed = sweep.seed_at(v, rep);
      try {
        const auto result = run_replication(sweep.spec_at(sweep.values[v]), sweep.run, seed);
        for (const auto& rec : result.records) per_job[job].push_back({v, sweep.values[v], rep, seed, rec});
      } catch (const std::exception& e) {
        // A simulation that cannot be drawn fails every estimator of the replication.
        SimulationSpec s = sweep.spec_at(sweep.values[v]);
        const auto targets = s.resolved_targets();
        for (std::size_t k = 0; k < targets.size(); ++k) {
          for (auto kind : sweep.run.estimators) {
            EstimateRecord rec;
            rec.agent = AgentId(std::to_string(k + 1));
            rec.estimator = kind;
            rec.failure = e.what();
            rec.target_mr = targets[k];
            rec.true_mr = targets[k];
            per_job[job].push_back({v, sweep.values[v], rep, seed, rec});
          }
        }
        if (!dynamic_cast<const Error*>(&e)) {
          std::lock_guard lock(fatal_mutex);
          if (!fatal) fatal = std::current_exception();
        }
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(parallelism, n_jobs));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < workers; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  if (fatal) std::rethrow_exception(fatal);

  SweepResult out;
  for (auto& job : per_job) {
    for (auto& row : job) out.replications.push_back(std::move(row));
  }
  out.aggregate = aggregate(out.replications, sweep.values, sweep.run.estimators);
  return out;
}

inline LearnerSpec learner_from_json(const nlohmann::json& j) {
  LearnerSpec spec;
  if (j.contains("kind")) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "gbt") {
      spec.kind = LearnerKind::GradientBoostedTrees;
    } else if (kind == "logistic") {
      spec.kind = LearnerKind::LogisticRegression;
    } else if (kind == "mean") {
      spec.kind = LearnerKind::MeanOnly;
    } else {
      throw Error(ErrorKind::Parameter, "unknown learner '" + kind + "'");
    }
  }
  auto& g = spec.gbt;
  if (j.contains("learning_rate")) g.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("max_depth")) g.max_depth = j.at("max_depth").get<int>();
  if (j.contains("lambda")) g.l2_lambda = j.at("lambda").get<double>();
  if (j.contains("n_rounds")) g.n_rounds = j.at("n_rounds").get<int>();
  if (j.contains("min_child_weight")) g.min_child_weight = j.at("min_child_weight").get<double>();
  return spec;
}

/// Sweep configuration:
///   {"base": {...}, "sweep": {"parameter": "beta_a", "values": [...]},
///    "replications": 100, "estimators": ["cmre", ...],
///    "bootstrap": {"b": 100, "level": 0.95, "mode": "eval"},
///    "learner": {...}, "ocsvm": {"nu": 0.01, "gamma": 0.1}, "train_fraction": 0.8}
inline SweepSpec sweep_spec_from_json(const nlohmann::json& j) {
  SweepSpec s;
  try {
    if (j.contains("base")) s.base = simulation_spec_from_json(j.at("base"));
    const auto& sw = j.at("sweep");
    s.parameter = parse_swept_parameter(sw.at("parameter").get<std::string>());
    s.values = sw.at("values").get<std::vector<double>>();
    if (j.contains("replications")) s.replications = j.at("replications").get<std::size_t>();
    if (j.contains("estimators")) {
      s.run.estimators.clear();
      for (const auto& e : j.at("estimators")) s.run.estimators.push_back(parse_estimator(e.get<std::string>()));
    }
    if (j.contains("bootstrap") && !j.at("bootstrap").is_null()) {
      const auto& b = j.at("bootstrap");
      BootstrapConfig cfg;
      if (b.contains("b")) cfg.b = b.at("b").get<std::size_t>();
      if (b.contains("level")) cfg.level = b.at("level").get<double>();
      if (b.contains("mode")) cfg.mode = parse_bootstrap_mode(b.at("mode").get<std::string>());
      s.run.bootstrap = cfg;
    }
    if (j.contains("learner")) s.run.learner = learner_from_json(j.at("learner"));
    if (j.contains("ocsvm")) {
      const auto& o = j.at("ocsvm");
      if (o.contains("nu")) s.run.ocsvm.nu = o.at("nu").get<double>();
      if (o.contains("gamma")) s.run.ocsvm.gamma = o.at("gamma").get<double>();
    }
    if (j.contains("train_fraction")) s.run.train_fraction = j.at("train_fraction").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Schema, std::string("invalid sweep configuration: ") + e.what());
  }
  s.validate();
  return s;
}

namespace detail {

inline std::string csv_real(double v) { return std::isnan(v) ? "nan" : format_real(v); }

inline std::string csv_text(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace detail

inline void write_aggregate_csv(const std::vector<AggregateRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
  out << "param_value,estimator,mean,std,n_ok,n_fail,true_mr,agent\n";
  for (const auto& r : rows) {
    out << detail::format_real(r.param_value) << ',' << to_string(r.estimator) << ',' << detail::csv_real(r.mean)
        << ',' << detail::csv_real(r.std) << ',' << r.n_ok << ',' << r.n_fail << ','
        << detail::format_real(r.true_mr) << ',' << r.agent.str() << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, "write to '" + path + "' failed");
}

inline void write_replications_csv(const std::vector<ReplicationRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
  out << "value_index,param_value,rep,seed,agent,estimator,status,value,ci_lower,ci_upper,variance,true_mr,"
         "target_mr,error\n";
  for (const auto& r : rows) {
    const auto& rec = r.record;
    out << r.value_index << ',' << detail::format_real(r.param_value) << ',' << r.rep << ',' << r.seed << ','
        << rec.agent.str() << ',' << to_string(rec.estimator) << ',' << (rec.ok() ? "ok" : "failed") << ',';
    if (rec.ok()) {
      const auto& e = *rec.estimate;
      out << detail::format_real(e.value) << ',';
      if (e.ci) {
        out << detail::format_real(e.ci->lower) << ',' << detail::format_real(e.ci->upper) << ',';
      } else {
        out << ",,";
      }
      if (e.variance) out << detail::format_real(*e.variance);
      out << ',';
    } else {
      out << ",,,,";
    }
    out << detail::format_real(rec.true_mr) << ',' << detail::format_real(rec.target_mr) << ','
        << detail::csv_text(rec.failure) << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, "write to '" + path + "' failed");
}

inline nlohmann::json sweep_manifest(const SweepSpec& s, const nlohmann::json& config) {
  nlohmann::json j;
  j["version"] = kVersion;
  j["config"] = config;
  j["base_seed"] = s.base.seed;
  j["covariate_seed"] = s.base.covariate_seed.value_or(s.base.seed);
  j["parameter"] = to_string(s.parameter);
  j["values"] = s.values;
  j["replications"] = s.replications;
  nlohmann::json seeds = nlohmann::json::array();
  for (std::size_t v = 0; v < s.values.size(); ++v) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t r = 0; r < s.replications; ++r) row.push_back(s.seed_at(v, r));
    seeds.push_back(std::move(row));
  }
  j["seeds"] = std::move(seeds);
  return j;
}

inline void write_sweep_outputs(const SweepSpec& spec, const SweepResult& result, const nlohmann::json& config,
                                const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  write_aggregate_csv(result.aggregate, (dir / "aggregate.csv").string());
  write_replications_csv(result.replications, (dir / "replications.csv").string());
  std::ofstream m(dir / "manifest.json");
  if (!m) throw Error(ErrorKind::Io, "cannot write manifest in '" + out_dir + "'");
  m << sweep_manifest(spec, config).dump(2) << '\n';
}

}  // namespace misreport
