#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "misreport/data.hpp"
#include "misreport/error.hpp"
#include "misreport/learners.hpp"
#include "misreport/ocsvm.hpp"

namespace misreport {

enum class Estimand { MR, DIM, FPR };

enum class EstimatorKind { CMRE, NMRE, NDEE, NDEE_NoC, NDEE_NoS, OCSVM };

inline constexpr EstimatorKind kAllEstimators[] = {EstimatorKind::CMRE, EstimatorKind::NMRE,
                                                   EstimatorKind::NDEE, EstimatorKind::NDEE_NoC,
                                                   EstimatorKind::NDEE_NoS, EstimatorKind::OCSVM};

inline std::string to_string(EstimatorKind e) {
  switch (e) {
    case EstimatorKind::CMRE: return "cmre";
    case EstimatorKind::NMRE: return "nmre";
    case EstimatorKind::NDEE: return "ndee";
    case EstimatorKind::NDEE_NoC: return "ndee-noc";
    case EstimatorKind::NDEE_NoS: return "ndee-nos";
    case EstimatorKind::OCSVM: return "ocsvm";
  }
  return "unknown";
}

inline EstimatorKind parse_estimator(const std::string& name) {
  for (auto e : kAllEstimators) {
    if (to_string(e) == name) return e;
  }
  throw Error(ErrorKind::Parameter, "unknown estimator '" + name + "'");
}

inline std::string to_string(Estimand e) {
  switch (e) {
    case Estimand::MR: return "mr";
    case Estimand::DIM: return "dim";
    case Estimand::FPR: return "fpr";
  }
  return "unknown";
}

inline Estimand parse_estimand(const std::string& name) {
  for (auto e : {Estimand::MR, Estimand::DIM, Estimand::FPR}) {
    if (to_string(e) == name) return e;
  }
  throw Error(ErrorKind::Parameter, "unknown estimand '" + name + "'");
}

struct ConfidenceInterval {
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
};

struct Diagnostics {
  bool overlap_warning = false;
  std::size_t n_x1 = 0;
  std::size_t n_x0 = 0;
  std::vector<std::string> notes;
};

/// A point estimate of a misreporting-type estimand. Values are never
/// clipped to [0, 1]; a bootstrap CI need not contain `value`.
struct MrEstimate {
  Estimand estimand = Estimand::MR;
  EstimatorKind estimator = EstimatorKind::CMRE;
  double value = 0.0;
  AgentId agent;
  Diagnostics diagnostics;
  std::optional<double> variance;
  std::optional<ConfidenceInterval> ci;
};

struct PluginEffects {
  double tau_prime_hat = 0.0;
  double tau_hat = 0.0;
  double delta_prime_hat = 0.0;
  std::size_t n_x1 = 0;
  std::size_t n_x0 = 0;
  AgentId agent;
  bool overlap_warning = false;
};

/// Per-row CATE values on one agent's evaluation rows. Averaging these over
/// the feature strata gives the plug-in effects; the bootstrap resamples them.
struct EffectRows {
  AgentId agent;
  std::vector<std::uint8_t> feature;
  std::vector<double> theta_ref;
  std::vector<double> theta_agent;
  bool overlap_warning = false;

  std::size_t size() const noexcept { return feature.size(); }
};

inline EffectRows effect_rows(const CateModel& theta_ref, const CateModel& theta_agent,
                              const TabularDataset& eval, const AgentId& a) {
  if (eval.role() != Role::Manipulated || !eval.has_agent()) {
    throw Error(ErrorKind::Role, "plug-in effects need a manipulated dataset with agent ids");
  }
  if (!theta_ref.provenance().is_reference()) {
    throw Error(ErrorKind::Usage, "theta_ref must be fitted on the unmanipulated reference data");
  }
  if (!theta_agent.provenance().is_reference() && *theta_agent.provenance().agent != a) {
    throw Error(ErrorKind::Usage, "theta_agent was fitted for agent '" +
                                      theta_agent.provenance().agent->str() + "', not '" + a.str() + "'");
  }
  const auto rows = agent_rows(eval, a);
  EffectRows out;
  out.agent = a;
  out.overlap_warning = theta_ref.overlap_warning() || theta_agent.overlap_warning();
  if (rows.empty()) return out;
  const auto sub = eval.take(rows)->select_covariates(theta_ref.covariate_names());
  out.feature = sub.features();
  out.theta_ref = theta_ref.cate_rows(sub);
  if (&theta_agent == &theta_ref) {
    out.theta_agent = out.theta_ref;
  } else {
    const auto sub_agent = eval.take(rows)->select_covariates(theta_agent.covariate_names());
    out.theta_agent = theta_agent.cate_rows(sub_agent);
  }
  return out;
}

/// Stratum means over the given row indices (all rows when empty).
inline PluginEffects summarize_effects(const EffectRows& rows, std::span<const std::size_t> indices = {}) {
  PluginEffects e;
  e.agent = rows.agent;
  e.overlap_warning = rows.overlap_warning;
  double ref1 = 0.0, agent1 = 0.0, ref0 = 0.0;
  auto visit = [&](std::size_t i) {
    if (rows.feature[i] == 1) {
      ref1 += rows.theta_ref[i];
      agent1 += rows.theta_agent[i];
      ++e.n_x1;
    } else {
      ref0 += rows.theta_ref[i];
      ++e.n_x0;
    }
  };
  if (indices.empty()) {
    for (std::size_t i = 0; i < rows.size(); ++i) visit(i);
  } else {
    for (std::size_t i : indices) visit(i);
  }
  if (e.n_x1 == 0) throw Error(ErrorKind::EmptyStratum, "no evaluation rows with feature=1 for agent '" + rows.agent.str() + "'");
  if (e.n_x0 == 0) throw Error(ErrorKind::EmptyStratum, "no evaluation rows with feature=0 for agent '" + rows.agent.str() + "'");
  e.tau_prime_hat = ref1 / static_cast<double>(e.n_x1);
  e.tau_hat = agent1 / static_cast<double>(e.n_x1);
  e.delta_prime_hat = ref0 / static_cast<double>(e.n_x0);
  return e;
}

/// tau'_a and tau_a average the reference and agent CATEs over agent-a rows
/// with feature=1; delta'_a averages the reference CATE over feature=0 rows.
inline PluginEffects plugin_effects(const CateModel& theta_ref, const CateModel& theta_agent,
                                    const TabularDataset& eval, const AgentId& a) {
  return summarize_effects(effect_rows(theta_ref, theta_agent, eval, a));
}

inline constexpr double kDefaultMinAbsDelta = 1e-3;

/// (tau' - tau) / delta'. A denominator below `min_abs_delta` in magnitude
/// is an error: the ratio's variance grows like 1/delta'^2 and faster.
inline MrEstimate cmre(const PluginEffects& effects, double min_abs_delta = kDefaultMinAbsDelta) {
  if (!(std::abs(effects.delta_prime_hat) >= min_abs_delta)) {
    throw ZeroDenominatorError("|delta'| = " + std::to_string(std::abs(effects.delta_prime_hat)) +
                                   " is below the minimum " + std::to_string(min_abs_delta),
                               effects.delta_prime_hat);
  }
  MrEstimate est;
  est.estimator = EstimatorKind::CMRE;
  est.agent = effects.agent;
  est.value = (effects.tau_prime_hat - effects.tau_hat) / effects.delta_prime_hat;
  est.diagnostics.overlap_warning = effects.overlap_warning;
  est.diagnostics.n_x1 = effects.n_x1;
  est.diagnostics.n_x0 = effects.n_x0;
  return est;
}

namespace detail {

struct StratumMeans {
  double mean1 = 0.0;
  double mean0 = 0.0;
  std::size_t n1 = 0;
  std::size_t n0 = 0;
};

inline StratumMeans outcome_means(const TabularDataset& ds, std::span<const std::size_t> rows,
                                  const std::string& label) {
  StratumMeans s;
  double y1 = 0.0, y0 = 0.0;
  for (std::size_t i : rows) {
    if (ds.feature(i) == 1) {
      y1 += ds.outcome(i);
      ++s.n1;
    } else {
      y0 += ds.outcome(i);
      ++s.n0;
    }
  }
  if (s.n1 == 0) throw Error(ErrorKind::EmptyStratum, label + ": no rows with feature=1");
  if (s.n0 == 0) throw Error(ErrorKind::EmptyStratum, label + ": no rows with feature=0");
  s.mean1 = y1 / static_cast<double>(s.n1);
  s.mean0 = y0 / static_cast<double>(s.n0);
  return s;
}

inline std::vector<std::size_t> all_rows(const TabularDataset& ds) {
  std::vector<std::size_t> r(ds.rows());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = i;
  return r;
}

}  // namespace detail

/// Difference-in-means counterpart of CMRE with no covariate adjustment.
inline MrEstimate nmre(const TabularDataset& d_star, const TabularDataset& d_eval, const AgentId& a) {
  const auto ref = detail::outcome_means(d_star, detail::all_rows(d_star), "reference data");
  const auto rows = agent_rows(d_eval, a);
  const auto agent = detail::outcome_means(d_eval, rows, "agent '" + a.str() + "'");
  const double tau_prime = ref.mean1 - ref.mean0;
  const double tau = agent.mean1 - agent.mean0;
  if (tau_prime == 0.0) {
    throw ZeroDenominatorError("reference difference in means is exactly zero", tau_prime);
  }
  MrEstimate est;
  est.estimator = EstimatorKind::NMRE;
  est.agent = a;
  est.value = (tau_prime - tau) / tau_prime;
  est.diagnostics.n_x1 = agent.n1;
  est.diagnostics.n_x0 = agent.n0;
  return est;
}

/// Natural-direct-effect baseline. The reference data is relabelled with the
/// trust token and fused with the manipulated training rows; a model of the
/// reported feature given (covariates, one-hot agent) is fitted, and
///   value = mean_{agent-a eval rows}[f(c, a) - f(c, a*)] / mean_{same rows}(x).
inline MrEstimate ndee(const TabularDataset& d_train, const TabularDataset& d_eval,
                       const TabularDataset& d_star, const AgentId& a, const LearnerSpec& spec,
                       const std::optional<std::vector<std::string>>& covariate_subset,
                       std::uint64_t seed = 0, EstimatorKind tag = EstimatorKind::NDEE) {
  if (!d_train.has_agent() || !d_eval.has_agent()) {
    throw Error(ErrorKind::Role, "NDEE needs manipulated data with agent ids");
  }
  const std::vector<std::string> cols = covariate_subset.value_or(d_train.covariate_names());
  const auto train = d_train.select_covariates(cols);
  const auto ref = d_star.select_covariates(cols);

  std::vector<AgentId> levels = train.agents();
  if (std::find(levels.begin(), levels.end(), a) == levels.end()) {
    throw Error(ErrorKind::EmptyStratum, "agent '" + a.str() + "' has no training rows");
  }
  levels.push_back(AgentId::trusted());
  const std::size_t d = cols.size();
  const std::size_t width = d + levels.size();
  auto level_of = [&](const AgentId& id) {
    return static_cast<std::size_t>(std::find(levels.begin(), levels.end(), id) - levels.begin());
  };

  Matrix design(train.rows() + ref.rows(), width, 0.0);
  std::vector<std::uint8_t> labels;
  labels.reserve(design.rows());
  for (std::size_t i = 0; i < train.rows(); ++i) {
    auto row = design.row(i);
    auto c = train.covariate_row(i);
    std::copy(c.begin(), c.end(), row.begin());
    row[d + level_of(train.agent(i))] = 1.0;
    labels.push_back(train.feature(i));
  }
  const std::size_t trust = levels.size() - 1;
  for (std::size_t i = 0; i < ref.rows(); ++i) {
    auto row = design.row(train.rows() + i);
    auto c = ref.covariate_row(i);
    std::copy(c.begin(), c.end(), row.begin());
    row[d + trust] = 1.0;
    labels.push_back(ref.feature(i));
  }
  const auto model = fit(spec, design, labels, seed);

  const auto rows = agent_rows(d_eval, a);
  if (rows.empty()) throw Error(ErrorKind::EmptyStratum, "agent '" + a.str() + "' has no evaluation rows");
  const auto eval = d_eval.take(rows)->select_covariates(cols);
  std::vector<double> x(width, 0.0);
  double nde = 0.0, reported = 0.0;
  const std::size_t own = level_of(a);
  for (std::size_t i = 0; i < eval.rows(); ++i) {
    std::fill(x.begin(), x.end(), 0.0);
    auto c = eval.covariate_row(i);
    std::copy(c.begin(), c.end(), x.begin());
    x[d + own] = 1.0;
    const double as_agent = model.predict(x);
    x[d + own] = 0.0;
    x[d + trust] = 1.0;
    nde += as_agent - model.predict(x);
    reported += eval.feature(i);
  }
  const double n = static_cast<double>(eval.rows());
  const double pi = reported / n;
  if (pi == 0.0) throw ZeroDenominatorError("agent '" + a.str() + "' never reports feature=1", pi);
  MrEstimate est;
  est.estimator = tag;
  est.agent = a;
  est.value = (nde / n) / pi;
  est.diagnostics.n_x1 = static_cast<std::size_t>(reported);
  est.diagnostics.n_x0 = eval.rows() - est.diagnostics.n_x1;
  return est;
}

/// Single-dataset form: fit and evaluate on the same manipulated rows.
inline MrEstimate ndee(const TabularDataset& d, const TabularDataset& d_star, const AgentId& a,
                       const LearnerSpec& spec, const std::optional<std::vector<std::string>>& covariate_subset,
                       std::uint64_t seed = 0, EstimatorKind tag = EstimatorKind::NDEE) {
  return ndee(d, d, d_star, a, spec, covariate_subset, seed, tag);
}

/// (y, c) of every feature=1 row, in that column order.
inline Matrix outcome_covariate_points(const TabularDataset& ds, std::span<const std::size_t> rows) {
  Matrix m(0, ds.covariate_count() + 1);
  std::vector<double> point(ds.covariate_count() + 1);
  for (std::size_t i : rows) {
    if (ds.feature(i) != 1) continue;
    point[0] = ds.outcome(i);
    auto c = ds.covariate_row(i);
    std::copy(c.begin(), c.end(), point.begin() + 1);
    m.append_row(point);
  }
  return m;
}

/// Outlier fraction, under a one-class SVM trained on the reference
/// feature=1 rows, among agent-a evaluation rows with feature=1.
inline MrEstimate ocsvm_rate(const TabularDataset& d_star, const TabularDataset& d_eval, const AgentId& a,
                             const OcSvmParams& params) {
  const auto train = outcome_covariate_points(d_star, detail::all_rows(d_star));
  if (train.rows() == 0) throw Error(ErrorKind::EmptyStratum, "reference data has no rows with feature=1");
  const auto rows = agent_rows(d_eval, a);
  std::optional<TabularDataset> sub;
  if (!rows.empty()) sub = d_eval.take(rows)->select_covariates(d_star.covariate_names());
  const auto probe = sub ? outcome_covariate_points(*sub, detail::all_rows(*sub)) : Matrix(0, train.cols());
  if (probe.rows() == 0) {
    throw Error(ErrorKind::EmptyStratum, "agent '" + a.str() + "' has no evaluation rows with feature=1");
  }
  const auto model = fit_ocsvm(train, params);
  std::size_t outliers = 0;
  for (std::size_t i = 0; i < probe.rows(); ++i) {
    if (model.classify(probe.row(i)) == OcSvmLabel::Outlier) ++outliers;
  }
  MrEstimate est;
  est.estimator = EstimatorKind::OCSVM;
  est.agent = a;
  est.value = static_cast<double>(outliers) / static_cast<double>(probe.rows());
  est.diagnostics.n_x1 = probe.rows();
  est.diagnostics.n_x0 = rows.size() - probe.rows();
  est.diagnostics.notes = model.warnings;
  return est;
}

inline MrEstimate ocsvm_rate(const TabularDataset& d_star, const TabularDataset& d_eval, const AgentId& a,
                             double nu, double gamma) {
  OcSvmParams p;
  p.nu = nu;
  p.gamma = gamma;
  return ocsvm_rate(d_star, d_eval, a, p);
}

struct DerivedEstimates {
  MrEstimate dim;
  MrEstimate fpr;
};

/// DIM = MR * P(X=1) and FPR = MR * P(X=1) / (P(X=0) + MR * P(X=1)).
/// Both maps are increasing in MR for p_x1 in (0, 1), so CI endpoints map
/// through directly; variances are propagated to first order.
inline DerivedEstimates derived_estimands(const MrEstimate& mr, double p_x1) {
  if (mr.estimand != Estimand::MR) throw Error(ErrorKind::Usage, "derived estimands need an MR estimate");
  if (!(p_x1 >= 0.0 && p_x1 <= 1.0)) throw Error(ErrorKind::Parameter, "p_x1 must lie in [0, 1]");
  auto dim_of = [&](double m) { return m * p_x1; };
  auto fpr_denominator = [&](double m) { return (1.0 - p_x1) + m * p_x1; };
  const double denom = fpr_denominator(mr.value);
  if (denom == 0.0) throw ZeroDenominatorError("FPR denominator P(X*=0) is zero", denom);
  auto fpr_of = [&](double m) { return m * p_x1 / fpr_denominator(m); };

  DerivedEstimates out{mr, mr};
  out.dim.estimand = Estimand::DIM;
  out.dim.value = dim_of(mr.value);
  out.fpr.estimand = Estimand::FPR;
  out.fpr.value = fpr_of(mr.value);
  if (mr.variance) {
    out.dim.variance = p_x1 * p_x1 * *mr.variance;
    const double slope = p_x1 * (1.0 - p_x1) / (denom * denom);
    out.fpr.variance = slope * slope * *mr.variance;
  }
  if (mr.ci) {
    out.dim.ci = ConfidenceInterval{dim_of(mr.ci->lower), dim_of(mr.ci->upper), mr.ci->level};
    if (fpr_denominator(mr.ci->lower) > 0.0 && fpr_denominator(mr.ci->upper) > 0.0) {
      out.fpr.ci = ConfidenceInterval{fpr_of(mr.ci->lower), fpr_of(mr.ci->upper), mr.ci->level};
    } else {
      out.fpr.ci.reset();
      out.fpr.diagnostics.notes.push_back("FPR interval undefined: CI endpoint gives non-positive P(X*=0)");
    }
  }
  return out;
}

}  // namespace misreport
