#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "misreport/error.hpp"
#include "misreport/estimators.hpp"
#include "misreport/random.hpp"

namespace misreport {

/// Covariance of (tau', tau, delta') scaled by n, so that Var of the plug-in
/// vector is approximately sigma / n.
struct EffectCovariance {
  std::array<std::array<double, 3>, 3> sigma{};
  double n = 1.0;

  static EffectCovariance from_entries(double var_tau_prime, double var_tau, double var_delta_prime,
                                       double cov_tau_prime_tau, double cov_tau_prime_delta_prime,
                                       double cov_tau_delta_prime, double n) {
    EffectCovariance c;
    c.sigma = {{{var_tau_prime, cov_tau_prime_tau, cov_tau_prime_delta_prime},
                {cov_tau_prime_tau, var_tau, cov_tau_delta_prime},
                {cov_tau_prime_delta_prime, cov_tau_delta_prime, var_delta_prime}}};
    c.n = n;
    return c;
  }

  void validate() const {
    if (!(n > 0.0)) throw Error(ErrorKind::Parameter, "covariance sample count must be positive");
    for (int i = 0; i < 3; ++i) {
      if (sigma[i][i] < 0.0) throw Error(ErrorKind::Matrix, "negative variance on the diagonal");
      for (int j = 0; j < i; ++j) {
        if (std::abs(sigma[i][j] - sigma[j][i]) > 1e-12) throw Error(ErrorKind::Matrix, "covariance is not symmetric");
      }
    }
  }

  /// Positive semidefinite up to `tol`, checked through every principal minor.
  bool is_psd(double tol = -1e-8) const {
    const auto& s = sigma;
    for (int i = 0; i < 3; ++i) {
      if (s[i][i] < tol) return false;
    }
    for (int i = 0; i < 3; ++i) {
      for (int j = i + 1; j < 3; ++j) {
        if (s[i][i] * s[j][j] - s[i][j] * s[j][i] < tol) return false;
      }
    }
    const double det = s[0][0] * (s[1][1] * s[2][2] - s[1][2] * s[2][1]) -
                       s[0][1] * (s[1][0] * s[2][2] - s[1][2] * s[2][0]) +
                       s[0][2] * (s[1][0] * s[2][1] - s[1][1] * s[2][0]);
    return det >= tol;
  }
};

/// Delta-method variance of (tau' - tau) / delta':
///   ([s_t't' + s_tt - 2 s_t't] / d^2 + 2 (tau - tau')(s_t'd - s_td) / d^3
///    + (tau - tau')^2 s_dd / d^4) / n
inline double delta_variance(const PluginEffects& effects, const EffectCovariance& cov) {
  cov.validate();
  if (!cov.is_psd()) throw Error(ErrorKind::Matrix, "effect covariance is not positive semidefinite");
  const double d = effects.delta_prime_hat;
  if (d == 0.0) throw ZeroDenominatorError("delta' is zero", d);
  const auto& s = cov.sigma;
  const double diff = effects.tau_hat - effects.tau_prime_hat;
  const double d2 = d * d;
  const double v = (s[0][0] + s[1][1] - 2.0 * s[0][1]) / d2 + 2.0 * diff * (s[0][2] - s[1][2]) / (d2 * d) +
                   diff * diff * s[2][2] / (d2 * d2);
  return v / cov.n;
}

/// Percentile with linear interpolation between order statistics
/// (position q * (m - 1) in the sorted sample).
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorKind::Size, "percentile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorKind::Parameter, "quantile must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

enum class BootstrapMode { EvalOnly, FullRefit };

inline std::string to_string(BootstrapMode m) { return m == BootstrapMode::EvalOnly ? "eval" : "refit"; }

inline BootstrapMode parse_bootstrap_mode(const std::string& s) {
  if (s == "eval") return BootstrapMode::EvalOnly;
  if (s == "refit") return BootstrapMode::FullRefit;
  throw Error(ErrorKind::Parameter, "unknown bootstrap mode '" + s + "' (expected eval|refit)");
}

/// Row indices a pipeline should use for one resample: the training split of
/// D, the evaluation split of D, and the reference data D*. In EvalOnly mode
/// the training and reference indices are the identity.
struct ResampleIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
  std::vector<std::size_t> reference;
};

struct PipelineOutput {
  double value = 0.0;
  std::optional<PluginEffects> effects;
};

using Pipeline = std::function<PipelineOutput(const ResampleIndices&)>;

struct BootstrapSizes {
  std::size_t n_train = 0;
  std::size_t n_eval = 0;
  std::size_t n_reference = 0;
};

struct BootstrapResult {
  ConfidenceInterval ci;
  std::optional<EffectCovariance> cov;
  std::vector<double> values;  // sorted
  std::size_t draws = 0;
};

namespace detail {

inline std::vector<std::size_t> identity(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace detail

/// Percentile bootstrap. Draw k uses seed derive_seed(seed, {k}); a draw
/// whose pipeline throws a library Error is skipped and the next index is
/// tried, up to 3B draws in total. The covariance of the plug-in effects
/// (when the pipeline reports them) is scaled by the evaluation-set size.
inline BootstrapResult bootstrap(const Pipeline& pipeline, const BootstrapSizes& sizes, std::size_t b,
                                 double level, std::uint64_t seed, BootstrapMode mode = BootstrapMode::EvalOnly) {
  if (b < 2) throw Error(ErrorKind::Parameter, "bootstrap needs B >= 2");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::Parameter, "CI level must lie in (0, 1)");
  if (sizes.n_eval == 0) throw Error(ErrorKind::Size, "bootstrap needs a non-empty evaluation set");

  BootstrapResult out;
  std::vector<std::array<double, 3>> effects;
  bool all_effects = true;
  const std::size_t budget = 3 * b;
  std::size_t k = 0;
  for (; k < budget && out.values.size() < b; ++k) {
    Rng rng(derive_seed(seed, {k}));
    ResampleIndices idx;
    idx.eval = rng.resample(sizes.n_eval);
    if (mode == BootstrapMode::FullRefit) {
      idx.train = rng.resample(sizes.n_train);
      idx.reference = rng.resample(sizes.n_reference);
    } else {
      idx.train = detail::identity(sizes.n_train);
      idx.reference = detail::identity(sizes.n_reference);
    }
    PipelineOutput r;
    try {
      r = pipeline(idx);
    } catch (const Error&) {
      continue;
    }
    if (!std::isfinite(r.value)) continue;
    out.values.push_back(r.value);
    if (r.effects) {
      effects.push_back({r.effects->tau_prime_hat, r.effects->tau_hat, r.effects->delta_prime_hat});
    } else {
      all_effects = false;
    }
  }
  out.draws = k;
  if (out.values.size() < b) {
    throw Error(ErrorKind::BootstrapDegenerate, "only " + std::to_string(out.values.size()) + " of " +
                                                    std::to_string(b) + " resamples succeeded in " +
                                                    std::to_string(budget) + " draws");
  }
  std::sort(out.values.begin(), out.values.end());
  const double alpha = 1.0 - level;
  out.ci = {percentile(out.values, alpha / 2.0), percentile(out.values, 1.0 - alpha / 2.0), level};

  if (all_effects && !effects.empty()) {
    // Sort so the covariance does not depend on resample order.
    std::sort(effects.begin(), effects.end());
    const double m = static_cast<double>(effects.size());
    std::array<double, 3> mean{};
    for (const auto& e : effects) {
      for (int i = 0; i < 3; ++i) mean[i] += e[i] / m;
    }
    EffectCovariance cov;
    cov.n = static_cast<double>(sizes.n_eval);
    for (const auto& e : effects) {
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j <= i; ++j) cov.sigma[i][j] += (e[i] - mean[i]) * (e[j] - mean[j]);
      }
    }
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j <= i; ++j) {
        cov.sigma[i][j] *= cov.n / (m - 1.0);
        cov.sigma[j][i] = cov.sigma[i][j];
      }
    }
    out.cov = cov;
  }
  return out;
}

}  // namespace misreport
