#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "misreport/error.hpp"
#include "misreport/matrix.hpp"

namespace misreport {

struct OcSvmParams {
  double nu = 0.01;
  double gamma = 0.1;
  double tol = 1e-6;
  long max_iterations = 10'000'000;
};

enum class OcSvmLabel { Inlier, Outlier };

/// Fitted nu-one-class SVM with RBF kernel:
///   decision(z) = sum_i alpha_i exp(-gamma |z_i - z|^2) - rho
class OcSvmModel {
 public:
  double nu = 0.0;
  double gamma = 0.0;
  double rho = 0.0;
  /// Distinct training points with nonzero coefficient, and the summed
  /// coefficient of the training rows that coincide with each.
  Matrix support_points;
  std::vector<double> support_coef;
  /// Dual coefficient of every training row, in input order.
  std::vector<double> alphas;
  /// Largest KKT violation at termination.
  double kkt_violation = 0.0;
  long iterations = 0;
  std::vector<std::string> warnings;

  std::size_t dimension() const noexcept { return support_points.cols(); }

  double decision(std::span<const double> z) const {
    if (z.size() != dimension()) {
      throw Error(ErrorKind::Shape, "point has " + std::to_string(z.size()) +
                                        " coordinates, model expects " + std::to_string(dimension()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < support_points.rows(); ++i) {
      auto p = support_points.row(i);
      double dist2 = 0.0;
      for (std::size_t j = 0; j < p.size(); ++j) dist2 += (p[j] - z[j]) * (p[j] - z[j]);
      s += support_coef[i] * std::exp(-gamma * dist2);
    }
    return s - rho;
  }

  /// decision == 0 counts as an inlier.
  OcSvmLabel classify(std::span<const double> z) const {
    return decision(z) < 0.0 ? OcSvmLabel::Outlier : OcSvmLabel::Inlier;
  }
};

inline OcSvmLabel classify(const OcSvmModel& model, std::span<const double> z) { return model.classify(z); }

namespace detail {

inline double rbf(std::span<const double> a, std::span<const double> b, double gamma) {
  double dist2 = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) dist2 += (a[j] - b[j]) * (a[j] - b[j]);
  return std::exp(-gamma * dist2);
}

/// Kernel rows, from a precomputed matrix when small enough.
class KernelRows {
 public:
  static constexpr std::size_t kFullMatrixLimit = 4096;

  KernelRows(const Matrix& points, double gamma) : points_(points), gamma_(gamma) {
    const std::size_t m = points.rows();
    if (m <= kFullMatrixLimit) {
      full_.resize(m * m);
      for (std::size_t i = 0; i < m; ++i) {
        full_[i * m + i] = 1.0;
        for (std::size_t j = 0; j < i; ++j) {
          const double k = rbf(points.row(i), points.row(j), gamma);
          full_[i * m + j] = k;
          full_[j * m + i] = k;
        }
      }
    } else {
      scratch_a_.resize(m);
      scratch_b_.resize(m);
    }
  }

  /// `slot` selects one of two scratch buffers in on-the-fly mode.
  std::span<const double> row(std::size_t i, int slot) {
    const std::size_t m = points_.rows();
    if (!full_.empty()) return {full_.data() + i * m, m};
    auto& buf = slot == 0 ? scratch_a_ : scratch_b_;
    for (std::size_t j = 0; j < m; ++j) buf[j] = rbf(points_.row(i), points_.row(j), gamma_);
    return buf;
  }

 private:
  const Matrix& points_;
  double gamma_;
  std::vector<double> full_;
  std::vector<double> scratch_a_, scratch_b_;
};

}  // namespace detail

/// Solves   min 1/2 a'Ka  s.t. 0 <= a_i <= 1/(nu n), sum a_i = 1
/// by pairwise (SMO) updates with second-order working-set selection.
/// Coinciding training rows are merged into one variable whose upper bound
/// is the sum of theirs; the merged coefficient is split evenly afterwards,
/// which is an optimal solution of the unmerged problem.
inline OcSvmModel fit_ocsvm(const Matrix& points, const OcSvmParams& params) {
  const std::size_t n = points.rows();
  if (n < 2) throw Error(ErrorKind::Size, "one-class SVM needs at least 2 training points");
  if (!(params.gamma > 0.0)) throw Error(ErrorKind::Parameter, "gamma must be positive");
  if (!(params.nu > 0.0 && params.nu <= 1.0)) throw Error(ErrorKind::Parameter, "nu must lie in (0, 1]");
  if (!(params.tol > 0.0) || params.max_iterations < 1) {
    throw Error(ErrorKind::Parameter, "tolerance and iteration budget must be positive");
  }
  for (double v : points.data()) {
    if (!std::isfinite(v)) throw Error(ErrorKind::Validation, "non-finite training point");
  }

  OcSvmModel model;
  model.nu = params.nu;
  model.gamma = params.gamma;
  if (params.nu * static_cast<double>(n) < 1.0) {
    model.warnings.push_back("nu * n_train < 1: the outlier-fraction bound is vacuous");
  }

  // Merge identical rows; sorted order makes the solve independent of input order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto less = [&](std::size_t a, std::size_t b) {
    auto ra = points.row(a);
    auto rb = points.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return less(a, b) || (!less(b, a) && a < b);
  });
  Matrix unique(0, points.cols());
  std::vector<double> multiplicity;
  std::vector<std::size_t> group_of(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = order[k];
    if (k == 0 || less(order[k - 1], i)) {
      unique.append_row(points.row(i));
      multiplicity.push_back(0.0);
    }
    multiplicity.back() += 1.0;
    group_of[i] = multiplicity.size() - 1;
  }
  const std::size_t m = multiplicity.size();
  const double per_row_cap = 1.0 / (params.nu * static_cast<double>(n));
  std::vector<double> cap(m);
  for (std::size_t g = 0; g < m; ++g) cap[g] = std::min(1.0, multiplicity[g] * per_row_cap);

  // Feasible start: fill groups in order up to their caps until the mass is 1.
  std::vector<double> alpha(m, 0.0);
  double remaining = 1.0;
  for (std::size_t g = 0; g < m && remaining > 0.0; ++g) {
    alpha[g] = std::min(cap[g], remaining);
    remaining -= alpha[g];
  }
  if (remaining > 1e-12) throw Error(ErrorKind::Parameter, "infeasible box constraints");

  detail::KernelRows kernel(unique, params.gamma);
  std::vector<double> grad(m, 0.0);  // grad = K alpha
  for (std::size_t g = 0; g < m; ++g) {
    if (alpha[g] == 0.0) continue;
    auto row = kernel.row(g, 0);
    for (std::size_t t = 0; t < m; ++t) grad[t] += alpha[g] * row[t];
  }

  const double eps_bound = 1e-14;
  auto can_increase = [&](std::size_t g) { return alpha[g] < cap[g] - eps_bound; };
  auto can_decrease = [&](std::size_t g) { return alpha[g] > eps_bound; };

  long iter = 0;
  double violation = 0.0;
  for (;; ++iter) {
    // i: steepest variable that can grow; j: partner that can shrink.
    std::size_t i = m;
    double g_min = std::numeric_limits<double>::infinity();
    double g_max = -std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < m; ++g) {
      if (can_increase(g) && grad[g] < g_min) {
        g_min = grad[g];
        i = g;
      }
      if (can_decrease(g) && grad[g] > g_max) g_max = grad[g];
    }
    violation = (i == m) ? 0.0 : std::max(0.0, g_max - g_min);
    if (violation <= params.tol) break;
    if (iter >= params.max_iterations) {
      throw ConvergenceError("one-class SVM did not reach tolerance; KKT violation " +
                                 std::to_string(violation),
                             violation);
    }
    auto ki = kernel.row(i, 0);
    std::size_t j = m;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < m; ++g) {
      if (!can_decrease(g) || grad[g] <= g_min) continue;
      const double b = grad[g] - g_min;
      double a = 2.0 - 2.0 * ki[g];  // K_ii = K_gg = 1 for RBF
      if (a <= 0.0) a = 1e-12;
      const double score = b * b / a;
      if (score > best) {
        best = score;
        j = g;
      }
    }
    if (j == m) break;
    double a = 2.0 - 2.0 * ki[j];
    if (a <= 0.0) a = 1e-12;
    double step = (grad[j] - grad[i]) / a;
    step = std::min({step, cap[i] - alpha[i], alpha[j]});
    if (step <= 0.0) break;
    alpha[i] += step;
    alpha[j] -= step;
    auto kj = kernel.row(j, 1);
    for (std::size_t t = 0; t < m; ++t) grad[t] += step * (ki[t] - kj[t]);
  }
  model.iterations = iter;
  model.kkt_violation = violation;

  // rho: mean gradient over free variables, else the midpoint of the
  // feasible interval [max over capped, min over zero].
  double free_sum = 0.0;
  std::size_t free_count = 0;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < m; ++g) {
    if (can_decrease(g) && can_increase(g)) {
      free_sum += grad[g];
      ++free_count;
    } else if (!can_decrease(g)) {
      upper = std::min(upper, grad[g]);
    } else {
      lower = std::max(lower, grad[g]);
    }
  }
  if (free_count > 0) {
    model.rho = free_sum / static_cast<double>(free_count);
  } else if (std::isfinite(lower) && std::isfinite(upper)) {
    model.rho = 0.5 * (lower + upper);
  } else {
    model.rho = std::isfinite(lower) ? lower : upper;
  }

  model.support_points = Matrix(0, points.cols());
  for (std::size_t g = 0; g < m; ++g) {
    if (alpha[g] > 0.0) {
      model.support_points.append_row(unique.row(g));
      model.support_coef.push_back(alpha[g]);
    }
  }
  model.alphas.resize(n);
  for (std::size_t r = 0; r < n; ++r) model.alphas[r] = alpha[group_of[r]] / multiplicity[group_of[r]];
  return model;
}

}  // namespace misreport
