#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "misreport/error.hpp"
#include "misreport/gbt.hpp"
#include "misreport/matrix.hpp"

namespace misreport {

struct LogRegParams {
  double l2 = 1e-3;
  int max_iters = 100;
  double tolerance = 1e-10;
};

class LogisticModel {
 public:
  std::vector<double> weights;
  double bias = 0.0;

  double margin(std::span<const double> x) const {
    double m = bias;
    for (std::size_t j = 0; j < weights.size(); ++j) m += weights[j] * x[j];
    return m;
  }
  double predict(std::span<const double> x) const { return sigmoid(margin(x)); }
};

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;  // weights first, bias last
};

/// Mean logistic loss plus (l2/2)*|w|^2; the bias is not penalized.
/// `params` packs the weights followed by the bias.
inline LossAndGradient logistic_objective(const Matrix& x, std::span<const std::uint8_t> labels,
                                          std::span<const double> params, double l2) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (params.size() != d + 1) throw Error(ErrorKind::Shape, "parameter vector must have d+1 entries");
  LossAndGradient out;
  out.gradient.assign(d + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = x.row(i);
    double m = params[d];
    for (std::size_t j = 0; j < d; ++j) m += params[j] * row[j];
    const double p = sigmoid(m);
    const double pc = clamp_probability(p);
    out.loss -= labels[i] ? std::log(pc) : std::log(1.0 - pc);
    const double r = p - labels[i];
    for (std::size_t j = 0; j < d; ++j) out.gradient[j] += r * row[j];
    out.gradient[d] += r;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  out.loss *= inv_n;
  for (auto& g : out.gradient) g *= inv_n;
  for (std::size_t j = 0; j < d; ++j) {
    out.loss += 0.5 * l2 * params[j] * params[j];
    out.gradient[j] += l2 * params[j];
  }
  return out;
}

namespace detail {

/// Solves A x = b for symmetric positive definite A (in place Cholesky).
inline std::vector<double> cholesky_solve(std::vector<double> a, std::vector<double> b, std::size_t k) {
  for (std::size_t j = 0; j < k; ++j) {
    double s = a[j * k + j];
    for (std::size_t p = 0; p < j; ++p) s -= a[j * k + p] * a[j * k + p];
    if (s <= 0.0) throw Error(ErrorKind::Matrix, "Hessian is not positive definite");
    const double l = std::sqrt(s);
    a[j * k + j] = l;
    for (std::size_t i = j + 1; i < k; ++i) {
      double t = a[i * k + j];
      for (std::size_t p = 0; p < j; ++p) t -= a[i * k + p] * a[j * k + p];
      a[i * k + j] = t / l;
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    double t = b[i];
    for (std::size_t p = 0; p < i; ++p) t -= a[i * k + p] * b[p];
    b[i] = t / a[i * k + i];
  }
  for (std::size_t i = k; i-- > 0;) {
    double t = b[i];
    for (std::size_t p = i + 1; p < k; ++p) t -= a[p * k + i] * b[p];
    b[i] = t / a[i * k + i];
  }
  return b;
}

}  // namespace detail

/// Damped Newton iterations with backtracking on the penalized objective.
inline LogisticModel fit_logistic(const Matrix& x, std::span<const std::uint8_t> labels,
                                  const LogRegParams& params) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (n == 0) throw Error(ErrorKind::Size, "cannot fit on empty data");
  if (labels.size() != n) throw Error(ErrorKind::Shape, "feature/label row mismatch");
  if (params.l2 < 0 || params.max_iters < 1) throw Error(ErrorKind::Parameter, "invalid logistic parameters");
  std::size_t ones = 0;
  for (auto y : labels) ones += y;
  if (ones == 0 || ones == n) {
    throw Error(ErrorKind::Validation, "logistic regression needs both label values");
  }
  for (double v : x.data()) {
    if (!std::isfinite(v)) throw Error(ErrorKind::Validation, "non-finite feature value");
  }
  const std::size_t k = d + 1;
  std::vector<double> theta(k, 0.0);
  auto current = logistic_objective(x, labels, theta, params.l2);
  for (int iter = 0; iter < params.max_iters; ++iter) {
    std::vector<double> hessian(k * k, 0.0);
    std::vector<double> row_ext(k, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = x.row(i);
      std::copy(row.begin(), row.end(), row_ext.begin());
      double m = theta[d];
      for (std::size_t j = 0; j < d; ++j) m += theta[j] * row[j];
      const double p = sigmoid(m);
      const double w = p * (1.0 - p) / static_cast<double>(n);
      for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b <= a; ++b) hessian[a * k + b] += w * row_ext[a] * row_ext[b];
      }
    }
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < a; ++b) hessian[b * k + a] = hessian[a * k + b];
      hessian[a * k + a] += (a < d ? params.l2 : 0.0) + 1e-12;
    }
    const auto step = detail::cholesky_solve(hessian, current.gradient, k);
    double decrement = 0.0;
    for (std::size_t a = 0; a < k; ++a) decrement += step[a] * current.gradient[a];
    if (decrement * 0.5 < params.tolerance) break;
    double t = 1.0;
    std::vector<double> trial(k);
    LossAndGradient next;
    for (int ls = 0; ls < 50; ++ls) {
      for (std::size_t a = 0; a < k; ++a) trial[a] = theta[a] - t * step[a];
      next = logistic_objective(x, labels, trial, params.l2);
      if (next.loss <= current.loss - 0.25 * t * decrement) break;
      t *= 0.5;
    }
    theta = trial;
    current = std::move(next);
  }
  LogisticModel model;
  model.weights.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(d));
  model.bias = theta[d];
  return model;
}

}  // namespace misreport
