#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "misreport/ocsvm.hpp"
#include "misreport/random.hpp"

using namespace misreport;

namespace {

Matrix gaussian_points(std::uint64_t seed, std::size_t n, std::size_t d) {
  Rng rng(seed);
  Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) m(i, j) = rng.normal();
  }
  return m;
}

double outlier_fraction(const OcSvmModel& model, const Matrix& pts) {
  std::size_t out = 0;
  for (std::size_t i = 0; i < pts.rows(); ++i) out += model.classify(pts.row(i)) == OcSvmLabel::Outlier;
  return static_cast<double>(out) / static_cast<double>(pts.rows());
}

}  // namespace

TEST(OcSvm, DualFeasibleAndConverged) {
  const auto pts = gaussian_points(1, 400, 2);
  OcSvmParams p;
  p.nu = 0.1;
  const auto model = fit_ocsvm(pts, p);
  const double cap = 1.0 / (p.nu * 400);
  double sum = 0.0;
  for (double a : model.alphas) {
    EXPECT_GE(a, -1e-15);
    EXPECT_LE(a, cap + 1e-15);
    sum += a;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_LE(model.kkt_violation, p.tol);
}

TEST(OcSvm, NuBoundsOutlierFraction) {
  for (double nu : {0.05, 0.2}) {
    const auto pts = gaussian_points(2, 500, 2);
    OcSvmParams p;
    p.nu = nu;
    const auto model = fit_ocsvm(pts, p);
    // Free support vectors sit on the boundary only up to the solver tolerance.
    std::size_t strict = 0;
    for (std::size_t i = 0; i < pts.rows(); ++i) strict += model.decision(pts.row(i)) < -p.tol;
    EXPECT_LE(static_cast<double>(strict) / 500.0, nu + 1e-12);
    EXPECT_NEAR(outlier_fraction(model, pts), nu, 0.02);
    std::size_t support = 0;
    for (double a : model.alphas) support += a > 0.0;
    EXPECT_GE(static_cast<double>(support) / 500.0, nu - 1e-12);
  }
}

TEST(OcSvm, TwoPointsHandSolution) {
  // nu = 1: alpha = 1/2 each; decision(z) = (k(z,p1) + k(z,p2))/2 - rho with
  // rho = (1 + k12)/2, so both training points sit exactly on the boundary.
  Matrix pts(2, 1);
  pts(0, 0) = 0.0;
  pts(1, 0) = 2.0;
  OcSvmParams p;
  p.nu = 1.0;
  p.gamma = 0.5;
  const auto model = fit_ocsvm(pts, p);
  const double k12 = std::exp(-0.5 * 4.0);
  EXPECT_NEAR(model.rho, (1.0 + k12) / 2.0, 1e-12);
  const double mid[1] = {1.0};
  EXPECT_NEAR(model.decision(mid), std::exp(-0.5) - (1.0 + k12) / 2.0, 1e-12);
  EXPECT_EQ(model.classify(pts.row(0)), OcSvmLabel::Inlier);
}

TEST(OcSvm, PermutationInvariant) {
  const auto pts = gaussian_points(3, 300, 3);
  Rng rng(4);
  const auto perm = rng.permutation(300);
  Matrix shuffled(300, 3);
  for (std::size_t i = 0; i < 300; ++i) {
    for (std::size_t j = 0; j < 3; ++j) shuffled(i, j) = pts(perm[i], j);
  }
  OcSvmParams p;
  p.nu = 0.1;
  const auto a = fit_ocsvm(pts, p);
  const auto b = fit_ocsvm(shuffled, p);
  EXPECT_EQ(a.rho, b.rho);
  const auto probe = gaussian_points(5, 50, 3);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(a.decision(probe.row(i)), b.decision(probe.row(i)));
}

TEST(OcSvm, DuplicatesShareCoefficient) {
  Matrix pts(0, 1);
  for (double v : {0.0, 0.0, 0.0, 1.0, 3.0}) pts.append_row(std::vector<double>{v});
  OcSvmParams p;
  p.nu = 0.5;
  const auto model = fit_ocsvm(pts, p);
  EXPECT_EQ(model.alphas[0], model.alphas[1]);
  EXPECT_EQ(model.alphas[1], model.alphas[2]);
}

TEST(OcSvm, Errors) {
  const auto pts = gaussian_points(6, 10, 2);
  OcSvmParams p;
  p.gamma = 0.0;
  EXPECT_THROW(fit_ocsvm(pts, p), Error);
  p = OcSvmParams{};
  p.nu = 0.0;
  EXPECT_THROW(fit_ocsvm(pts, p), Error);
  EXPECT_THROW(fit_ocsvm(gaussian_points(7, 1, 2), OcSvmParams{}), Error);
  const auto model = fit_ocsvm(pts, OcSvmParams{});
  const double z[3] = {0, 0, 0};
  EXPECT_THROW(model.decision(z), Error);
  EXPECT_FALSE(model.warnings.empty());  // nu * n = 0.1 < 1
}

TEST(OcSvm, IterationBudgetExceeded) {
  const auto pts = gaussian_points(8, 200, 2);
  OcSvmParams p;
  p.nu = 0.1;
  p.max_iterations = 1;
  p.tol = 1e-12;
  try {
    fit_ocsvm(pts, p);
    FAIL();
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.violation(), 0.0);
  }
}
