#include <gtest/gtest.h>

#include <cmath>

#include "misreport/logistic.hpp"
#include "misreport/random.hpp"

using namespace misreport;

namespace {

struct Fixture {
  Matrix x;
  std::vector<std::uint8_t> y;
};

Fixture make_fixture(std::uint64_t seed, std::size_t n, double w0, double w1, double b) {
  Rng rng(seed);
  Fixture f{Matrix(n, 2), {}};
  for (std::size_t i = 0; i < n; ++i) {
    f.x(i, 0) = rng.normal();
    f.x(i, 1) = rng.bernoulli(0.5);
    f.y.push_back(rng.bernoulli(sigmoid(w0 * f.x(i, 0) + w1 * f.x(i, 1) + b)));
  }
  return f;
}

}  // namespace

TEST(Logistic, GradientMatchesFiniteDifferences) {
  const auto f = make_fixture(1, 400, 0.7, -1.2, 0.3);
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> theta{rng.normal(), rng.normal(), rng.normal()};
    const auto analytic = logistic_objective(f.x, f.y, theta, 0.01);
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double h = 1e-6;
      auto up = theta, down = theta;
      up[k] += h;
      down[k] -= h;
      const double fd = (logistic_objective(f.x, f.y, up, 0.01).loss - logistic_objective(f.x, f.y, down, 0.01).loss) /
                        (2 * h);
      const double scale = std::max(std::abs(fd), 1e-8);
      EXPECT_LE(std::abs(analytic.gradient[k] - fd) / scale, 1e-4) << "coordinate " << k;
    }
  }
}

TEST(Logistic, RecoversCoefficients) {
  const auto f = make_fixture(3, 50000, 0.7, -1.2, 0.3);
  LogRegParams p;
  p.l2 = 0.0;
  const auto m = fit_logistic(f.x, f.y, p);
  EXPECT_NEAR(m.weights[0], 0.7, 0.05);
  EXPECT_NEAR(m.weights[1], -1.2, 0.05);
  EXPECT_NEAR(m.bias, 0.3, 0.05);
}

TEST(Logistic, StationaryAtSolution) {
  const auto f = make_fixture(4, 2000, 1.0, 0.5, -0.5);
  const LogRegParams p;
  const auto m = fit_logistic(f.x, f.y, p);
  const std::vector<double> theta{m.weights[0], m.weights[1], m.bias};
  const auto g = logistic_objective(f.x, f.y, theta, p.l2).gradient;
  for (double v : g) EXPECT_LT(std::abs(v), 1e-6);
}

TEST(Logistic, NeedsBothLabels) {
  Matrix x(3, 1);
  std::vector<std::uint8_t> y{1, 1, 1};
  EXPECT_THROW(fit_logistic(x, y, LogRegParams{}), Error);
}
