#include <gtest/gtest.h>

#include <cmath>

#include "misreport/estimators.hpp"

using namespace misreport;

namespace {

// f(c, x) = sigmoid(w_c c + w_x x + b) so the CATE is known in closed form.
CateModel logistic_cate(double w_c, double w_x, double b, Provenance prov) {
  LogisticModel m;
  m.weights = {w_c, w_x};
  m.bias = b;
  return CateModel(OutcomeModel(m, 2), std::move(prov), {"c_1"}, false);
}

double oracle_cate(double w_c, double w_x, double b, double c) {
  return 1.0 / (1.0 + std::exp(-(w_c * c + w_x + b))) - 1.0 / (1.0 + std::exp(-(w_c * c + b)));
}

TabularDataset agent_eval() {
  // Two agents; agent "1" rows: c = 0, 0.5, 1, 0.25 with x = 1, 1, 0, 0.
  Matrix c(0, 1);
  for (double v : {0.0, 0.5, 1.0, 0.25, 0.75}) c.append_row(std::vector<double>{v});
  return TabularDataset(Role::Manipulated, {"c_1"}, c, {1, 1, 0, 0, 1}, {1, 0, 1, 0, 1},
                        std::vector<AgentId>{AgentId("1"), AgentId("1"), AgentId("1"), AgentId("1"), AgentId("2")});
}

}  // namespace

TEST(PluginEffects, MatchesClosedFormAverages) {
  const auto ref = logistic_cate(0.8, 1.1, -0.5, Provenance::reference());
  const auto own = logistic_cate(0.8, 0.7, -0.5, Provenance::per_agent(AgentId("1")));
  const auto e = plugin_effects(ref, own, agent_eval(), AgentId("1"));
  const double tau_prime = (oracle_cate(0.8, 1.1, -0.5, 0.0) + oracle_cate(0.8, 1.1, -0.5, 0.5)) / 2;
  const double tau = (oracle_cate(0.8, 0.7, -0.5, 0.0) + oracle_cate(0.8, 0.7, -0.5, 0.5)) / 2;
  const double delta = (oracle_cate(0.8, 1.1, -0.5, 1.0) + oracle_cate(0.8, 1.1, -0.5, 0.25)) / 2;
  EXPECT_NEAR(e.tau_prime_hat, tau_prime, 1e-12);
  EXPECT_NEAR(e.tau_hat, tau, 1e-12);
  EXPECT_NEAR(e.delta_prime_hat, delta, 1e-12);
  EXPECT_EQ(e.n_x1, 2u);
  EXPECT_EQ(e.n_x0, 2u);
  EXPECT_NEAR(cmre(e).value, (tau_prime - tau) / delta, 1e-12);
}

TEST(PluginEffects, WrongAgentModelIsUsageError) {
  const auto ref = logistic_cate(0, 1, 0, Provenance::reference());
  const auto other = logistic_cate(0, 1, 0, Provenance::per_agent(AgentId("2")));
  EXPECT_THROW(plugin_effects(ref, other, agent_eval(), AgentId("1")), Error);
}

TEST(PluginEffects, EmptyStratum) {
  const auto ref = logistic_cate(0, 1, 0, Provenance::reference());
  try {
    plugin_effects(ref, ref, agent_eval(), AgentId("2"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyStratum);
  }
}

TEST(Cmre, WorkedExample) {
  PluginEffects e;
  e.tau_prime_hat = 0.4;
  e.tau_hat = 0.32;
  e.delta_prime_hat = 0.4;
  EXPECT_NEAR(cmre(e).value, 0.2, 1e-15);
}

TEST(Cmre, ValueNotClipped) {
  PluginEffects e;
  e.tau_prime_hat = 0.1;
  e.tau_hat = 0.3;
  e.delta_prime_hat = 0.1;
  EXPECT_NEAR(cmre(e).value, -2.0, 1e-12);
}

TEST(Cmre, SmallDenominatorRejected) {
  PluginEffects e;
  e.tau_prime_hat = 0.1;
  e.tau_hat = 0.05;
  e.delta_prime_hat = 5e-4;
  try {
    cmre(e);
    FAIL();
  } catch (const ZeroDenominatorError& err) {
    EXPECT_EQ(err.denominator(), 5e-4);
  }
  EXPECT_NO_THROW(cmre(e, 1e-4));
}

TEST(Nmre, HandCountedMeans) {
  Matrix c(0, 1);
  for (int i = 0; i < 6; ++i) c.append_row(std::vector<double>{0.0});
  // Reference: x=1 -> y {1,1}, x=0 -> y {0,1,0,0}: tau' = 1 - 0.25 = 0.75.
  const TabularDataset ref(Role::Unmanipulated, {"c_1"}, c, {1, 1, 0, 0, 0, 0}, {1, 1, 0, 1, 0, 0});
  // Agent: x=1 -> y {1,0,1}, x=0 -> y {0,0,1}: tau = 2/3 - 1/3.
  const TabularDataset d(Role::Manipulated, {"c_1"}, c, {1, 1, 1, 0, 0, 0}, {1, 0, 1, 0, 0, 1},
                         std::vector<AgentId>(6, AgentId("1")));
  const auto est = nmre(ref, d, AgentId("1"));
  EXPECT_NEAR(est.value, (0.75 - 1.0 / 3.0) / 0.75, 1e-12);
}

TEST(Ndee, ConstantLearnerGivesZero) {
  Rng rng(1);
  Matrix c(200, 1);
  std::vector<std::uint8_t> x(200), y(200);
  for (std::size_t i = 0; i < 200; ++i) {
    c(i, 0) = rng.bernoulli(0.5);
    x[i] = rng.bernoulli(0.5);
    y[i] = rng.bernoulli(0.5);
  }
  const TabularDataset d(Role::Manipulated, {"c_1"}, c, x, y, std::vector<AgentId>(200, AgentId("1")));
  const TabularDataset ref(Role::Unmanipulated, {"c_1"}, c, x, y);
  LearnerSpec spec;
  spec.kind = LearnerKind::MeanOnly;
  EXPECT_EQ(ndee(d, ref, AgentId("1"), spec, std::nullopt).value, 0.0);
}

TEST(Ndee, DetectsPureMisreporting) {
  // Reference P(X=1)=0.3; the agent reports 1 with probability 0.3 + 0.7*0.4 = 0.58,
  // so NDE = 0.28 and NDE / P(X=1) = 0.28 / 0.58.
  Rng rng(2);
  const std::size_t n = 40000;
  Matrix c(n, 1);
  std::vector<std::uint8_t> xr(n), xa(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    c(i, 0) = rng.bernoulli(0.5);
    xr[i] = rng.bernoulli(0.3);
    xa[i] = rng.bernoulli(0.58);
    y[i] = rng.bernoulli(0.5);
  }
  const TabularDataset d(Role::Manipulated, {"c_1"}, c, xa, y, std::vector<AgentId>(n, AgentId("1")));
  const TabularDataset ref(Role::Unmanipulated, {"c_1"}, c, xr, y);
  EXPECT_NEAR(ndee(d, ref, AgentId("1"), LearnerSpec{}, std::nullopt).value, 0.28 / 0.58, 0.03);
}

TEST(Ndee, UnknownAgent) {
  Matrix c(4, 1);
  const TabularDataset d(Role::Manipulated, {"c_1"}, c, {1, 0, 1, 0}, {1, 0, 1, 0},
                         std::vector<AgentId>(4, AgentId("1")));
  const TabularDataset ref(Role::Unmanipulated, {"c_1"}, c, {1, 0, 1, 0}, {1, 0, 1, 0});
  EXPECT_THROW(ndee(d, ref, AgentId("9"), LearnerSpec{}, std::nullopt), Error);
}

TEST(OcSvmRate, FractionInUnitInterval) {
  Rng rng(3);
  const std::size_t n = 400;
  Matrix c(n, 1);
  std::vector<std::uint8_t> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    c(i, 0) = rng.uniform();
    x[i] = rng.bernoulli(0.5);
    y[i] = rng.bernoulli(0.5);
  }
  const TabularDataset ref(Role::Unmanipulated, {"c_1"}, c, x, y);
  const auto d = ref.with_single_agent(AgentId("1"));
  const auto est = ocsvm_rate(ref, d, AgentId("1"), 0.1, 0.1);
  EXPECT_NEAR(est.value, 0.1, 0.03);
  EXPECT_EQ(est.estimator, EstimatorKind::OCSVM);
}

TEST(Derived, FormulaValues) {
  MrEstimate mr;
  mr.value = 0.2;
  const auto d = derived_estimands(mr, 0.5);
  EXPECT_NEAR(d.dim.value, 0.1, 1e-15);
  EXPECT_NEAR(d.fpr.value, 0.1 / 0.6, 1e-15);
  EXPECT_EQ(d.dim.estimand, Estimand::DIM);
  EXPECT_EQ(d.fpr.estimand, Estimand::FPR);
}

TEST(Derived, IntervalsMapMonotonically) {
  MrEstimate mr;
  mr.value = 0.2;
  mr.ci = ConfidenceInterval{0.1, 0.3, 0.95};
  mr.variance = 0.0025;
  const double p = 0.4;
  const auto d = derived_estimands(mr, p);
  ASSERT_TRUE(d.fpr.ci);
  EXPECT_NEAR(d.dim.ci->lower, 0.04, 1e-15);
  EXPECT_NEAR(d.fpr.ci->upper, 0.3 * p / ((1 - p) + 0.3 * p), 1e-15);
  // First-order variance against a numerical derivative.
  auto fpr = [&](double m) { return m * p / ((1 - p) + m * p); };
  const double slope = (fpr(0.2 + 1e-6) - fpr(0.2 - 1e-6)) / 2e-6;
  EXPECT_NEAR(*d.fpr.variance, slope * slope * 0.0025, 1e-9);
  EXPECT_NEAR(*d.dim.variance, p * p * 0.0025, 1e-15);
}

TEST(Derived, FprZeroDenominator) {
  MrEstimate mr;
  mr.value = 0.0;
  EXPECT_THROW(derived_estimands(mr, 1.0), ZeroDenominatorError);
}

TEST(Names, RoundTrip) {
  for (auto e : kAllEstimators) EXPECT_EQ(parse_estimator(to_string(e)), e);
  EXPECT_THROW(parse_estimator("bogus"), Error);
  EXPECT_EQ(parse_estimand("fpr"), Estimand::FPR);
}
