#include <gtest/gtest.h>

#include "misreport/learners.hpp"

using namespace misreport;

namespace {

// Y ~ Bern(0.1 + 0.2 c + tau(c) x) with tau(c) = 0.2 + 0.3 c, c binary.
TabularDataset make_data(std::uint64_t seed, std::size_t n, Role role, std::optional<AgentId> agent = std::nullopt) {
  Rng rng(seed);
  Matrix c(n, 1);
  std::vector<std::uint8_t> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    c(i, 0) = rng.bernoulli(0.5);
    x[i] = rng.bernoulli(0.4);
    y[i] = rng.bernoulli(0.1 + 0.2 * c(i, 0) + (0.2 + 0.3 * c(i, 0)) * x[i]);
  }
  if (agent) return TabularDataset(role, {"c_1"}, c, x, y, std::vector<AgentId>(n, *agent));
  return TabularDataset(role, {"c_1"}, c, x, y);
}

}  // namespace

TEST(SLearner, RecoversCate) {
  const auto ds = make_data(1, 40000, Role::Unmanipulated);
  const auto model = fit_s_learner(ds, LearnerSpec{});
  EXPECT_TRUE(model.provenance().is_reference());
  const double c0[1] = {0.0}, c1[1] = {1.0};
  EXPECT_NEAR(model.cate(c0), 0.2, 0.02);
  EXPECT_NEAR(model.cate(c1), 0.5, 0.02);
  EXPECT_FALSE(model.overlap_warning());
}

TEST(SLearner, PerAgentProvenance) {
  const auto ds = make_data(2, 500, Role::Manipulated, AgentId("7"));
  const auto model = fit_s_learner(ds, LearnerSpec{});
  ASSERT_FALSE(model.provenance().is_reference());
  EXPECT_EQ(*model.provenance().agent, AgentId("7"));
}

TEST(SLearner, MultipleAgentsIsUsageError) {
  const auto a = make_data(3, 50, Role::Manipulated, AgentId("1"));
  const auto b = make_data(4, 50, Role::Manipulated, AgentId("2"));
  try {
    fit_s_learner(concat(a, b), LearnerSpec{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Usage);
  }
}

TEST(SLearner, ConstantFeatureWarns) {
  Matrix c(4, 1);
  const TabularDataset ds(Role::Unmanipulated, {"c_1"}, c, {1, 1, 1, 1}, {0, 1, 0, 1});
  const auto model = fit_s_learner(ds, LearnerSpec{});
  EXPECT_TRUE(model.overlap_warning());
}

TEST(SLearner, ShapeMismatchThrows) {
  const auto model = fit_s_learner(make_data(5, 100, Role::Unmanipulated), LearnerSpec{});
  const double two[2] = {0.0, 1.0};
  try {
    model.cate(two);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
  }
}

TEST(OutcomeModel, MeanOnlyHasZeroCate) {
  LearnerSpec spec;
  spec.kind = LearnerKind::MeanOnly;
  const auto model = fit_s_learner(make_data(6, 100, Role::Unmanipulated), spec);
  const double c[1] = {1.0};
  EXPECT_EQ(model.cate(c), 0.0);
}

TEST(OutcomeModel, MeanOnlyEqualsZeroRoundBoosting) {
  const auto ds = make_data(7, 300, Role::Unmanipulated);
  LearnerSpec mean_spec;
  mean_spec.kind = LearnerKind::MeanOnly;
  LearnerSpec gbt_spec;
  gbt_spec.gbt.n_rounds = 0;
  const auto design = s_learner_design(ds);
  const auto a = fit(mean_spec, design, ds.outcomes());
  const auto b = fit(gbt_spec, design, ds.outcomes());
  EXPECT_NEAR(a.predict(design.row(0)), b.predict(design.row(0)), 1e-12);
}

TEST(OutcomeModel, LogisticLearnerFits) {
  LearnerSpec spec;
  spec.kind = LearnerKind::LogisticRegression;
  const auto model = fit_s_learner(make_data(8, 20000, Role::Unmanipulated), spec);
  const double c0[1] = {0.0};
  EXPECT_GT(model.cate(c0), 0.1);
  EXPECT_EQ(model.outcome_model().to_json()["kind"], "logistic");
}
