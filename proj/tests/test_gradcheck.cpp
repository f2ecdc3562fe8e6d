#include <gtest/gtest.h>

#include "cmcgns/gradcheck.hpp"

using namespace cmcgns;

class GradcheckComponent : public ::testing::TestWithParam<std::string> {};

TEST_P(GradcheckComponent, PassesAtTolerance) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const GradcheckReport r = run_gradcheck(GetParam(), seed);
    EXPECT_TRUE(r.passed) << nlohmann::json(r).dump(2);
    EXPECT_FALSE(r.groups.empty());
    for (const auto& g : r.groups) {
      if (g.exempt) continue;
      EXPECT_LT(g.rel_error, kGradcheckTolerance) << g.name;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(All, GradcheckComponent, ::testing::ValuesIn(gradcheck_components()),
                         [](const auto& info) { return info.param; });

TEST(Gradcheck, SimSiamReportsStopGradientExemptions) {
  const auto r = run_gradcheck("simsiam", 1);
  int exempt = 0;
  for (const auto& g : r.groups)
    if (g.exempt) {
      ++exempt;
      EXPECT_EQ(g.analytic_norm, 0.0);
      EXPECT_GT(g.numeric_norm, 0.0);
      EXPECT_TRUE(g.passed);
    }
  EXPECT_EQ(exempt, 2);
}

TEST(Gradcheck, CompareFlagsMismatch) {
  Matrix a(1, 2), n(1, 2);
  a << 1.0, 2.0;
  n << 1.0, 2.1;
  const auto g = compare_gradients("w", a, n);
  EXPECT_FALSE(g.passed);
  EXPECT_EQ(g.worst_index, 1);
  EXPECT_EQ(g.worst_analytic, 2.0);
  EXPECT_EQ(g.worst_numeric, 2.1);
  EXPECT_TRUE(compare_gradients("w", a, a).passed);
  EXPECT_TRUE(compare_gradients("z", Matrix::Zero(1, 2), Matrix::Zero(1, 2)).passed);
}

TEST(Gradcheck, ExemptGroupNeedsZeroAnalyticAndNonzeroNumeric) {
  EXPECT_TRUE(compare_gradients("s", Matrix::Zero(1, 2), Matrix::Ones(1, 2), true).passed);
  EXPECT_FALSE(compare_gradients("s", Matrix::Ones(1, 2), Matrix::Ones(1, 2), true).passed);
  EXPECT_FALSE(compare_gradients("s", Matrix::Zero(1, 2), Matrix::Zero(1, 2), true).passed);
}

TEST(Gradcheck, NumericGradientOfQuadratic) {
  Matrix x(1, 3);
  x << 1.0, -2.0, 0.5;
  const Matrix g = numeric_gradient(x, [&] { return x.squaredNorm(); });
  EXPECT_LT((g - 2.0 * x).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Gradcheck, UnknownComponentRejected) { EXPECT_THROW(run_gradcheck("nope", 1), ConfigError); }

TEST(Gradcheck, FullSuiteIsFast) {
  double total = 0.0;
  for (const auto& c : gradcheck_components()) total += run_gradcheck(c, 1).seconds;
  EXPECT_LT(total, 60.0);
}

TEST(Gradcheck, ReportJsonShape) {
  const nlohmann::json j = run_gradcheck("bml", 1);
  EXPECT_EQ(j.at("component"), "bml");
  EXPECT_TRUE(j.at("passed").get<bool>());
  EXPECT_TRUE(j.at("groups").is_array());
}
