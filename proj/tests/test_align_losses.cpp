#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cmcgns/align_losses.hpp"
#include "cmcgns/config.hpp"
#include "test_util.hpp"

using namespace cmcgns;
using testutil::random_matrix;

namespace {
oracle::Predictor to_oracle(const Mlp& m) {
  return {testutil::to_oracle(m.fc1.weight.value), testutil::to_oracle(m.fc1.bias.value)[0],
          testutil::to_oracle(m.fc2.weight.value), testutil::to_oracle(m.fc2.bias.value)[0]};
}
}  // namespace

TEST(CosineSim, Examples) {
  RowVector v(3);
  v << 1.0, 2.0, -0.5;
  EXPECT_NEAR(cosine_sim(v, v), 1.0, 1e-15);
  EXPECT_NEAR(cosine_sim(v, -v), -1.0, 1e-15);
  RowVector a(2), b(2);
  a << 1.0, 1.0;
  b << 1.0, -1.0;
  EXPECT_EQ(cosine_sim(a, b), 0.0);
  EXPECT_THROW(cosine_sim(a, RowVector::Zero(2)), DegenerateError);
}

TEST(GlobalInfoNce, SinglePairIsZero) {
  CounterRng rng(1);
  const auto l = global_infonce(random_matrix(1, 4, rng), random_matrix(1, 4, rng), 0.01);
  EXPECT_NEAR(l.i2r, 0.0, 1e-15);
  EXPECT_NEAR(l.r2i, 0.0, 1e-15);
}

TEST(GlobalInfoNce, AllEqualIsLogB) {
  const Matrix e = Matrix::Constant(4, 3, 0.7);
  const auto l = global_infonce(e, e, 0.01);
  EXPECT_NEAR(l.i2r, std::log(4.0), 1e-12);
  EXPECT_NEAR(l.r2i, std::log(4.0), 1e-12);
  EXPECT_NEAR(l.total(), 2.7726, 1e-4);
}

TEST(GlobalInfoNce, IdentityCosineTauOne) {
  const Matrix i2 = Matrix::Identity(2, 2);
  const auto l = global_infonce(i2, i2, 1.0);
  const double each = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  EXPECT_NEAR(l.i2r, each, 1e-14);
  EXPECT_NEAR(l.r2i, each, 1e-14);
  EXPECT_NEAR(l.total(), 0.6266, 1e-4);
}

TEST(GlobalInfoNce, ZeroRowRejected) {
  Matrix a = Matrix::Identity(2, 2);
  a.row(1).setZero();
  EXPECT_THROW(global_infonce(a, Matrix::Identity(2, 2), 0.1), DegenerateError);
}

TEST(GlobalInfoNce, DimensionMismatch) {
  EXPECT_THROW(global_infonce(Matrix::Ones(2, 3), Matrix::Ones(3, 3), 0.1), DimensionError);
}

TEST(GlobalInfoNce, MatchesOracle) {
  CounterRng rng(2);
  for (int t = 0; t < 20; ++t) {
    const Matrix a = random_matrix(5, 4, rng), b = random_matrix(5, 4, rng);
    const auto l = global_infonce(a, b, 0.1);
    const auto o = oracle::infonce(testutil::to_oracle(a), testutil::to_oracle(b), 0.1);
    EXPECT_NEAR(l.i2r, o.i2r, 1e-12);
    EXPECT_NEAR(l.r2i, o.r2i, 1e-12);
  }
}

TEST(GlobalInfoNce, NonNegativeAndPermutationInvariant) {
  CounterRng rng(3);
  for (int t = 0; t < 20; ++t) {
    const Matrix a = random_matrix(6, 3, rng), b = random_matrix(6, 3, rng);
    const auto l = global_infonce(a, b, 0.05);
    EXPECT_GE(l.i2r, 0.0);
    EXPECT_GE(l.r2i, 0.0);
    std::vector<Index> perm(6);
    std::iota(perm.begin(), perm.end(), Index{0});
    std::reverse(perm.begin(), perm.end());
    std::swap(perm[0], perm[3]);
    Matrix pa(6, 3), pb(6, 3);
    for (Index i = 0; i < 6; ++i) {
      pa.row(i) = a.row(perm[static_cast<std::size_t>(i)]);
      pb.row(i) = b.row(perm[static_cast<std::size_t>(i)]);
    }
    const auto lp = global_infonce(pa, pb, 0.05);
    EXPECT_NEAR(l.i2r, lp.i2r, 1e-12);
    EXPECT_NEAR(l.r2i, lp.r2i, 1e-12);
  }
}

TEST(GlobalInfoNce, DecreasesAsMarginGrows) {
  // Two pairs on the unit circle: positives aligned, negatives separated by angle theta.
  double prev = std::numeric_limits<double>::infinity();
  for (double theta : {0.2, 0.5, 1.0, 1.5}) {
    Matrix a(2, 2);
    a << 1.0, 0.0, std::cos(theta), std::sin(theta);
    const double v = global_infonce(a, a, 0.1).total();
    EXPECT_LT(v, prev);
    prev = v;
  }
  EXPECT_LT(global_infonce(Matrix::Identity(2, 2), Matrix::Identity(2, 2), 1e-3).total(), 1e-12);
}

TEST(SimSiam, IdentityHeadEqualInputsIsMinusOne) {
  SimSiamHead head(Mlp::identity("h", 3));
  CounterRng rng(4);
  const Matrix f = random_matrix(5, 3, rng);
  EXPECT_NEAR(simsiam_local_image(f, f, head).value, -1.0, 1e-14);
}

TEST(SimSiam, IdentityHeadOrthogonalIsZero) {
  SimSiamHead head(Mlp::identity("h", 2));
  Matrix a(2, 2), b(2, 2);
  a << 1.0, 0.0, 0.0, 2.0;
  b << 0.0, 3.0, -1.0, 0.0;
  EXPECT_NEAR(simsiam_local_image(a, b, head).value, 0.0, 1e-15);
}

TEST(SimSiam, MatchesOracleAndBounded) {
  CounterRng rng(5);
  for (int t = 0; t < 20; ++t) {
    SimSiamHead head(3, rng.split(static_cast<std::uint64_t>(t)));
    head.predictor.fc1.bias.value = random_matrix(1, 3, rng, 0.1);
    head.predictor.fc2.bias.value = random_matrix(1, 3, rng, 0.1);
    const Matrix a = random_matrix(2, 3, rng), b = random_matrix(2, 3, rng);
    const double v = simsiam_local_image(a, b, head).value;
    const double o = oracle::simsiam(testutil::to_oracle(a), testutil::to_oracle(b), to_oracle(head.predictor));
    EXPECT_NEAR(v, o, 1e-12);
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
    EXPECT_NEAR(simsiam_split(a, b, a, b, head), v, 1e-15);
  }
}

TEST(SimSiam, StopGradientArgumentsCarryNoGradient) {
  // Perturbing only the stop-gradient argument changes the value, yet the
  // gradient returned for that input only comes through the predictor branch.
  SimSiamHead head(Mlp::identity("h", 3));
  CounterRng rng(6);
  const Matrix a = random_matrix(2, 3, rng), b = random_matrix(2, 3, rng);
  const Matrix b2 = b + random_matrix(2, 3, rng, 0.1);
  EXPECT_NE(simsiam_split(a, b, a, b, head), simsiam_split(a, b, a, b2, head));

  // With h = identity, d/d(image) through h(image) vs S(cross) only:
  const auto r = simsiam_local_image(a, b, head);
  for (Index i = 0; i < 2; ++i) {
    const RowVector expect = -0.5 / 2.0 * cosine_grad_a(a.row(i), b.row(i));
    EXPECT_LT((r.d_image.row(i) - expect).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SimSiam, ShapeMismatch) {
  SimSiamHead head(Mlp::identity("h", 3));
  EXPECT_THROW(simsiam_local_image(Matrix::Ones(2, 3), Matrix::Ones(3, 3), head), DimensionError);
}

TEST(Compose, ZeroPartsZeroTotal) { EXPECT_EQ(compose_total(LossBreakdown{}, LossWeights{}).total, 0.0); }

TEST(Compose, WeightedSum) {
  LossBreakdown p;
  p.l_global_i2r = 1.5;
  p.l_global_r2i = 0.5;
  p.l_local_report = 1.0;
  p.l_bml = 2.0;
  p.l_local_image = 3.0;
  p.l_re = 0.5;
  EXPECT_EQ(compose_local(1.0, 2.0, 3.0), 6.0);
  EXPECT_DOUBLE_EQ(compose_total(p, LossWeights{}).total, 13.0);
  LossWeights w;
  w.lambda_re = 0.0;
  EXPECT_DOUBLE_EQ(compose_total(p, w).total, 8.0);
}

TEST(LossWeights, DefaultsAndJsonRoundTrip) {
  const LossWeights d;
  EXPECT_EQ(d.lambda_global, 1.0);
  EXPECT_EQ(d.lambda_local, 1.0);
  EXPECT_EQ(d.lambda_re, 10.0);
  EXPECT_EQ(d.tau1, 0.01);
  const LossWeights back = nlohmann::json(d).get<LossWeights>();
  EXPECT_EQ(back.lambda_re, 10.0);
  EXPECT_EQ(back.lambda_local, 1.0);

  const RunConfig rc = parse_run_config(nlohmann::json::parse(R"({"model":{"loss":{"lambda_re":10.0}}})"));
  EXPECT_EQ(rc.model.weights.lambda_re, 10.0);
  EXPECT_EQ(rc.model.weights.lambda_global, 1.0);
}

TEST(LossWeights, Validation) {
  LossWeights w;
  w.lambda_local = -1.0;
  EXPECT_THROW(w.validate(), ConfigError);
  w = LossWeights{};
  w.tau1 = 0.0;
  EXPECT_THROW(w.validate(), ConfigError);
}
