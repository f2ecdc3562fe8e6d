#include <gtest/gtest.h>

#include "cmcgns/xattn.hpp"
#include "test_util.hpp"

using namespace cmcgns;
using testutil::random_matrix;

namespace {
CrossAttentionParams params_from(const Matrix& q, const Matrix& k, const Matrix& v) {
  CrossAttentionParams p("t", q.rows(), CounterRng(0));
  p.query.value = q;
  p.key.value = k;
  p.value.value = v;
  return p;
}
}  // namespace

TEST(CrossAttention, ZeroLogitScalarCase) {
  const Matrix one = Matrix::Ones(1, 1);
  const auto p = params_from(one, one, one);
  const auto r = cross_attend(Matrix::Zero(1, 1), Matrix::Constant(1, 1, 2.0), p);
  EXPECT_DOUBLE_EQ(r.scores(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(r.output(0, 0), 1.0);
}

TEST(CrossAttention, ZeroValueMatrixZeroOutputSameScores) {
  CounterRng rng(1);
  const Index d = 4;
  const Matrix q = random_matrix(d, d, rng), k = random_matrix(d, d, rng), v = random_matrix(d, d, rng);
  const Matrix a = random_matrix(2, d, rng), b = random_matrix(3, d, rng);
  const auto full = cross_attend(a, b, params_from(q, k, v));
  const auto zero = cross_attend(a, b, params_from(q, k, Matrix::Zero(d, d)));
  EXPECT_TRUE(zero.output.isZero(0.0));
  EXPECT_EQ(zero.scores, full.scores);
}

TEST(CrossAttention, SingleKeyZeroLogitIsHalfValue) {
  CounterRng rng(2);
  const Index d = 3;
  const Matrix v = random_matrix(d, d, rng);
  const Matrix sentence = random_matrix(1, d, rng);
  // Q = 0 makes every logit zero.
  const auto r = cross_attend(random_matrix(4, d, rng), sentence, params_from(Matrix::Zero(d, d), random_matrix(d, d, rng), v));
  for (Index p = 0; p < 4; ++p)
    EXPECT_LT((r.output.row(p) - 0.5 * (v * sentence.transpose()).transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(CrossAttention, MatchesNaiveOracleBothDirections) {
  CounterRng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Index d = 4;
    const Matrix q = random_matrix(d, d, rng), k = random_matrix(d, d, rng), v = random_matrix(d, d, rng);
    const Matrix text = random_matrix(2, d, rng), image = random_matrix(3, d, rng);
    const auto p = params_from(q, k, v);
    const auto to = testutil::to_oracle;
    EXPECT_LT(testutil::max_abs_diff(cross_attend(text, image, p).output,
                                     oracle::xattn(to(text), to(image), to(q), to(k), to(v))),
              1e-12);
    EXPECT_LT(testutil::max_abs_diff(cross_attend(image, text, p).output,
                                     oracle::xattn(to(image), to(text), to(q), to(k), to(v))),
              1e-12);
  }
}

TEST(CrossAttention, ScoresInOpenUnitIntervalAndUnnormalized) {
  CounterRng rng(4);
  CrossAttentionParams p("t", 5, CounterRng(5));
  const auto r = cross_attend(random_matrix(3, 5, rng), random_matrix(6, 5, rng), p);
  EXPECT_GT(r.scores.minCoeff(), 0.0);
  EXPECT_LT(r.scores.maxCoeff(), 1.0);
  // Six keys with scores near 0.5 cannot sum to 1.
  EXPECT_GT(std::abs(r.scores.row(0).sum() - 1.0), 1e-3);
}

TEST(CrossAttention, MaskedKeysContributeNothing) {
  CounterRng rng(6);
  CrossAttentionParams p("t", 3, CounterRng(7));
  const Matrix q = random_matrix(4, 3, rng);
  Matrix keys = random_matrix(3, 3, rng);
  const auto kept = cross_attend(q, keys.topRows(2), p);
  keys.row(2).setConstant(std::nan(""));
  const auto masked = cross_attend(q, keys, p, {}, {true, true, false});
  EXPECT_LT((masked.output - kept.output).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(masked.scores.col(2).sum(), 0.0);
}

TEST(CrossAttention, MaskedQueriesProduceZeroRows) {
  CounterRng rng(8);
  CrossAttentionParams p("t", 3, CounterRng(9));
  const auto r = cross_attend(random_matrix(2, 3, rng), random_matrix(3, 3, rng), p, {true, false});
  EXPECT_TRUE(r.output.row(1).isZero(0.0));
  EXPECT_FALSE(r.output.row(0).isZero(0.0));
}

TEST(CrossAttention, OutputNormBound) {
  CounterRng rng(10);
  CrossAttentionParams p("t", 4, CounterRng(11));
  const Matrix image = random_matrix(5, 4, rng);
  const auto r = cross_attend(random_matrix(3, 4, rng), image, p);
  const Matrix values = image * p.value.value.transpose();
  double bound = 0.0;
  for (Index i = 0; i < values.rows(); ++i) bound += values.row(i).norm();
  for (Index m = 0; m < 3; ++m) EXPECT_LE(r.output.row(m).norm(), bound);
}

TEST(CrossAttention, DoublingValuesDoublesOutput) {
  CounterRng rng(12);
  CrossAttentionParams p("t", 4, CounterRng(13));
  const Matrix a = random_matrix(3, 4, rng), b = random_matrix(5, 4, rng);
  const auto r1 = cross_attend(a, b, p);
  p.value.value *= 2.0;
  const auto r2 = cross_attend(a, b, p);
  EXPECT_EQ(r1.scores, r2.scores);
  EXPECT_LT((r2.output - 2.0 * r1.output).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CrossAttention, SoftmaxShimReducesToStandardAttention) {
  // Renormalizing exp-logit rows (a test-only replacement for the sigmoid)
  // must reproduce textbook softmax attention computed independently.
  CounterRng rng(14);
  const Index d = 3;
  CrossAttentionParams p("t", d, CounterRng(15));
  const Matrix a = random_matrix(2, d, rng), b = random_matrix(4, d, rng);
  const auto r = cross_attend(a, b, p);
  const Matrix logits = (r.q_proj * r.k_proj.transpose()) / std::sqrt(static_cast<double>(d));
  for (Index i = 0; i < 2; ++i) {
    Eigen::RowVectorXd w = logits.row(i).array().exp();
    w /= w.sum();
    const Eigen::RowVectorXd shim = w * r.v_proj;
    // Independent softmax attention.
    Eigen::RowVectorXd ref = Eigen::RowVectorXd::Zero(d);
    double z = 0.0;
    for (Index j = 0; j < 4; ++j) z += std::exp((p.query.value * a.row(i).transpose()).dot(p.key.value * b.row(j).transpose()) / std::sqrt(3.0));
    for (Index j = 0; j < 4; ++j)
      ref += std::exp((p.query.value * a.row(i).transpose()).dot(p.key.value * b.row(j).transpose()) / std::sqrt(3.0)) / z *
             (p.value.value * b.row(j).transpose()).transpose();
    EXPECT_LT((shim - ref).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(CrossAttention, DimensionMismatch) {
  CrossAttentionParams p("t", 3, CounterRng(1));
  EXPECT_THROW(cross_attend(Matrix::Zero(2, 3), Matrix::Zero(2, 4), p), DimensionError);
  EXPECT_THROW(cross_attend(Matrix::Zero(2, 3), Matrix::Zero(2, 3), p, {true}), DimensionError);
}

TEST(CrossAttention, SharedFlagReusesTriple) {
  CrossAttention shared(4, true, CounterRng(1));
  CrossAttention separate(4, false, CounterRng(1));
  EXPECT_EQ(&shared.text_params(), &shared.image_params());
  EXPECT_NE(&separate.text_params(), &separate.image_params());
  int n_shared = 0, n_sep = 0;
  shared.visit([&](Param&) { ++n_shared; });
  separate.visit([&](Param&) { ++n_sep; });
  EXPECT_EQ(n_shared, 3);
  EXPECT_EQ(n_sep, 6);
}
