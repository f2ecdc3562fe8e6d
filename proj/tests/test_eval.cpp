#include <gtest/gtest.h>

#include <cmath>

#include "cmcgns/eval.hpp"
#include "cmcgns/pipeline.hpp"
#include "test_util.hpp"

using namespace cmcgns;
using testutil::random_matrix;

TEST(Retrieval, IdentityPairingIsPerfect) {
  const Matrix e = Matrix::Identity(8, 8);
  const auto [i2r, r2i] = retrieval_from_embeddings(e, e);
  EXPECT_EQ(i2r.top1, 1.0);
  EXPECT_EQ(r2i.top1, 1.0);
  EXPECT_EQ(i2r.mrr, 1.0);
  EXPECT_EQ(i2r.queries, 8u);
  EXPECT_EQ(i2r.candidates, 8u);
}

TEST(Retrieval, AntiDiagonalPairingIsZero) {
  const Matrix e = Matrix::Identity(6, 6);
  const Matrix flipped = e.colwise().reverse();
  const auto [i2r, r2i] = retrieval_from_embeddings(e, flipped);
  EXPECT_EQ(i2r.top1, 0.0);
  EXPECT_EQ(r2i.top1, 0.0);
}

TEST(Retrieval, SinglePairTrivial) {
  CounterRng rng(1);
  const auto [i2r, r2i] = retrieval_from_embeddings(random_matrix(1, 4, rng), random_matrix(1, 4, rng));
  EXPECT_EQ(i2r.top1, 1.0);
  EXPECT_EQ(r2i.top5, 1.0);
}

TEST(Retrieval, EmptyAndMismatchedRejected) {
  EXPECT_THROW(retrieval_from_embeddings(Matrix(0, 3), Matrix(0, 3)), ConfigError);
  EXPECT_THROW(retrieval_from_embeddings(Matrix::Ones(2, 3), Matrix::Ones(3, 3)), DimensionError);
}

TEST(Retrieval, TiesCountAgainstQuery) {
  const Matrix e = Matrix::Ones(3, 2);
  const auto [i2r, r2i] = retrieval_from_embeddings(e, e);
  EXPECT_EQ(i2r.top1, 0.0);
  EXPECT_NEAR(i2r.mrr, 1.0 / 3.0, 1e-15);
}

TEST(Retrieval, RanksByHand) {
  Matrix sim(3, 3);
  sim << 0.9, 0.1, 0.2,  //
      0.8, 0.5, 0.7,     //
      0.1, 0.2, 0.3;
  EXPECT_EQ(partner_ranks(sim), (std::vector<std::size_t>{1, 3, 1}));
  const auto r = report_from_ranks("x", partner_ranks(sim), 3);
  EXPECT_NEAR(r.top1, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(r.top5, 1.0);
  EXPECT_NEAR(r.mrr, (1.0 + 1.0 / 3.0 + 1.0) / 3.0, 1e-15);
}

TEST(Retrieval, AccuracyBoundsProperty) {
  CounterRng rng(2);
  for (int t = 0; t < 50; ++t) {
    const Index n = 2 + static_cast<Index>(rng.below(20));
    const auto [a, b] = retrieval_from_embeddings(random_matrix(n, 3, rng), random_matrix(n, 3, rng));
    for (const auto& r : {a, b}) {
      EXPECT_GE(r.top1, 0.0);
      EXPECT_LE(r.top5, 1.0);
      EXPECT_GE(r.top5, r.top1);
      EXPECT_GE(r.mrr, r.top1);
    }
  }
}

TEST(Retrieval, UntrainedModelIsNearChanceOn200Pairs) {
  CorpusConfig cc;
  cc.num_samples = 200;
  const auto corpus = generate_corpus(cc);
  const Model m(ModelConfig::for_corpus(cc), 123);
  std::vector<const PairedSample*> split;
  for (const auto& s : corpus) split.push_back(&s);
  const auto [i2r, r2i] = eval_retrieval(m, split);
  const double p = 1.0 / 200.0, sigma = std::sqrt(p * (1 - p) / 200.0);
  EXPECT_LE(std::abs(i2r.top1 - p), 3.0 * sigma) << i2r.top1;
  EXPECT_LE(std::abs(r2i.top1 - p), 3.0 * sigma) << r2i.top1;
}

TEST(Attention, TruthMassRenormalizes) {
  Matrix s(1, 4);
  s << 0.5, 0.25, 0.25, 0.0;
  EXPECT_EQ(truth_mass(s, 0, 0), 0.5);
  EXPECT_EQ(truth_mass(Matrix::Zero(1, 4), 0, 0), 0.0);
}

TEST(Attention, UntrainedRatioIsFiniteAndBaselineIsOneOverP) {
  CorpusConfig cc;
  cc.num_samples = 8;
  const auto corpus = generate_corpus(cc);
  const Model m(ModelConfig::for_corpus(cc), 1);
  std::vector<const PairedSample*> split;
  for (const auto& s : corpus) split.push_back(&s);
  const auto a = attention_alignment(m, split);
  EXPECT_EQ(a.uniform_baseline, 1.0 / 16.0);
  EXPECT_GT(a.sentences, 0u);
  // Untrained queries are zero, so sigmoid scores are 1/2 and the mass is uniform.
  EXPECT_NEAR(a.ratio, 1.0, 0.5);
}

TEST(Writers, PgmHeaderAndScaling) {
  Matrix m(2, 3);
  m << 0.0, 0.5, 1.0, -1.0, 2.0, 0.25;
  const auto bytes = pgm_bytes(m);
  const std::string header = "P5\n3 2\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 6);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(header.size())), header);
  const std::vector<std::uint8_t> px(bytes.begin() + static_cast<std::ptrdiff_t>(header.size()), bytes.end());
  EXPECT_EQ(px, (std::vector<std::uint8_t>{0, 128, 255, 0, 255, 64}));
}

TEST(Writers, CsvFormats) {
  RetrievalReport r;
  r.direction = "image_to_report";
  r.top1 = 0.5;
  r.top5 = 1.0;
  r.mrr = 0.75;
  r.queries = 4;
  r.candidates = 4;
  EXPECT_EQ(retrieval_csv({r}), "direction,top1,top5,mrr,queries,candidates\nimage_to_report,0.5,1,0.75,4,4\n");
  Matrix m(2, 2);
  m << 1.0, 0.5, -2.0, 0.1;
  EXPECT_EQ(matrix_csv(m), "1,0.5\n-2,0.10000000000000001\n");
  Embeddings e{Matrix::Ones(1, 2), Matrix::Zero(1, 2), {7}};
  EXPECT_EQ(embeddings_csv(e), "sample_id,modality,e0,e1\n7,image,1,1\n7,report,0,0\n");
}

TEST(Writers, AblationCsvHasFourRowsInGridOrder) {
  std::vector<AblationRow> rows;
  for (bool c : {true, false})
    for (bool m : {true, false}) rows.push_back({c, m, {}, {}, 1.0});
  const std::string csv = ablation_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_NE(csv.find("\non,on,"), std::string::npos);
  EXPECT_NE(csv.find("\noff,off,"), std::string::npos);
}
