#include <gtest/gtest.h>

#include <fstream>

#include "cmcgns/config.hpp"
#include "test_util.hpp"

using namespace cmcgns;
using nlohmann::json;

TEST(RunConfig, EmptyDocumentGivesDefaults) {
  const RunConfig r = parse_run_config(json::object());
  EXPECT_EQ(r.corpus.num_samples, 576u);
  EXPECT_EQ(r.corpus.grid_side, 4u);
  EXPECT_EQ(r.corpus.num_concepts, 4u);
  EXPECT_EQ(r.model.dims.dim, 32);
  EXPECT_EQ(r.train.batch_size, 32u);
  EXPECT_EQ(r.train.stage1_epochs, 10u);
  EXPECT_EQ(r.train.stage2_epochs, 20u);
  EXPECT_EQ(r.train.lr_init, 1e-3);
  EXPECT_EQ(r.holdout, 64u);
  EXPECT_EQ(r.model.cgns.mu_hard, 3.0);
  EXPECT_EQ(r.model.cgns.alpha, 0.2);
  EXPECT_EQ(r.model.cgns.beta, 0.5);
  EXPECT_EQ(r.model.cgns.clusters, 16);
  EXPECT_EQ(r.model.mask_probability, 0.5);
}

TEST(RunConfig, RoundTripThroughJson) {
  RunConfig r;
  r.train.seed = 77;
  r.train.stage2_objective = Stage2Objective::ReconOnly;
  r.model.cgns.mu_hard = 5.0;
  r.model.weights.lambda_re = 2.5;
  const RunConfig back = parse_run_config(json(r));
  EXPECT_EQ(json(back).dump(), json(r).dump());
}

TEST(RunConfig, ModelDimsFollowCorpus) {
  const RunConfig r = parse_run_config(json::parse(R"({"corpus":{"grid_side":2,"vocab_size":32,"sentences_min":2,"sentences_max":4}})"));
  EXPECT_EQ(r.model.dims.grid_side, 2);
  EXPECT_EQ(r.model.dims.vocab_size, 32);
}

TEST(RunConfig, Rejections) {
  EXPECT_THROW(parse_run_config(json::parse(R"({"bogus":1})")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"schema_version":2})")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"([1,2])")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"train":{"batch_size":"many"}})")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"train":{"optimizer":"rmsprop"}})")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"holdout":576})")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"corpus":{"grid_side":2},"model":{"grid_side":4}})")),
               ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"model":{"cgns":{"alpha":0.7}}})")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"model":{"mask_probability":2}})")), ConfigError);
}

TEST(RunConfig, FileLoading) {
  const auto dir = testutil::scratch_dir("config");
  {
    std::ofstream(dir / "ok.json") << R"({"schema_version":1,"train":{"seed":3}})";
    std::ofstream(dir / "bad.json") << "{ not json";
  }
  EXPECT_EQ(load_run_config(dir / "ok.json").train.seed, 3u);
  EXPECT_THROW(load_run_config(dir / "bad.json"), ConfigError);
  EXPECT_THROW(load_run_config(dir / "missing.json"), IoError);
}

TEST(RunConfig, ShippedConfigsParse) {
  for (const char* name : {"default.json", "acceptance.json"}) {
    const auto path = std::filesystem::path(CMCGNS_CONFIG_DIR) / name;
    EXPECT_NO_THROW(load_run_config(path)) << path;
  }
}
