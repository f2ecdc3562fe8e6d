#pragma once

// Run configuration file: one JSON document with corpus, model and train
// sections. Missing keys take defaults; unknown top-level keys and type
// mismatches are ConfigError.

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

#include "cmcgns/binary_io.hpp"
#include "cmcgns/model.hpp"
#include "cmcgns/syndata.hpp"
#include "cmcgns/trainer.hpp"

namespace cmcgns {

inline constexpr int kConfigSchemaVersion = 1;

struct RunConfig {
  CorpusConfig corpus;
  ModelConfig model = ModelConfig::for_corpus(CorpusConfig{});
  TrainConfig train;
  std::size_t holdout = 64;

  void validate() const {
    corpus.validate();
    model.validate();
    train.validate();
    if (model.dims.grid_side != static_cast<Index>(corpus.grid_side) ||
        model.dims.image_res != static_cast<Index>(corpus.image_res) ||
        model.dims.vocab_size != static_cast<Index>(corpus.vocab_size))
      throw ConfigError("model dims disagree with corpus (grid_side/image_res/vocab_size)");
    if (holdout >= corpus.num_samples) throw ConfigError("holdout must be smaller than num_samples");
    if (corpus.num_samples - holdout < train.batch_size)
      throw ConfigError("training split smaller than one batch");
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& r) {
  j = {{"schema_version", kConfigSchemaVersion},
       {"corpus", r.corpus},
       {"model", r.model},
       {"train", r.train},
       {"holdout", r.holdout}};
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  for (const auto& [key, _] : j.items())
    if (key != "schema_version" && key != "corpus" && key != "model" && key != "train" && key != "holdout")
      throw ConfigError("config: unknown key '" + key + "'");
  const int version = j.value("schema_version", kConfigSchemaVersion);
  if (version != kConfigSchemaVersion)
    throw ConfigError("config: schema_version " + std::to_string(version) + " unsupported");
  RunConfig r;
  try {
    if (j.contains("corpus")) r.corpus = j.at("corpus").get<CorpusConfig>();
    // Model dims that mirror the corpus are derived unless given explicitly.
    nlohmann::json m = j.contains("model") ? j.at("model") : nlohmann::json::object();
    const ModelConfig derived = ModelConfig::for_corpus(r.corpus);
    if (!m.contains("grid_side")) m["grid_side"] = derived.dims.grid_side;
    if (!m.contains("image_res")) m["image_res"] = derived.dims.image_res;
    if (!m.contains("vocab_size")) m["vocab_size"] = derived.dims.vocab_size;
    r.model = m.get<ModelConfig>();
    if (j.contains("train")) r.train = j.at("train").get<TrainConfig>();
    r.holdout = j.value("holdout", r.holdout);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  r.validate();
  return r;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace cmcgns
