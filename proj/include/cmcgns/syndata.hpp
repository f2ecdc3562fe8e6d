#pragma once

// Synthetic paired image/report corpora with known sentence->region
// correspondences, and the manifest + blob on-disk format.
//
// Generative model: concept c owns a binary stripe texture at orientation
// pi*c/C and the token range [c*V/C, (c+1)*V/C). A sample picks M distinct
// regions of a grid_side x grid_side grid, gives each a concept, renders the
// textures there (flat 0.5 background elsewhere), adds clipped Gaussian
// noise, and writes one sentence per chosen region from that concept's
// tokens.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "cmcgns/binary_io.hpp"
#include "cmcgns/common.hpp"
#include "cmcgns/rng.hpp"

namespace cmcgns {

struct CorpusConfig {
  std::uint32_t num_samples = 576;
  std::uint32_t grid_side = 4;
  std::uint32_t image_res = 8;
  std::uint32_t num_concepts = 4;
  std::uint32_t sentences_min = 8;
  std::uint32_t sentences_max = 16;
  std::uint32_t vocab_size = 64;
  std::uint32_t tokens_per_sentence = 6;
  double noise_std = 0.1;
  std::uint64_t seed = 7;

  std::uint32_t regions() const { return grid_side * grid_side; }
  std::uint32_t image_side() const { return grid_side * image_res; }

  void validate() const {
    auto positive = [](std::uint64_t v, const char* name) {
      if (v == 0) throw ConfigError(std::string(name) + " must be positive");
    };
    positive(num_samples, "num_samples");
    positive(grid_side, "grid_side");
    positive(image_res, "image_res");
    positive(vocab_size, "vocab_size");
    positive(tokens_per_sentence, "tokens_per_sentence");
    if (num_concepts < 2) throw ConfigError("num_concepts must be >= 2");
    if (sentences_min < 1) throw ConfigError("sentences_min must be >= 1");
    if (sentences_max < sentences_min) throw ConfigError("sentences_max must be >= sentences_min");
    if (sentences_max > regions())
      throw ConfigError("sentences_max must be <= grid_side^2 (" + std::to_string(regions()) + ")");
    if (vocab_size < num_concepts) throw ConfigError("vocab_size must be >= num_concepts");
    if (!(noise_std >= 0.0 && noise_std <= 1.0)) throw ConfigError("noise_std must lie in [0,1]");
  }

  bool operator==(const CorpusConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const CorpusConfig& c) {
  j = nlohmann::json{{"num_samples", c.num_samples},
                     {"grid_side", c.grid_side},
                     {"image_res", c.image_res},
                     {"num_concepts", c.num_concepts},
                     {"sentences_min", c.sentences_min},
                     {"sentences_max", c.sentences_max},
                     {"vocab_size", c.vocab_size},
                     {"tokens_per_sentence", c.tokens_per_sentence},
                     {"noise_std", c.noise_std},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, CorpusConfig& c) {
  CorpusConfig d;
  c.num_samples = j.value("num_samples", d.num_samples);
  c.grid_side = j.value("grid_side", d.grid_side);
  c.image_res = j.value("image_res", d.image_res);
  c.num_concepts = j.value("num_concepts", d.num_concepts);
  c.sentences_min = j.value("sentences_min", d.sentences_min);
  c.sentences_max = j.value("sentences_max", d.sentences_max);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.tokens_per_sentence = j.value("tokens_per_sentence", d.tokens_per_sentence);
  c.noise_std = j.value("noise_std", d.noise_std);
  c.seed = j.value("seed", d.seed);
}

using Sentence = std::vector<std::uint32_t>;

struct PairedSample {
  Matrix image;                          // H x W, values in [0,1], float32-representable
  std::vector<Sentence> sentences;       // M token-id sequences
  std::vector<std::uint32_t> truth_map;  // sentence m describes region truth_map[m]
  std::uint32_t sample_id = 0;

  bool operator==(const PairedSample& o) const {
    return sample_id == o.sample_id && sentences == o.sentences && truth_map == o.truth_map &&
           image.rows() == o.image.rows() && image.cols() == o.image.cols() && image == o.image;
  }
};

// Token range [first, last) owned by a concept.
inline std::pair<std::uint32_t, std::uint32_t> concept_tokens(const CorpusConfig& cfg, std::uint32_t concept_id) {
  const auto lo = static_cast<std::uint32_t>(std::uint64_t{concept_id} * cfg.vocab_size / cfg.num_concepts);
  const auto hi = static_cast<std::uint32_t>(std::uint64_t{concept_id + 1} * cfg.vocab_size / cfg.num_concepts);
  return {lo, hi};
}

inline std::uint32_t concept_of_token(const CorpusConfig& cfg, std::uint32_t token) {
  for (std::uint32_t c = 0; c < cfg.num_concepts; ++c) {
    const auto [lo, hi] = concept_tokens(cfg, c);
    if (token >= lo && token < hi) return c;
  }
  throw ConfigError("token " + std::to_string(token) + " outside the vocabulary");
}

inline constexpr double kBackgroundLevel = 0.5;

// image_res x image_res binary stripe pattern for one concept.
inline Matrix concept_texture(const CorpusConfig& cfg, std::uint32_t concept_id) {
  const int r = static_cast<int>(cfg.image_res);
  const double theta = std::numbers::pi * concept_id / cfg.num_concepts;
  const double half_period = std::max(1.0, r / 4.0);
  Matrix t(r, r);
  for (int y = 0; y < r; ++y)
    for (int x = 0; x < r; ++x) {
      const double s = (x + 0.5) * std::cos(theta) + (y + 0.5) * std::sin(theta);
      const auto band = static_cast<long long>(std::floor(s / half_period));
      t(y, x) = (band % 2 == 0) ? 1.0 : 0.0;
    }
  return t;
}

// Layout of one sample before rendering: which region carries which concept.
struct SampleLayout {
  std::vector<std::uint32_t> regions;   // one per sentence, distinct
  std::vector<std::uint32_t> concepts;  // concept per sentence
};

inline Matrix render_image(const CorpusConfig& cfg, const SampleLayout& layout, CounterRng noise) {
  const int r = static_cast<int>(cfg.image_res);
  const int g = static_cast<int>(cfg.grid_side);
  Matrix img = Matrix::Constant(g * r, g * r, kBackgroundLevel);
  for (std::size_t m = 0; m < layout.regions.size(); ++m) {
    const int p = static_cast<int>(layout.regions[m]);
    img.block((p / g) * r, (p % g) * r, r, r) = concept_texture(cfg, layout.concepts[m]);
  }
  for (Index y = 0; y < img.rows(); ++y)
    for (Index x = 0; x < img.cols(); ++x) {
      double v = img(y, x);
      if (cfg.noise_std > 0.0) v += cfg.noise_std * noise.gaussian();
      v = std::clamp(v, 0.0, 1.0);
      img(y, x) = static_cast<double>(static_cast<float>(v));
    }
  return img;
}

inline PairedSample generate_sample(const CorpusConfig& cfg, std::uint32_t sample_id) {
  const CounterRng root = CounterRng(cfg.seed).split(sample_id);
  CounterRng layout_rng = root.split(1);
  CounterRng token_rng = root.split(2);

  const std::uint32_t P = cfg.regions();
  const auto M = static_cast<std::uint32_t>(cfg.sentences_min +
                                            layout_rng.below(cfg.sentences_max - cfg.sentences_min + 1));
  std::vector<std::uint32_t> perm(P);
  std::iota(perm.begin(), perm.end(), 0u);
  SampleLayout layout;
  for (std::uint32_t m = 0; m < M; ++m) {
    const auto j = m + static_cast<std::uint32_t>(layout_rng.below(P - m));
    std::swap(perm[m], perm[j]);
    layout.regions.push_back(perm[m]);
    layout.concepts.push_back(static_cast<std::uint32_t>(layout_rng.below(cfg.num_concepts)));
  }

  PairedSample s;
  s.sample_id = sample_id;
  s.truth_map = layout.regions;
  for (std::uint32_t m = 0; m < M; ++m) {
    const auto [lo, hi] = concept_tokens(cfg, layout.concepts[m]);
    Sentence sent(cfg.tokens_per_sentence);
    for (auto& t : sent) t = lo + static_cast<std::uint32_t>(token_rng.below(hi - lo));
    s.sentences.push_back(std::move(sent));
  }
  s.image = render_image(cfg, layout, root.split(3));
  return s;
}

inline std::vector<PairedSample> generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  std::vector<PairedSample> out;
  out.reserve(cfg.num_samples);
  for (std::uint32_t i = 0; i < cfg.num_samples; ++i) out.push_back(generate_sample(cfg, i));
  return out;
}

// ---------------------------------------------------------------------------
// On-disk format: manifest.json + images.bin + reports.bin.

inline constexpr int kCorpusFormatVersion = 1;

struct Corpus {
  CorpusConfig config;
  std::vector<PairedSample> samples;
};

inline std::vector<std::uint8_t> encode_images(const std::vector<PairedSample>& samples) {
  ByteWriter w;
  for (const auto& s : samples)
    for (Index y = 0; y < s.image.rows(); ++y)
      for (Index x = 0; x < s.image.cols(); ++x) w.put<float>(static_cast<float>(s.image(y, x)));
  return std::move(w.bytes());
}

inline std::vector<std::uint8_t> encode_reports(const std::vector<PairedSample>& samples) {
  ByteWriter w;
  for (const auto& s : samples) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.sentences.size()));
    for (const auto& sent : s.sentences) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(sent.size()));
      for (auto t : sent) w.put<std::uint32_t>(t);
    }
    for (auto r : s.truth_map) w.put<std::uint32_t>(r);
  }
  return std::move(w.bytes());
}

inline void write_corpus(const CorpusConfig& cfg, const std::vector<PairedSample>& samples,
                         const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  const auto images = encode_images(samples);
  const auto reports = encode_reports(samples);

  nlohmann::json m;
  m["format_version"] = kCorpusFormatVersion;
  m["config"] = cfg;
  m["sample_count"] = samples.size();
  std::vector<std::uint32_t> ids;
  for (const auto& s : samples) ids.push_back(s.sample_id);
  m["sample_ids"] = ids;
  m["images_bytes"] = images.size();
  m["reports_bytes"] = reports.size();
  m["images_crc64"] = to_hex(crc64(images));
  m["reports_crc64"] = to_hex(crc64(reports));

  write_file(dir / "images.bin", images);
  write_file(dir / "reports.bin", reports);
  write_text_file(dir / "manifest.json", m.dump(2) + "\n");
}

inline Corpus read_corpus(const std::filesystem::path& dir) {
  const auto manifest_bytes = read_file(dir / "manifest.json");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(manifest_bytes.begin(), manifest_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest.json: " + std::string(e.what()));
  }
  const int version = m.value("format_version", -1);
  if (version != kCorpusFormatVersion)
    throw VersionMismatch("corpus format_version " + std::to_string(version) + ", expected " +
                          std::to_string(kCorpusFormatVersion));

  Corpus corpus;
  corpus.config = m.at("config").get<CorpusConfig>();
  const auto& cfg = corpus.config;
  const auto count = m.at("sample_count").get<std::size_t>();
  const auto ids = m.at("sample_ids").get<std::vector<std::uint32_t>>();
  if (ids.size() != count) throw ConfigError("manifest sample_ids length differs from sample_count");

  const auto images = read_file(dir / "images.bin");
  const auto reports = read_file(dir / "reports.bin");
  auto check = [&](const std::vector<std::uint8_t>& blob, const char* name) {
    const auto want_len = m.at(std::string(name) + "_bytes").get<std::size_t>();
    if (blob.size() != want_len)
      throw ChecksumMismatch(std::string(name) + ".bin length " + std::to_string(blob.size()) + ", manifest says " +
                             std::to_string(want_len));
    const auto want = m.at(std::string(name) + "_crc64").get<std::string>();
    if (to_hex(crc64(blob)) != want) throw ChecksumMismatch(std::string(name) + ".bin CRC64 mismatch");
  };
  check(images, "images");
  check(reports, "reports");

  const Index side = cfg.image_side();
  if (images.size() != count * static_cast<std::size_t>(side * side) * sizeof(float))
    throw ChecksumMismatch("images.bin size inconsistent with config");

  ByteReader img_r(images, "images.bin");
  ByteReader rep_r(reports, "reports.bin");
  std::vector<PairedSample> samples(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto& s = samples[i];
    s.sample_id = ids[i];
    s.image.resize(side, side);
    for (Index y = 0; y < side; ++y)
      for (Index x = 0; x < side; ++x) s.image(y, x) = img_r.get<float>();
    const auto M = rep_r.get<std::uint32_t>();
    s.sentences.resize(M);
    for (auto& sent : s.sentences) {
      sent.resize(rep_r.get<std::uint32_t>());
      for (auto& t : sent) t = rep_r.get<std::uint32_t>();
    }
    s.truth_map.resize(M);
    for (auto& r : s.truth_map) r = rep_r.get<std::uint32_t>();
  }
  if (rep_r.remaining() != 0) throw ChecksumMismatch("reports.bin has trailing bytes");
  corpus.samples = std::move(samples);
  return corpus;
}

// Deterministic held-out split: ids ordered by mix64(sample_id); the first
// `holdout` are held out.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> heldout;
};

inline Split split_corpus(const std::vector<PairedSample>& samples, std::size_t holdout) {
  if (holdout > samples.size()) throw ConfigError("holdout larger than corpus");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return mix64(samples[a].sample_id) < mix64(samples[b].sample_id);
  });
  Split s;
  s.heldout.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(holdout));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(holdout), order.end());
  std::sort(s.heldout.begin(), s.heldout.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

}  // namespace cmcgns
