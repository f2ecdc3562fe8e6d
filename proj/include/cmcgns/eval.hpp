#pragma once

// Held-out evaluation and export: paired-retrieval metrics on global
// embeddings, attention mass on ground-truth regions, and CSV/PGM writers.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "cmcgns/binary_io.hpp"
#include "cmcgns/cgns.hpp"
#include "cmcgns/model.hpp"

namespace cmcgns {

struct RetrievalReport {
  std::string direction;
  double top1 = 0.0;
  double top5 = 0.0;
  double mrr = 0.0;
  std::size_t queries = 0;
  std::size_t candidates = 0;
};

// Rank of the true partner for each query row of `sim` (queries x candidates,
// partner on the diagonal). Ties count against the query.
inline std::vector<std::size_t> partner_ranks(const Matrix& sim) {
  std::vector<std::size_t> ranks;
  for (Index i = 0; i < sim.rows(); ++i) {
    std::size_t rank = 1;
    for (Index j = 0; j < sim.cols(); ++j)
      if (j != i && sim(i, j) >= sim(i, i)) ++rank;
    ranks.push_back(rank);
  }
  return ranks;
}

inline RetrievalReport report_from_ranks(const std::string& direction, const std::vector<std::size_t>& ranks,
                                         std::size_t candidates) {
  RetrievalReport r;
  r.direction = direction;
  r.queries = ranks.size();
  r.candidates = candidates;
  for (auto k : ranks) {
    r.top1 += k == 1;
    r.top5 += k <= 5;
    r.mrr += 1.0 / static_cast<double>(k);
  }
  const double n = static_cast<double>(ranks.size());
  r.top1 /= n;
  r.top5 /= n;
  r.mrr /= n;
  return r;
}

// Both directions from paired global embeddings (row i of each is a pair).
inline std::pair<RetrievalReport, RetrievalReport> retrieval_from_embeddings(const Matrix& image, const Matrix& text) {
  if (image.rows() == 0) throw ConfigError("retrieval: empty split");
  require_dims(image.rows() == text.rows() && image.cols() == text.cols(), "retrieval: embedding shapes differ");
  const Matrix u = normalize_rows(image, "image embeddings");
  const Matrix v = normalize_rows(text, "text embeddings");
  const Matrix sim = u * v.transpose();
  const auto n = static_cast<std::size_t>(image.rows());
  return {report_from_ranks("image_to_report", partner_ranks(sim), n),
          report_from_ranks("report_to_image", partner_ranks(sim.transpose()), n)};
}

struct Embeddings {
  Matrix image;
  Matrix text;
  std::vector<std::uint32_t> ids;
};

inline Embeddings global_embeddings(const Model& model, const std::vector<const PairedSample*>& samples) {
  const Index d = model.config().dims.dim;
  Embeddings e{Matrix(static_cast<Index>(samples.size()), d), Matrix(static_cast<Index>(samples.size()), d), {}};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SampleForward f = model.encode(*samples[i]);
    e.image.row(static_cast<Index>(i)) = f.image_global;
    e.text.row(static_cast<Index>(i)) = f.text_global;
    e.ids.push_back(samples[i]->sample_id);
  }
  return e;
}

inline std::pair<RetrievalReport, RetrievalReport> eval_retrieval(const Model& model,
                                                                  const std::vector<const PairedSample*>& split) {
  if (split.empty()) throw ConfigError("retrieval: empty split");
  const Embeddings e = global_embeddings(model, split);
  return retrieval_from_embeddings(e.image, e.text);
}

struct AttnAlignmentReport {
  double mean_truth_mass = 0.0;
  double uniform_baseline = 0.0;
  double ratio = 0.0;
  std::size_t sentences = 0;
};

// Sigmoid rows renormalized to sum 1, then the share on the truth region.
inline double truth_mass(const Matrix& scores, Index sentence, Index region) {
  const double z = scores.row(sentence).sum();
  return z > 0.0 ? scores(sentence, region) / z : 0.0;
}

inline AttnAlignmentReport attention_alignment(const Model& model, const std::vector<const PairedSample*>& split) {
  AttnAlignmentReport r;
  for (const auto* s : split) {
    const SampleForward f = model.encode(*s);
    const Matrix& sc = f.text_cross.scores;
    for (Index m = 0; m < sc.rows(); ++m) {
      r.mean_truth_mass += truth_mass(sc, m, static_cast<Index>(s->truth_map[static_cast<std::size_t>(m)]));
      ++r.sentences;
    }
    r.uniform_baseline = 1.0 / static_cast<double>(sc.cols());
  }
  if (r.sentences == 0) throw ConfigError("attention alignment: no sentences");
  r.mean_truth_mass /= static_cast<double>(r.sentences);
  r.ratio = r.mean_truth_mass / r.uniform_baseline;
  return r;
}

// ---------------------------------------------------------------------------
// Writers.

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string matrix_csv(const Matrix& m) {
  std::ostringstream os;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << format_double(m(i, j));
    os << '\n';
  }
  return os.str();
}

// Binary PGM (P5, maxval 255). Values are clamped to [lo, hi] then scaled.
inline std::vector<std::uint8_t> pgm_bytes(const Matrix& m, double lo = 0.0, double hi = 1.0) {
  std::string header = "P5\n" + std::to_string(m.cols()) + " " + std::to_string(m.rows()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const double span = hi > lo ? hi - lo : 1.0;
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      const double t = std::clamp((m(i, j) - lo) / span, 0.0, 1.0);
      out.push_back(static_cast<std::uint8_t>(std::lround(t * 255.0)));
    }
  return out;
}

inline void write_pgm(const std::filesystem::path& p, const Matrix& m, double lo = 0.0, double hi = 1.0) {
  write_file(p, pgm_bytes(m, lo, hi));
}

inline std::string retrieval_csv(const std::vector<RetrievalReport>& reports) {
  std::ostringstream os;
  os << "direction,top1,top5,mrr,queries,candidates\n";
  for (const auto& r : reports)
    os << r.direction << ',' << format_double(r.top1) << ',' << format_double(r.top5) << ','
       << format_double(r.mrr) << ',' << r.queries << ',' << r.candidates << '\n';
  return os.str();
}

inline std::string embeddings_csv(const Embeddings& e) {
  std::ostringstream os;
  os << "sample_id,modality";
  for (Index k = 0; k < e.image.cols(); ++k) os << ",e" << k;
  os << '\n';
  auto rows = [&](const Matrix& m, const char* modality) {
    for (Index i = 0; i < m.rows(); ++i) {
      os << e.ids[static_cast<std::size_t>(i)] << ',' << modality;
      for (Index k = 0; k < m.cols(); ++k) os << ',' << format_double(m(i, k));
      os << '\n';
    }
  };
  rows(e.image, "image");
  rows(e.text, "report");
  return os.str();
}

inline std::string cluster_csv(const ClusterOutcome& co) {
  std::ostringstream os;
  os << "sentence,cluster,hard_negative_center,top_center,false_negatives\n";
  for (std::size_t j = 0; j < co.selection.hard.size(); ++j) {
    os << j << ',' << co.clusters.assignments[j] << ',' << co.selection.hard[j] << ','
       << co.selection.ranking[j][0] << ',';
    const auto& fn = co.selection.false_negatives[j];
    for (std::size_t k = 0; k < fn.size(); ++k) os << (k ? ";" : "") << fn[k];
    os << '\n';
  }
  return os.str();
}

}  // namespace cmcgns
