#pragma once

// Toy modality encoders, projection heads and attention pooling.
//
// The image encoder is a per-region linear patch embedding: region p of the
// grid is flattened row-major and mapped to C_I features, so row p of the
// output depends only on the pixels of region p. The text encoder averages
// token embeddings per sentence and applies a linear mixing layer.

#include <string>
#include <vector>

#include "cmcgns/common.hpp"
#include "cmcgns/nn.hpp"
#include "cmcgns/syndata.hpp"

namespace cmcgns {

// P x res^2 matrix of flattened sub-regions (regions and pixels row-major).
inline Matrix image_patches(const Matrix& image, Index grid_side, Index res) {
  require_dims(image.rows() == grid_side * res && image.cols() == grid_side * res,
               "image is " + shape_str(image) + ", expected " + std::to_string(grid_side * res) + " square");
  Matrix out(grid_side * grid_side, res * res);
  for (Index gy = 0; gy < grid_side; ++gy)
    for (Index gx = 0; gx < grid_side; ++gx) {
      const Index p = gy * grid_side + gx;
      for (Index y = 0; y < res; ++y)
        for (Index x = 0; x < res; ++x) out(p, y * res + x) = image(gy * res + y, gx * res + x);
    }
  return out;
}

class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(Index grid_side, Index res, Index channels, CounterRng rng)
      : grid_side_(grid_side), res_(res), patch("image_encoder.patch", res * res, channels, rng) {}

  Index grid_side() const { return grid_side_; }
  Index res() const { return res_; }

  Matrix patches(const Matrix& image) const { return image_patches(image, grid_side_, res_); }

  // Returns P x C_I local features.
  Matrix encode(const Matrix& image) const { return patch.forward(patches(image)); }

  void backward(const Matrix& patches, const Matrix& d_features) { patch.backward(patches, d_features); }

  void visit(const ParamVisitor& f) { patch.visit(f); }

  Index grid_side_ = 0;
  Index res_ = 0;
  Linear patch;
};

class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(Index vocab_size, Index channels, CounterRng rng)
      : embedding("text_encoder.embedding", init_uniform(vocab_size, channels, channels, rng.split(1))),
        mixing("text_encoder.mixing", channels, channels, rng.split(2)) {}

  Index vocab_size() const { return embedding.value.rows(); }

  // M x C_R matrix of mean token embeddings (input to the mixing layer).
  Matrix sentence_means(const std::vector<Sentence>& sentences) const {
    Matrix means = Matrix::Zero(static_cast<Index>(sentences.size()), embedding.value.cols());
    for (std::size_t m = 0; m < sentences.size(); ++m) {
      const auto& s = sentences[m];
      if (s.empty()) throw ConfigError("empty sentence " + std::to_string(m));
      for (auto t : s) {
        if (t >= vocab_size())
          throw ConfigError("token id " + std::to_string(t) + " out of vocabulary (size " +
                            std::to_string(vocab_size()) + ")");
        means.row(static_cast<Index>(m)) += embedding.value.row(t);
      }
      means.row(static_cast<Index>(m)) /= static_cast<double>(s.size());
    }
    return means;
  }

  Matrix encode(const std::vector<Sentence>& sentences) const { return mixing.forward(sentence_means(sentences)); }

  void backward(const std::vector<Sentence>& sentences, const Matrix& means, const Matrix& d_features) {
    const Matrix d_means = mixing.backward(means, d_features);
    for (std::size_t m = 0; m < sentences.size(); ++m) {
      const double inv = 1.0 / static_cast<double>(sentences[m].size());
      for (auto t : sentences[m]) embedding.grad.row(t) += inv * d_means.row(static_cast<Index>(m));
    }
  }

  void visit(const ParamVisitor& f) {
    f(embedding);
    mixing.visit(f);
  }

  Param embedding;
  Linear mixing;
};

// ---------------------------------------------------------------------------
// Attention pooling with a single learnable query:
//   w = softmax_n(query . local_n / sqrt(D)) over unmasked rows,
//   out = sum_n w_n local_n.
// Masked rows are never read.

struct PoolResult {
  RowVector output;
  Vector weights;  // zero at masked rows
};

inline PoolResult attention_pool(const Matrix& local, const RowVector& query, const std::vector<bool>& mask = {}) {
  const Index n = local.rows();
  const Index d = local.cols();
  require_dims(query.size() == d, "pool query has " + std::to_string(query.size()) + " entries, features have " +
                                      std::to_string(d));
  require_dims(mask.empty() || static_cast<Index>(mask.size()) == n, "pool mask length differs from rows");
  auto valid = [&](Index i) { return mask.empty() || mask[static_cast<std::size_t>(i)]; };

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Vector logits = Vector::Zero(n);
  double top = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < n; ++i)
    if (valid(i)) {
      logits(i) = local.row(i).dot(query) * scale;
      if (!std::isfinite(logits(i))) throw NonFiniteError("attention_pool: non-finite logit at row " + std::to_string(i));
      top = std::max(top, logits(i));
    }
  if (top == -std::numeric_limits<double>::infinity()) throw DegenerateError("attention_pool: all rows masked");

  PoolResult r{RowVector::Zero(d), Vector::Zero(n)};
  double z = 0.0;
  for (Index i = 0; i < n; ++i)
    if (valid(i)) {
      r.weights(i) = std::exp(logits(i) - top);
      z += r.weights(i);
    }
  r.weights /= z;
  for (Index i = 0; i < n; ++i)
    if (valid(i)) r.output += r.weights(i) * local.row(i);
  return r;
}

struct PoolGrads {
  Matrix d_local;
  RowVector d_query;
};

inline PoolGrads attention_pool_backward(const Matrix& local, const RowVector& query, const PoolResult& fwd,
                                         const RowVector& d_out, const std::vector<bool>& mask = {}) {
  const Index n = local.rows();
  const Index d = local.cols();
  auto valid = [&](Index i) { return mask.empty() || mask[static_cast<std::size_t>(i)]; };
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  PoolGrads g{Matrix::Zero(n, d), RowVector::Zero(d)};
  double mean_proj = 0.0;
  Vector proj = Vector::Zero(n);
  for (Index i = 0; i < n; ++i)
    if (valid(i)) {
      proj(i) = d_out.dot(local.row(i));
      mean_proj += fwd.weights(i) * proj(i);
    }
  for (Index i = 0; i < n; ++i)
    if (valid(i)) {
      const double d_logit = fwd.weights(i) * (proj(i) - mean_proj);
      g.d_local.row(i) = fwd.weights(i) * d_out + d_logit * scale * query;
      g.d_query += d_logit * scale * local.row(i);
    }
  return g;
}

// ---------------------------------------------------------------------------

struct EncoderDims {
  Index grid_side = 4;
  Index image_res = 8;
  Index vocab_size = 64;
  Index image_channels = 32;  // C_I
  Index text_channels = 32;   // C_R
  Index dim = 32;             // D
};

// Both encoders, the four projection heads and the two pooling queries.
struct Encoders {
  Encoders() = default;
  Encoders(const EncoderDims& dims, CounterRng rng)
      : dims(dims),
        image(dims.grid_side, dims.image_res, dims.image_channels, rng.split(1)),
        text(dims.vocab_size, dims.text_channels, rng.split(2)),
        local_image_head("proj.local_image", dims.image_channels, dims.dim, dims.dim, rng.split(3)),
        local_text_head("proj.local_text", dims.text_channels, dims.dim, dims.dim, rng.split(4)),
        global_image_head("proj.global_image", dims.dim, dims.dim, dims.dim, rng.split(5)),
        global_text_head("proj.global_text", dims.dim, dims.dim, dims.dim, rng.split(6)),
        image_query("pool.image_query", Matrix::Zero(1, dims.dim)),
        text_query("pool.text_query", Matrix::Zero(1, dims.dim)) {
    if (dims.dim <= 0) throw ConfigError("D must be positive");
  }

  void visit(const ParamVisitor& f) {
    image.visit(f);
    text.visit(f);
    local_image_head.visit(f);
    local_text_head.visit(f);
    global_image_head.visit(f);
    global_text_head.visit(f);
    f(image_query);
    f(text_query);
  }

  EncoderDims dims;
  ImageEncoder image;
  TextEncoder text;
  Mlp local_image_head;
  Mlp local_text_head;
  Mlp global_image_head;
  Mlp global_text_head;
  Param image_query;
  Param text_query;
};

}  // namespace cmcgns
