#pragma once

// Sigmoid-scored cross-modal attention.
//
//   out_a = sum_b sigmoid((Q q_a) . (K k_b) / sqrt(D)) * (V k_b)
//
// Scores are independent per (a, b) pair; rows are not normalized. Masked
// key rows are dropped from the sum (no sigmoid(-inf) approximation) and
// masked query rows produce zero output rows and zero scores.

#include <string>
#include <vector>

#include "cmcgns/common.hpp"
#include "cmcgns/nn.hpp"

namespace cmcgns {

struct CrossAttentionParams {
  CrossAttentionParams() = default;
  CrossAttentionParams(const std::string& name, Index dim, CounterRng rng)
      : query(name + ".Q", init_uniform(dim, dim, dim, rng.split(1))),
        key(name + ".K", init_uniform(dim, dim, dim, rng.split(2))),
        value(name + ".V", init_uniform(dim, dim, dim, rng.split(3))) {}

  Index dim() const { return query.value.rows(); }

  void visit(const ParamVisitor& f) {
    f(query);
    f(key);
    f(value);
  }

  Param query;
  Param key;
  Param value;
};

struct CrossAttentionResult {
  Matrix output;  // Na x D
  Matrix scores;  // Na x Nb sigmoid scores
  // Cached projections for the backward pass.
  Matrix q_proj;
  Matrix k_proj;
  Matrix v_proj;
};

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline CrossAttentionResult cross_attend(const Matrix& queries, const Matrix& keys, const CrossAttentionParams& p,
                                         const std::vector<bool>& query_mask = {},
                                         const std::vector<bool>& key_mask = {}) {
  const Index d = p.dim();
  require_dims(queries.cols() == d && keys.cols() == d,
               "cross_attend: inputs " + shape_str(queries) + " / " + shape_str(keys) + " with D=" + std::to_string(d));
  require_dims(query_mask.empty() || static_cast<Index>(query_mask.size()) == queries.rows(),
               "cross_attend: query mask length");
  require_dims(key_mask.empty() || static_cast<Index>(key_mask.size()) == keys.rows(),
               "cross_attend: key mask length");
  auto qvalid = [&](Index i) { return query_mask.empty() || query_mask[static_cast<std::size_t>(i)]; };
  auto kvalid = [&](Index i) { return key_mask.empty() || key_mask[static_cast<std::size_t>(i)]; };

  CrossAttentionResult r;
  r.q_proj = queries * p.query.value.transpose();
  r.k_proj = keys * p.key.value.transpose();
  r.v_proj = keys * p.value.value.transpose();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  r.scores = Matrix::Zero(queries.rows(), keys.rows());
  r.output = Matrix::Zero(queries.rows(), d);
  for (Index a = 0; a < queries.rows(); ++a) {
    if (!qvalid(a)) continue;
    for (Index b = 0; b < keys.rows(); ++b) {
      if (!kvalid(b)) continue;
      const double s = sigmoid(r.q_proj.row(a).dot(r.k_proj.row(b)) * scale);
      r.scores(a, b) = s;
      r.output.row(a) += s * r.v_proj.row(b);
    }
  }
  return r;
}

struct CrossAttentionGrads {
  Matrix d_queries;
  Matrix d_keys;
};

// Accumulates dQ, dK, dV into `p`; returns gradients for both inputs.
// Masked pairs have zero scores and therefore contribute nothing.
inline CrossAttentionGrads cross_attend_backward(const Matrix& queries, const Matrix& keys, CrossAttentionParams& p,
                                                 const CrossAttentionResult& fwd, const Matrix& d_output) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.dim()));
  const Matrix d_scores = d_output * fwd.v_proj.transpose();
  const Matrix d_vproj = fwd.scores.transpose() * d_output;
  const Matrix d_logits =
      (d_scores.array() * fwd.scores.array() * (1.0 - fwd.scores.array())).matrix() * scale;
  // Pairs with zero score (masked) give a zero logit gradient since s(1-s)=0.
  const Matrix d_qproj = d_logits * fwd.k_proj;
  const Matrix d_kproj = d_logits.transpose() * fwd.q_proj;

  p.query.grad.noalias() += d_qproj.transpose() * queries;
  p.key.grad.noalias() += d_kproj.transpose() * keys;
  p.value.grad.noalias() += d_vproj.transpose() * keys;
  return {d_qproj * p.query.value, d_kproj * p.key.value + d_vproj * p.value.value};
}

// Separate parameter triples per direction unless `shared` is set, in which
// case the image-query direction reuses the text-query triple.
struct CrossAttention {
  CrossAttention() = default;
  CrossAttention(Index dim, bool shared, CounterRng rng)
      : shared(shared), text_query("xattn.text_query", dim, rng.split(1)) {
    if (!shared) image_query = CrossAttentionParams("xattn.image_query", dim, rng.split(2));
  }

  CrossAttentionParams& text_params() { return text_query; }
  CrossAttentionParams& image_params() { return shared ? text_query : image_query; }
  const CrossAttentionParams& text_params() const { return text_query; }
  const CrossAttentionParams& image_params() const { return shared ? text_query : image_query; }

  // f^{I->R}: sentences query the image regions.
  CrossAttentionResult attend_text(const Matrix& text, const Matrix& image,
                                   const std::vector<bool>& text_mask = {}) const {
    return cross_attend(text, image, text_params(), text_mask, {});
  }
  // f^{R->I}: regions query the sentences.
  CrossAttentionResult attend_image(const Matrix& image, const Matrix& text,
                                    const std::vector<bool>& text_mask = {}) const {
    return cross_attend(image, text, image_params(), {}, text_mask);
  }

  void visit(const ParamVisitor& f) {
    text_query.visit(f);
    if (!shared) image_query.visit(f);
  }

  bool shared = false;
  CrossAttentionParams text_query;
  CrossAttentionParams image_query;
};

}  // namespace cmcgns
