#pragma once

// The full pretraining model and its objective on one mini-batch: encoders,
// projection heads, attention pooling, cross-modal attention, CGNS, SimSiam
// and masked reconstruction, with a hand-derived backward pass.

#include <nlohmann/json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmcgns/align_losses.hpp"
#include "cmcgns/cgns.hpp"
#include "cmcgns/encoders.hpp"
#include "cmcgns/nn.hpp"
#include "cmcgns/recon.hpp"
#include "cmcgns/syndata.hpp"
#include "cmcgns/xattn.hpp"

namespace cmcgns {

struct ModelConfig {
  EncoderDims dims;
  bool shared_xattn = false;
  Index decoder_min_width = 4;
  double mask_probability = 0.5;
  CgnsConfig cgns;
  LossWeights weights;

  DecoderConfig decoder() const {
    return DecoderConfig{dims.grid_side, dims.grid_side * dims.image_res, dims.dim, decoder_min_width};
  }

  void validate() const {
    if (dims.dim <= 0 || dims.image_channels <= 0 || dims.text_channels <= 0)
      throw ConfigError("model dimensions must be positive");
    if (decoder_min_width < 1) throw ConfigError("decoder_min_width must be >= 1");
    cgns.validate();
    weights.validate();
    MaskSpec{mask_probability, 0}.validate();
  }

  static ModelConfig for_corpus(const CorpusConfig& c, Index dim = 32) {
    ModelConfig m;
    m.dims.grid_side = c.grid_side;
    m.dims.image_res = c.image_res;
    m.dims.vocab_size = c.vocab_size;
    m.dims.image_channels = dim;
    m.dims.text_channels = dim;
    m.dims.dim = dim;
    return m;
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& m) {
  j = {{"dim", m.dims.dim},
       {"image_channels", m.dims.image_channels},
       {"text_channels", m.dims.text_channels},
       {"grid_side", m.dims.grid_side},
       {"image_res", m.dims.image_res},
       {"vocab_size", m.dims.vocab_size},
       {"shared_xattn", m.shared_xattn},
       {"decoder_min_width", m.decoder_min_width},
       {"mask_probability", m.mask_probability},
       {"cgns",
        {{"K", m.cgns.clusters},
         {"mu", m.cgns.mu_hard},
         {"tau3", m.cgns.tau3},
         {"alpha", m.cgns.alpha},
         {"beta", m.cgns.beta},
         {"kmeans_max_iters", m.cgns.kmeans_max_iters},
         {"kmeans_tol", m.cgns.kmeans_tol},
         {"kmeans_restarts", m.cgns.kmeans_restarts},
         {"dedup_hard_negatives", m.cgns.dedup_hard_negatives},
         {"exclude_false_negatives", m.cgns.exclude_false_negatives}}},
       {"loss", m.weights}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& m) {
  const ModelConfig d;
  m.dims.dim = j.value("dim", d.dims.dim);
  m.dims.image_channels = j.value("image_channels", m.dims.dim);
  m.dims.text_channels = j.value("text_channels", m.dims.dim);
  m.dims.grid_side = j.value("grid_side", d.dims.grid_side);
  m.dims.image_res = j.value("image_res", d.dims.image_res);
  m.dims.vocab_size = j.value("vocab_size", d.dims.vocab_size);
  m.shared_xattn = j.value("shared_xattn", d.shared_xattn);
  m.decoder_min_width = j.value("decoder_min_width", d.decoder_min_width);
  m.mask_probability = j.value("mask_probability", d.mask_probability);
  if (j.contains("cgns")) {
    const auto& c = j.at("cgns");
    m.cgns.clusters = c.value("K", d.cgns.clusters);
    m.cgns.mu_hard = c.value("mu", d.cgns.mu_hard);
    m.cgns.tau3 = c.value("tau3", d.cgns.tau3);
    m.cgns.alpha = c.value("alpha", d.cgns.alpha);
    m.cgns.beta = c.value("beta", d.cgns.beta);
    m.cgns.kmeans_max_iters = c.value("kmeans_max_iters", d.cgns.kmeans_max_iters);
    m.cgns.kmeans_tol = c.value("kmeans_tol", d.cgns.kmeans_tol);
    m.cgns.kmeans_restarts = c.value("kmeans_restarts", d.cgns.kmeans_restarts);
    m.cgns.dedup_hard_negatives = c.value("dedup_hard_negatives", d.cgns.dedup_hard_negatives);
    m.cgns.exclude_false_negatives = c.value("exclude_false_negatives", d.cgns.exclude_false_negatives);
  }
  if (j.contains("loss")) m.weights = j.at("loss").get<LossWeights>();
}

// Which terms one objective evaluation includes.
struct ObjectiveOptions {
  bool alignment = true;       // global + local terms
  bool cgns = true;            // hard negatives + BML (else plain sentence InfoNCE)
  bool reconstruction = false; // masked reconstruction term
  std::uint64_t step = 0;      // keys masking and the k-means seed
  std::uint64_t seed = 0;
};

// Forward state of one sample; kept for the backward pass and for export.
struct SampleForward {
  Matrix patches;
  Mlp::Cache image_head;
  Matrix image_local;  // f^I, P x D
  Matrix sentence_means;
  Mlp::Cache text_head;
  Matrix text_local;  // f^R, M x D
  PoolResult image_pool;
  PoolResult text_pool;
  Mlp::Cache image_global_head;
  Mlp::Cache text_global_head;
  RowVector image_global;
  RowVector text_global;
  CrossAttentionResult text_cross;   // f^{I->R}, M x D; scores M x P
  CrossAttentionResult image_cross;  // f^{R->I}, P x D; scores P x M
  MaskedFeatures masked;
  Decoder::Cache decoder;
  Matrix reconstruction;
};

struct BatchResult {
  LossBreakdown losses;
  std::optional<ClusterOutcome> clusters;
  std::vector<SampleForward> samples;
  Matrix simsiam_image;  // stacked f^I over the batch
  Matrix simsiam_cross;  // stacked f^{R->I}
};

// Data-dependent constants held fixed across evaluations (gradient checking):
// the k-means selection and the stop-gradient SimSiam targets.
struct FrozenState {
  std::optional<ClusterOutcome> clusters;
  std::optional<Matrix> simsiam_image;
  std::optional<Matrix> simsiam_cross;

  static FrozenState from(const BatchResult& r) { return {r.clusters, r.simsiam_image, r.simsiam_cross}; }
};

class Model {
 public:
  Model() = default;
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    const CounterRng rng = CounterRng(seed).split(0x6d6f64656cULL);
    encoders = Encoders(cfg.dims, rng.split(1));
    xattn = CrossAttention(cfg.dims.dim, cfg.shared_xattn, rng.split(2));
    simsiam = SimSiamHead(cfg.dims.dim, rng.split(3));
    recon = Reconstruction(cfg.decoder(), rng.split(4));
  }

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }

  void visit(const ParamVisitor& f) {
    encoders.visit(f);
    xattn.visit(f);
    simsiam.visit(f);
    recon.visit(f);
  }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    visit([&](Param& p) { out.push_back(&p); });
    return out;
  }

  void zero_grad() {
    visit([](Param& p) { p.zero_grad(); });
  }

  // Encodes one sample up to the cross-modal features (no masking/decoding).
  SampleForward encode(const PairedSample& s) const {
    SampleForward f;
    f.patches = encoders.image.patches(s.image);
    const Matrix image_raw = encoders.image.patch.forward(f.patches);
    f.image_local = encoders.local_image_head.forward(image_raw, &f.image_head);
    f.sentence_means = encoders.text.sentence_means(s.sentences);
    const Matrix text_raw = encoders.text.mixing.forward(f.sentence_means);
    f.text_local = encoders.local_text_head.forward(text_raw, &f.text_head);

    f.image_pool = attention_pool(f.image_local, encoders.image_query.value.row(0));
    f.text_pool = attention_pool(f.text_local, encoders.text_query.value.row(0));
    f.image_global = encoders.global_image_head.forward(f.image_pool.output, &f.image_global_head).row(0);
    f.text_global = encoders.global_text_head.forward(f.text_pool.output, &f.text_global_head).row(0);

    f.text_cross = xattn.attend_text(f.text_local, f.image_local);
    f.image_cross = xattn.attend_image(f.image_local, f.text_local);
    return f;
  }

  // Evaluates the objective on a batch. With `grads`, parameter gradients of
  // the weighted total are accumulated (call zero_grad first). `frozen`
  // supplies the k-means selection and SimSiam targets (gradient checking).
  BatchResult evaluate(std::span<const PairedSample* const> batch, const ObjectiveOptions& opt, bool grads,
                       const FrozenState* frozen = nullptr) {
    const Index b = static_cast<Index>(batch.size());
    const Index d = cfg_.dims.dim;
    require_dims(b >= 1, "empty batch");
    const auto& w = cfg_.weights;
    BatchResult out;
    out.samples.reserve(batch.size());
    for (const auto* s : batch) out.samples.push_back(encode(*s));
    auto& fw = out.samples;

    // Stacked views over the batch.
    Index total_sentences = 0;
    for (const auto& f : fw) total_sentences += f.text_local.rows();
    const Index p = fw[0].image_local.rows();
    Matrix global_image(b, d), global_text(b, d);
    Matrix anchors(total_sentences, d), positives(total_sentences, d);
    Matrix image_local(b * p, d), image_cross(b * p, d);
    for (Index i = 0, row = 0; i < b; ++i) {
      const auto& f = fw[static_cast<std::size_t>(i)];
      global_image.row(i) = f.image_global;
      global_text.row(i) = f.text_global;
      const Index m = f.text_local.rows();
      anchors.middleRows(row, m) = f.text_local;
      positives.middleRows(row, m) = f.text_cross.output;
      row += m;
      image_local.middleRows(i * p, p) = f.image_local;
      image_cross.middleRows(i * p, p) = f.image_cross.output;
    }

    Matrix d_global_image = Matrix::Zero(b, d), d_global_text = Matrix::Zero(b, d);
    Matrix d_anchors = Matrix::Zero(total_sentences, d), d_positives = Matrix::Zero(total_sentences, d);
    Matrix d_image_local = Matrix::Zero(b * p, d), d_image_cross = Matrix::Zero(b * p, d);

    LossBreakdown& L = out.losses;
    if (opt.alignment) {
      const GlobalLoss g = global_infonce(global_image, global_text, w.tau1);
      L.l_global_i2r = g.i2r;
      L.l_global_r2i = g.r2i;
      d_global_image = w.lambda_global * g.d_image;
      d_global_text = w.lambda_global * g.d_text;

      const auto& cg = cfg_.cgns;
      if (opt.cgns && total_sentences >= 2) {
        const ClusterOutcome co =
            frozen && frozen->clusters ? *frozen->clusters
                   : cluster_and_select(anchors, positives, cg, hash_combine({opt.seed, opt.step, 0x6b6d65616e73ULL}));
        Matrix hard_rows;
        const DenominatorWeights dw = selection_weights(co, cg, &hard_rows);
        const PairLoss lr = local_report_loss(anchors, positives, hard_rows, dw, cg.tau3);
        const PairLoss bml = bml_loss(anchors, positives, co.selection.false_negatives, cg.alpha, cg.beta);
        L.l_local_report = lr.value;
        L.l_bml = bml.value;
        d_anchors = w.lambda_local * (lr.d_anchors + bml.d_anchors);
        d_positives = w.lambda_local * (lr.d_positives + bml.d_positives);
        out.clusters = co;
      } else if (total_sentences >= 1) {
        const Matrix no_hard(0, d);
        const PairLoss lr = local_report_loss(anchors, positives, no_hard,
                                              literal_weights(total_sentences, 0, 0.0), cg.tau3);
        L.l_local_report = lr.value;
        d_anchors = w.lambda_local * lr.d_anchors;
        d_positives = w.lambda_local * lr.d_positives;
      }

      const Matrix* ti = frozen && frozen->simsiam_image ? &*frozen->simsiam_image : nullptr;
      const Matrix* tc = frozen && frozen->simsiam_cross ? &*frozen->simsiam_cross : nullptr;
      const SimSiamResult ss = simsiam_local_image(image_local, image_cross, simsiam, grads, ti, tc);
      out.simsiam_image = image_local;
      out.simsiam_cross = image_cross;
      L.l_local_image = ss.value;
      if (grads) {
        d_image_local += w.lambda_local * ss.d_image;
        d_image_cross += w.lambda_local * ss.d_cross;
      }
    }

    // Masked reconstruction; per-sample input grads kept for the sweep below.
    std::vector<Decoder::InputGrads> recon_grads;
    if (opt.reconstruction) {
      const MaskSpec spec{cfg_.mask_probability, opt.seed};
      double total = 0.0;
      for (Index i = 0; i < b; ++i) {
        auto& f = fw[static_cast<std::size_t>(i)];
        f.masked = mask_features(f.image_local, recon.mask_vector.value.row(0), spec, opt.step,
                                 batch[static_cast<std::size_t>(i)]->sample_id);
        f.reconstruction = recon.decoder.forward(f.image_cross.output, f.masked.features, &f.decoder);
        Matrix d_rec;
        total += recon_loss(f.reconstruction, batch[static_cast<std::size_t>(i)]->image, &d_rec);
        if (grads) recon_grads.push_back(recon.decoder.backward(f.decoder, d_rec * (w.lambda_re / b)));
      }
      L.l_re = total / static_cast<double>(b);
    }

    L = compose_total(L, w);
    check_finite(L);
    if (!grads) return out;

    // Backward sweep per sample.
    for (Index i = 0, row = 0; i < b; ++i) {
      auto& f = fw[static_cast<std::size_t>(i)];
      const auto& s = *batch[static_cast<std::size_t>(i)];
      const Index m = f.text_local.rows();
      Matrix d_fi = d_image_local.middleRows(i * p, p);
      Matrix d_fri = d_image_cross.middleRows(i * p, p);
      Matrix d_fr = d_anchors.middleRows(row, m);
      const Matrix d_fir = d_positives.middleRows(row, m);
      row += m;

      if (opt.reconstruction) {
        const auto& rg = recon_grads[static_cast<std::size_t>(i)];
        d_fri += rg.d_cross;
        for (Index q = 0; q < p; ++q) {
          if (f.masked.flags[static_cast<std::size_t>(q)])
            recon.mask_vector.grad.row(0) += rg.d_masked.row(q);
          else
            d_fi.row(q) += rg.d_masked.row(q);
        }
      }

      if (opt.alignment) {
        const Matrix d_pooled_i =
            encoders.global_image_head.backward(f.image_global_head, d_global_image.row(i));
        const Matrix d_pooled_t = encoders.global_text_head.backward(f.text_global_head, d_global_text.row(i));
        const PoolGrads pi = attention_pool_backward(f.image_local, encoders.image_query.value.row(0), f.image_pool,
                                                     d_pooled_i.row(0));
        const PoolGrads pt = attention_pool_backward(f.text_local, encoders.text_query.value.row(0), f.text_pool,
                                                     d_pooled_t.row(0));
        d_fi += pi.d_local;
        d_fr += pt.d_local;
        encoders.image_query.grad.row(0) += pi.d_query;
        encoders.text_query.grad.row(0) += pt.d_query;

        const auto gt = cross_attend_backward(f.text_local, f.image_local, xattn.text_params(), f.text_cross, d_fir);
        d_fr += gt.d_queries;
        d_fi += gt.d_keys;
      }
      // f^{R->I} feeds both SimSiam and the decoder.
      const auto gi = cross_attend_backward(f.image_local, f.text_local, xattn.image_params(), f.image_cross, d_fri);
      d_fi += gi.d_queries;
      d_fr += gi.d_keys;

      const Matrix d_image_raw = encoders.local_image_head.backward(f.image_head, d_fi);
      encoders.image.backward(f.patches, d_image_raw);
      const Matrix d_text_raw = encoders.local_text_head.backward(f.text_head, d_fr);
      encoders.text.backward(s.sentences, f.sentence_means, d_text_raw);
    }
    return out;
  }

  BatchResult evaluate(const std::vector<PairedSample>& batch, const ObjectiveOptions& opt, bool grads,
                       const FrozenState* frozen = nullptr) {
    std::vector<const PairedSample*> ptrs;
    for (const auto& s : batch) ptrs.push_back(&s);
    return evaluate(std::span<const PairedSample* const>(ptrs), opt, grads, frozen);
  }

  static void check_finite(const LossBreakdown& l) {
    const std::pair<const char*, double> terms[] = {
        {"l_g_i2r", l.l_global_i2r}, {"l_g_r2i", l.l_global_r2i}, {"l_local_report", l.l_local_report},
        {"l_bml", l.l_bml},          {"l_local_img", l.l_local_image}, {"l_re", l.l_re},
        {"total", l.total}};
    for (const auto& [name, v] : terms)
      if (!std::isfinite(v)) throw NonFiniteError(std::string("loss term ") + name + " is non-finite");
  }

  Encoders encoders;
  CrossAttention xattn;
  SimSiamHead simsiam;
  Reconstruction recon;

 private:
  ModelConfig cfg_;
};

}  // namespace cmcgns
