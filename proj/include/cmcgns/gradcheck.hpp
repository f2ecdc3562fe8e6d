#pragma once

// Central finite-difference verification of every hand-derived gradient.
//
// Each component builds a tiny random instance (D=6, P=4, M<=3, B=2 where a
// model is involved), computes the implemented gradient, and compares it to
// (f(x+h) - f(x-h)) / 2h entry by entry with h = 1e-5. A parameter group
// passes when ||g_impl - g_fd|| / max(||g_impl||, ||g_fd||) < 1e-4.
// k-means selections and reconstruction masks are frozen at the base point.

#include <nlohmann/json.hpp>

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "cmcgns/align_losses.hpp"
#include "cmcgns/cgns.hpp"
#include "cmcgns/encoders.hpp"
#include "cmcgns/model.hpp"
#include "cmcgns/recon.hpp"
#include "cmcgns/syndata.hpp"
#include "cmcgns/xattn.hpp"

namespace cmcgns {

inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckTolerance = 1e-4;

struct GroupResult {
  std::string name;
  double rel_error = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  bool exempt = false;  // stop-gradient: implemented gradient must be exactly zero
  bool passed = false;
  Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradcheckReport {
  std::string component;
  std::vector<GroupResult> groups;
  bool passed = true;
  double seconds = 0.0;
};

inline void to_json(nlohmann::json& j, const GroupResult& g) {
  j = {{"group", g.name},         {"rel_error", g.rel_error},   {"analytic_norm", g.analytic_norm},
       {"numeric_norm", g.numeric_norm}, {"exempt", g.exempt}, {"passed", g.passed}};
  if (!g.passed)
    j["worst"] = {{"index", g.worst_index}, {"analytic", g.worst_analytic}, {"numeric", g.worst_numeric}};
}

inline void to_json(nlohmann::json& j, const GradcheckReport& r) {
  j = {{"component", r.component}, {"passed", r.passed}, {"seconds", r.seconds}, {"groups", r.groups}};
}

// Finite differences of `loss` w.r.t. every entry of `x` (restored after).
inline Matrix numeric_gradient(Matrix& x, const std::function<double()>& loss, double h = kGradcheckStep) {
  Matrix g(x.rows(), x.cols());
  for (Index k = 0; k < x.size(); ++k) {
    const double orig = x.data()[k];
    x.data()[k] = orig + h;
    const double up = loss();
    x.data()[k] = orig - h;
    const double down = loss();
    x.data()[k] = orig;
    g.data()[k] = (up - down) / (2.0 * h);
  }
  return g;
}

inline GroupResult compare_gradients(const std::string& name, const Matrix& analytic, const Matrix& numeric,
                                     bool exempt = false) {
  GroupResult r;
  r.name = name;
  r.exempt = exempt;
  r.analytic_norm = analytic.norm();
  r.numeric_norm = numeric.norm();
  const Matrix diff = analytic - numeric;
  Index worst = 0;
  for (Index k = 1; k < diff.size(); ++k)
    if (std::abs(diff.data()[k]) > std::abs(diff.data()[worst])) worst = k;
  r.worst_index = worst;
  if (diff.size() > 0) {
    r.worst_analytic = analytic.data()[worst];
    r.worst_numeric = numeric.data()[worst];
  }
  if (exempt) {
    // The implemented gradient through a stop-gradient must vanish exactly
    // while the function itself still depends on the argument.
    r.rel_error = r.analytic_norm;
    r.passed = r.analytic_norm == 0.0 && r.numeric_norm > 0.0;
    return r;
  }
  const double denom = std::max({r.analytic_norm, r.numeric_norm, 1e-12});
  r.rel_error = diff.norm() / denom;
  r.passed = r.rel_error < kGradcheckTolerance;
  return r;
}

inline Matrix random_matrix(Index rows, Index cols, CounterRng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.gaussian();
  return m;
}

namespace detail {

// Moves biases off zero so no ReLU or L1 term sits exactly on its kink.
inline void jitter_biases(const std::function<void(const ParamVisitor&)>& visit, CounterRng rng) {
  visit([&](Param& p) {
    if (p.name.ends_with("bias"))
      for (Index k = 0; k < p.value.size(); ++k) p.value.data()[k] = 0.1 * rng.gaussian();
  });
}

inline void finish(GradcheckReport& r) {
  r.passed = true;
  for (const auto& g : r.groups) r.passed = r.passed && g.passed;
}

inline std::vector<const PairedSample*> pointers(const std::vector<PairedSample>& v) {
  std::vector<const PairedSample*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

}  // namespace detail

// The tiny configuration shared by the model-level checks.
inline CorpusConfig tiny_corpus(std::uint64_t seed) {
  CorpusConfig c;
  c.num_samples = 2;
  c.grid_side = 2;
  c.image_res = 2;
  c.num_concepts = 2;
  c.sentences_min = 2;
  c.sentences_max = 3;
  c.vocab_size = 8;
  c.tokens_per_sentence = 3;
  c.noise_std = 0.2;
  c.seed = seed;
  return c;
}

inline ModelConfig tiny_model() {
  ModelConfig m;
  m.dims = EncoderDims{2, 2, 8, 5, 5, 6};
  m.decoder_min_width = 2;
  m.cgns.clusters = 3;
  return m;
}

inline GradcheckReport gradcheck_global_infonce(std::uint64_t seed) {
  CounterRng rng(seed);
  GradcheckReport r;
  r.component = "global_infonce";
  Matrix img = random_matrix(2, 6, rng), txt = random_matrix(2, 6, rng);
  const double tau = LossWeights{}.tau1;
  const GlobalLoss g = global_infonce(img, txt, tau);
  auto f = [&] { return global_infonce(img, txt, tau).total(); };
  r.groups.push_back(compare_gradients("d_image", g.d_image, numeric_gradient(img, f)));
  r.groups.push_back(compare_gradients("d_text", g.d_text, numeric_gradient(txt, f)));
  detail::finish(r);
  return r;
}

inline GradcheckReport gradcheck_local_report(std::uint64_t seed) {
  CounterRng rng(seed);
  GradcheckReport r;
  r.component = "local_report";
  Matrix anchors = random_matrix(5, 6, rng), positives = random_matrix(5, 6, rng);
  CgnsConfig cfg;
  cfg.clusters = 3;
  const ClusterOutcome co = cluster_and_select(anchors, positives, cfg, seed);
  Matrix hard;
  const DenominatorWeights w = selection_weights(co, cfg, &hard);
  const PairLoss l = local_report_loss(anchors, positives, hard, w, cfg.tau3);
  auto f = [&] { return local_report_loss(anchors, positives, hard, w, cfg.tau3).value; };
  r.groups.push_back(compare_gradients("d_anchors", l.d_anchors, numeric_gradient(anchors, f)));
  r.groups.push_back(compare_gradients("d_positives", l.d_positives, numeric_gradient(positives, f)));
  detail::finish(r);
  return r;
}

inline GradcheckReport gradcheck_bml(std::uint64_t seed) {
  CounterRng rng(seed);
  GradcheckReport r;
  r.component = "bml";
  Matrix anchors = random_matrix(5, 6, rng), positives = random_matrix(5, 6, rng);
  const std::vector<std::vector<Index>> fn = {{1, 2}, {0}, {3, 4}, {}, {0, 1, 2}};
  const CgnsConfig cfg;
  const PairLoss l = bml_loss(anchors, positives, fn, cfg.alpha, cfg.beta);
  auto f = [&] { return bml_loss(anchors, positives, fn, cfg.alpha, cfg.beta).value; };
  r.groups.push_back(compare_gradients("d_anchors", l.d_anchors, numeric_gradient(anchors, f)));
  r.groups.push_back(compare_gradients("d_positives", l.d_positives, numeric_gradient(positives, f)));
  detail::finish(r);
  return r;
}

inline GradcheckReport gradcheck_simsiam(std::uint64_t seed) {
  CounterRng rng(seed);
  GradcheckReport r;
  r.component = "simsiam";
  SimSiamHead head(6, rng.split(1));
  detail::jitter_biases([&](const ParamVisitor& v) { head.visit(v); }, rng.split(2));
  Matrix a = random_matrix(8, 6, rng), b = random_matrix(8, 6, rng);
  head.visit([](Param& p) { p.zero_grad(); });
  const SimSiamResult res = simsiam_local_image(a, b, head, true);
  auto f = [&] { return simsiam_local_image(a, b, head, false).value; };
  head.visit([&](Param& p) { r.groups.push_back(compare_gradients(p.name, p.grad, numeric_gradient(p.value, f))); });
  // Online branches: targets held at the base point.
  Matrix target_cross = b, target_image = a;
  auto f_split = [&] { return simsiam_split(a, b, target_image, target_cross, head); };
  r.groups.push_back(compare_gradients("d_image_local", res.d_image, numeric_gradient(a, f_split)));
  r.groups.push_back(compare_gradients("d_cross_local", res.d_cross, numeric_gradient(b, f_split)));

  // Stop-gradient branches: perturb only the S(.) argument of each term.
  r.groups.push_back(
      compare_gradients("stop_gradient.cross", Matrix::Zero(8, 6), numeric_gradient(target_cross, f_split), true));
  r.groups.push_back(
      compare_gradients("stop_gradient.image", Matrix::Zero(8, 6), numeric_gradient(target_image, f_split), true));
  detail::finish(r);
  return r;
}

inline GradcheckReport gradcheck_recon(std::uint64_t seed) {
  CounterRng rng(seed);
  GradcheckReport r;
  r.component = "recon";
  DecoderConfig cfg{2, 16, 4, 2};
  Reconstruction rec(cfg, rng.split(1));
  detail::jitter_biases([&](const ParamVisitor& v) { rec.visit(v); }, rng.split(2));
  Matrix cross = random_matrix(4, 4, rng), masked = random_matrix(4, 4, rng);
  Matrix target(16, 16);
  for (Index i = 0; i < target.size(); ++i) target.data()[i] = rng.uniform();
  rec.visit([](Param& p) { p.zero_grad(); });
  Decoder::Cache cache;
  const Matrix out = rec.decoder.forward(cross, masked, &cache);
  Matrix d_out;
  recon_loss(out, target, &d_out);
  const auto in = rec.decoder.backward(cache, d_out);
  auto f = [&] { return recon_loss(rec.decoder.forward(cross, masked), target); };
  rec.decoder.visit(
      [&](Param& p) { r.groups.push_back(compare_gradients(p.name, p.grad, numeric_gradient(p.value, f))); });
  r.groups.push_back(compare_gradients("d_cross", in.d_cross, numeric_gradient(cross, f)));
  r.groups.push_back(compare_gradients("d_masked", in.d_masked, numeric_gradient(masked, f)));
  detail::finish(r);
  return r;
}

inline GradcheckReport gradcheck_xattn(std::uint64_t seed) {
  CounterRng rng(seed);
  GradcheckReport r;
  r.component = "xattn";
  CrossAttentionParams p("xattn", 6, rng.split(1));
  Matrix q = random_matrix(3, 6, rng), k = random_matrix(4, 6, rng);
  const Matrix weights = random_matrix(3, 6, rng);
  p.visit([](Param& x) { x.zero_grad(); });
  const auto fwd = cross_attend(q, k, p);
  const auto g = cross_attend_backward(q, k, p, fwd, weights);
  auto f = [&] { return cross_attend(q, k, p).output.cwiseProduct(weights).sum(); };
  p.visit([&](Param& x) { r.groups.push_back(compare_gradients(x.name, x.grad, numeric_gradient(x.value, f))); });
  r.groups.push_back(compare_gradients("d_queries", g.d_queries, numeric_gradient(q, f)));
  r.groups.push_back(compare_gradients("d_keys", g.d_keys, numeric_gradient(k, f)));
  detail::finish(r);
  return r;
}

inline GradcheckReport gradcheck_encoders(std::uint64_t seed) {
  CounterRng rng(seed);
  GradcheckReport r;
  r.component = "encoders";

  // Projection head: gradient of the output sum.
  Mlp head("proj", 5, 6, 6, rng.split(1));
  Matrix x = random_matrix(4, 5, rng);
  head.visit([](Param& p) { p.zero_grad(); });
  Mlp::Cache c;
  head.forward(x, &c);
  const Matrix dx = head.backward(c, Matrix::Ones(4, 6));
  auto f_head = [&] { return head.forward(x).sum(); };
  head.visit([&](Param& p) { r.groups.push_back(compare_gradients(p.name, p.grad, numeric_gradient(p.value, f_head))); });
  r.groups.push_back(compare_gradients("proj.d_input", dx, numeric_gradient(x, f_head)));

  // Attention pooling.
  Matrix local = random_matrix(4, 6, rng);
  Matrix query = random_matrix(1, 6, rng);
  const Matrix wout = random_matrix(1, 6, rng);
  const PoolResult pr = attention_pool(local, query.row(0));
  const PoolGrads pg = attention_pool_backward(local, query.row(0), pr, wout.row(0));
  auto f_pool = [&] { return attention_pool(local, query.row(0)).output.dot(wout.row(0)); };
  r.groups.push_back(compare_gradients("pool.d_local", pg.d_local, numeric_gradient(local, f_pool)));
  r.groups.push_back(compare_gradients("pool.d_query", pg.d_query, numeric_gradient(query, f_pool)));

  // Image and text encoders.
  ImageEncoder img(2, 2, 5, rng.split(2));
  TextEncoder txt(8, 5, rng.split(3));
  Matrix image(4, 4);
  for (Index i = 0; i < image.size(); ++i) image.data()[i] = rng.uniform();
  const std::vector<Sentence> sentences = {{0, 3, 3}, {7}, {2, 5}};
  const Matrix wi = random_matrix(4, 5, rng), wt = random_matrix(3, 5, rng);
  img.visit([](Param& p) { p.zero_grad(); });
  txt.visit([](Param& p) { p.zero_grad(); });
  img.backward(img.patches(image), wi);
  txt.backward(sentences, txt.sentence_means(sentences), wt);
  auto f_img = [&] { return img.encode(image).cwiseProduct(wi).sum(); };
  auto f_txt = [&] { return txt.encode(sentences).cwiseProduct(wt).sum(); };
  img.visit([&](Param& p) { r.groups.push_back(compare_gradients(p.name, p.grad, numeric_gradient(p.value, f_img))); });
  txt.visit([&](Param& p) { r.groups.push_back(compare_gradients(p.name, p.grad, numeric_gradient(p.value, f_txt))); });
  detail::finish(r);
  return r;
}

// Full weighted objective (global + local + reconstruction) through the
// whole model.
inline GradcheckReport gradcheck_composite(std::uint64_t seed) {
  GradcheckReport r;
  r.component = "composite";
  const auto corpus = generate_corpus(tiny_corpus(seed));
  const auto batch = detail::pointers(corpus);
  Model model(tiny_model(), seed);
  detail::jitter_biases([&](const ParamVisitor& v) { model.visit(v); }, CounterRng(seed).split(2));
  ObjectiveOptions opt;
  opt.reconstruction = true;
  opt.step = 3;
  opt.seed = seed;
  const BatchResult base = model.evaluate(std::span<const PairedSample* const>(batch), opt, false);
  const FrozenState frozen = FrozenState::from(base);
  model.zero_grad();
  model.evaluate(std::span<const PairedSample* const>(batch), opt, true, &frozen);
  auto f = [&] { return model.evaluate(std::span<const PairedSample* const>(batch), opt, false, &frozen).losses.total; };
  model.visit([&](Param& p) { r.groups.push_back(compare_gradients(p.name, p.grad, numeric_gradient(p.value, f))); });
  detail::finish(r);
  return r;
}

inline const std::vector<std::string>& gradcheck_components() {
  static const std::vector<std::string> names = {"encoders", "xattn", "global_infonce", "local_report",
                                                 "bml",      "simsiam", "recon",         "composite"};
  return names;
}

inline GradcheckReport run_gradcheck(const std::string& component, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  GradcheckReport r;
  if (component == "encoders") r = gradcheck_encoders(seed);
  else if (component == "xattn") r = gradcheck_xattn(seed);
  else if (component == "global_infonce") r = gradcheck_global_infonce(seed);
  else if (component == "local_report") r = gradcheck_local_report(seed);
  else if (component == "bml") r = gradcheck_bml(seed);
  else if (component == "simsiam") r = gradcheck_simsiam(seed);
  else if (component == "recon") r = gradcheck_recon(seed);
  else if (component == "composite") r = gradcheck_composite(seed);
  else throw ConfigError("unknown gradcheck component '" + component + "'");
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace cmcgns
