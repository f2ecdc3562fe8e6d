#pragma once

// Global InfoNCE alignment, SimSiam-style local image alignment, and the
// weighted composition of every loss term.

#include <nlohmann/json.hpp>

#include "cmcgns/cgns.hpp"
#include "cmcgns/common.hpp"
#include "cmcgns/nn.hpp"

namespace cmcgns {

struct LossWeights {
  double lambda_global = 1.0;
  double lambda_local = 1.0;
  double lambda_re = 10.0;
  double tau1 = 0.01;
  double tau2 = 0.01;  // reserved: set alongside tau1/tau3 but used by no loss term

  void validate() const {
    if (!(lambda_global >= 0.0 && lambda_local >= 0.0 && lambda_re >= 0.0))
      throw ConfigError("loss weights must be >= 0");
    if (!(tau1 > 0.0)) throw ConfigError("tau1 must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"lambda_global", w.lambda_global}, {"lambda_local", w.lambda_local}, {"lambda_re", w.lambda_re},
       {"tau1", w.tau1}, {"tau2", w.tau2}};
}
inline void from_json(const nlohmann::json& j, LossWeights& w) {
  const LossWeights d;
  w.lambda_global = j.value("lambda_global", d.lambda_global);
  w.lambda_local = j.value("lambda_local", d.lambda_local);
  w.lambda_re = j.value("lambda_re", d.lambda_re);
  w.tau1 = j.value("tau1", d.tau1);
  w.tau2 = j.value("tau2", d.tau2);
}

inline double cosine_sim(const RowVector& u, const RowVector& v) { return cosine_rows(u, v); }

// ---------------------------------------------------------------------------

struct GlobalLoss {
  double i2r = 0.0;
  double r2i = 0.0;
  double total() const { return i2r + r2i; }
  Matrix d_image;  // gradient of i2r + r2i
  Matrix d_text;
};

// Symmetric InfoNCE over cosine similarities of paired global features.
inline GlobalLoss global_infonce(const Matrix& image, const Matrix& text, double tau) {
  const Index b = image.rows();
  require_dims(b >= 1 && text.rows() == b && text.cols() == image.cols(), "global_infonce: shapes " +
                                                                              shape_str(image) + " / " + shape_str(text));
  const Matrix u = normalize_rows(image, "global image features");
  const Matrix v = normalize_rows(text, "global text features");
  const Matrix logits = u * v.transpose() / tau;

  GlobalLoss r;
  Matrix ds = Matrix::Zero(b, b);
  for (Index i = 0; i < b; ++i) {
    // image i against all texts (row), text i against all images (column)
    const double row_top = logits.row(i).maxCoeff();
    const double col_top = logits.col(i).maxCoeff();
    const double row_z = (logits.row(i).array() - row_top).exp().sum();
    const double col_z = (logits.col(i).array() - col_top).exp().sum();
    r.i2r += -(logits(i, i) - row_top) + std::log(row_z);
    r.r2i += -(logits(i, i) - col_top) + std::log(col_z);
    for (Index j = 0; j < b; ++j) {
      ds(i, j) += std::exp(logits(i, j) - row_top) / row_z;
      ds(j, i) += std::exp(logits(j, i) - col_top) / col_z;
    }
    ds(i, i) -= 2.0;
  }
  r.i2r /= static_cast<double>(b);
  r.r2i /= static_cast<double>(b);
  ds /= static_cast<double>(b) * tau;
  r.d_image = normalize_rows_backward(image, u, ds * v);
  r.d_text = normalize_rows_backward(text, v, ds.transpose() * u);
  return r;
}

// ---------------------------------------------------------------------------
// SimSiam local image alignment:
//   L = -(1/N) sum_n [ 1/2 cos(h(a_n), S(b_n)) + 1/2 cos(h(b_n), S(a_n)) ]
// with a = f^I, b = f^{R->I} (rows stacked over the batch) and S the stop-gradient.

struct SimSiamHead {
  SimSiamHead() = default;
  SimSiamHead(Index dim, CounterRng rng) : predictor("simsiam.predictor", dim, dim, dim, rng) {}
  explicit SimSiamHead(Mlp p) : predictor(std::move(p)) {}

  void visit(const ParamVisitor& f) { predictor.visit(f); }

  Mlp predictor;
};

struct SimSiamResult {
  double value = 0.0;
  Matrix d_image;  // through h(f^I) only
  Matrix d_cross;  // through h(f^{R->I}) only
};

// `target_image` / `target_cross` replace the S(.) arguments when given
// (gradient checking holds them fixed at a base point).
inline SimSiamResult simsiam_local_image(const Matrix& image_local, const Matrix& cross_local, SimSiamHead& head,
                                         bool accumulate_grads = true, const Matrix* target_image = nullptr,
                                         const Matrix* target_cross = nullptr) {
  require_dims(image_local.rows() == cross_local.rows() && image_local.cols() == cross_local.cols(),
               "simsiam: shapes " + shape_str(image_local) + " / " + shape_str(cross_local));
  const Index n = image_local.rows();
  SimSiamResult r{0.0, Matrix::Zero(n, image_local.cols()), Matrix::Zero(n, image_local.cols())};
  if (n == 0) return r;

  Mlp::Cache ca, cb;
  const Matrix ha = head.predictor.forward(image_local, &ca);
  const Matrix hb = head.predictor.forward(cross_local, &cb);
  Matrix d_ha(n, ha.cols()), d_hb(n, hb.cols());
  const double w = -0.5 / static_cast<double>(n);
  for (Index i = 0; i < n; ++i) {
    const RowVector a = ha.row(i), sb = (target_cross ? *target_cross : cross_local).row(i);
    const RowVector b = hb.row(i), sa = (target_image ? *target_image : image_local).row(i);
    r.value += w * (cosine_rows(a, sb) + cosine_rows(b, sa));
    d_ha.row(i) = w * cosine_grad_a(a, sb);
    d_hb.row(i) = w * cosine_grad_a(b, sa);
  }
  if (accumulate_grads) {
    r.d_image = head.predictor.backward(ca, d_ha);
    r.d_cross = head.predictor.backward(cb, d_hb);
  }
  return r;
}

// Same value with the stop-gradient arguments passed separately; equals
// simsiam_local_image(a, b).value when target_image == a and target_cross == b.
inline double simsiam_split(const Matrix& image_local, const Matrix& cross_local, const Matrix& target_image,
                            const Matrix& target_cross, const SimSiamHead& head) {
  const Index n = image_local.rows();
  if (n == 0) return 0.0;
  const Matrix ha = head.predictor.forward(image_local);
  const Matrix hb = head.predictor.forward(cross_local);
  double v = 0.0;
  for (Index i = 0; i < n; ++i)
    v += cosine_rows(ha.row(i), target_cross.row(i)) + cosine_rows(hb.row(i), target_image.row(i));
  return -0.5 * v / static_cast<double>(n);
}

// ---------------------------------------------------------------------------

struct LossBreakdown {
  double l_global_i2r = 0.0;
  double l_global_r2i = 0.0;
  double l_local_report = 0.0;
  double l_bml = 0.0;
  double l_local_image = 0.0;
  double l_re = 0.0;
  double total = 0.0;

  double global() const { return l_global_i2r + l_global_r2i; }
  double local() const { return compose_local(l_local_report, l_bml, l_local_image); }

  static double compose_local(double report, double bml, double image) { return report + bml + image; }
};

inline LossBreakdown compose_total(LossBreakdown parts, const LossWeights& w) {
  parts.total = w.lambda_global * parts.global() + w.lambda_local * parts.local() + w.lambda_re * parts.l_re;
  return parts;
}

inline double compose_local(double report, double bml, double image) {
  return LossBreakdown::compose_local(report, bml, image);
}

}  // namespace cmcgns
