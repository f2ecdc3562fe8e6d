#pragma once

// Cross-modal clustering-guided negative sampling.
//
// Per mini-batch: cluster the (L2-normalized) cross-modal sentence
// representations f^{I->R} with k-means, rank the centers for every anchor
// sentence f^R by cosine similarity, take the rank-2 center as that anchor's
// hard negative and the other members of the rank-1 cluster as its false
// negatives. The hard negatives widen the denominator of the local
// image-to-report contrastive loss (the anchor's own hard negative weighted
// by mu); false negatives are held inside a similarity band by the
// bidirectional margin loss. Selections are constants for the gradient.

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "cmcgns/common.hpp"
#include "cmcgns/rng.hpp"

namespace cmcgns {

struct CgnsConfig {
  Index clusters = 16;  // K, clamped to [2, M_l] per batch
  double mu_hard = 3.0;
  double tau3 = 0.01;
  double alpha = 0.2;
  double beta = 0.5;
  int kmeans_max_iters = 50;
  double kmeans_tol = 1e-6;
  int kmeans_restarts = 10;
  std::uint64_t kmeans_seed = 0;
  bool dedup_hard_negatives = false;
  bool exclude_false_negatives = false;

  void validate() const {
    if (!(alpha > 0.0 && alpha < beta)) throw ConfigError("cgns: require 0 < alpha < beta");
    if (!(mu_hard >= 0.0)) throw ConfigError("cgns: mu_hard must be >= 0");
    if (!(tau3 > 0.0)) throw ConfigError("cgns: tau3 must be > 0");
    if (clusters < 2) throw ConfigError("cgns: K must be >= 2");
    if (kmeans_max_iters < 1) throw ConfigError("cgns: kmeans_max_iters must be >= 1");
    if (kmeans_restarts < 1) throw ConfigError("cgns: kmeans_restarts must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Row helpers.

inline Matrix normalize_rows(const Matrix& x, const char* what) {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double n = x.row(i).norm();
    if (!(n > 0.0)) throw DegenerateError(std::string(what) + ": zero-norm row " + std::to_string(i));
    out.row(i) = x.row(i) / n;
  }
  return out;
}

// Backward of row normalization: dx = (dn - n (n . dn)) / |x|.
inline Matrix normalize_rows_backward(const Matrix& x, const Matrix& normalized, const Matrix& d_normalized) {
  Matrix dx(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double n = x.row(i).norm();
    const double proj = normalized.row(i).dot(d_normalized.row(i));
    dx.row(i) = (d_normalized.row(i) - proj * normalized.row(i)) / n;
  }
  return dx;
}

inline double cosine_rows(const RowVector& a, const RowVector& b) {
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateError("cosine of a zero vector");
  return a.dot(b) / (na * nb);
}

// d cos(a,b) / da
inline RowVector cosine_grad_a(const RowVector& a, const RowVector& b) {
  const double na = a.norm(), nb = b.norm();
  const double c = a.dot(b) / (na * nb);
  return (b / nb - c * a / na) / na;
}

// ---------------------------------------------------------------------------
// k-means (Lloyd, k-means++ seeding).

struct KMeansOptions {
  int max_iters = 50;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  int restarts = 1;  // best of this many k-means++ seedings
};

struct KMeansResult {
  std::vector<Index> assignments;
  Matrix centers;
  double inertia = 0.0;
  std::vector<double> inertia_history;  // after every assignment step
  int iterations = 0;
};

inline Index clamp_clusters(Index requested, Index points) {
  return std::clamp<Index>(requested, 2, std::max<Index>(points, 2));
}

namespace detail {

inline Index nearest_center(const Matrix& centers, const RowVector& x, double* dist2) {
  Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index c = 0; c < centers.rows(); ++c) {
    const double d = (centers.row(c) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist2) *dist2 = best_d;
  return best;
}

inline double assign_all(const Matrix& points, const Matrix& centers, std::vector<Index>& assign) {
  double inertia = 0.0;
  for (Index i = 0; i < points.rows(); ++i) {
    double d2 = 0.0;
    assign[static_cast<std::size_t>(i)] = nearest_center(centers, points.row(i), &d2);
    inertia += d2;
  }
  return inertia;
}

}  // namespace detail

namespace detail {

// Single-point transfers (Hartigan): move x from a to b when
//   |b|/(|b|+1) |x - c_b|^2 < |a|/(|a|-1) |x - c_a|^2,
// updating both means in place. Every accepted move lowers the inertia, and a
// transfer-stable partition is also nearest-center stable.
inline void hartigan_refine(const Matrix& points, KMeansResult& r, int max_sweeps) {
  const Index n = points.rows(), k = r.centers.rows();
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (auto a : r.assignments) counts[static_cast<std::size_t>(a)] += 1.0;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool moved = false;
    for (Index i = 0; i < n; ++i) {
      const Index a = r.assignments[static_cast<std::size_t>(i)];
      const double na = counts[static_cast<std::size_t>(a)];
      if (na < 2.0) continue;
      const double remove = na / (na - 1.0) * (points.row(i) - r.centers.row(a)).squaredNorm();
      Index best = a;
      double best_add = remove;
      for (Index b = 0; b < k; ++b) {
        if (b == a) continue;
        const double nb = counts[static_cast<std::size_t>(b)];
        const double add = nb / (nb + 1.0) * (points.row(i) - r.centers.row(b)).squaredNorm();
        if (add < best_add * (1.0 - 1e-12)) {
          best_add = add;
          best = b;
        }
      }
      if (best == a) continue;
      const double nb = counts[static_cast<std::size_t>(best)];
      r.centers.row(a) = (r.centers.row(a) * na - points.row(i)) / (na - 1.0);
      r.centers.row(best) = (r.centers.row(best) * nb + points.row(i)) / (nb + 1.0);
      counts[static_cast<std::size_t>(a)] -= 1.0;
      counts[static_cast<std::size_t>(best)] += 1.0;
      r.assignments[static_cast<std::size_t>(i)] = best;
      moved = true;
    }
    if (!moved) break;
    double inertia = 0.0;
    for (Index i = 0; i < n; ++i)
      inertia += (points.row(i) - r.centers.row(r.assignments[static_cast<std::size_t>(i)])).squaredNorm();
    r.inertia = inertia;
    r.inertia_history.push_back(inertia);
  }
}

inline KMeansResult kmeans_once(const Matrix& points, Index k, const KMeansOptions& opt, std::uint64_t seed) {
  const Index n = points.rows();
  CounterRng rng(seed);
  KMeansResult r;
  r.centers.resize(k, points.cols());

  // k-means++ seeding.
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  Index first = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
  r.centers.row(0) = points.row(first);
  for (Index c = 1; c < k; ++c) {
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
      auto& di = d2[static_cast<std::size_t>(i)];
      di = std::min(di, (points.row(i) - r.centers.row(c - 1)).squaredNorm());
      total += di;
    }
    Index pick = n - 1;
    if (total > 0.0) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      for (Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (u < acc) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    r.centers.row(c) = points.row(pick);
  }

  r.assignments.assign(static_cast<std::size_t>(n), 0);
  r.inertia = detail::assign_all(points, r.centers, r.assignments);
  r.inertia_history.push_back(r.inertia);

  for (int it = 0; it < opt.max_iters; ++it) {
    r.iterations = it + 1;
    // Repair empty clusters by stealing the point farthest from its center.
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (auto a : r.assignments) ++counts[static_cast<std::size_t>(a)];
    for (Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      Index far = -1;
      double far_d = -1.0;
      for (Index i = 0; i < n; ++i) {
        const Index a = r.assignments[static_cast<std::size_t>(i)];
        if (counts[static_cast<std::size_t>(a)] < 2) continue;
        const double d = (points.row(i) - r.centers.row(a)).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far < 0) break;
      --counts[static_cast<std::size_t>(r.assignments[static_cast<std::size_t>(far)])];
      r.assignments[static_cast<std::size_t>(far)] = c;
      counts[static_cast<std::size_t>(c)] = 1;
    }

    Matrix next = Matrix::Zero(k, points.cols());
    for (Index i = 0; i < n; ++i) next.row(r.assignments[static_cast<std::size_t>(i)]) += points.row(i);
    for (Index c = 0; c < k; ++c) {
      const auto cnt = counts[static_cast<std::size_t>(c)];
      next.row(c) = cnt > 0 ? Matrix(next.row(c) / static_cast<double>(cnt)) : Matrix(r.centers.row(c));
    }
    const double shift = (next - r.centers).rowwise().norm().maxCoeff();
    r.centers = std::move(next);

    const auto previous = r.assignments;
    r.inertia = detail::assign_all(points, r.centers, r.assignments);
    r.inertia_history.push_back(r.inertia);
    if (shift < opt.tol || r.assignments == previous) break;
  }
  hartigan_refine(points, r, opt.max_iters);
  return r;
}

}  // namespace detail

inline KMeansResult kmeans(const Matrix& points, Index k, const KMeansOptions& opt = {}) {
  const Index n = points.rows();
  if (k < 1 || k > n)
    throw ConfigError("kmeans: K=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  if (opt.restarts < 1) throw ConfigError("kmeans: restarts must be >= 1");
  require_finite(points, "kmeans points");
  KMeansResult best = detail::kmeans_once(points, k, opt, opt.seed);
  for (int t = 1; t < opt.restarts; ++t) {
    KMeansResult r = detail::kmeans_once(points, k, opt, hash_combine({opt.seed, static_cast<std::uint64_t>(t)}));
    if (r.inertia < best.inertia) best = std::move(r);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Ranking and negative selection.

struct NegativeSelection {
  std::vector<std::vector<Index>> ranking;          // per anchor, centers by descending cosine
  std::vector<Index> hard;                          // rank-2 center per anchor
  std::vector<std::vector<Index>> false_negatives;  // rank-1 cluster members minus the anchor
};

struct ClusterOutcome {
  KMeansResult clusters;
  NegativeSelection selection;
  Index effective_k = 0;

  Matrix hard_negative_rows() const {
    Matrix out(static_cast<Index>(selection.hard.size()), clusters.centers.cols());
    for (std::size_t j = 0; j < selection.hard.size(); ++j)
      out.row(static_cast<Index>(j)) = clusters.centers.row(selection.hard[j]);
    return out;
  }
};

inline NegativeSelection rank_centers_and_pick_negatives(const Matrix& anchors, const KMeansResult& km) {
  const Index k = km.centers.rows();
  if (k < 2) throw ConfigError("negative selection needs at least two centers");
  require_dims(anchors.rows() == static_cast<Index>(km.assignments.size()),
               "anchors and cluster assignments differ in length");
  require_dims(anchors.cols() == km.centers.cols(), "anchors and centers differ in dimension");

  std::vector<double> center_norm(static_cast<std::size_t>(k));
  for (Index c = 0; c < k; ++c) center_norm[static_cast<std::size_t>(c)] = km.centers.row(c).norm();

  NegativeSelection sel;
  const Index m = anchors.rows();
  for (Index j = 0; j < m; ++j) {
    const double an = anchors.row(j).norm();
    if (!(an > 0.0)) throw DegenerateError("anchor " + std::to_string(j) + " has zero norm");
    std::vector<double> cos(static_cast<std::size_t>(k));
    for (Index c = 0; c < k; ++c) {
      const double cn = center_norm[static_cast<std::size_t>(c)];
      cos[static_cast<std::size_t>(c)] = cn > 0.0 ? anchors.row(j).dot(km.centers.row(c)) / (an * cn) : 0.0;
    }
    std::vector<Index> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
      return cos[static_cast<std::size_t>(a)] > cos[static_cast<std::size_t>(b)];
    });
    std::vector<Index> fn;
    for (Index i = 0; i < m; ++i)
      if (i != j && km.assignments[static_cast<std::size_t>(i)] == order[0]) fn.push_back(i);
    sel.hard.push_back(order[1]);
    sel.false_negatives.push_back(std::move(fn));
    sel.ranking.push_back(std::move(order));
  }
  return sel;
}

// Clusters the normalized positives and selects negatives for every anchor.
// Throws BatchTooSmall when fewer than two sentences are available.
inline ClusterOutcome cluster_and_select(const Matrix& anchors, const Matrix& positives, const CgnsConfig& cfg,
                                         std::uint64_t seed) {
  const Index m = positives.rows();
  if (m < 2) throw BatchTooSmall("CGNS needs at least 2 sentences in the batch, got " + std::to_string(m));
  ClusterOutcome out;
  out.effective_k = clamp_clusters(cfg.clusters, m);
  out.clusters = kmeans(normalize_rows(positives, "cross-modal sentence features"), out.effective_k,
                        KMeansOptions{cfg.kmeans_max_iters, cfg.kmeans_tol, seed, cfg.kmeans_restarts});
  out.selection = rank_centers_and_pick_negatives(anchors, out.clusters);
  return out;
}

// ---------------------------------------------------------------------------
// Losses.

struct PairLoss {
  double value = 0.0;
  Matrix d_anchors;
  Matrix d_positives;
};

// Weights for the denominator terms of the local image-to-report loss.
// positive_weights (M x M): weight of exp(s(j,k)); hard_weights (M x H):
// weight of exp(s_hat(j,h)) against hard-negative row h.
struct DenominatorWeights {
  Matrix positive_weights;
  Matrix hard_weights;
};

// Literal reading: every anchor sees all M_l hard-negative rows, its own with
// weight mu and the rest with weight 1; all positives stay in the sum.
inline DenominatorWeights literal_weights(Index m, Index hard_rows, double mu) {
  DenominatorWeights w{Matrix::Ones(m, m), Matrix::Ones(m, hard_rows)};
  if (hard_rows == m) w.hard_weights.diagonal().setConstant(mu);
  return w;
}

inline DenominatorWeights selection_weights(const ClusterOutcome& co, const CgnsConfig& cfg, Matrix* hard_rows) {
  const Index m = static_cast<Index>(co.selection.hard.size());
  DenominatorWeights w;
  if (cfg.dedup_hard_negatives) {
    std::vector<Index> unique(co.selection.hard);
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    const Index h = static_cast<Index>(unique.size());
    *hard_rows = Matrix(h, co.clusters.centers.cols());
    for (Index u = 0; u < h; ++u) hard_rows->row(u) = co.clusters.centers.row(unique[static_cast<std::size_t>(u)]);
    w.positive_weights = Matrix::Ones(m, m);
    w.hard_weights = Matrix::Ones(m, h);
    for (Index j = 0; j < m; ++j)
      for (Index u = 0; u < h; ++u)
        if (unique[static_cast<std::size_t>(u)] == co.selection.hard[static_cast<std::size_t>(j)])
          w.hard_weights(j, u) = cfg.mu_hard;
  } else {
    *hard_rows = co.hard_negative_rows();
    w = literal_weights(m, m, cfg.mu_hard);
  }
  if (cfg.exclude_false_negatives)
    for (Index j = 0; j < m; ++j)
      for (auto k : co.selection.false_negatives[static_cast<std::size_t>(j)]) w.positive_weights(j, k) = 0.0;
  return w;
}

// Local image-to-report contrastive loss with weighted hard negatives:
//   L = -(1/M) sum_j log[ exp(s_jj) / H_j ],
//   H_j = sum_k Wp_jk exp(s_jk) + sum_h Wh_jh exp(s_hat_jh),
// s = norm(anchors) norm(positives)^T / tau, s_hat = norm(anchors) norm(hard)^T / tau.
// `hard` may have zero rows (plain InfoNCE). Gradients flow into anchors and
// positives only.
inline PairLoss local_report_loss(const Matrix& anchors, const Matrix& positives, const Matrix& hard,
                                  const DenominatorWeights& w, double tau) {
  const Index m = anchors.rows();
  require_dims(positives.rows() == m && positives.cols() == anchors.cols(), "local_report_loss: positives shape");
  require_dims(hard.rows() == 0 || hard.cols() == anchors.cols(), "local_report_loss: hard-negative shape");
  require_dims(w.positive_weights.rows() == m && w.positive_weights.cols() == m, "local_report_loss: weight shape");
  require_dims(w.hard_weights.rows() == m && w.hard_weights.cols() == hard.rows(),
               "local_report_loss: hard weight shape");
  require_finite(anchors, "anchors");
  require_finite(positives, "positives");
  require_finite(hard, "hard negatives");
  if (m == 0) return {0.0, Matrix::Zero(0, anchors.cols()), Matrix::Zero(0, anchors.cols())};

  const Matrix a = normalize_rows(anchors, "anchors");
  const Matrix b = normalize_rows(positives, "positives");
  const Matrix c = hard.rows() > 0 ? normalize_rows(hard, "hard negatives") : Matrix(0, anchors.cols());
  const Matrix s = a * b.transpose() / tau;
  const Matrix sh = a * c.transpose() / tau;

  Matrix ds = Matrix::Zero(m, m);
  Matrix dsh = Matrix::Zero(m, c.rows());
  double total = 0.0;
  for (Index j = 0; j < m; ++j) {
    double top = s(j, j);
    for (Index k = 0; k < m; ++k)
      if (w.positive_weights(j, k) > 0.0) top = std::max(top, s(j, k));
    for (Index h = 0; h < c.rows(); ++h)
      if (w.hard_weights(j, h) > 0.0) top = std::max(top, sh(j, h));
    double z = 0.0;
    for (Index k = 0; k < m; ++k) z += w.positive_weights(j, k) * std::exp(s(j, k) - top);
    for (Index h = 0; h < c.rows(); ++h) z += w.hard_weights(j, h) * std::exp(sh(j, h) - top);
    total += -(s(j, j) - top) + std::log(z);
    for (Index k = 0; k < m; ++k) ds(j, k) = w.positive_weights(j, k) * std::exp(s(j, k) - top) / z;
    ds(j, j) -= 1.0;
    for (Index h = 0; h < c.rows(); ++h) dsh(j, h) = w.hard_weights(j, h) * std::exp(sh(j, h) - top) / z;
  }
  const double inv = 1.0 / static_cast<double>(m);
  ds *= inv / tau;
  dsh *= inv / tau;
  const Matrix da = ds * b + dsh * c;
  const Matrix db = ds.transpose() * a;
  return {total * inv, normalize_rows_backward(anchors, a, da), normalize_rows_backward(positives, b, db)};
}

// Bidirectional margin loss over (anchor, false negative) pairs:
//   dx = cos(f^R_j, f*) - cos(f^R_j, f^{I->R}_j),
//   l = relu(dx + alpha) + relu(-dx - beta), averaged over pairs.
inline PairLoss bml_loss(const Matrix& anchors, const Matrix& positives,
                         const std::vector<std::vector<Index>>& false_negatives, double alpha, double beta) {
  if (!(alpha < beta)) throw ConfigError("bml: alpha must be < beta");
  const Index m = anchors.rows();
  require_dims(positives.rows() == m && static_cast<Index>(false_negatives.size()) == m, "bml_loss: shapes");
  require_finite(anchors, "anchors");
  require_finite(positives, "positives");
  PairLoss r{0.0, Matrix::Zero(m, anchors.cols()), Matrix::Zero(m, anchors.cols())};
  std::size_t pairs = 0;
  for (const auto& fn : false_negatives) pairs += fn.size();
  if (pairs == 0) return r;
  const double inv = 1.0 / static_cast<double>(pairs);

  for (Index j = 0; j < m; ++j) {
    const RowVector a = anchors.row(j);
    const RowVector pos = positives.row(j);
    const double cos_pos = cosine_rows(a, pos);
    for (auto k : false_negatives[static_cast<std::size_t>(j)]) {
      const RowVector fn = positives.row(k);
      const double dx = cosine_rows(a, fn) - cos_pos;
      r.value += (std::max(0.0, dx + alpha) + std::max(0.0, -dx - beta)) * inv;
      const double g = ((dx + alpha > 0.0) ? 1.0 : 0.0) - ((-dx - beta > 0.0) ? 1.0 : 0.0);
      if (g == 0.0) continue;
      // d dx / d anchor = dcos(a,fn)/da - dcos(a,pos)/da
      r.d_anchors.row(j) += g * inv * (cosine_grad_a(a, fn) - cosine_grad_a(a, pos));
      r.d_positives.row(k) += g * inv * cosine_grad_a(fn, a);
      r.d_positives.row(j) -= g * inv * cosine_grad_a(pos, a);
    }
  }
  return r;
}

}  // namespace cmcgns
