#pragma once

// Brute-force reference implementations for the test suite. Plain nested
// std::vector loops, no Eigen, nothing from include/cmcgns.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major, rows = samples

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double cosine(const Vec& a, const Vec& b) { return dot(a, b) / (norm(a) * norm(b)); }

struct InfoNce {
  double i2r = 0.0;
  double r2i = 0.0;
};

// Symmetric InfoNCE over cosine similarity, written term by term.
inline InfoNce infonce(const Mat& img, const Mat& txt, double tau) {
  const std::size_t b = img.size();
  InfoNce r;
  for (std::size_t i = 0; i < b; ++i) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      row += std::exp(cosine(img[i], txt[j]) / tau);
      col += std::exp(cosine(img[j], txt[i]) / tau);
    }
    const double pos = std::exp(cosine(img[i], txt[i]) / tau);
    r.i2r -= std::log(pos / row);
    r.r2i -= std::log(pos / col);
  }
  r.i2r /= static_cast<double>(b);
  r.r2i /= static_cast<double>(b);
  return r;
}

// Sigmoid cross-attention: out_a = sum_b sigmoid((Q q_a).(K k_b)/sqrt(D)) V k_b.
// Q, K, V are D x D and act on column vectors.
inline Mat xattn(const Mat& queries, const Mat& keys, const Mat& Q, const Mat& K, const Mat& V) {
  const std::size_t d = Q.size();
  auto apply = [&](const Mat& W, const Vec& x) {
    Vec y(d, 0.0);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) y[r] += W[r][c] * x[c];
    return y;
  };
  Mat out(queries.size(), Vec(d, 0.0));
  for (std::size_t a = 0; a < queries.size(); ++a) {
    const Vec q = apply(Q, queries[a]);
    for (const auto& kb : keys) {
      const Vec k = apply(K, kb);
      const Vec v = apply(V, kb);
      const double w = 1.0 / (1.0 + std::exp(-dot(q, k) / std::sqrt(static_cast<double>(d))));
      for (std::size_t i = 0; i < d; ++i) out[a][i] += w * v[i];
    }
  }
  return out;
}

// Local image-to-report loss with hard negatives. hard[j] is the index into
// `centers` of anchor j's hard negative.
//   dedup:    each distinct hard center enters once; the anchor's own gets mu.
//   exclude:  drop anchor j's false negatives from the positive-side sum.
inline double local_report(const Mat& anchors, const Mat& positives, const Mat& centers, const std::vector<std::size_t>& hard,
                  const std::vector<std::vector<std::size_t>>& false_negatives, double mu, double tau,
                  bool dedup = false, bool exclude = false) {
  const std::size_t m = anchors.size();
  double total = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    double h = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      bool skip = false;
      if (exclude)
        for (auto f : false_negatives[j]) skip = skip || f == k;
      if (!skip) h += std::exp(cosine(anchors[j], positives[k]) / tau);
    }
    if (dedup) {
      std::vector<std::size_t> seen;
      for (std::size_t k = 0; k < m; ++k) {
        if (std::find(seen.begin(), seen.end(), hard[k]) != seen.end()) continue;
        seen.push_back(hard[k]);
        const double w = hard[k] == hard[j] ? mu : 1.0;
        h += w * std::exp(cosine(anchors[j], centers[hard[k]]) / tau);
      }
    } else {
      for (std::size_t k = 0; k < m; ++k) {
        const double w = k == j ? mu : 1.0;
        h += w * std::exp(cosine(anchors[j], centers[hard[k]]) / tau);
      }
    }
    total -= std::log(std::exp(cosine(anchors[j], positives[j]) / tau) / h);
  }
  return total / static_cast<double>(m);
}

// Bidirectional margin hinge for one pair.
inline double margin_hinge(double dx, double alpha, double beta) {
  return std::max(0.0, dx + alpha) + std::max(0.0, -dx - beta);
}

inline double bml(const Mat& anchors, const Mat& positives, const std::vector<std::vector<std::size_t>>& fns,
                  double alpha, double beta) {
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t j = 0; j < anchors.size(); ++j)
    for (auto k : fns[j]) {
      total += margin_hinge(cosine(anchors[j], positives[k]) - cosine(anchors[j], positives[j]), alpha, beta);
      ++pairs;
    }
  return pairs ? total / static_cast<double>(pairs) : 0.0;
}

// Two-layer predictor h(x) = W2 relu(W1 x + b1) + b2 with W* given out x in.
struct Predictor {
  Mat w1;
  Vec b1;
  Mat w2;
  Vec b2;

  Vec operator()(const Vec& x) const {
    Vec hid(w1.size());
    for (std::size_t r = 0; r < w1.size(); ++r) {
      double s = b1[r];
      for (std::size_t c = 0; c < x.size(); ++c) s += w1[r][c] * x[c];
      hid[r] = s > 0.0 ? s : 0.0;
    }
    Vec out(w2.size());
    for (std::size_t r = 0; r < w2.size(); ++r) {
      double s = b2[r];
      for (std::size_t c = 0; c < hid.size(); ++c) s += w2[r][c] * hid[c];
      out[r] = s;
    }
    return out;
  }
};

inline double simsiam(const Mat& image, const Mat& cross, const Predictor& h) {
  double total = 0.0;
  for (std::size_t n = 0; n < image.size(); ++n)
    total += 0.5 * cosine(h(image[n]), cross[n]) + 0.5 * cosine(h(cross[n]), image[n]);
  return -total / static_cast<double>(image.size());
}

// Mean absolute error per image, averaged over the batch.
inline double recon_l1(const std::vector<Mat>& rec, const std::vector<Mat>& target) {
  double total = 0.0;
  for (std::size_t b = 0; b < rec.size(); ++b) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t y = 0; y < rec[b].size(); ++y)
      for (std::size_t x = 0; x < rec[b][y].size(); ++x, ++n) s += std::abs(rec[b][y][x] - target[b][y][x]);
    total += s / static_cast<double>(n);
  }
  return total / static_cast<double>(rec.size());
}

struct KMeansOptimum {
  double inertia = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> assignment;  // canonical labels (first occurrence order)
};

// Minimum within-cluster sum of squares over every partition of the points
// into exactly k nonempty groups (restricted-growth enumeration).
inline KMeansOptimum kmeans_bruteforce(const Mat& points, std::size_t k) {
  const std::size_t n = points.size();
  if (n > 12) throw std::invalid_argument("kmeans_bruteforce: more than 12 points");
  if (k < 1 || k > n) throw std::invalid_argument("kmeans_bruteforce: k out of range");
  const std::size_t d = points[0].size();
  KMeansOptimum best;
  std::vector<std::size_t> a(n, 0);
  auto evaluate = [&] {
    std::size_t used = 0;
    for (auto v : a) used = std::max(used, v + 1);
    if (used != k) return;
    Mat mean(k, Vec(d, 0.0));
    std::vector<double> count(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      count[a[i]] += 1.0;
      for (std::size_t c = 0; c < d; ++c) mean[a[i]][c] += points[i][c];
    }
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = points[i][c] - mean[a[i]][c] / count[a[i]];
        inertia += diff * diff;
      }
    if (inertia < best.inertia) {
      best.inertia = inertia;
      best.assignment = a;
    }
  };
  // a[0] = 0; a[i] <= max(a[0..i-1]) + 1, capped at k-1.
  std::vector<std::size_t> prefix_max(n, 0);
  std::size_t i = n - 1;
  while (true) {
    evaluate();
    // advance
    while (i > 0) {
      const std::size_t cap = std::min(prefix_max[i - 1] + 1, k - 1);
      if (a[i] < cap) break;
      --i;
    }
    if (i == 0) break;
    ++a[i];
    prefix_max[i] = std::max(prefix_max[i - 1], a[i]);
    for (std::size_t j = i + 1; j < n; ++j) {
      a[j] = 0;
      prefix_max[j] = prefix_max[j - 1];
    }
    i = n - 1;
  }
  return best;
}

// Relabels an assignment so labels appear in first-occurrence order.
inline std::vector<std::size_t> canonical(const std::vector<std::size_t>& labels) {
  std::vector<std::size_t> map, out;
  std::vector<std::size_t> from;
  for (auto l : labels) {
    auto it = std::find(from.begin(), from.end(), l);
    if (it == from.end()) {
      from.push_back(l);
      out.push_back(from.size() - 1);
    } else {
      out.push_back(static_cast<std::size_t>(it - from.begin()));
    }
  }
  return out;
}

}  // namespace oracle
