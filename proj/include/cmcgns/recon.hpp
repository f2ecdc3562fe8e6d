#pragma once

// Cross-modal masked image reconstruction: per-position masking of the
// local image features, channel-wise fusion with the report-to-image
// features, a five-stage upsampling conv decoder and an L1 objective.

#include <algorithm>
#include <string>
#include <vector>

#include "cmcgns/common.hpp"
#include "cmcgns/nn.hpp"
#include "cmcgns/rng.hpp"

namespace cmcgns {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Masking.

struct MaskSpec {
  double probability = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(probability >= 0.0 && probability <= 1.0)) throw ConfigError("mask probability must lie in [0,1]");
  }

  bool masked(std::uint64_t step, std::uint64_t sample, std::uint64_t position) const {
    if (probability <= 0.0) return false;
    if (probability >= 1.0) return true;
    CounterRng r(hash_combine({seed, step, sample, position}));
    return r.uniform() < probability;
  }
};

struct MaskedFeatures {
  Matrix features;
  std::vector<bool> flags;
};

inline MaskedFeatures mask_features(const Matrix& local, const RowVector& mask_vector, const MaskSpec& spec,
                                    std::uint64_t step, std::uint64_t sample) {
  require_dims(mask_vector.size() == local.cols(), "mask vector dimension differs from features");
  MaskedFeatures out{local, std::vector<bool>(static_cast<std::size_t>(local.rows()), false)};
  for (Index p = 0; p < local.rows(); ++p)
    if (spec.masked(step, sample, static_cast<std::uint64_t>(p))) {
      out.flags[static_cast<std::size_t>(p)] = true;
      out.features.row(p) = mask_vector;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Bilinear resampling (half-pixel centers, edge clamp) as a linear operator.

inline Matrix bilinear_axis(Index in, Index out) {
  Matrix a = Matrix::Zero(out, in);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<Index>(std::floor(src));
    const Index i1 = std::min(i0 + 1, in - 1);
    const double w1 = src - static_cast<double>(i0);
    a(o, i0) += 1.0 - w1;
    a(o, i1) += w1;
  }
  return a;
}

// (out^2 x in^2) operator acting on row-major flattened square images.
inline Matrix bilinear_operator(Index in, Index out) {
  const Matrix a = bilinear_axis(in, out);
  Matrix r(out * out, in * in);
  for (Index oy = 0; oy < out; ++oy)
    for (Index ox = 0; ox < out; ++ox)
      for (Index iy = 0; iy < in; ++iy)
        for (Index ix = 0; ix < in; ++ix) r(oy * out + ox, iy * in + ix) = a(oy, iy) * a(ox, ix);
  return r;
}

// ---------------------------------------------------------------------------
// 3x3 same-padded convolution on (channels x side^2) maps via im2col.

inline RowMajorMatrix im2col3(const RowMajorMatrix& x, Index side) {
  const Index c = x.rows();
  RowMajorMatrix cols = RowMajorMatrix::Zero(c * 9, side * side);
  for (Index ci = 0; ci < c; ++ci)
    for (Index ky = 0; ky < 3; ++ky)
      for (Index kx = 0; kx < 3; ++kx) {
        const Index row = ci * 9 + ky * 3 + kx;
        for (Index y = 0; y < side; ++y) {
          const Index sy = y + ky - 1;
          if (sy < 0 || sy >= side) continue;
          for (Index xx = 0; xx < side; ++xx) {
            const Index sx = xx + kx - 1;
            if (sx < 0 || sx >= side) continue;
            cols(row, y * side + xx) = x(ci, sy * side + sx);
          }
        }
      }
  return cols;
}

inline RowMajorMatrix col2im3(const RowMajorMatrix& cols, Index channels, Index side) {
  RowMajorMatrix x = RowMajorMatrix::Zero(channels, side * side);
  for (Index ci = 0; ci < channels; ++ci)
    for (Index ky = 0; ky < 3; ++ky)
      for (Index kx = 0; kx < 3; ++kx) {
        const Index row = ci * 9 + ky * 3 + kx;
        for (Index y = 0; y < side; ++y) {
          const Index sy = y + ky - 1;
          if (sy < 0 || sy >= side) continue;
          for (Index xx = 0; xx < side; ++xx) {
            const Index sx = xx + kx - 1;
            if (sx < 0 || sx >= side) continue;
            x(ci, sy * side + sx) += cols(row, y * side + xx);
          }
        }
      }
  return x;
}

// ---------------------------------------------------------------------------

struct DecoderConfig {
  Index grid_side = 4;
  Index image_side = 32;
  Index dim = 32;
  Index min_width = 4;
  static constexpr int kStages = 5;
};

struct DecoderStage {
  Index in_side = 0;
  Index out_side = 0;
  Index in_ch = 0;
  Index out_ch = 0;
  Matrix upsample;  // out_side^2 x in_side^2, empty when sides match
  Param weight;     // out_ch x (in_ch * 9)
  Param bias;       // out_ch x 1
};

class Decoder {
 public:
  struct StageCache {
    RowMajorMatrix up;
    RowMajorMatrix cols;
    RowMajorMatrix pre;
  };
  struct Cache {
    Matrix fused_input;  // P x 2D
    RowMajorMatrix grid;  // D x P
    std::vector<StageCache> stages;
    RowMajorMatrix last;       // output of final stage
    RowMajorMatrix head_in;    // after resize to image side
  };

  Decoder() = default;
  Decoder(const DecoderConfig& cfg, CounterRng rng) : cfg_(cfg) {
    if (cfg.grid_side < 1 || cfg.image_side < cfg.grid_side) throw ConfigError("decoder: bad grid/image sides");
    fusion = Linear("decoder.fusion", 2 * cfg.dim, cfg.dim, rng.split(100));
    Index side = cfg.grid_side;
    Index ch = cfg.dim;
    for (int s = 0; s < DecoderConfig::kStages; ++s) {
      DecoderStage st;
      st.in_side = side;
      st.out_side = std::min(2 * side, cfg.image_side);
      st.in_ch = ch;
      st.out_ch = std::max(cfg.min_width, cfg.dim >> (s + 1));
      if (st.out_side != st.in_side) st.upsample = bilinear_operator(st.in_side, st.out_side);
      const std::string name = "decoder.stage" + std::to_string(s + 1);
      st.weight = Param(name + ".weight", init_uniform(st.out_ch, st.in_ch * 9, st.in_ch * 9, rng.split(s + 1)));
      st.bias = Param(name + ".bias", Matrix::Zero(st.out_ch, 1));
      side = st.out_side;
      ch = st.out_ch;
      stages.push_back(std::move(st));
    }
    if (side != cfg.image_side) head_resize = bilinear_operator(side, cfg.image_side);
    head_weight = Param("decoder.head.weight", init_uniform(1, ch, ch, rng.split(200)));
    head_bias = Param("decoder.head.bias", Matrix::Zero(1, 1));
  }

  const DecoderConfig& config() const { return cfg_; }

  // cross: f^{R->I} (P x D); masked: masked f^I (P x D). Returns image_side^2 square image.
  Matrix forward(const Matrix& cross, const Matrix& masked, Cache* cache = nullptr) const {
    const Index p = cfg_.grid_side * cfg_.grid_side;
    require_dims(cross.rows() == p && masked.rows() == p,
                 "decoder: expected " + std::to_string(p) + " regions (square grid), got " +
                     std::to_string(cross.rows()));
    require_dims(cross.cols() == cfg_.dim && masked.cols() == cfg_.dim, "decoder: feature dimension");
    Cache local;
    Cache& c = cache ? *cache : local;
    c.fused_input.resize(p, 2 * cfg_.dim);
    c.fused_input << cross, masked;
    c.grid = fusion.forward(c.fused_input).transpose();
    c.stages.resize(stages.size());

    RowMajorMatrix x = c.grid;
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const auto& st = stages[s];
      auto& sc = c.stages[s];
      sc.up = st.upsample.size() ? RowMajorMatrix(x * st.upsample.transpose()) : x;
      sc.cols = im2col3(sc.up, st.out_side);
      sc.pre = st.weight.value * sc.cols;
      sc.pre.colwise() += st.bias.value.col(0);
      x = sc.pre.cwiseMax(0.0);
    }
    c.last = x;
    c.head_in = head_resize.size() ? RowMajorMatrix(x * head_resize.transpose()) : x;
    RowMajorMatrix out = head_weight.value * c.head_in;
    out.array() += head_bias.value(0, 0);
    return Eigen::Map<const RowMajorMatrix>(out.data(), cfg_.image_side, cfg_.image_side);
  }

  struct InputGrads {
    Matrix d_cross;
    Matrix d_masked;
  };

  InputGrads backward(const Cache& c, const Matrix& d_image) {
    const Index n = cfg_.image_side * cfg_.image_side;
    RowMajorMatrix d_out(1, n);
    for (Index y = 0; y < cfg_.image_side; ++y)
      for (Index x = 0; x < cfg_.image_side; ++x) d_out(0, y * cfg_.image_side + x) = d_image(y, x);

    head_weight.grad.noalias() += d_out * c.head_in.transpose();
    head_bias.grad(0, 0) += d_out.sum();
    RowMajorMatrix dx = head_weight.value.transpose() * d_out;
    if (head_resize.size()) dx = dx * head_resize;

    for (std::size_t s = stages.size(); s-- > 0;) {
      auto& st = stages[s];
      const auto& sc = c.stages[s];
      const RowMajorMatrix d_pre = (sc.pre.array() > 0.0).select(dx, 0.0);
      st.weight.grad.noalias() += d_pre * sc.cols.transpose();
      st.bias.grad.col(0) += d_pre.rowwise().sum();
      const RowMajorMatrix d_cols = st.weight.value.transpose() * d_pre;
      RowMajorMatrix d_up = col2im3(d_cols, st.in_ch, st.out_side);
      dx = st.upsample.size() ? RowMajorMatrix(d_up * st.upsample) : d_up;
    }
    const Matrix d_fused = fusion.backward(c.fused_input, Matrix(dx.transpose()));
    return {d_fused.leftCols(cfg_.dim), d_fused.rightCols(cfg_.dim)};
  }

  void visit(const ParamVisitor& f) {
    fusion.visit(f);
    for (auto& st : stages) {
      f(st.weight);
      f(st.bias);
    }
    f(head_weight);
    f(head_bias);
  }

  DecoderConfig cfg_;
  Linear fusion;
  std::vector<DecoderStage> stages;
  Matrix head_resize;
  Param head_weight;
  Param head_bias;
};

// Mean absolute pixel error of one image; gradient is sign(rec - target)/N.
inline double recon_loss(const Matrix& reconstruction, const Matrix& target, Matrix* d_reconstruction = nullptr) {
  require_dims(reconstruction.rows() == target.rows() && reconstruction.cols() == target.cols(),
               "recon_loss: " + shape_str(reconstruction) + " vs " + shape_str(target));
  const double n = static_cast<double>(target.size());
  const Matrix diff = reconstruction - target;
  if (d_reconstruction) *d_reconstruction = diff.unaryExpr([n](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); }) / n;
  return diff.cwiseAbs().sum() / n;
}

// Per-pixel mean, then mean over the batch.
inline double recon_loss(const std::vector<Matrix>& reconstructions, const std::vector<Matrix>& targets) {
  require_dims(reconstructions.size() == targets.size() && !targets.empty(), "recon_loss: batch size");
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) total += recon_loss(reconstructions[i], targets[i]);
  return total / static_cast<double>(targets.size());
}

// Mask vector plus decoder: everything the reconstruction branch learns.
struct Reconstruction {
  Reconstruction() = default;
  Reconstruction(const DecoderConfig& cfg, CounterRng rng)
      : mask_vector("recon.mask_vector", init_uniform(1, cfg.dim, cfg.dim, rng.split(1))),
        decoder(cfg, rng.split(2)) {}

  void visit(const ParamVisitor& f) {
    f(mask_vector);
    decoder.visit(f);
  }

  Param mask_vector;
  Decoder decoder;
};

}  // namespace cmcgns
