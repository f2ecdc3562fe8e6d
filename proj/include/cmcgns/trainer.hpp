#pragma once

// Two-stage pretraining loop. Stage 1 optimizes the alignment objective
// (global + local); stage 2 adds masked reconstruction (or, with
// recon_only, trains reconstruction alone). The learning rate follows one
// cosine decay over both stages. Every random choice is keyed by
// (seed, step) so a run is a pure function of (corpus, config) and a
// checkpoint resumes bit-identically.

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "cmcgns/checkpoint.hpp"
#include "cmcgns/model.hpp"
#include "cmcgns/optim.hpp"
#include "cmcgns/syndata.hpp"

namespace cmcgns {

enum class Stage2Objective { Full, ReconOnly };

inline Stage2Objective parse_stage2_objective(const std::string& s) {
  if (s == "full") return Stage2Objective::Full;
  if (s == "recon-only") return Stage2Objective::ReconOnly;
  throw ConfigError("unknown stage2 objective '" + s + "' (expected full|recon-only)");
}
inline std::string to_string(Stage2Objective o) { return o == Stage2Objective::Full ? "full" : "recon-only"; }

struct TrainConfig {
  std::uint32_t batch_size = 32;
  double lr_init = 1e-3;
  std::uint32_t stage1_epochs = 10;
  std::uint32_t stage2_epochs = 20;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 1;
  std::uint32_t checkpoint_interval = 0;  // steps; 0 = only the final checkpoint
  Stage2Objective stage2_objective = Stage2Objective::Full;
  bool use_cgns = true;
  bool use_mir = true;

  void validate() const {
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (!(lr_init > 0.0)) throw ConfigError("lr_init must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& t) {
  j = {{"batch_size", t.batch_size},
       {"lr_init", t.lr_init},
       {"stage1_epochs", t.stage1_epochs},
       {"stage2_epochs", t.stage2_epochs},
       {"optimizer", to_string(t.optimizer)},
       {"beta1", t.beta1},
       {"beta2", t.beta2},
       {"eps", t.eps},
       {"seed", t.seed},
       {"checkpoint_interval", t.checkpoint_interval},
       {"stage2_objective", to_string(t.stage2_objective)},
       {"use_cgns", t.use_cgns},
       {"use_mir", t.use_mir}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& t) {
  const TrainConfig d;
  t.batch_size = j.value("batch_size", d.batch_size);
  t.lr_init = j.value("lr_init", d.lr_init);
  t.stage1_epochs = j.value("stage1_epochs", d.stage1_epochs);
  t.stage2_epochs = j.value("stage2_epochs", d.stage2_epochs);
  t.optimizer = parse_optimizer(j.value("optimizer", to_string(d.optimizer)));
  t.beta1 = j.value("beta1", d.beta1);
  t.beta2 = j.value("beta2", d.beta2);
  t.eps = j.value("eps", d.eps);
  t.seed = j.value("seed", d.seed);
  t.checkpoint_interval = j.value("checkpoint_interval", d.checkpoint_interval);
  t.stage2_objective = parse_stage2_objective(j.value("stage2_objective", to_string(d.stage2_objective)));
  t.use_cgns = j.value("use_cgns", d.use_cgns);
  t.use_mir = j.value("use_mir", d.use_mir);
}

inline constexpr const char* kMetricsHeader = "step,stage,lr,l_g_i2r,l_g_r2i,l_local_report,l_bml,l_local_img,l_re,total";

inline std::string metrics_row(std::uint64_t step, int stage, double lr, const LossBreakdown& l) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%llu,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                static_cast<unsigned long long>(step), stage, lr, l.l_global_i2r, l.l_global_r2i, l.l_local_report,
                l.l_bml, l.l_local_image, l.l_re, l.total);
  return buf;
}

struct StepRecord {
  std::uint64_t step = 0;
  int stage = 1;
  double lr = 0.0;
  LossBreakdown losses;
};

class Trainer {
 public:
  Trainer(const ModelConfig& model_cfg, const TrainConfig& cfg)
      : model_cfg_(model_cfg), cfg_(cfg), model_(model_cfg, cfg.seed), optim_(cfg.optimizer, cfg.beta1, cfg.beta2, cfg.eps) {
    cfg.validate();
  }

  // Rebuilds a trainer (model, optimizer, step counter) from a checkpoint.
  static Trainer from_checkpoint(const Checkpoint& ck) {
    const auto j = nlohmann::json::parse(ck.config_json);
    Trainer t(j.at("model").get<ModelConfig>(), j.at("train").get<TrainConfig>());
    t.restore(ck);
    return t;
  }

  Model& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  const ModelConfig& model_config() const { return model_cfg_; }
  std::uint64_t step() const { return step_; }

  nlohmann::json config_json() const { return {{"model", model_cfg_}, {"train", cfg_}}; }

  std::uint64_t config_hash() const {
    const std::string s = config_json().dump();
    return crc64(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }

  std::uint64_t steps_per_epoch(std::size_t train_size) const { return train_size / cfg_.batch_size; }

  std::uint64_t stage1_steps(std::size_t train_size) const { return cfg_.stage1_epochs * steps_per_epoch(train_size); }
  std::uint64_t total_steps(std::size_t train_size) const {
    return (std::uint64_t{cfg_.stage1_epochs} + cfg_.stage2_epochs) * steps_per_epoch(train_size);
  }

  int stage_of(std::uint64_t step, std::size_t train_size) const {
    return step < stage1_steps(train_size) ? 1 : 2;
  }

  // Indices of the training samples in the batch for a global step.
  std::vector<std::size_t> batch_indices(std::uint64_t step, std::size_t train_size) const {
    const std::uint64_t spe = steps_per_epoch(train_size);
    const std::uint64_t epoch = step / spe;
    const std::uint64_t pos = step % spe;
    std::vector<std::size_t> order(train_size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng rng(hash_combine({cfg_.seed, epoch, 0x73687566ULL}));
    for (std::size_t i = train_size; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return {order.begin() + static_cast<std::ptrdiff_t>(pos * cfg_.batch_size),
            order.begin() + static_cast<std::ptrdiff_t>((pos + 1) * cfg_.batch_size)};
  }

  ObjectiveOptions objective(int stage, std::uint64_t step) const {
    ObjectiveOptions o;
    o.cgns = cfg_.use_cgns;
    o.step = step;
    o.seed = cfg_.seed;
    if (stage == 2 && cfg_.use_mir) {
      o.reconstruction = true;
      o.alignment = cfg_.stage2_objective == Stage2Objective::Full;
    }
    return o;
  }

  // One optimization step on `batch` at the current step counter.
  StepRecord train_step(std::span<const PairedSample* const> batch, int stage, std::uint64_t total) {
    StepRecord rec;
    rec.step = step_;
    rec.stage = stage;
    rec.lr = cosine_lr(step_, total, cfg_.lr_init);
    model_.zero_grad();
    BatchResult r;
    try {
      r = model_.evaluate(batch, objective(stage, step_), true);
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("step " + std::to_string(step_) + ": " + e.what());
    }
    rec.losses = r.losses;
    optim_.step(model_.params(), rec.lr);
    ++step_;
    return rec;
  }

  using StepCallback = std::function<void(const StepRecord&)>;

  // Trains on `train` until `end_step` (exclusive) or the schedule's end.
  void run(const std::vector<const PairedSample*>& train, std::uint64_t end_step, const StepCallback& on_step = {},
           const std::function<void(const Checkpoint&)>& on_checkpoint = {}) {
    const std::uint64_t total = total_steps(train.size());
    if (train.size() < cfg_.batch_size) throw ConfigError("training split smaller than one batch");
    end_step = std::min(end_step, total);
    while (step_ < end_step) {
      const int stage = stage_of(step_, train.size());
      std::vector<const PairedSample*> batch;
      for (auto i : batch_indices(step_, train.size())) batch.push_back(train[i]);
      const StepRecord rec = train_step(batch, stage, total);
      if (on_step) on_step(rec);
      if (on_checkpoint && cfg_.checkpoint_interval > 0 && step_ % cfg_.checkpoint_interval == 0 && step_ < total)
        on_checkpoint(checkpoint(stage));
    }
  }

  void run_stage1(const std::vector<const PairedSample*>& train, const StepCallback& cb = {}) {
    run(train, stage1_steps(train.size()), cb);
  }
  void run_all(const std::vector<const PairedSample*>& train, const StepCallback& cb = {},
               const std::function<void(const Checkpoint&)>& on_checkpoint = {}) {
    run(train, total_steps(train.size()), cb, on_checkpoint);
  }

  Checkpoint checkpoint(int stage) {
    Checkpoint c;
    c.step = step_;
    c.stage = static_cast<std::uint32_t>(stage);
    c.config_hash = config_hash();
    c.config_json = config_json().dump();
    auto params = model_.params();
    for (auto* p : params) c.tensors.emplace_back(p->name, p->value);
    if (optim_.kind() == OptimizerKind::Adam && !optim_.first_moments().empty()) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        c.tensors.emplace_back("adam.m/" + params[i]->name, optim_.first_moments()[i]);
        c.tensors.emplace_back("adam.v/" + params[i]->name, optim_.second_moments()[i]);
      }
    }
    c.tensors.emplace_back("optimizer.t", Matrix::Constant(1, 1, static_cast<double>(optim_.steps())));
    return c;
  }

  void restore(const Checkpoint& c) {
    if (c.config_hash != config_hash()) throw ConfigError("checkpoint config hash does not match this configuration");
    auto params = model_.params();
    for (auto* p : params) {
      const Matrix& v = c.tensor(p->name);
      if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
        throw DimensionError("checkpoint tensor " + p->name + " has shape " + shape_str(v));
      p->value = v;
    }
    optim_ = Optimizer(cfg_.optimizer, cfg_.beta1, cfg_.beta2, cfg_.eps);
    if (c.has("adam.m/" + params.front()->name)) {
      for (auto* p : params) {
        optim_.first_moments().push_back(c.tensor("adam.m/" + p->name));
        optim_.second_moments().push_back(c.tensor("adam.v/" + p->name));
      }
    }
    optim_.set_steps(static_cast<std::uint64_t>(c.tensor("optimizer.t")(0, 0)));
    step_ = c.step;
  }

 private:
  ModelConfig model_cfg_;
  TrainConfig cfg_;
  Model model_;
  Optimizer optim_;
  std::uint64_t step_ = 0;
};

// Convenience: pointers to the samples at `indices`.
inline std::vector<const PairedSample*> select(const std::vector<PairedSample>& samples,
                                               const std::vector<std::size_t>& indices) {
  std::vector<const PairedSample*> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(&samples[i]);
  return out;
}

// Stage 1 from initialization; returns the end-of-stage checkpoint.
inline Checkpoint train_stage1(const std::vector<const PairedSample*>& train, const ModelConfig& model_cfg,
                               const TrainConfig& cfg, const Trainer::StepCallback& cb = {}) {
  Trainer t(model_cfg, cfg);
  t.run_stage1(train, cb);
  return t.checkpoint(1);
}

// Stage 2 continuing from a stage-1 (or mid-stage-2) checkpoint.
inline Checkpoint train_stage2(const Checkpoint& from, const std::vector<const PairedSample*>& train,
                               const Trainer::StepCallback& cb = {}) {
  Trainer t = Trainer::from_checkpoint(from);
  if (t.step() < t.stage1_steps(train.size())) throw ConfigError("train_stage2 needs a completed stage-1 checkpoint");
  t.run_all(train, cb);
  return t.checkpoint(2);
}

}  // namespace cmcgns
