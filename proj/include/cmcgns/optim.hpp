#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "cmcgns/common.hpp"
#include "cmcgns/nn.hpp"

namespace cmcgns {

inline double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr_init) {
  if (total_steps == 0) throw ConfigError("cosine_lr: total_steps must be positive");
  if (step > total_steps) throw ConfigError("cosine_lr: step beyond total_steps");
  return lr_init * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

enum class OptimizerKind { Sgd, Adam };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd|adam)");
}

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

// Entries whose gradient is exactly zero are left untouched, moments
// included, so a step only moves parameters that received gradient.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerKind kind, double beta1, double beta2, double eps)
      : kind_(kind), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Param*>& params, double lr) {
    if (kind_ == OptimizerKind::Adam && first_.empty()) {
      for (auto* p : params) {
        first_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        second_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Param& p = *params[i];
      for (Index k = 0; k < p.value.size(); ++k) {
        const double g = p.grad.data()[k];
        if (g == 0.0) continue;
        if (kind_ == OptimizerKind::Sgd) {
          p.value.data()[k] -= lr * g;
          continue;
        }
        double& m = first_[i].data()[k];
        double& v = second_[i].data()[k];
        m = beta1_ * m + (1.0 - beta1_) * g;
        v = beta2_ * v + (1.0 - beta2_) * g * g;
        p.value.data()[k] -= lr * (m / c1) / (std::sqrt(v / c2) + eps_);
      }
    }
  }

  OptimizerKind kind() const { return kind_; }
  std::uint64_t steps() const { return t_; }
  std::vector<Matrix>& first_moments() { return first_; }
  std::vector<Matrix>& second_moments() { return second_; }
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  OptimizerKind kind_ = OptimizerKind::Adam;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::uint64_t t_ = 0;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
};

}  // namespace cmcgns
