#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "xbert/params.hpp"
#include "xbert/tensor.hpp"

namespace xbert {

struct AdamWConfig {
  float lr = 5e-4f;
  float weight_decay = 5e-2f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Decoupled weight decay AdamW over a ParamStore. Moment buffers are keyed
// by store index; the store layout must not change across steps.
class AdamW {
 public:
  AdamW(ParamStore& params, AdamWConfig cfg) : params_(&params), cfg_(cfg) {
    if (cfg.lr < 0.0f) throw std::runtime_error("AdamW: negative learning rate");
    exp_avg_.resize(params.size());
    exp_avg_sq_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      const auto n = static_cast<size_t>(params.at(i).second.numel());
      exp_avg_[i].assign(n, 0.0f);
      exp_avg_sq_[i].assign(n, 0.0f);
    }
  }

  void step(float lr_override = -1.0f) {
    const float lr = lr_override >= 0.0f ? lr_override : cfg_.lr;
    ++step_count_;
    const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(step_count_));
    const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(step_count_));
    for (size_t i = 0; i < params_->size(); ++i) {
      Tensor& p = params_->at(i).second;
      if (!p.requires_grad()) continue;
      auto& v = p.values();
      const auto& g = p.grad();
      auto& m1 = exp_avg_[i];
      auto& m2 = exp_avg_sq_[i];
      if (m1.size() != v.size()) throw ShapeError("AdamW: parameter shape changed under optimizer");
      for (size_t j = 0; j < v.size(); ++j) {
        m1[j] = cfg_.beta1 * m1[j] + (1.0f - cfg_.beta1) * g[j];
        m2[j] = cfg_.beta2 * m2[j] + (1.0f - cfg_.beta2) * g[j] * g[j];
        const float mhat = m1[j] / bc1;
        const float vhat = m2[j] / bc2;
        v[j] -= lr * cfg_.weight_decay * v[j];
        v[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  uint64_t step_count() const { return step_count_; }
  void set_step_count(uint64_t c) { step_count_ = c; }
  const AdamWConfig& config() const { return cfg_; }

  std::vector<std::vector<float>>& exp_avg() { return exp_avg_; }
  std::vector<std::vector<float>>& exp_avg_sq() { return exp_avg_sq_; }

 private:
  ParamStore* params_;
  AdamWConfig cfg_;
  uint64_t step_count_ = 0;
  std::vector<std::vector<float>> exp_avg_;
  std::vector<std::vector<float>> exp_avg_sq_;
};

// Linear warmup to lr_max, then half-cosine decay to zero. Steps outside
// [0, total] clamp to the boundary values.
inline float cosine_lr(int64_t step, int64_t warmup_steps, int64_t total_steps, float lr_max) {
  if (step < 0) step = 0;
  if (step > total_steps) step = total_steps;
  if (warmup_steps > 0 && step < warmup_steps) {
    return lr_max * static_cast<float>(step) / static_cast<float>(warmup_steps);
  }
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return static_cast<float>(0.5 * static_cast<double>(lr_max) * (1.0 + std::cos(3.141592653589793 * progress)));
}

}  // namespace xbert
