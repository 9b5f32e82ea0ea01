#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vqmae/nn.hpp"
#include "vqmae/tensor.hpp"

namespace vqmae {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.05;
  double eps = 1e-8;
};

// Decoupled-weight-decay Adam with bias correction. A step with any
// non-finite gradient is skipped entirely and counted. Frozen parameters
// (requires_grad false) are held.
class AdamW {
 public:
  AdamWConfig cfg;
  std::int64_t step_count = 0;
  std::int64_t skipped_steps = 0;

  AdamW() = default;
  explicit AdamW(const AdamWConfig& c) : cfg(c) {}

  void bind(const ParamMap& params) {
    m_.clear();
    v_.clear();
    for (auto& [name, t] : params.items) {
      m_.emplace_back(static_cast<size_t>(t.size()), 0.0);
      v_.emplace_back(static_cast<size_t>(t.size()), 0.0);
    }
    bound_size_ = params.items.size();
  }

  bool bound() const { return bound_size_ > 0; }

  // returns false when the step was skipped because of non-finite gradients
  bool step(ParamMap& params, double lr) {
    if (params.items.size() != bound_size_)
      throw TensorError("adamw: parameter map changed since bind()");
    for (auto& [name, cp] : params.items) {
      Tensor t = cp;
      if (!t.requires_grad()) continue;
      if (!all_finite(t.grad())) {
        ++skipped_steps;
        return false;
      }
    }
    ++step_count;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
    for (size_t pi = 0; pi < params.items.size(); ++pi) {
      Tensor t = params.items[pi].second;
      if (!t.requires_grad()) continue;
      auto& m = m_[pi];
      auto& v = v_[pi];
      auto& val = t.values();
      auto& g = t.grad();
      for (size_t i = 0; i < val.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        val[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * val[i]);
      }
    }
    return true;
  }

  // serialized moment state, in bind order
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }

 private:
  std::vector<std::vector<double>> m_, v_;
  size_t bound_size_ = 0;
};

// Warmup + cosine learning-rate schedule with the linear batch scaling rule:
// peak = base_lr * batch_size / 256.
struct ScheduleConfig {
  double base_lr = 1e-3;
  std::int64_t batch_size = 512;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;
  double min_lr = 0.0;

  double peak_lr() const {
    return base_lr * static_cast<double>(batch_size) / 256.0;
  }
};

inline double lr_at(std::int64_t step, const ScheduleConfig& cfg) {
  if (step < 0) throw TensorError("lr_at: negative step");
  const double peak = cfg.peak_lr();
  if (step < cfg.warmup_steps)
    return peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  if (step >= cfg.total_steps) return cfg.min_lr;
  const double phase = static_cast<double>(step - cfg.warmup_steps) /
                       static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return cfg.min_lr + 0.5 * (peak - cfg.min_lr) * (1.0 + std::cos(M_PI * phase));
}

}  // namespace vqmae
