#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "augsub/errors.hpp"
#include "augsub/kernels.hpp"
#include "augsub/tensor.hpp"

namespace augsub {

// Linear warmup to lr_max at step == warmup_steps, then cosine decay to
// lr_min at step == total_steps. Steps are 1-based inside the trainer, so
// the first update uses lr_max/warmup_steps, not zero.
inline double cosine_lr(std::int64_t step, std::int64_t total_steps,
                        std::int64_t warmup_steps, double lr_max,
                        double lr_min) {
  if (total_steps < 1 || warmup_steps < 0 || warmup_steps >= total_steps) {
    throw ConfigError("lr schedule needs 0 <= warmup < total steps; got " +
                      std::to_string(warmup_steps) + " / " +
                      std::to_string(total_steps));
  }
  if (lr_min > lr_max || lr_max < 0.0) {
    throw ConfigError("lr schedule needs 0 <= lr_min <= lr_max");
  }
  if (step < warmup_steps) {
    return lr_max * static_cast<double>(step) /
           static_cast<double>(warmup_steps);
  }
  const double progress =
      std::min(1.0, static_cast<double>(step - warmup_steps) /
                        static_cast<double>(total_steps - warmup_steps));
  return lr_min +
         0.5 * (lr_max - lr_min) * (1.0 + std::cos(3.14159265358979323846 *
                                                   progress));
}

// Decoupled-decay AdamW over a fixed parameter list. Moments sit in flat f32
// buffers, one per tensor, updated through the dispatched elementwise kernel
// so updates are bit-identical across backends and runs.
class AdamW {
 public:
  AdamW(const std::vector<Tensor<float>>& params, double beta1, double beta2,
        double eps, double weight_decay)
      : b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw ConfigError("adam betas must be in [0,1)");
    }
    if (eps <= 0.0) {
      throw ConfigError("adam eps must be positive");
    }
    if (weight_decay < 0.0) {
      throw ConfigError("weight decay must be non-negative");
    }
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Tensor<float>& p : params) {
      m_.emplace_back(p.val().size(), 0.0f);
      v_.emplace_back(p.val().size(), 0.0f);
    }
  }

  std::int64_t steps_taken() const { return t_; }

  // One update over all tensors, in registration order. Params whose grad
  // was never touched this step still decay (their gradient is zero).
  void step(std::vector<Tensor<float>>& params, double lr) {
    if (params.size() != m_.size()) {
      throw ContractError("AdamW::step param list changed size");
    }
    ++t_;
    const float bc1 = static_cast<float>(1.0 - std::pow(b1_, t_));
    const float bc2 = static_cast<float>(1.0 - std::pow(b2_, t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<float>& p = params[i];
      p->ensure_grad();
      kernels::adamw_update(p.val().data(), m_[i].data(), v_[i].data(),
                            p->grad.data(),
                            static_cast<std::int64_t>(p.val().size()),
                            static_cast<float>(lr), static_cast<float>(b1_),
                            static_cast<float>(b2_), static_cast<float>(eps_),
                            static_cast<float>(wd_), bc1, bc2);
    }
  }

 private:
  double b1_, b2_, eps_, wd_;
  std::int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace augsub
