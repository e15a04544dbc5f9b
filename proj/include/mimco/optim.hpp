#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

#include "mimco/errors.hpp"

namespace mimco {

// Linear warmup from 0 to `peak`, then cosine decay reaching 0 at `total`.
inline double lr_schedule(std::uint64_t step, double peak, std::uint64_t warmup, std::uint64_t total) {
  if (total <= warmup) throw ContractError(detail::concat("lr_schedule: total steps ", total, " <= warmup ", warmup));
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (step >= total) return 0.0;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.96;
  double eps = 1e-8;
  double weight_decay = 0.03;
};

// One AdamW step on a single tensor. `t` is the 1-based step count used for
// bias correction. Decay is decoupled (θ ← θ − lr·wd·θ) and only applied
// when `decay` is set.
inline void adamw_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v,
                         std::uint64_t t, double lr, const AdamWConfig& cfg, bool decay) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size())
    throw ShapeError(detail::concat("adamw_update: sizes ", param.size(), "/", grad.size(), "/", m.size(), "/",
                                    v.size()));
  if (t == 0) throw ContractError("adamw_update: step count is 1-based");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const double wd = decay ? cfg.weight_decay : 0.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    const double mhat = mi / c1, vhat = vi / c2;
    const double p = param[i];
    param[i] = static_cast<float>(p - lr * wd * p - lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

}  // namespace mimco
