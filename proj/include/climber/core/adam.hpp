// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "climber/core/autodiff.hpp"

namespace climber {

struct AdamConfig {
  Scalar lr = 5e-4;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar epsilon = 1e-8;
  Scalar weight_decay = 1e-6;
};

// Adam with bias correction and decoupled weight decay:
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
// Moments are keyed by parameter name and created lazily at zero.
class Adam {
 public:
  struct Moments {
    Tensor first;
    Tensor second;
  };

  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Applies one update to every parameter in `params` using Parameter::grad.
  // A non-finite gradient anywhere aborts the whole step before any parameter
  // changes; the exception names the offending parameter.
  void step(std::span<Parameter* const> params);

  std::int64_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  void set_lr(Scalar lr) { config_.lr = lr; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  AdamConfig config_;
  std::int64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace climber
