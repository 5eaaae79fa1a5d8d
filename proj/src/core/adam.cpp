// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "climber/core/adam.hpp"

#include <cmath>

namespace climber {

void Adam::step(std::span<Parameter* const> params) {
  for (const Parameter* p : params) {
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols())
      throw ConfigError("adam: gradient shape " + shape_string(p->grad) + " != parameter shape " +
                        shape_string(p->value) + " for " + p->name);
    if (!p->grad.allFinite()) throw NumericalError("adam: non-finite gradient in parameter " + p->name);
  }
  ++steps_;
  const Scalar t = static_cast<Scalar>(steps_);
  const Scalar c1 = 1.0 - std::pow(config_.beta1, t);
  const Scalar c2 = 1.0 - std::pow(config_.beta2, t);
  for (Parameter* p : params) {
    auto [it, inserted] = moments_.try_emplace(p->name);
    Moments& m = it->second;
    if (inserted) {
      m.first = Tensor::Zero(p->value.rows(), p->value.cols());
      m.second = Tensor::Zero(p->value.rows(), p->value.cols());
    }
    m.first = config_.beta1 * m.first + (1.0 - config_.beta1) * p->grad;
    m.second.array() = config_.beta2 * m.second.array() + (1.0 - config_.beta2) * p->grad.array().square();
    p->value.array() -=
        config_.lr * ((m.first.array() / c1) / ((m.second.array() / c2).sqrt() + config_.epsilon) +
                      config_.weight_decay * p->value.array());
  }
}

}  // namespace climber
