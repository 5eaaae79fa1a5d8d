// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "climber/core/autodiff.hpp"

namespace climber {

struct GradCheckOptions {
  Scalar step = 1e-5;
  // Coordinates checked per call; every coordinate when the total is smaller.
  std::size_t max_coordinates = 200;
  std::uint64_t seed = 0;
  // Five-point central stencil. Needed on deep compositions where O(h^2)
  // truncation and roundoff both swamp gradients near 1e-7.
  bool fourth_order = false;
};

struct GradCheckResult {
  Scalar max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // "name[row,col]" of the worst coordinate
};

// |a - b| / max(|a|, |b|, 1e-8)
template <typename T>
T relative_error(T analytic, T numeric) {
  const T denom = std::max({std::abs(analytic), std::abs(numeric), T(1e-8)});
  return std::abs(analytic - numeric) / denom;
}

// Compares reverse-mode gradients of `loss` w.r.t. `params` with central
// differences. `loss` builds a scalar on the tape it is handed and must be
// deterministic.
inline GradCheckResult grad_check(const std::function<Var(Tape&)>& loss,
                                  std::span<Parameter* const> params,
                                  const GradCheckOptions& options = {}) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  std::vector<std::pair<std::size_t, Index>> coords;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (Index c = 0; c < params[i]->value.size(); ++c) coords.emplace_back(i, c);
  if (coords.size() > options.max_coordinates) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coordinates);
  }

  auto evaluate = [&] {
    Tape tape(false);
    return loss(tape).value()(0, 0);
  };

  GradCheckResult result;
  for (auto [pi, c] : coords) {
    Parameter& p = *params[pi];
    Scalar& x = p.value.data()[c];
    const Scalar saved = x;
    auto at = [&](Scalar offset) {
      x = saved + offset;
      return evaluate();
    };
    const Scalar h = options.step;
    const Scalar numeric = options.fourth_order
                               ? (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h)
                               : (at(h) - at(-h)) / (2.0 * h);
    x = saved;
    const Scalar err = relative_error(p.grad.data()[c], numeric);
    ++result.coordinates;
    if (err > result.max_rel_error || result.worst.empty()) {
      result.max_rel_error = std::max(err, result.max_rel_error);
      if (err >= result.max_rel_error)
        result.worst = p.name + "[" + std::to_string(c / p.value.cols()) + "," +
                       std::to_string(c % p.value.cols()) + "]";
    }
  }
  return result;
}

}  // namespace climber
