// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

// Shared fixtures for the unit tests.

#pragma once

#include <random>
#include <vector>

#include "climber/core/autodiff.hpp"
#include "climber/data/synth.hpp"

namespace climber::testing {

inline Tensor random_tensor(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(rows, cols);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = n(rng);
  return t;
}

// sum(x * w) for a fixed random w; turns any tensor op into a scalar loss
// whose gradient exercises every output coordinate.
inline Var project(const Var& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(matmul(x, x.tape().constant(random_tensor(x.cols(), 1, rng))));
}

inline SynthConfig small_synth(std::int64_t users = 60, std::uint64_t seed = 3) {
  SynthConfig c;
  c.num_items = 300;
  c.num_genres = 6;
  c.num_languages = 3;
  c.num_users = users;
  c.requests_per_user = 10;
  c.seed = seed;
  return c;
}

}  // namespace climber::testing
