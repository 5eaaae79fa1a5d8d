// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "climber/core/key_values.hpp"
#include "climber/data/corpus.hpp"
#include "climber/data/types.hpp"

namespace climber {

// Knobs of the batch-exposure log generator.
struct SynthConfig {
  std::int64_t num_items = 2000;
  int num_genres = 20;
  int num_languages = 5;
  std::int64_t num_users = 10000;
  int requests_per_user = 40;
  int items_per_request = 5;              // m
  double mean_request_interval = 900.0;   // seconds
  double genre_zipf = 1.1;                // genre popularity exponent
  double item_zipf = 1.0;                 // within-genre item popularity exponent
  double new_release_fraction = 0.3;
  int favorite_genres = 3;
  double background_interest = 0.1;       // mass spread uniformly over all genres
  double burst_strength = 0.8;            // P(item drawn from the request's burst genre)
  double burst_persistence = 0.3;         // P(next request keeps the burst genre)
  double drift_rate = 0.02;               // P(one favorite genre is replaced) per request
  std::int64_t base_timestamp = 1'700'000'000;
  std::uint64_t seed = 7;

  KeyValues to_key_values() const;  // data.* keys
  static SynthConfig from_key_values(const KeyValues& kv);
};

// Latent per-user state. Never written to disk; it exists so tests can
// compare model behavior against ground truth.
struct UserProfile {
  std::vector<double> interest;   // per genre, nonnegative, sums to 1
  std::vector<int> favorites;
  std::vector<double> favorite_weight;
  double drift_rate = 0.0;
  int burst = -1;                 // burst genre of the current request
};

// Zipf(exponent) weights over ranks 0..n-1, normalized.
std::vector<double> zipf_weights(int n, double exponent);

std::vector<Item> generate_corpus(std::int64_t num_items, int num_genres, int num_languages,
                                  std::uint64_t seed, double genre_zipf = 1.1,
                                  double new_release_fraction = 0.3);

// Corpus with per-genre popularity tables for sampling.
class Catalog {
 public:
  Catalog(const Corpus& corpus, int num_genres, double item_zipf);

  const Corpus& corpus() const { return *corpus_; }
  int num_genres() const { return static_cast<int>(by_genre_.size()); }
  bool genre_empty(int genre) const { return by_genre_[static_cast<std::size_t>(genre)].empty(); }
  // Popularity-weighted item draw from `genre`; the genre must be nonempty.
  std::int64_t sample_item(int genre, std::mt19937_64& rng) const;

 private:
  const Corpus* corpus_;
  std::vector<std::vector<std::int64_t>> by_genre_;
  mutable std::vector<std::discrete_distribution<std::size_t>> popularity_;
};

UserProfile make_profile(const SynthConfig& config, std::mt19937_64& rng);

// Exposure log of one user: per request a burst genre is drawn from the
// profile (or kept, with burst_persistence), m distinct items are exposed in an
// arbitrary order sharing one timestamp, then time advances by an exponential
// interval. The profile drifts between requests.
std::vector<InteractionEvent> generate_user_log(const Catalog& catalog, const SynthConfig& config,
                                                UserProfile& profile, std::int64_t user_id,
                                                int num_requests, int items_per_request,
                                                double mean_request_interval, std::uint64_t seed);

struct Dataset {
  Corpus corpus;
  std::vector<UserLog> users;
};

// Corpus plus one log per user; user u is generated from derive_seed(seed, u).
Dataset generate_dataset(const SynthConfig& config);

// Same log with the order inside every request permuted.
std::vector<UserLog> shuffle_within_requests(const std::vector<UserLog>& users, std::uint64_t seed);

}  // namespace climber
