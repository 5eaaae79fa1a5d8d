// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "climber/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <type_traits>

#include "climber/core/tensor.hpp"

namespace climber {

std::vector<double> zipf_weights(int n, double exponent) {
  std::vector<double> w(static_cast<std::size_t>(std::max(n, 0)));
  double total = 0.0;
  for (int r = 0; r < n; ++r) {
    w[static_cast<std::size_t>(r)] = 1.0 / std::pow(static_cast<double>(r + 1), exponent);
    total += w[static_cast<std::size_t>(r)];
  }
  for (double& x : w) x /= total;
  return w;
}

std::vector<Item> generate_corpus(std::int64_t num_items, int num_genres, int num_languages,
                                  std::uint64_t seed, double genre_zipf,
                                  double new_release_fraction) {
  if (num_genres < 1 || num_languages < 1)
    throw ConfigError("generate_corpus: vocabulary sizes must be >= 1");
  if (num_items < 0) throw ConfigError("generate_corpus: num_items must be >= 0");
  std::mt19937_64 rng(derive_seed(seed, 0xc0ffee));
  const auto genre_w = zipf_weights(num_genres, genre_zipf);
  const auto lang_w = zipf_weights(num_languages, genre_zipf);
  std::discrete_distribution<int> genre_dist(genre_w.begin(), genre_w.end());
  std::discrete_distribution<int> lang_dist(lang_w.begin(), lang_w.end());
  std::bernoulli_distribution is_new(new_release_fraction);
  std::vector<Item> items;
  items.reserve(static_cast<std::size_t>(num_items));
  for (std::int64_t i = 0; i < num_items; ++i) {
    Item it;
    it.item_id = i;
    it.genre = genre_dist(rng);
    it.language = lang_dist(rng);
    it.release = is_new(rng) ? ReleaseBucket::kNew : ReleaseBucket::kClassic;
    items.push_back(it);
  }
  return items;
}

Catalog::Catalog(const Corpus& corpus, int num_genres, double item_zipf)
    : corpus_(&corpus), by_genre_(static_cast<std::size_t>(num_genres)) {
  for (const Item& it : corpus.items()) {
    if (it.genre >= num_genres) throw DataError("catalog: genre outside vocabulary");
    by_genre_[static_cast<std::size_t>(it.genre)].push_back(it.item_id);
  }
  popularity_.reserve(by_genre_.size());
  for (const auto& ids : by_genre_) {
    const auto w = zipf_weights(static_cast<int>(ids.size()), item_zipf);
    popularity_.emplace_back(w.begin(), w.end());
  }
}

std::int64_t Catalog::sample_item(int genre, std::mt19937_64& rng) const {
  const auto g = static_cast<std::size_t>(genre);
  return by_genre_[g][popularity_[g](rng)];
}

UserProfile make_profile(const SynthConfig& config, std::mt19937_64& rng) {
  UserProfile p;
  const int g = config.num_genres;
  const int favorites = std::min(config.favorite_genres, g);
  p.drift_rate = config.drift_rate;
  const auto pop = zipf_weights(g, config.genre_zipf);
  std::discrete_distribution<int> genre_dist(pop.begin(), pop.end());
  while (static_cast<int>(p.favorites.size()) < favorites) {
    const int c = genre_dist(rng);
    if (std::find(p.favorites.begin(), p.favorites.end(), c) == p.favorites.end())
      p.favorites.push_back(c);
  }
  // Flat Dirichlet over the favorites.
  std::exponential_distribution<double> unit_exp(1.0);
  double total = 0.0;
  for (int i = 0; i < favorites; ++i) {
    p.favorite_weight.push_back(unit_exp(rng));
    total += p.favorite_weight.back();
  }
  const double fav_mass = favorites > 0 ? 1.0 - config.background_interest : 0.0;
  for (double& w : p.favorite_weight) w = w / total * fav_mass;
  p.interest.assign(static_cast<std::size_t>(g), (1.0 - fav_mass) / g);
  for (int i = 0; i < favorites; ++i)
    p.interest[static_cast<std::size_t>(p.favorites[static_cast<std::size_t>(i)])] +=
        p.favorite_weight[static_cast<std::size_t>(i)];
  return p;
}

namespace {

void drift(UserProfile& p, const SynthConfig& config, std::mt19937_64& rng) {
  if (p.favorites.empty() || static_cast<int>(p.favorites.size()) >= config.num_genres) return;
  std::bernoulli_distribution happens(p.drift_rate);
  if (!happens(rng)) return;
  std::uniform_int_distribution<std::size_t> pick(0, p.favorites.size() - 1);
  const std::size_t f = pick(rng);
  const auto pop = zipf_weights(config.num_genres, config.genre_zipf);
  std::discrete_distribution<int> genre_dist(pop.begin(), pop.end());
  int g = genre_dist(rng);
  while (std::find(p.favorites.begin(), p.favorites.end(), g) != p.favorites.end()) g = genre_dist(rng);
  const double w = p.favorite_weight[f];
  p.interest[static_cast<std::size_t>(p.favorites[f])] -= w;
  p.interest[static_cast<std::size_t>(g)] += w;
  p.favorites[f] = g;
}

int sample_genre(const std::vector<double>& interest, std::mt19937_64& rng) {
  std::discrete_distribution<int> d(interest.begin(), interest.end());
  return d(rng);
}

}  // namespace

std::vector<InteractionEvent> generate_user_log(const Catalog& catalog, const SynthConfig& config,
                                                UserProfile& profile, std::int64_t user_id,
                                                int num_requests, int items_per_request,
                                                double mean_request_interval, std::uint64_t seed) {
  if (items_per_request < 1) throw ConfigError("generate_user_log: items_per_request must be >= 1");
  if (!(mean_request_interval > 0.0))
    throw ConfigError("generate_user_log: mean_request_interval must be > 0");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> start_offset(0, 86'399);
  std::exponential_distribution<double> gap(1.0 / mean_request_interval);
  std::bernoulli_distribution keep_burst(config.burst_persistence);
  std::bernoulli_distribution from_burst(config.burst_strength);

  std::vector<InteractionEvent> events;
  events.reserve(static_cast<std::size_t>(num_requests) * static_cast<std::size_t>(items_per_request));
  std::int64_t ts = config.base_timestamp + start_offset(rng);
  auto sample_nonempty = [&](int genre) {
    // Fall back to the profile when the corpus has no items in `genre`.
    for (int tries = 0; catalog.genre_empty(genre) && tries < 64; ++tries)
      genre = sample_genre(profile.interest, rng);
    if (catalog.genre_empty(genre)) {
      for (genre = 0; genre < catalog.num_genres() && catalog.genre_empty(genre); ++genre) {
      }
    }
    return catalog.sample_item(genre, rng);
  };

  std::vector<std::int64_t> request_items;
  for (int r = 0; r < num_requests; ++r) {
    if (r > 0) drift(profile, config, rng);
    if (profile.burst < 0 || !keep_burst(rng)) profile.burst = sample_genre(profile.interest, rng);
    request_items.clear();
    for (int slot = 0; slot < items_per_request; ++slot) {
      std::int64_t id = -1;
      for (int tries = 0; tries < 16; ++tries) {
        const int genre = from_burst(rng) ? profile.burst : sample_genre(profile.interest, rng);
        id = sample_nonempty(genre);
        if (std::find(request_items.begin(), request_items.end(), id) == request_items.end()) break;
      }
      request_items.push_back(id);
    }
    std::shuffle(request_items.begin(), request_items.end(), rng);
    const std::int64_t request_id = user_id * num_requests + r;
    for (int i = 0; i < items_per_request; ++i)
      events.push_back({user_id, request_items[static_cast<std::size_t>(i)], ts, request_id, i});
    ts += std::llround(gap(rng));
  }
  return events;
}

Dataset generate_dataset(const SynthConfig& config) {
  if (config.num_users < 0) throw ConfigError("num_users must be >= 0");
  if (config.items_per_request < 1) throw ConfigError("items_per_request must be >= 1");
  Dataset ds;
  ds.corpus = Corpus(generate_corpus(config.num_items, config.num_genres, config.num_languages,
                                     config.seed, config.genre_zipf, config.new_release_fraction),
                     config.num_genres, config.num_languages);
  if (ds.corpus.empty() && config.num_users > 0)
    throw ConfigError("cannot generate user logs over an empty corpus");
  if (config.num_users == 0) return ds;
  const Catalog catalog(ds.corpus, config.num_genres, config.item_zipf);
  ds.users.reserve(static_cast<std::size_t>(config.num_users));
  for (std::int64_t u = 0; u < config.num_users; ++u) {
    const std::uint64_t user_seed = derive_seed(config.seed, static_cast<std::uint64_t>(u));
    std::mt19937_64 profile_rng(derive_seed(user_seed, 1));
    UserProfile profile = make_profile(config, profile_rng);
    ds.users.push_back({u, generate_user_log(catalog, config, profile, u, config.requests_per_user,
                                             config.items_per_request,
                                             config.mean_request_interval, user_seed)});
  }
  return ds;
}

std::vector<UserLog> shuffle_within_requests(const std::vector<UserLog>& users, std::uint64_t seed) {
  std::vector<UserLog> out = users;
  for (UserLog& u : out) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(u.user_id)));
    auto& ev = u.events;
    for (std::size_t b = 0; b < ev.size();) {
      std::size_t e = b;
      while (e < ev.size() && ev[e].request_id == ev[b].request_id) ++e;
      std::vector<std::int64_t> ids;
      for (std::size_t i = b; i < e; ++i) ids.push_back(ev[i].item_id);
      std::shuffle(ids.begin(), ids.end(), rng);
      for (std::size_t i = b; i < e; ++i) ev[i].item_id = ids[i - b];
      b = e;
    }
  }
  return out;
}

KeyValues SynthConfig::to_key_values() const {
  KeyValues kv;
  kv.set("data.num_items", std::to_string(num_items));
  kv.set("data.num_genres", std::to_string(num_genres));
  kv.set("data.num_languages", std::to_string(num_languages));
  kv.set("data.num_users", std::to_string(num_users));
  kv.set("data.requests_per_user", std::to_string(requests_per_user));
  kv.set("data.items_per_request", std::to_string(items_per_request));
  kv.set("data.mean_request_interval", format_double(mean_request_interval));
  kv.set("data.genre_zipf", format_double(genre_zipf));
  kv.set("data.item_zipf", format_double(item_zipf));
  kv.set("data.new_release_fraction", format_double(new_release_fraction));
  kv.set("data.favorite_genres", std::to_string(favorite_genres));
  kv.set("data.background_interest", format_double(background_interest));
  kv.set("data.burst_strength", format_double(burst_strength));
  kv.set("data.burst_persistence", format_double(burst_persistence));
  kv.set("data.drift_rate", format_double(drift_rate));
  kv.set("data.base_timestamp", std::to_string(base_timestamp));
  kv.set("data.seed", std::to_string(seed));
  return kv;
}

SynthConfig SynthConfig::from_key_values(const KeyValues& kv) {
  SynthConfig c;
  auto i64 = [&](const char* k, auto& field) {
    if (kv.contains(k)) field = static_cast<std::remove_reference_t<decltype(field)>>(kv.get_int(k));
  };
  auto dbl = [&](const char* k, double& field) {
    if (kv.contains(k)) field = kv.get_double(k);
  };
  i64("data.num_items", c.num_items);
  i64("data.num_genres", c.num_genres);
  i64("data.num_languages", c.num_languages);
  i64("data.num_users", c.num_users);
  i64("data.requests_per_user", c.requests_per_user);
  i64("data.items_per_request", c.items_per_request);
  dbl("data.mean_request_interval", c.mean_request_interval);
  dbl("data.genre_zipf", c.genre_zipf);
  dbl("data.item_zipf", c.item_zipf);
  dbl("data.new_release_fraction", c.new_release_fraction);
  i64("data.favorite_genres", c.favorite_genres);
  dbl("data.background_interest", c.background_interest);
  dbl("data.burst_strength", c.burst_strength);
  dbl("data.burst_persistence", c.burst_persistence);
  dbl("data.drift_rate", c.drift_rate);
  i64("data.base_timestamp", c.base_timestamp);
  i64("data.seed", c.seed);
  return c;
}

}  // namespace climber
