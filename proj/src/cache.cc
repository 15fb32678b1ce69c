/* Copyright 2026 The moesim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "moesim/cache.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "moesim/error.h"
#include "moesim/random.h"

namespace moesim {

Policy parse_policy(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (lower == "lcp") return Policy::kLcp;
  if (lower == "lru") return Policy::kLru;
  if (lower == "lfu") return Policy::kLfu;
  if (lower == "rnd") return Policy::kRnd;
  throw ConfigError("unknown policy '" + std::string(name) + "'");
}

std::string_view policy_name(Policy p) {
  switch (p) {
    case Policy::kLcp: return "lcp";
    case Policy::kLru: return "lru";
    case Policy::kLfu: return "lfu";
    case Policy::kRnd: return "rnd";
  }
  return "?";
}

void validate_lcp_params(const LcpParams& p) {
  if (p.omega < 1) throw ConfigError("lcp.omega must be >= 1");
  if (!(p.rho > 0 && p.rho < 1)) throw ConfigError("lcp.rho must be in (0, 1)");
}

double priority(const ExpertStat& stat, const LcpParams& params) {
  return static_cast<double>(stat.mu) *
         std::pow(params.rho, static_cast<double>(stat.nu) / params.omega);
}

double LayerCacheState::lcp_priority(ExpertId e) const {
  constexpr std::int64_t kMaxMemo = 1 << 20;
  const ExpertStat& s = stats_[e];
  if (s.nu >= kMaxMemo) return priority(s, params_);
  while (static_cast<std::int64_t>(decay_.size()) <= s.nu) {
    decay_.push_back(std::pow(params_.rho, static_cast<double>(decay_.size()) /
                                               params_.omega));
  }
  return static_cast<double>(s.mu) * decay_[s.nu];
}

int cache_size_for(double budget, double split) {
  if (budget <= 0) return 0;
  return static_cast<int>(std::lround(budget / split));
}

LayerCacheState::LayerCacheState(int layer_index, int num_experts, Policy policy,
                                 LcpParams params, std::uint64_t seed)
    : layer_index_(layer_index),
      policy_(policy),
      params_(params),
      rng_(seed),
      cached_(num_experts, 0),
      stats_(num_experts),
      last_access_(num_experts, 0) {
  validate_lcp_params(params_);
}

std::vector<ExpertId> LayerCacheState::cached_experts() const {
  std::vector<ExpertId> out;
  out.reserve(size_);
  for (int e = 0; e < num_experts(); ++e) {
    if (cached_[e]) out.push_back(e);
  }
  return out;
}

void LayerCacheState::update_on_token(std::span<const ExpertId> activated) {
  for (ExpertId e : activated) {
    if (e < 0 || e >= num_experts()) {
      throw RuntimeError("layer " + std::to_string(layer_index_) + ": expert id " +
                         std::to_string(e) + " out of range");
    }
  }
  ++clock_;
  for (auto& s : stats_) ++s.nu;
  for (ExpertId e : activated) {
    stats_[e].mu += 1;
    stats_[e].nu = 0;
    last_access_[e] = clock_;
  }
}

double LayerCacheState::key(ExpertId e) const {
  switch (policy_) {
    case Policy::kLcp: return lcp_priority(e);
    case Policy::kLru: return static_cast<double>(last_access_[e]);
    case Policy::kLfu: return static_cast<double>(stats_[e].mu);
    case Policy::kRnd: return 0.0;
  }
  return 0.0;
}

std::optional<ExpertId> LayerCacheState::select_victim(
    std::span<const ExpertId> protected_set) {
  std::vector<char> shielded(num_experts(), 0);
  for (ExpertId e : protected_set) {
    if (e >= 0 && e < num_experts()) shielded[e] = 1;
  }
  std::vector<ExpertId> candidates;
  for (int e = 0; e < num_experts(); ++e) {
    if (cached_[e] && !shielded[e]) candidates.push_back(e);
  }
  if (candidates.empty()) return std::nullopt;
  if (policy_ == Policy::kRnd) return candidates[uniform_index(rng_, candidates.size())];

  ExpertId best = candidates.front();
  double best_key = key(best);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    ExpertId e = candidates[i];
    double k = key(e);
    // Candidates are visited in increasing id, so equal (key, nu) keeps the
    // smaller id.
    if (k < best_key || (k == best_key && stats_[e].nu > stats_[best].nu)) {
      best = e;
      best_key = k;
    }
  }
  return best;
}

AdmitResult LayerCacheState::admit(ExpertId expert,
                                   std::span<const ExpertId> protected_set) {
  if (expert < 0 || expert >= num_experts()) {
    throw RuntimeError("layer " + std::to_string(layer_index_) + ": expert id " +
                       std::to_string(expert) + " out of range");
  }
  AdmitResult result;
  if (cached_[expert] || capacity_ == 0) return result;
  if (size_ < capacity_) {
    cached_[expert] = 1;
    ++size_;
    result.admitted = true;
    return result;
  }
  auto victim = select_victim(protected_set);
  if (!victim) return result;
  if (gated_admission_ && policy_ != Policy::kRnd && key(expert) <= key(*victim)) {
    return result;
  }
  cached_[*victim] = 0;
  cached_[expert] = 1;
  result.admitted = true;
  result.evicted = victim;
  return result;
}

void LayerCacheState::fill_by_rank(int capacity) {
  std::vector<ExpertId> order(num_experts());
  std::iota(order.begin(), order.end(), 0);
  if (policy_ == Policy::kRnd) {
    shuffle_in_place(rng_, std::span<ExpertId>(order));
  } else {
    std::vector<double> keys(num_experts());
    for (int e = 0; e < num_experts(); ++e) keys[e] = key(e);
    std::stable_sort(order.begin(), order.end(), [&](ExpertId a, ExpertId b) {
      if (keys[a] != keys[b]) return keys[a] > keys[b];
      return stats_[a].nu < stats_[b].nu;
    });
  }
  std::fill(cached_.begin(), cached_.end(), 0);
  for (int i = 0; i < capacity; ++i) cached_[order[i]] = 1;
  size_ = capacity;
}

void LayerCacheState::configure(int capacity, double split) {
  if (capacity < 0 || capacity > num_experts()) {
    throw ConfigError("layer " + std::to_string(layer_index_) + ": cache size " +
                      std::to_string(capacity) + " outside [0, " +
                      std::to_string(num_experts()) + "]");
  }
  if (capacity > 0 && !(split > 0 && split <= 1)) {
    throw ConfigError("layer " + std::to_string(layer_index_) +
                      ": split ratio must be in (0, 1]");
  }
  capacity_ = capacity;
  split_ratio_ = capacity > 0 ? split : 0.0;
  fill_by_rank(capacity);
}

void LayerCacheState::apply_cache_config(double budget, double split) {
  if (!(budget >= 0)) {
    throw ConfigError("layer " + std::to_string(layer_index_) + ": budget must be >= 0");
  }
  if (budget == 0) {
    configure(0, 0.0);
    return;
  }
  if (!(split > 0 && split <= 1)) {
    throw ConfigError("layer " + std::to_string(layer_index_) +
                      ": split ratio must be in (0, 1]");
  }
  int c = cache_size_for(budget, split);
  if (c < 1 || c > num_experts()) {
    throw ConfigError("layer " + std::to_string(layer_index_) + ": cache size " +
                      std::to_string(c) + " outside [1, " +
                      std::to_string(num_experts()) + "]");
  }
  configure(c, split);
}

void LayerCacheState::resample() {
  std::vector<ExpertId> order(num_experts());
  std::iota(order.begin(), order.end(), 0);
  // Partial Fisher-Yates: the first `capacity_` slots form a uniform subset.
  for (int i = 0; i < capacity_; ++i) {
    std::size_t j = i + uniform_index(rng_, order.size() - i);
    std::swap(order[i], order[j]);
  }
  std::fill(cached_.begin(), cached_.end(), 0);
  for (int i = 0; i < capacity_; ++i) cached_[order[i]] = 1;
  size_ = capacity_;
}

nlohmann::json LayerCacheState::snapshot() const {
  std::vector<std::int64_t> mu, nu;
  for (const auto& s : stats_) {
    mu.push_back(s.mu);
    nu.push_back(s.nu);
  }
  return nlohmann::json{{"layer", layer_index_},
                        {"policy", policy_name(policy_)},
                        {"split_ratio", split_ratio_},
                        {"capacity", capacity_},
                        {"cached", cached_experts()},
                        {"mu", mu},
                        {"nu", nu}};
}

}  // namespace moesim
