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

#ifndef MOESIM_CACHE_H_
#define MOESIM_CACHE_H_

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "moesim/specs.h"

namespace moesim {

enum class Policy { kLcp, kLru, kLfu, kRnd };

Policy parse_policy(std::string_view name);
std::string_view policy_name(Policy p);

struct LcpParams {
  int omega = 128;
  double rho = 0.25;

  bool operator==(const LcpParams&) const = default;
};

void validate_lcp_params(const LcpParams& p);

struct ExpertStat {
  std::int64_t mu = 0;  // accumulated activations
  std::int64_t nu = 0;  // tokens since the last activation

  bool operator==(const ExpertStat&) const = default;
};

// mu * rho^(nu / omega).
double priority(const ExpertStat& stat, const LcpParams& params);

struct AdmitResult {
  bool admitted = false;
  std::optional<ExpertId> evicted;
};

// Split-expert cache of one layer. The top segment (fraction `split_ratio`)
// of every cached expert is resident; everything else lives in host memory.
//
// With Policy::kRnd the resident set is redrawn uniformly at random on every
// token (see `resample`), so its hit rate does not depend on the trace.
class LayerCacheState {
 public:
  LayerCacheState(int layer_index, int num_experts, Policy policy,
                  LcpParams params, std::uint64_t seed);

  int layer_index() const { return layer_index_; }
  int num_experts() const { return static_cast<int>(stats_.size()); }
  Policy policy() const { return policy_; }
  const LcpParams& lcp_params() const { return params_; }

  double split_ratio() const { return split_ratio_; }
  int capacity() const { return capacity_; }
  int size() const { return size_; }
  bool is_cached(ExpertId e) const { return cached_[e] != 0; }
  // Resident fraction of `e`: split_ratio if cached, else 0.
  double residency(ExpertId e) const { return cached_[e] ? split_ratio_ : 0.0; }
  std::vector<ExpertId> cached_experts() const;

  const ExpertStat& stat(ExpertId e) const { return stats_[e]; }
  std::int64_t last_access(ExpertId e) const { return last_access_[e]; }
  double lcp_priority(ExpertId e) const;

  // Frequency and recency bookkeeping for one routed token. Throws
  // RuntimeError on out-of-range ids.
  void update_on_token(std::span<const ExpertId> activated);

  // Lowest-key cached expert outside `protected_set`; ties go to the larger
  // nu, then the smaller id.
  std::optional<ExpertId> select_victim(std::span<const ExpertId> protected_set);

  // Inserts `expert` (which must not be cached), evicting a victim chosen
  // outside `protected_set` when the cache is full. With no eligible victim
  // the cache is left unchanged.
  AdmitResult admit(ExpertId expert, std::span<const ExpertId> protected_set);

  // Priority-gated admission: a full cache only admits an expert whose
  // policy key beats the victim's. Off by default.
  void set_gated_admission(bool on) { gated_admission_ = on; }

  // Re-splits the layer: keeps the round(budget / split) highest-priority
  // experts at the new split ratio. A zero budget empties the layer
  // (prefetch-only). Throws ConfigError for a cache size outside [1, N].
  void apply_cache_config(double budget, double split);
  // Same, with an explicit cache size.
  void configure(int capacity, double split);

  // Redraws a uniformly random resident set of the current capacity.
  void resample();

  std::int64_t tokens_seen() const { return clock_; }

  nlohmann::json snapshot() const;

 private:
  // Eviction key of `e`; lower keys are evicted first.
  double key(ExpertId e) const;
  void fill_by_rank(int capacity);

  int layer_index_;
  Policy policy_;
  LcpParams params_;
  std::mt19937_64 rng_;
  bool gated_admission_ = false;

  double split_ratio_ = 1.0;
  int capacity_ = 0;
  int size_ = 0;
  std::vector<char> cached_;
  std::vector<ExpertStat> stats_;
  std::vector<std::int64_t> last_access_;
  std::int64_t clock_ = 0;
  // rho^(nu / omega) memoized by nu.
  mutable std::vector<double> decay_;
};

// round(budget / split), the cache size a (budget, split) pair implies.
int cache_size_for(double budget, double split);

}  // namespace moesim

#endif  // MOESIM_CACHE_H_
