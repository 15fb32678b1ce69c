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

#ifndef MOESIM_ENGINE_H_
#define MOESIM_ENGINE_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "moesim/cache.h"
#include "moesim/configurator.h"
#include "moesim/specs.h"
#include "moesim/stats.h"
#include "moesim/trace.h"

namespace moesim {

// One pending transfer into the prefetch buffer.
struct PrefetchEntry {
  ExpertId expert = 0;
  double fraction = 0;  // 1 - split for cached experts, 1 otherwise
  Millis cost = 0;

  bool operator==(const PrefetchEntry&) const = default;
};

class PrefetchBuffer {
 public:
  PrefetchBuffer() = default;
  explicit PrefetchBuffer(std::vector<PrefetchEntry> entries)
      : entries_(std::move(entries)) {}

  const std::vector<PrefetchEntry>& entries() const { return entries_; }
  bool contains(ExpertId e) const;
  double fraction(ExpertId e) const;
  double total_fraction() const;
  Millis total_cost() const;

 private:
  std::vector<PrefetchEntry> entries_;
};

// Walks `ranking` in order and fetches what is missing of each expert while
// the accumulated cost fits in `window` and the fractions fit in
// `buffer_experts`. Stops at the first expert that does not fit. Experts
// fully resident in the cache are skipped.
PrefetchBuffer plan_prefetch(std::span<const ExpertId> ranking,
                             const LayerCacheState& cache, Millis window,
                             const TimingProfile& timing, int buffer_experts);

// Activated experts split by where their weights are when the layer runs.
struct ActivationClass {
  int alpha = 0;  // fully resident
  int beta = 0;   // only the top segment resident
  int gamma = 0;  // nothing resident
};

ActivationClass classify_activation(std::span<const ExpertId> activated,
                                    const LayerCacheState& cache,
                                    const PrefetchBuffer& buffer);

struct LayerLatency {
  Millis hide = 0;     // compute available to overlap on-demand loads
  Millis miss = 0;     // on-demand load time
  Millis exposed = 0;  // max(0, miss - hide)
};

LayerLatency layer_latency(const ActivationClass& c, double split,
                           const TimingProfile& timing);

// Prefetch window for the next layer: MoE compute not spent hiding loads,
// plus the next layer's attention.
Millis next_window(Millis hide, Millis miss, const TimingProfile& timing);
// Window for a token's first layer: LM head plus first attention.
Millis first_window(const TimingProfile& timing);

enum class Mode { kMoepic, kCacheOnly, kPrefetchOnly, kFullCachePrefetch, kFixedSplit };

Mode parse_mode(std::string_view name);
std::string_view mode_name(Mode m);
std::vector<std::string> mode_names();

struct RunOptions {
  Mode mode = Mode::kMoepic;
  Policy policy = Policy::kLcp;
  LcpParams lcp;
  double granularity = 0.01;
  std::int64_t reconfig_interval = 5000;
  // Split ratio for moepic's first config and for fixed_split.
  double split = 0.5;
  // Per-layer budget; unset takes the device budget divided evenly.
  std::optional<double> layer_budget;
  // Mode overrides. Unset keeps the mode's default.
  std::optional<bool> configurator;
  std::optional<bool> prefetch;
  std::optional<double> split_override;
  double prefill_scale = 1.0;
  // When set, the first decode token without a preceding prompt starts with
  // an empty prefetch buffer instead of using its predicted ranking.
  bool cold_start = false;
  bool gated_admission = false;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const RunOptions& o);

// Per-mode settings after applying overrides.
struct ResolvedRun {
  double layer_budget = 0;
  double split = 0;
  bool prefetch = false;
  bool configurator = false;
};

ResolvedRun resolve_run(const RunOptions& o, const ModelSpec& model,
                        const DeviceSpec& device);

struct LayerOutcome {
  ActivationClass cls;
  LayerLatency latency;
  PrefetchBuffer buffer;  // buffer used by this layer
  int cache_hits = 0;     // activated experts present in the cache
  int predicted_hits = 0; // activated experts in the predicted top-K
  double on_demand_units = 0;
};

struct TokenOutcome {
  std::int64_t token = 0;
  Millis latency = 0;
  Millis compute_floor = 0;
  std::vector<LayerOutcome> layers;
};

struct LayerSummary {
  Millis mean_exposed = 0;
  double hit_rate = 0;
  double topk_accuracy = 0;
  LayerConfig final_config;
};

struct SimReport {
  int schema_version = 1;
  std::string mode;
  std::string policy;
  Millis ttft = 0;
  Millis tpot_mean = 0;
  Millis tpot_p50 = 0;
  Millis tpot_p95 = 0;
  Millis tpot_p99 = 0;
  Millis compute_floor = 0;  // per decode token
  std::int64_t prompt_tokens = 0;
  std::int64_t decode_tokens = 0;
  double hit_rate = 0;
  double topk_accuracy = 0;
  double on_demand_loads = 0;  // expert units
  double prefetch_loads = 0;   // expert units
  int reconfigurations = 0;
  bool load_dominated = false;
  TimingProfile timing;
  std::vector<LayerSummary> layers;
  std::vector<Millis> token_latencies;  // decode tokens in order
  nlohmann::json config;                // resolved run configuration
};

class Simulator;

struct RunHooks {
  std::function<void(const TokenOutcome&)> on_token;
  std::function<void(std::int64_t decoded, const AllocationResult&)> on_reconfigure;
  // Called once with the final state, e.g. to dump caches or statistics.
  std::function<void(const Simulator&)> on_finish;
};

// Simulation state shared by prefill and decode.
class Simulator {
 public:
  Simulator(const ModelSpec& model, const DeviceSpec& device,
            const RunOptions& options);

  const ResolvedRun& resolved() const { return resolved_; }
  const TimingProfile& timing() const { return timing_; }
  const LayerCacheState& cache(int layer) const { return caches_[layer]; }
  const StatsAccumulator& stats() const { return stats_; }
  CacheConfig current_config() const;

  // Installs a configuration and refills every layer by cache priority.
  void apply(const CacheConfig& config);

  // Prompt tokens [begin, end) processed in one pass. Returns TTFT.
  Millis prefill(const ActivationTrace& trace, std::int64_t begin, std::int64_t end);
  TokenOutcome decode(const ActivationTrace& trace, std::int64_t token, bool cold);

  // Recomputes the cache configuration from the statistics and applies it.
  AllocationResult reconfigure();

  nlohmann::json cache_snapshot() const;

 private:
  void observe_and_admit(int layer, const LayerView& view);

  ModelSpec model_;
  DeviceSpec device_;
  RunOptions options_;
  ResolvedRun resolved_;
  TimingProfile timing_;
  std::vector<LayerCacheState> caches_;
  StatsAccumulator stats_;
};

// Replays `trace` end to end.
SimReport run(const ActivationTrace& trace, const ModelSpec& model,
              const DeviceSpec& device, const RunOptions& options,
              const RunHooks& hooks = {});

// Nearest-rank percentile of an unsorted sample; `pct` in (0, 100].
double nearest_rank(std::vector<double> values, double pct);

}  // namespace moesim

#endif  // MOESIM_ENGINE_H_
