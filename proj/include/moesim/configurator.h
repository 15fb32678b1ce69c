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

#ifndef MOESIM_CONFIGURATOR_H_
#define MOESIM_CONFIGURATOR_H_

#include <span>
#include <vector>

#include "json.hpp"
#include "moesim/specs.h"
#include "moesim/stats.h"

namespace moesim {

// Cache layout of one layer. A zero budget is a prefetch-only layer and
// carries cache_size = 0 and split = 0.
struct LayerConfig {
  double budget = 0;  // full-expert units
  int cache_size = 0;
  double split = 0;

  bool operator==(const LayerConfig&) const = default;
};

struct CacheConfig {
  std::vector<LayerConfig> layers;

  double total_budget() const;
  bool operator==(const CacheConfig&) const = default;
};

// Throws ConfigError when the config overspends `vram_budget`, or a cached
// layer has a split outside (0, 1], a size outside [1, N], or
// size * split != budget.
void validate_cache_config(const CacheConfig& config, int experts,
                           double vram_budget);

nlohmann::json to_json(const CacheConfig& config);
CacheConfig cache_config_from_json(const nlohmann::json& j);

struct SubproblemResult {
  int cache_size = 0;
  double split = 0;
  double resident = 0;  // expected activated experts already in VRAM, [0, K]
  Millis exposed = 0;
  Millis next_window = 0;
  int prefetches = 0;   // predicted experts fetched within the window
};

// Best cache size for one layer given its budget and prefetch window.
// Enumerates C from max(1, ceil(budget)) to N and maximizes the expected
// resident amount; ties keep the smaller C. Throws RuntimeError on empty
// tables.
SubproblemResult solve_subproblem(const LayerTables& stats, double budget,
                                  Millis window, const TimingProfile& timing,
                                  int buffer_experts);

struct ExpertSplitResult {
  std::vector<SubproblemResult> layers;

  std::vector<Millis> exposed() const;
  Millis total_exposed() const;
};

// Solves every layer in order, threading each layer's predicted window into
// the next. The first window is head + attention compute.
ExpertSplitResult expert_split(std::span<const double> budgets,
                               std::span<const LayerTables> stats,
                               const TimingProfile& timing, int buffer_experts);

struct AllocationResult {
  CacheConfig config;
  ExpertSplitResult split;
  int iterations = 0;        // accepted budget moves
  bool converged = true;     // false when the iteration cap stopped the search
  Millis uniform_objective = 0;
  // Total exposed latency after the start and after every accepted move.
  std::vector<Millis> objective_history;
  // Sum of budgets after the start and after every accepted move.
  std::vector<double> budget_history;
};

// Fixed-point budget allocation. Starting from a uniform split of
// `vram_budget`, repeatedly moves granularity * vram_budget from the layer
// whose removal costs least to the layer whose addition profits most, and
// stops (rolling back) at the first move that does not lower the total
// exposed latency.
AllocationResult vram_allocation(double vram_budget, double granularity,
                                 std::span<const LayerTables> stats,
                                 const TimingProfile& timing, int buffer_experts);

}  // namespace moesim

#endif  // MOESIM_CONFIGURATOR_H_
