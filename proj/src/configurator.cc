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

#include "moesim/configurator.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "moesim/error.h"

namespace moesim {
namespace {

// Budgets below this are treated as zero.
constexpr double kBudgetEpsilon = 1e-9;

// Expected resident amount for one candidate cache size; also reports how
// many predicted experts fit in the window.
double expected_resident(const LayerTables& t, int c, double split, Millis window,
                         Millis t_load, int buffer_experts, int& prefetches) {
  double resident = c > 0 ? t.activated * t.hit(c) * split : 0.0;
  Millis spent = 0;
  double units = 0;
  prefetches = 0;
  for (int y = 1; y <= t.predicted; ++y) {
    const double cached = c > 0 ? t.pred_hit(y, c) : 0.0;
    const double fraction = 1.0 - cached * split;
    const Millis cost = fraction * t_load;
    if (spent + cost > window) break;
    if (units + fraction > buffer_experts + 1e-12) break;
    spent += cost;
    units += fraction;
    resident += fraction * t.pred(y);
    prefetches = y;
  }
  return resident;
}

}  // namespace

double CacheConfig::total_budget() const {
  double total = 0;
  for (const auto& l : layers) total += l.budget;
  return total;
}

void validate_cache_config(const CacheConfig& config, int experts,
                           double vram_budget) {
  if (config.total_budget() > vram_budget + 1e-9) {
    throw ConfigError("cache config spends " + std::to_string(config.total_budget()) +
                      " experts of a " + std::to_string(vram_budget) + " budget");
  }
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerConfig& l = config.layers[i];
    const std::string where = "cache config layer " + std::to_string(i) + ": ";
    if (!(l.budget >= 0)) throw ConfigError(where + "negative budget");
    if (l.budget == 0) {
      if (l.cache_size != 0) throw ConfigError(where + "zero budget with a cache");
      continue;
    }
    if (!(l.split > 0 && l.split <= 1)) throw ConfigError(where + "split outside (0, 1]");
    if (l.cache_size < 1 || l.cache_size > experts) {
      throw ConfigError(where + "cache size outside [1, N]");
    }
    // A budget beyond N full experts saturates at C = N, split = 1.
    const double used = std::min(l.budget, static_cast<double>(experts));
    if (std::abs(l.cache_size * l.split - used) > 1e-9) {
      throw ConfigError(where + "cache size * split != budget");
    }
  }
}

nlohmann::json to_json(const CacheConfig& config) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : config.layers) {
    layers.push_back({{"budget", l.budget}, {"cache_size", l.cache_size}, {"split", l.split}});
  }
  return {{"format", "moesim-cache-config"},
          {"version", 1},
          {"total_budget", config.total_budget()},
          {"layers", std::move(layers)}};
}

CacheConfig cache_config_from_json(const nlohmann::json& j) {
  try {
    CacheConfig c;
    for (const auto& l : j.at("layers")) {
      c.layers.push_back(LayerConfig{l.at("budget").get<double>(),
                                     l.at("cache_size").get<int>(),
                                     l.at("split").get<double>()});
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed cache config: ") + e.what());
  }
}

SubproblemResult solve_subproblem(const LayerTables& t, double budget, Millis window,
                                  const TimingProfile& timing, int buffer_experts) {
  if (t.experts < 1 || t.hit_by_size.empty()) {
    throw RuntimeError("empty statistics accumulator");
  }
  if (!(budget >= 0)) throw ConfigError("layer budget must be >= 0");
  if (!(window >= 0)) throw ConfigError("prefetch window must be >= 0");
  const int N = t.experts;
  const int K = t.activated;
  const Millis t_load = timing.t_load_exp;

  SubproblemResult best;
  double best_objective = -1;
  if (budget < kBudgetEpsilon) {
    // Prefetch-only: nothing cached, every prefetch moves a full expert.
    best_objective = expected_resident(t, 0, 0.0, window, t_load, buffer_experts,
                                       best.prefetches);
  } else {
    const int first = std::clamp(static_cast<int>(std::ceil(budget - kBudgetEpsilon)), 1, N);
    for (int c = first; c <= N; ++c) {
      const double split = std::min(1.0, budget / c);
      int prefetches = 0;
      double objective = expected_resident(t, c, split, window, t_load,
                                           buffer_experts, prefetches);
      if (objective > best_objective) {
        best_objective = objective;
        best.cache_size = c;
        best.split = split;
        best.prefetches = prefetches;
      }
    }
  }

  // The latency model approximates (alpha + beta * split) by m and the
  // missing amount by K - m.
  const double m = std::clamp(best_objective, 0.0, static_cast<double>(K));
  best.resident = m;
  const Millis hide = m * timing.t_comp_exp;
  const Millis miss = (K - m) * t_load;
  best.exposed = std::max(0.0, miss - hide);
  best.next_window = (timing.t_comp_moe - std::min(hide, miss)) + timing.t_comp_att;
  return best;
}

std::vector<Millis> ExpertSplitResult::exposed() const {
  std::vector<Millis> out;
  out.reserve(layers.size());
  for (const auto& l : layers) out.push_back(l.exposed);
  return out;
}

Millis ExpertSplitResult::total_exposed() const {
  Millis total = 0;
  for (const auto& l : layers) total += l.exposed;
  return total;
}

ExpertSplitResult expert_split(std::span<const double> budgets,
                               std::span<const LayerTables> stats,
                               const TimingProfile& timing, int buffer_experts) {
  if (budgets.size() != stats.size()) {
    throw ConfigError("expert_split: one budget per layer required");
  }
  ExpertSplitResult result;
  result.layers.reserve(budgets.size());
  Millis window = timing.t_comp_head + timing.t_comp_att;
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    result.layers.push_back(
        solve_subproblem(stats[i], budgets[i], window, timing, buffer_experts));
    window = result.layers.back().next_window;
  }
  return result;
}

AllocationResult vram_allocation(double vram_budget, double granularity,
                                 std::span<const LayerTables> stats,
                                 const TimingProfile& timing, int buffer_experts) {
  if (!(vram_budget > 0)) throw ConfigError("VRAM budget must be > 0");
  if (!(granularity > 0 && granularity < 1)) {
    throw ConfigError("allocation granularity must be in (0, 1)");
  }
  const int L = static_cast<int>(stats.size());
  if (L < 1) throw RuntimeError("empty statistics accumulator");

  // Budgets are base + steps[i] * quantum with integer steps summing to zero,
  // so the total stays at vram_budget up to one rounding of the base.
  const double base = vram_budget / L;
  const double quantum = granularity * vram_budget;
  std::vector<long> steps(L, 0);
  auto budgets_for = [&](const std::vector<long>& s) {
    std::vector<double> v(L);
    for (int i = 0; i < L; ++i) {
      double b = base + static_cast<double>(s[i]) * quantum;
      v[i] = b < kBudgetEpsilon ? 0.0 : b;
    }
    return v;
  };
  auto shifted = [&](const std::vector<double>& v, double delta) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(0.0, v[i] + delta);
    return out;
  };

  AllocationResult result;
  const long cap = 10L * L * static_cast<long>(std::ceil(1.0 / granularity));
  std::vector<double> budgets = budgets_for(steps);
  ExpertSplitResult current = expert_split(budgets, stats, timing, buffer_experts);
  result.uniform_objective = current.total_exposed();
  result.objective_history.push_back(result.uniform_objective);
  result.budget_history.push_back(std::accumulate(budgets.begin(), budgets.end(), 0.0));

  bool capped = true;
  for (long iter = 0; iter < cap; ++iter) {
    const std::vector<Millis> t1 = current.exposed();
    const std::vector<Millis> t2 =
        expert_split(shifted(budgets, quantum), stats, timing, buffer_experts).exposed();
    const std::vector<Millis> t3 =
        expert_split(shifted(budgets, -quantum), stats, timing, buffer_experts).exposed();

    int gainer = 0;
    for (int i = 1; i < L; ++i) {
      if (t1[i] - t2[i] > t1[gainer] - t2[gainer]) gainer = i;
    }
    int donor = -1;
    for (int i = 0; i < L; ++i) {
      if (i == gainer) continue;
      if (base + static_cast<double>(steps[i] - 1) * quantum < -kBudgetEpsilon) continue;
      if (donor < 0 || t3[i] - t1[i] < t3[donor] - t1[donor]) donor = i;
    }
    if (donor < 0) {
      capped = false;
      break;
    }

    ++steps[gainer];
    --steps[donor];
    std::vector<double> moved = budgets_for(steps);
    ExpertSplitResult after = expert_split(moved, stats, timing, buffer_experts);
    const std::vector<Millis> t4 = after.exposed();
    Millis delta = 0;
    for (int i = 0; i < L; ++i) delta += t4[i] - t1[i];
    if (delta >= 0 || after.total_exposed() >= current.total_exposed()) {
      --steps[gainer];
      ++steps[donor];
      capped = false;
      break;
    }
    budgets = std::move(moved);
    current = std::move(after);
    ++result.iterations;
    result.objective_history.push_back(current.total_exposed());
    result.budget_history.push_back(std::accumulate(budgets.begin(), budgets.end(), 0.0));
  }
  result.converged = !capped;

  result.config.layers.reserve(L);
  for (int i = 0; i < L; ++i) {
    const SubproblemResult& r = current.layers[i];
    if (budgets[i] == 0) {
      result.config.layers.push_back(LayerConfig{0.0, 0, 0.0});
    } else {
      result.config.layers.push_back(LayerConfig{budgets[i], r.cache_size, r.split});
    }
  }
  result.split = std::move(current);
  return result;
}

}  // namespace moesim
