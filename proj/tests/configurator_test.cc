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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "moesim/error.h"
#include "moesim/random.h"
#include "moesim/stats.h"
#include "moesim/trace.h"

namespace moesim {
namespace {

const TimingProfile kTiming{.t_load_exp = 40,
                            .t_comp_exp = 10,
                            .t_comp_att = 17,
                            .t_comp_moe = 40,
                            .t_comp_head = 15};

// Random tables with the shape a real accumulator produces: nondecreasing in
// C and full at C = N.
LayerTables RandomTables(SplitMix64& rng, int n, int k, int p) {
  LayerTables t = LayerTables::zeros(n, k, p);
  auto ramp = [&](std::vector<double>& out, std::size_t offset) {
    std::vector<double> cuts;
    for (int c = 1; c < n; ++c) cuts.push_back(uniform01(rng));
    std::sort(cuts.begin(), cuts.end());
    for (int c = 1; c < n; ++c) out[offset + c] = cuts[c - 1];
    out[offset + n] = 1.0;
  };
  ramp(t.hit_by_size, 0);
  for (int y = 1; y <= p; ++y) {
    t.pred_by_rank[y] = uniform01(rng);
    ramp(t.pred_hit_by_size, static_cast<std::size_t>(y) * (n + 1));
  }
  return t;
}

struct OracleResult {
  int c = 0;
  double m = 0;
};

// Direct restatement of the sub-problem: enumerate every C, recompute the
// feasible prefetch prefix by summing it from scratch, keep the first best.
OracleResult SubproblemOracle(const LayerTables& t, double v, double window, int buffer) {
  auto objective = [&](int c, double theta) {
    double best_m = c > 0 ? t.activated * t.hit(c) * theta : 0.0;
    int y_max = 0;
    for (int y = 1; y <= std::min(t.predicted, 64); ++y) {
      double time = 0, units = 0;
      for (int j = 1; j <= y; ++j) {
        const double f = 1.0 - (c > 0 ? t.pred_hit(j, c) : 0.0) * theta;
        time += f * kTiming.t_load_exp;
        units += f;
      }
      if (time <= window && units <= buffer + 1e-12) {
        y_max = y;
      } else {
        break;
      }
    }
    for (int j = 1; j <= y_max; ++j) {
      best_m += (1.0 - (c > 0 ? t.pred_hit(j, c) : 0.0) * theta) * t.pred(j);
    }
    return best_m;
  };
  OracleResult r;
  if (v == 0) {
    r.m = objective(0, 0.0);
    return r;
  }
  r.m = -1;
  for (int c = std::max(1, static_cast<int>(std::ceil(v - 1e-9))); c <= t.experts; ++c) {
    const double m = objective(c, std::min(1.0, v / c));
    if (m > r.m) {
      r.m = m;
      r.c = c;
    }
  }
  return r;
}

TEST(SolveSubproblemTest, MatchesBruteForceOracle) {
  SplitMix64 rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(uniform_index(rng, 11));
    const int k = 1 + static_cast<int>(uniform_index(rng, n - 1));
    const int p = static_cast<int>(uniform_index(rng, n + 1));
    const int buffer = k + static_cast<int>(uniform_index(rng, 3));
    LayerTables t = RandomTables(rng, n, k, p);
    double v = uniform01(rng) < 0.1 ? 0.0 : uniform01(rng) * n;
    if (uniform01(rng) < 0.2) v = std::ceil(v);
    const double window = uniform01(rng) * 200;
    SubproblemResult got = solve_subproblem(t, v, window, kTiming, buffer);
    OracleResult want = SubproblemOracle(t, v, window, buffer);
    const double m = std::clamp(want.m, 0.0, static_cast<double>(k));
    ASSERT_EQ(got.cache_size, want.c) << "trial " << trial;
    ASSERT_NEAR(got.resident, m, 1e-9) << "trial " << trial;
    EXPECT_LE(got.resident, k);
    EXPECT_GE(got.exposed, 0.0);
    const double hide = m * kTiming.t_comp_exp, miss = (k - m) * kTiming.t_load_exp;
    EXPECT_NEAR(got.exposed, std::max(0.0, miss - hide), 1e-9);
    EXPECT_NEAR(got.next_window,
                kTiming.t_comp_moe - std::min(hide, miss) + kTiming.t_comp_att, 1e-9);
    if (v > 0) {
      EXPECT_GT(got.split, 0.0);
      EXPECT_LE(got.split, 1.0);
      EXPECT_NEAR(got.split, std::min(1.0, v / got.cache_size), 1e-12);
    } else {
      EXPECT_EQ(got.split, 0.0);
    }
  }
}

TEST(SolveSubproblemTest, PrefetchOnlyWithPerfectStats) {
  LayerTables t = LayerTables::zeros(8, 4, 8);
  for (int c = 1; c <= 8; ++c) t.hit_by_size[c] = std::min(1.0, c / 4.0);
  for (int y = 1; y <= 4; ++y) t.pred_by_rank[y] = 1.0;
  SubproblemResult r = solve_subproblem(t, 0.0, 2 * kTiming.t_load_exp, kTiming, 4);
  EXPECT_EQ(r.cache_size, 0);
  EXPECT_EQ(r.split, 0.0);
  EXPECT_EQ(r.prefetches, 2);
  EXPECT_EQ(r.resident, 2.0);
}

TEST(SolveSubproblemTest, FullyCachedWorkingSet) {
  const int c0 = 3;
  LayerTables t = LayerTables::zeros(8, 2, 4);
  for (int c = 1; c <= 8; ++c) {
    t.hit_by_size[c] = c >= c0 ? 1.0 : 0.3 * c;
    for (int y = 1; y <= 4; ++y) t.mutable_pred_hit(y, c) = c >= c0 ? 1.0 : 0.2;
  }
  for (int y = 1; y <= 2; ++y) t.pred_by_rank[y] = 1.0;
  for (double window : {0.0, 50.0, 500.0}) {
    SubproblemResult r = solve_subproblem(t, c0, window, kTiming, 2);
    EXPECT_EQ(r.cache_size, c0);
    EXPECT_EQ(r.split, 1.0);
    EXPECT_EQ(r.resident, 2.0);
    EXPECT_EQ(r.exposed, 0.0);
  }
}

TEST(SolveSubproblemTest, RejectsEmptyStatistics) {
  EXPECT_THROW(solve_subproblem(LayerTables{}, 1.0, 10.0, kTiming, 2), RuntimeError);
  LayerTables t = LayerTables::zeros(4, 1, 0);
  EXPECT_THROW(solve_subproblem(t, -1.0, 10.0, kTiming, 2), ConfigError);
}

TEST(ExpertSplitTest, TwoLayerHandTrace) {
  // No predictions; H = 0.5, 0.8, 0.9, 1.0.
  LayerTables t = LayerTables::zeros(4, 2, 0);
  t.hit_by_size = {0.0, 0.5, 0.8, 0.9, 1.0};
  std::vector<LayerTables> stats = {t, t};
  std::vector<double> budgets = {1.0, 2.0};
  ExpertSplitResult r = expert_split(budgets, stats, kTiming, 2);
  ASSERT_EQ(r.layers.size(), 2u);
  // Layer 1: m(C) = 2 H(C) / C peaks at C = 1 with m = 1; window 32 unused.
  EXPECT_EQ(r.layers[0].cache_size, 1);
  EXPECT_DOUBLE_EQ(r.layers[0].resident, 1.0);
  EXPECT_DOUBLE_EQ(r.layers[0].exposed, 30.0);       // 1*40 - 1*10
  EXPECT_DOUBLE_EQ(r.layers[0].next_window, 47.0);   // (40 - 10) + 17
  // Layer 2: C = 2 at split 1 gives m = 1.6; C = 3, 4 give 1.2 and 1.0.
  EXPECT_EQ(r.layers[1].cache_size, 2);
  EXPECT_DOUBLE_EQ(r.layers[1].split, 1.0);
  EXPECT_NEAR(r.layers[1].resident, 1.6, 1e-12);
  EXPECT_NEAR(r.layers[1].exposed, 0.0, 1e-9);       // 0.4*40 - 1.6*10
  EXPECT_NEAR(r.layers[1].next_window, 41.0, 1e-9);  // (40 - 16) + 17
  EXPECT_NEAR(r.total_exposed(), 30.0, 1e-9);
}

TEST(ExpertSplitTest, SingleLayerUsesFirstWindow) {
  SplitMix64 rng(5);
  LayerTables t = RandomTables(rng, 10, 2, 6);
  std::vector<LayerTables> stats = {t};
  std::vector<double> budgets = {3.5};
  ExpertSplitResult r = expert_split(budgets, stats, kTiming, 2);
  SubproblemResult direct =
      solve_subproblem(t, 3.5, kTiming.t_comp_head + kTiming.t_comp_att, kTiming, 2);
  EXPECT_EQ(r.layers[0].cache_size, direct.cache_size);
  EXPECT_EQ(r.layers[0].resident, direct.resident);
  EXPECT_EQ(r.layers[0].exposed, direct.exposed);
}

TEST(ExpertSplitTest, IdenticalLayersWithoutExposureAreUniform) {
  LayerTables t = LayerTables::zeros(6, 2, 0);
  t.hit_by_size = {0.0, 0.6, 1.0, 1.0, 1.0, 1.0, 1.0};
  std::vector<LayerTables> stats(5, t);
  std::vector<double> budgets(5, 2.0);
  ExpertSplitResult r = expert_split(budgets, stats, kTiming, 2);
  for (const auto& l : r.layers) {
    EXPECT_EQ(l.cache_size, 2);
    EXPECT_EQ(l.split, 1.0);
    EXPECT_EQ(l.exposed, 0.0);
    EXPECT_EQ(l.next_window, r.layers[0].next_window);
  }
}

TEST(ExpertSplitTest, RejectsMismatchedSizes) {
  std::vector<LayerTables> stats(2, LayerTables::zeros(4, 1, 0));
  std::vector<double> budgets = {1.0};
  EXPECT_THROW(expert_split(budgets, stats, kTiming, 1), ConfigError);
}

void CheckAllocationInvariants(const AllocationResult& r, double vram, int n) {
  ASSERT_EQ(r.objective_history.size(), static_cast<std::size_t>(r.iterations) + 1);
  ASSERT_EQ(r.budget_history.size(), r.objective_history.size());
  for (double total : r.budget_history) EXPECT_NEAR(total, vram, 1e-9);
  for (std::size_t i = 1; i < r.objective_history.size(); ++i) {
    EXPECT_LT(r.objective_history[i], r.objective_history[i - 1]);
  }
  EXPECT_EQ(r.objective_history.front(), r.uniform_objective);
  EXPECT_LE(r.split.total_exposed(), r.uniform_objective);
  EXPECT_NEAR(r.config.total_budget(), vram, 1e-9);
  for (const auto& l : r.config.layers) {
    EXPECT_GE(l.budget, 0.0);
    if (l.budget > 0) {
      EXPECT_GT(l.split, 0.0);
      EXPECT_LE(l.split, 1.0);
      EXPECT_GE(l.cache_size, 1);
      EXPECT_LE(l.cache_size, n);
    }
  }
  EXPECT_NO_THROW(validate_cache_config(r.config, n, vram + 1e-9));
}

TEST(VramAllocationTest, InvariantsOnRandomInstances) {
  SplitMix64 rng(1234);
  for (int trial = 0; trial < 40; ++trial) {
    const int layers = 2 + static_cast<int>(uniform_index(rng, 4));
    const int n = 4 + static_cast<int>(uniform_index(rng, 9));
    const int k = 1 + static_cast<int>(uniform_index(rng, 2));
    std::vector<LayerTables> stats;
    for (int i = 0; i < layers; ++i) stats.push_back(RandomTables(rng, n, k, n));
    const double vram = layers * (0.5 + uniform01(rng) * (n / 2.0));
    const double zeta = 0.02 + 0.1 * uniform01(rng);
    AllocationResult r = vram_allocation(vram, zeta, stats, kTiming, k + 1);
    SCOPED_TRACE(trial);
    CheckAllocationInvariants(r, vram, n);
    AllocationResult again = vram_allocation(vram, zeta, stats, kTiming, k + 1);
    EXPECT_EQ(again.config, r.config);
    EXPECT_EQ(again.objective_history, r.objective_history);
  }
}

TEST(VramAllocationTest, IdenticalLayersKeepUniformSplit) {
  SplitMix64 rng(8);
  LayerTables t = RandomTables(rng, 12, 2, 6);
  std::vector<LayerTables> stats = {t, t};
  AllocationResult r = vram_allocation(8.0, 0.05, stats, kTiming, 2);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.config.layers[0].budget, 4.0);
  EXPECT_EQ(r.config.layers[1].budget, 4.0);
}

std::vector<LayerTables> PerfectVersusBlindPredictor() {
  ModelSpec m{.layers = 2,
              .experts_per_layer = 16,
              .activated_per_token = 2,
              .expert_size_bytes = 1,
              .nonexpert_size_bytes = 0,
              .buffer_experts = 2};
  ActivationTrace t = generate_trace(
      m, {.zipf_exponent = 0.3, .predictor_accuracy = {1.0, 0.0}, .seed = 21, .tokens = 5000});
  StatsAccumulator acc(2, 16, 2, t.header().predicted);
  for (std::int64_t i = 0; i < t.size(); ++i) {
    for (int l = 0; l < 2; ++l) acc.observe(l, t.at(i, l).activated, t.at(i, l).predicted);
  }
  return acc.snapshot();
}

// The window coupling makes the objective non-convex in the budget split, so
// the search may stop at a local minimum; it never ends above the uniform
// start or below the grid optimum.
TEST(VramAllocationTest, BudgetFlowsToTheBlindLayer) {
  const std::vector<LayerTables> stats = PerfectVersusBlindPredictor();
  const double vram = 12.0, zeta = 0.05;
  AllocationResult r = vram_allocation(vram, zeta, stats, kTiming, 2);
  CheckAllocationInvariants(r, vram, 16);
  EXPECT_GT(r.iterations, 0);
  EXPECT_GT(r.config.layers[1].budget, r.config.layers[0].budget);

  // Grid search over every reachable split of the same budget.
  double grid_best = std::numeric_limits<double>::infinity();
  const int steps = static_cast<int>(std::lround(1.0 / zeta));
  for (int s = 0; s <= steps; ++s) {
    const double v1 = s * zeta * vram;
    std::vector<double> budgets = {v1, vram - v1};
    grid_best = std::min(grid_best, expert_split(budgets, stats, kTiming, 2).total_exposed());
  }
  EXPECT_GE(r.split.total_exposed(), grid_best - 1e-9);
  EXPECT_LE(r.split.total_exposed(), r.uniform_objective);
  EXPECT_LT(r.split.total_exposed(), r.uniform_objective);
}

TEST(VramAllocationTest, RejectsBadArguments) {
  std::vector<LayerTables> stats(2, LayerTables::zeros(4, 1, 0));
  for (auto& s : stats) s.hit_by_size = {0, 0.4, 0.7, 0.9, 1.0};
  EXPECT_THROW(vram_allocation(0.0, 0.01, stats, kTiming, 1), ConfigError);
  EXPECT_THROW(vram_allocation(4.0, 0.0, stats, kTiming, 1), ConfigError);
  EXPECT_THROW(vram_allocation(4.0, 1.0, stats, kTiming, 1), ConfigError);
  EXPECT_THROW(vram_allocation(4.0, 0.1, std::vector<LayerTables>{}, kTiming, 1),
               RuntimeError);
}

TEST(CacheConfigTest, ValidationAndJson) {
  CacheConfig c{{LayerConfig{5.0, 10, 0.5}, LayerConfig{0.0, 0, 0.0}, LayerConfig{3.0, 3, 1.0}}};
  EXPECT_EQ(c.total_budget(), 8.0);
  EXPECT_NO_THROW(validate_cache_config(c, 60, 8.0));
  EXPECT_THROW(validate_cache_config(c, 60, 7.5), ConfigError);
  EXPECT_EQ(cache_config_from_json(to_json(c)), c);

  CacheConfig bad_split{{LayerConfig{2.0, 1, 2.0}}};
  EXPECT_THROW(validate_cache_config(bad_split, 8, 10), ConfigError);
  CacheConfig bad_product{{LayerConfig{2.0, 3, 0.5}}};
  EXPECT_THROW(validate_cache_config(bad_product, 8, 10), ConfigError);
  CacheConfig bad_size{{LayerConfig{4.0, 9, 4.0 / 9}}};
  EXPECT_THROW(validate_cache_config(bad_size, 8, 10), ConfigError);
  EXPECT_THROW(cache_config_from_json(nlohmann::json{{"layers", {{{"budget", 1}}}}}),
               ConfigError);
}

}  // namespace
}  // namespace moesim
