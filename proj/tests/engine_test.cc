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

#include "moesim/engine.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "moesim/error.h"

namespace moesim {
namespace {

// t_load_exp = 640e6 / 16e9 s = 40 ms, t_comp_exp = 40 / 4 = 10 ms.
ModelSpec SmallModel(int layers = 3) {
  return ModelSpec{.layers = layers,
                   .experts_per_layer = 16,
                   .activated_per_token = 4,
                   .expert_size_bytes = 640e6,
                   .nonexpert_size_bytes = 0,
                   .buffer_experts = 4};
}

DeviceSpec SmallDevice(double budget_per_layer = 4, int layers = 3) {
  return DeviceSpec{.pcie_bandwidth = 16e9,
                    .vram_budget_experts = budget_per_layer * layers,
                    .t_comp_att = 15,
                    .t_comp_moe = 40,
                    .t_comp_head = 15};
}

TimingProfile SmallTiming() { return derive_timing(SmallModel(), SmallDevice()); }

ActivationTrace Generate(const ModelSpec& m, std::int64_t tokens, std::uint64_t seed,
                         std::vector<double> accuracy = {0.8}, std::int64_t prompt = 0,
                         double zipf = 1.0, double repeat = 0.6) {
  return generate_trace(m, {.zipf_exponent = zipf,
                            .repeat_prob = repeat,
                            .predictor_accuracy = std::move(accuracy),
                            .seed = seed,
                            .tokens = tokens,
                            .prompt_tokens = prompt});
}

// A hand-built trace; `acts[t][l]` are the activated experts and the
// predicted ranking repeats them.
ActivationTrace HandTrace(const ModelSpec& m, std::int64_t prompt,
                          const std::vector<std::vector<std::vector<ExpertId>>>& acts) {
  TraceHeader h{.layers = m.layers,
                .experts = m.experts_per_layer,
                .activated = m.activated_per_token,
                .predicted = m.activated_per_token,
                .prompt_tokens = prompt};
  ActivationTrace t(h);
  for (std::size_t i = 0; i < acts.size(); ++i) {
    TokenRecord r{.token_index = static_cast<std::int64_t>(i)};
    for (const auto& a : acts[i]) {
      std::vector<double> scores(a.size());
      for (std::size_t j = 0; j < a.size(); ++j) scores[j] = 0.2 / (j + 1);
      r.per_layer.push_back(LayerActivation{a, scores, a});
    }
    t.append(r);
  }
  return t;
}

LayerCacheState CacheWith(std::vector<ExpertId> cached, double split, int n = 16) {
  LayerCacheState c(0, n, Policy::kLcp, {}, 1);
  c.update_on_token(cached);
  c.configure(static_cast<int>(cached.size()), split);
  return c;
}

TEST(PlanPrefetchTest, GreedyPrefixWithinWindow) {
  const TimingProfile t = SmallTiming();
  ASSERT_EQ(t.t_load_exp, 40.0);
  LayerCacheState empty(0, 16, Policy::kLcp, {}, 1);
  std::vector<ExpertId> ranking = {7, 3, 9};
  PrefetchBuffer b = plan_prefetch(ranking, empty, 100, t, 4);
  EXPECT_EQ(b.entries(), (std::vector<PrefetchEntry>{{7, 1.0, 40.0}, {3, 1.0, 40.0}}));
  EXPECT_TRUE(plan_prefetch(ranking, empty, 0, t, 4).entries().empty());
}

TEST(PlanPrefetchTest, CachedTopSegmentHalvesTheCost) {
  const TimingProfile t = SmallTiming();
  LayerCacheState c = CacheWith({7}, 0.5);
  std::vector<ExpertId> ranking = {7, 3};
  PrefetchBuffer b = plan_prefetch(ranking, c, 60, t, 4);
  EXPECT_EQ(b.entries(), (std::vector<PrefetchEntry>{{7, 0.5, 20.0}, {3, 1.0, 40.0}}));
  EXPECT_EQ(b.total_fraction(), 1.5);
  EXPECT_EQ(b.total_cost(), 60.0);
}

TEST(PlanPrefetchTest, SkipsResidentExpertsAndRespectsCapacity) {
  const TimingProfile t = SmallTiming();
  LayerCacheState c = CacheWith({2}, 1.0);
  std::vector<ExpertId> ranking = {2, 5, 6, 8};
  PrefetchBuffer b = plan_prefetch(ranking, c, 1000, t, 2);
  EXPECT_EQ(b.entries(), (std::vector<PrefetchEntry>{{5, 1.0, 40.0}, {6, 1.0, 40.0}}));
}

TEST(ClassifyActivationTest, Partition) {
  LayerCacheState c = CacheWith({1, 2, 3}, 0.5);
  // 1: top cached and bottom buffered; 2, 3: top only; 4: cold.
  PrefetchBuffer b(std::vector<PrefetchEntry>{{1, 0.5, 20.0}});
  std::vector<ExpertId> act = {1, 2, 3, 4};
  ActivationClass cls = classify_activation(act, c, b);
  EXPECT_EQ(cls.alpha, 1);
  EXPECT_EQ(cls.beta, 2);
  EXPECT_EQ(cls.gamma, 1);

  PrefetchBuffer full(std::vector<PrefetchEntry>{
      {5, 1.0, 40.0}, {6, 1.0, 40.0}, {7, 1.0, 40.0}, {8, 1.0, 40.0}});
  std::vector<ExpertId> act2 = {5, 6, 7, 8};
  cls = classify_activation(act2, c, full);
  EXPECT_EQ(cls.alpha, 4);
  cls = classify_activation(act2, c, PrefetchBuffer());
  EXPECT_EQ(cls.gamma, 4);
  EXPECT_EQ(cls.alpha + cls.beta, 0);
}

TEST(LayerLatencyTest, ClosedForm) {
  const TimingProfile t = SmallTiming();
  LayerLatency all = layer_latency({4, 0, 0}, 0.5, t);
  EXPECT_EQ(all.miss, 0.0);
  EXPECT_EQ(all.exposed, 0.0);
  LayerLatency none = layer_latency({0, 0, 4}, 0.5, t);
  EXPECT_EQ(none.hide, 0.0);
  EXPECT_EQ(none.exposed, 160.0);
  LayerLatency mixed = layer_latency({1, 2, 1}, 0.5, t);
  EXPECT_EQ(mixed.hide, 20.0);
  EXPECT_EQ(mixed.miss, 80.0);
  EXPECT_EQ(mixed.exposed, 60.0);
}

TEST(WindowTest, ClosedForm) {
  const TimingProfile t = SmallTiming();
  EXPECT_EQ(next_window(20, 80, t), 35.0);
  EXPECT_EQ(next_window(20, 0, t), t.t_comp_moe + t.t_comp_att);
  EXPECT_EQ(next_window(t.t_comp_moe, 500, t), t.t_comp_att);
  EXPECT_EQ(first_window(t), t.t_comp_head + t.t_comp_att);
}

TEST(ResolveRunTest, ModePresetsAndErrors) {
  const ModelSpec m = SmallModel();
  const DeviceSpec d = SmallDevice(4);
  ResolvedRun r = resolve_run({.mode = Mode::kCacheOnly}, m, d);
  EXPECT_EQ(r.split, 1.0);
  EXPECT_FALSE(r.prefetch);
  EXPECT_FALSE(r.configurator);
  EXPECT_EQ(r.layer_budget, 4.0);
  r = resolve_run({.mode = Mode::kPrefetchOnly}, m, d);
  EXPECT_EQ(r.layer_budget, 0.0);
  EXPECT_TRUE(r.prefetch);
  r = resolve_run({.mode = Mode::kMoepic}, m, d);
  EXPECT_TRUE(r.prefetch && r.configurator);
  EXPECT_EQ(r.split, 0.5);
  r = resolve_run({.mode = Mode::kFixedSplit, .split = 0.3}, m, d);
  EXPECT_EQ(r.split, 0.3);
  EXPECT_FALSE(r.configurator);

  EXPECT_THROW(resolve_run({.mode = Mode::kFixedSplit, .split = 0.0}, m, d), ConfigError);
  EXPECT_THROW(resolve_run({.mode = Mode::kPrefetchOnly, .configurator = true}, m, d),
               ConfigError);
  EXPECT_THROW(resolve_run({.granularity = 1.0}, m, d), ConfigError);
  EXPECT_THROW(resolve_run({.reconfig_interval = 0}, m, d), ConfigError);
  EXPECT_THROW(parse_mode("hybrid"), ConfigError);
  for (const auto& name : mode_names()) EXPECT_EQ(mode_name(parse_mode(name)), name);
}

TEST(SimulatorTest, InitialCacheSizeRoundsBudgetOverSplit) {
  Simulator sim(SmallModel(), SmallDevice(5), {.mode = Mode::kFixedSplit, .split = 0.5});
  EXPECT_EQ(sim.cache(0).capacity(), 10);
  Simulator capped(SmallModel(), SmallDevice(12),
                   {.mode = Mode::kFixedSplit, .split = 0.5});
  EXPECT_EQ(capped.cache(2).capacity(), 16);
  EXPECT_THROW(Simulator(SmallModel(), SmallDevice(0.2),
                         {.mode = Mode::kFixedSplit, .split = 1.0}),
               ConfigError);
}

Millis ComputeFloor(const TimingProfile& t, int layers) {
  Millis floor = 0;
  for (int i = 0; i < layers; ++i) floor += t.t_comp_att + t.t_comp_moe;
  return floor + t.t_comp_head;
}

TEST(DecodeTest, NoCacheNoPrefetchLoadsEverything) {
  const ModelSpec m = SmallModel();
  const TimingProfile t = SmallTiming();
  ActivationTrace trace = Generate(m, 50, 3);
  RunOptions o{.mode = Mode::kPrefetchOnly, .prefetch = false};
  SimReport r = run(trace, m, SmallDevice(), o);
  const Millis expected = ComputeFloor(t, 3) + 3 * 4 * t.t_load_exp;
  for (Millis l : r.token_latencies) EXPECT_EQ(l, expected);
  EXPECT_EQ(r.tpot_mean, expected);
  EXPECT_EQ(r.hit_rate, 0.0);
  EXPECT_EQ(r.prefetch_loads, 0.0);
  EXPECT_EQ(r.on_demand_loads, 50.0 * 3 * 4);
}

TEST(DecodeTest, CacheOnlyExposureUsesAlphaAndGamma) {
  const ModelSpec m = SmallModel();
  const TimingProfile t = SmallTiming();
  ActivationTrace trace = Generate(m, 400, 5);
  RunHooks hooks;
  int checked = 0;
  hooks.on_token = [&](const TokenOutcome& out) {
    for (const LayerOutcome& lo : out.layers) {
      ASSERT_EQ(lo.cls.beta, 0);
      ASSERT_TRUE(lo.buffer.entries().empty());
      EXPECT_EQ(lo.latency.exposed,
                std::max(0.0, lo.cls.gamma * t.t_load_exp - lo.cls.alpha * t.t_comp_exp));
      ++checked;
    }
  };
  run(trace, m, SmallDevice(6), {.mode = Mode::kCacheOnly}, hooks);
  EXPECT_EQ(checked, 400 * 3);
}

TEST(DecodeTest, PerfectOverlapReachesComputeFloor) {
  // Attention alone covers loading all K experts, so every prefetch lands.
  const ModelSpec m = SmallModel();
  DeviceSpec d = SmallDevice();
  d.t_comp_att = 200;
  d.t_comp_head = 200;
  ActivationTrace trace = Generate(m, 200, 7, {1.0});
  SimReport r = run(trace, m, d, {.mode = Mode::kPrefetchOnly});
  for (Millis l : r.token_latencies) EXPECT_EQ(l, r.compute_floor);
  EXPECT_EQ(r.tpot_mean, r.compute_floor);
  EXPECT_EQ(r.on_demand_loads, 0.0);
  EXPECT_EQ(r.compute_floor, 3 * (200.0 + 40.0) + 200.0);
}

// Recomputes every per-layer quantity from the reported classification and
// the split ratio tracked from the outside.
TEST(DecodeTest, AccountingIdentityAndInvariants) {
  const ModelSpec m = SmallModel(4);
  const DeviceSpec d = SmallDevice(4, 4);
  const TimingProfile t = derive_timing(m, d);
  ActivationTrace trace = Generate(m, 1500, 11, {0.7}, 20);
  for (Mode mode : {Mode::kMoepic, Mode::kFixedSplit, Mode::kFullCachePrefetch}) {
    RunOptions o{.mode = mode, .reconfig_interval = 300, .split = 0.5};
    std::vector<double> split(4, resolve_run(o, m, d).split);
    int tokens = 0, reconfigs = 0;
    RunHooks hooks;
    hooks.on_reconfigure = [&](std::int64_t decoded, const AllocationResult& a) {
      EXPECT_EQ(decoded % 300, 0);
      for (int i = 0; i < 4; ++i) split[i] = a.config.layers[i].split;
      ++reconfigs;
    };
    hooks.on_token = [&](const TokenOutcome& out) {
      Millis total = 0;
      for (int i = 0; i < 4; ++i) {
        const LayerOutcome& lo = out.layers[i];
        ASSERT_EQ(lo.cls.alpha + lo.cls.beta + lo.cls.gamma, 4);
        EXPECT_LE(lo.buffer.total_fraction(), m.buffer_experts + 1e-9);
        const double s = split[i];
        const Millis hide = (lo.cls.alpha + lo.cls.beta * s) * t.t_comp_exp;
        const Millis miss = (lo.cls.beta * (1.0 - s) + lo.cls.gamma) * t.t_load_exp;
        EXPECT_EQ(lo.latency.hide, hide);
        EXPECT_EQ(lo.latency.miss, miss);
        EXPECT_EQ(lo.latency.exposed, std::max(0.0, miss - hide));
        total += t.t_comp_att + t.t_comp_moe + lo.latency.exposed;
      }
      EXPECT_DOUBLE_EQ(out.latency, total + t.t_comp_head);
      EXPECT_GE(out.latency, out.compute_floor);
      ++tokens;
    };
    SimReport r = run(trace, m, d, o, hooks);
    EXPECT_EQ(tokens, 1480);
    EXPECT_EQ(reconfigs, mode == Mode::kMoepic ? 4 : 0);
    EXPECT_EQ(r.reconfigurations, reconfigs);
    EXPECT_GE(r.tpot_mean, ComputeFloor(t, 4));
    EXPECT_LE(r.tpot_p50, r.tpot_p95);
    EXPECT_LE(r.tpot_p95, r.tpot_p99);
  }
}

TEST(DecodeTest, ColdStartLeavesFirstBufferEmpty) {
  const ModelSpec m = SmallModel();
  DeviceSpec d = SmallDevice();
  d.t_comp_att = 200;
  ActivationTrace trace = Generate(m, 5, 2, {1.0});
  std::vector<std::size_t> first;
  RunHooks hooks;
  hooks.on_token = [&](const TokenOutcome& out) {
    first.push_back(out.layers[0].buffer.entries().size());
  };
  run(trace, m, d, {.mode = Mode::kPrefetchOnly, .cold_start = true}, hooks);
  ASSERT_EQ(first.size(), 5u);
  EXPECT_EQ(first[0], 0u);
  EXPECT_GT(first[1], 0u);
  first.clear();
  run(trace, m, d, {.mode = Mode::kPrefetchOnly}, hooks);
  EXPECT_GT(first[0], 0u);
}

TEST(DegenerateModeTest, MoepicWithFixedFullSplitIsFullCachePrefetch) {
  const ModelSpec m = SmallModel();
  ActivationTrace trace = Generate(m, 800, 13, {0.6}, 16);
  SimReport a = run(trace, m, SmallDevice(), {.mode = Mode::kFullCachePrefetch});
  SimReport b = run(trace, m, SmallDevice(),
                    {.mode = Mode::kMoepic, .configurator = false, .split_override = 1.0});
  EXPECT_EQ(a.token_latencies, b.token_latencies);
  EXPECT_EQ(a.ttft, b.ttft);
  EXPECT_EQ(a.hit_rate, b.hit_rate);
}

TEST(DegenerateModeTest, MoepicWithZeroBudgetIsPrefetchOnly) {
  const ModelSpec m = SmallModel();
  ActivationTrace trace = Generate(m, 800, 17, {0.6}, 16);
  SimReport a = run(trace, m, SmallDevice(), {.mode = Mode::kPrefetchOnly});
  SimReport b = run(trace, m, SmallDevice(),
                    {.mode = Mode::kMoepic, .layer_budget = 0.0, .configurator = false});
  EXPECT_EQ(a.token_latencies, b.token_latencies);
  EXPECT_EQ(a.ttft, b.ttft);
}

TEST(PrefillTest, UnionOfDisjointPromptTokens) {
  const ModelSpec m = SmallModel(2);
  const TimingProfile t = derive_timing(m, SmallDevice(4, 2));
  ActivationTrace trace = HandTrace(m, 2,
                                    {{{0, 1, 2, 3}, {4, 5, 6, 7}},
                                     {{4, 5, 6, 7}, {8, 9, 10, 11}},
                                     {{0, 1, 2, 3}, {4, 5, 6, 7}}});
  SimReport r = run(trace, m, SmallDevice(4, 2), {.mode = Mode::kPrefetchOnly});
  EXPECT_EQ(r.prompt_tokens, 2);
  EXPECT_EQ(r.decode_tokens, 1);
  EXPECT_EQ(r.ttft, 2 * (t.t_comp_att + t.t_comp_moe + 8 * t.t_load_exp) + t.t_comp_head);
}

TEST(PrefillTest, FullyCachedAndEmptyExtremes) {
  const ModelSpec m = SmallModel(2);
  const DeviceSpec d = SmallDevice(16, 2);
  const TimingProfile t = derive_timing(m, d);
  std::vector<std::vector<std::vector<ExpertId>>> acts;
  for (int i = 0; i < 4; ++i) {
    const ExpertId b = static_cast<ExpertId>(4 * i);
    acts.push_back({{b, b + 1, b + 2, b + 3}, {b, b + 1, b + 2, b + 3}});
  }
  acts.push_back(acts[0]);
  ActivationTrace trace = HandTrace(m, 4, acts);
  // C = N at split 1: the whole union is resident.
  SimReport cached = run(trace, m, d, {.mode = Mode::kCacheOnly, .prefill_scale = 2.0});
  EXPECT_EQ(cached.ttft, 2.0 * (t.t_comp_att + t.t_comp_moe) * 2 + 2.0 * t.t_comp_head);
  // Nothing cached and the union covers all N experts.
  SimReport cold = run(trace, m, d, {.mode = Mode::kPrefetchOnly});
  EXPECT_EQ(cold.ttft, 2 * (t.t_comp_att + t.t_comp_moe + 16 * t.t_load_exp) + t.t_comp_head);
}

TEST(RunTest, HigherPredictorAccuracyNeverSlowsDecoding) {
  const ModelSpec m = builtin_model("qwen-like");
  const DeviceSpec d = builtin_device("a6000");
  double previous = 0;
  for (double acc : {0.2, 0.5, 0.8, 1.0}) {
    ActivationTrace trace = Generate(m, 10000, 23, {acc});
    const double tpot = run(trace, m, d, {.mode = Mode::kMoepic, .seed = 1}).tpot_mean;
    if (previous > 0) EXPECT_LE(tpot, previous * 1.01) << "accuracy " << acc;
    previous = tpot;
  }
}

TEST(RunTest, DeterministicAndShapeChecked) {
  const ModelSpec m = SmallModel();
  ActivationTrace trace = Generate(m, 600, 29, {0.7}, 8);
  RunOptions o{.mode = Mode::kMoepic, .policy = Policy::kRnd, .reconfig_interval = 200,
               .seed = 4};
  SimReport a = run(trace, m, SmallDevice(), o);
  SimReport b = run(trace, m, SmallDevice(), o);
  EXPECT_EQ(a.token_latencies, b.token_latencies);
  EXPECT_EQ(a.ttft, b.ttft);
  EXPECT_EQ(a.layers.size(), 3u);
  EXPECT_THROW(run(trace, SmallModel(4), SmallDevice(4, 4), o), RuntimeError);
}

TEST(NearestRankTest, Percentiles) {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  std::reverse(v.begin(), v.end());
  EXPECT_EQ(nearest_rank(v, 50), 50.0);
  EXPECT_EQ(nearest_rank(v, 95), 95.0);
  EXPECT_EQ(nearest_rank(v, 99), 99.0);
  EXPECT_EQ(nearest_rank(v, 100), 100.0);
  EXPECT_EQ(nearest_rank({7.0}, 99), 7.0);
}

}  // namespace
}  // namespace moesim
