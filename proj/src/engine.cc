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

#include <algorithm>
#include <cmath>
#include <string>

#include "moesim/error.h"
#include "moesim/random.h"

namespace moesim {
namespace {

// Stream tag for per-layer cache randomness.
constexpr std::uint64_t kCacheStream = 0x636163686555ull;

bool contains(std::span<const ExpertId> ids, ExpertId e) {
  return std::find(ids.begin(), ids.end(), e) != ids.end();
}

}  // namespace

bool PrefetchBuffer::contains(ExpertId e) const {
  for (const auto& p : entries_) {
    if (p.expert == e) return true;
  }
  return false;
}

double PrefetchBuffer::fraction(ExpertId e) const {
  for (const auto& p : entries_) {
    if (p.expert == e) return p.fraction;
  }
  return 0.0;
}

double PrefetchBuffer::total_fraction() const {
  double total = 0;
  for (const auto& p : entries_) total += p.fraction;
  return total;
}

Millis PrefetchBuffer::total_cost() const {
  Millis total = 0;
  for (const auto& p : entries_) total += p.cost;
  return total;
}

PrefetchBuffer plan_prefetch(std::span<const ExpertId> ranking,
                             const LayerCacheState& cache, Millis window,
                             const TimingProfile& timing, int buffer_experts) {
  std::vector<PrefetchEntry> entries;
  Millis spent = 0;
  double units = 0;
  for (ExpertId e : ranking) {
    const double fraction = 1.0 - cache.residency(e);
    if (fraction <= 0) continue;
    const Millis cost = fraction * timing.t_load_exp;
    if (spent + cost > window) break;
    if (units + fraction > buffer_experts + 1e-12) break;
    spent += cost;
    units += fraction;
    entries.push_back({e, fraction, cost});
  }
  return PrefetchBuffer(std::move(entries));
}

ActivationClass classify_activation(std::span<const ExpertId> activated,
                                    const LayerCacheState& cache,
                                    const PrefetchBuffer& buffer) {
  ActivationClass c;
  for (ExpertId e : activated) {
    const double resident = cache.residency(e) + buffer.fraction(e);
    if (resident >= 1.0 - 1e-12) {
      ++c.alpha;
    } else if (cache.is_cached(e)) {
      ++c.beta;
    } else {
      ++c.gamma;
    }
  }
  return c;
}

LayerLatency layer_latency(const ActivationClass& c, double split,
                           const TimingProfile& timing) {
  LayerLatency l;
  l.hide = (c.alpha + c.beta * split) * timing.t_comp_exp;
  l.miss = (c.beta * (1.0 - split) + c.gamma) * timing.t_load_exp;
  l.exposed = std::max(0.0, l.miss - l.hide);
  return l;
}

Millis next_window(Millis hide, Millis miss, const TimingProfile& timing) {
  return (timing.t_comp_moe - std::min(hide, miss)) + timing.t_comp_att;
}

Millis first_window(const TimingProfile& timing) {
  return timing.t_comp_head + timing.t_comp_att;
}

Mode parse_mode(std::string_view name) {
  if (name == "moepic") return Mode::kMoepic;
  if (name == "cache_only") return Mode::kCacheOnly;
  if (name == "prefetch_only") return Mode::kPrefetchOnly;
  if (name == "full_cache_prefetch") return Mode::kFullCachePrefetch;
  if (name == "fixed_split") return Mode::kFixedSplit;
  throw ConfigError("unknown mode '" + std::string(name) + "'");
}

std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::kMoepic: return "moepic";
    case Mode::kCacheOnly: return "cache_only";
    case Mode::kPrefetchOnly: return "prefetch_only";
    case Mode::kFullCachePrefetch: return "full_cache_prefetch";
    case Mode::kFixedSplit: return "fixed_split";
  }
  return "?";
}

std::vector<std::string> mode_names() {
  return {"moepic", "cache_only", "prefetch_only", "full_cache_prefetch", "fixed_split"};
}

nlohmann::json to_json(const RunOptions& o) {
  nlohmann::json j{{"mode", mode_name(o.mode)},
                   {"policy", policy_name(o.policy)},
                   {"omega", o.lcp.omega},
                   {"rho", o.lcp.rho},
                   {"granularity", o.granularity},
                   {"reconfig_interval", o.reconfig_interval},
                   {"split", o.split},
                   {"prefill_scale", o.prefill_scale},
                   {"cold_start", o.cold_start},
                   {"gated_admission", o.gated_admission},
                   {"seed", o.seed}};
  j["layer_budget"] = o.layer_budget ? nlohmann::json(*o.layer_budget) : nlohmann::json();
  j["configurator"] = o.configurator ? nlohmann::json(*o.configurator) : nlohmann::json();
  j["prefetch"] = o.prefetch ? nlohmann::json(*o.prefetch) : nlohmann::json();
  j["split_override"] =
      o.split_override ? nlohmann::json(*o.split_override) : nlohmann::json();
  return j;
}

ResolvedRun resolve_run(const RunOptions& o, const ModelSpec& model,
                        const DeviceSpec& device) {
  ResolvedRun r;
  r.layer_budget = o.layer_budget ? *o.layer_budget
                                  : device.vram_budget_experts / model.layers;
  const double split = o.split_override.value_or(o.split);
  switch (o.mode) {
    case Mode::kMoepic:
      r.split = split;
      r.prefetch = true;
      r.configurator = true;
      break;
    case Mode::kCacheOnly:
      r.split = o.split_override.value_or(1.0);
      break;
    case Mode::kPrefetchOnly:
      r.layer_budget = 0;
      r.prefetch = true;
      break;
    case Mode::kFullCachePrefetch:
      r.split = o.split_override.value_or(1.0);
      r.prefetch = true;
      break;
    case Mode::kFixedSplit:
      r.split = split;
      r.prefetch = true;
      break;
  }
  if (o.configurator) r.configurator = *o.configurator;
  if (o.prefetch) r.prefetch = *o.prefetch;

  if (!(r.layer_budget >= 0)) throw ConfigError("layer budget must be >= 0");
  if (r.layer_budget > 0 && !(r.split > 0 && r.split <= 1)) {
    throw ConfigError("split ratio must be in (0, 1]");
  }
  if (r.configurator && !(r.layer_budget > 0)) {
    throw ConfigError("the configurator needs a positive VRAM budget");
  }
  if (!(o.granularity > 0 && o.granularity < 1)) {
    throw ConfigError("granularity must be in (0, 1)");
  }
  if (o.reconfig_interval < 1) throw ConfigError("reconfig interval must be >= 1");
  if (!(o.prefill_scale > 0)) throw ConfigError("prefill scale must be > 0");
  if (r.layer_budget == 0) r.split = 0;
  return r;
}

Simulator::Simulator(const ModelSpec& model, const DeviceSpec& device,
                     const RunOptions& options)
    : model_(validate_model_spec(model)),
      device_(validate_device_spec(device)),
      options_(options),
      resolved_(resolve_run(options, model_, device_)),
      timing_(derive_timing(model_, device_)) {
  caches_.reserve(model_.layers);
  for (int i = 0; i < model_.layers; ++i) {
    caches_.emplace_back(i, model_.experts_per_layer, options_.policy, options_.lcp,
                         mix_seed(options_.seed, static_cast<std::uint64_t>(i), kCacheStream));
    caches_.back().set_gated_admission(options_.gated_admission);
  }
  if (resolved_.layer_budget == 0) {
    for (auto& c : caches_) c.configure(0, 0.0);
  } else {
    const int c = std::min(model_.experts_per_layer,
                           cache_size_for(resolved_.layer_budget, resolved_.split));
    if (c < 1) {
      throw ConfigError("budget " + std::to_string(resolved_.layer_budget) +
                        " at split " + std::to_string(resolved_.split) +
                        " holds no expert");
    }
    for (auto& cache : caches_) cache.configure(c, resolved_.split);
  }
}

CacheConfig Simulator::current_config() const {
  CacheConfig config;
  for (const auto& c : caches_) {
    config.layers.push_back(
        LayerConfig{c.capacity() * c.split_ratio(), c.capacity(), c.split_ratio()});
  }
  return config;
}

void Simulator::apply(const CacheConfig& config) {
  if (static_cast<int>(config.layers.size()) != model_.layers) {
    throw ConfigError("cache config has " + std::to_string(config.layers.size()) +
                      " layers, model has " + std::to_string(model_.layers));
  }
  for (int i = 0; i < model_.layers; ++i) {
    const LayerConfig& l = config.layers[i];
    caches_[i].configure(l.budget > 0 ? l.cache_size : 0, l.split);
  }
}

void Simulator::observe_and_admit(int layer, const LayerView& view) {
  stats_.observe(layer, view.activated, view.predicted);
  LayerCacheState& cache = caches_[layer];
  cache.update_on_token(view.activated);
  for (ExpertId e : view.activated) {
    if (!cache.is_cached(e)) cache.admit(e, view.activated);
  }
}

Millis Simulator::prefill(const ActivationTrace& trace, std::int64_t begin,
                          std::int64_t end) {
  if (stats_.layers() == 0) {
    stats_ = StatsAccumulator(model_.layers, model_.experts_per_layer,
                              model_.activated_per_token, trace.header().predicted);
  }
  if (options_.policy == Policy::kRnd) {
    for (auto& c : caches_) c.resample();
  }
  const double s = options_.prefill_scale;
  Millis ttft = 0;
  std::vector<char> needed(model_.experts_per_layer);
  for (int i = 0; i < model_.layers; ++i) {
    const LayerCacheState& cache = caches_[i];
    std::fill(needed.begin(), needed.end(), 0);
    for (std::int64_t t = begin; t < end; ++t) {
      for (ExpertId e : trace.at(t, i).activated) needed[e] = 1;
    }
    double resident_units = 0;
    double missing_units = 0;
    for (int e = 0; e < model_.experts_per_layer; ++e) {
      if (!needed[e]) continue;
      resident_units += cache.residency(e);
      missing_units += 1.0 - cache.residency(e);
    }
    const Millis load = missing_units * timing_.t_load_exp;
    const Millis compute = s * (resident_units * timing_.t_comp_exp);
    ttft += s * (timing_.t_comp_att + timing_.t_comp_moe) + std::max(0.0, load - compute);
  }
  ttft += s * timing_.t_comp_head;

  for (std::int64_t t = begin; t < end; ++t) {
    for (int i = 0; i < model_.layers; ++i) observe_and_admit(i, trace.at(t, i));
  }
  return ttft;
}

TokenOutcome Simulator::decode(const ActivationTrace& trace, std::int64_t token,
                               bool cold) {
  if (stats_.layers() == 0) {
    stats_ = StatsAccumulator(model_.layers, model_.experts_per_layer,
                              model_.activated_per_token, trace.header().predicted);
  }
  if (options_.policy == Policy::kRnd) {
    for (auto& c : caches_) c.resample();
  }
  const int K = model_.activated_per_token;
  TokenOutcome out;
  out.token = token;
  out.layers.reserve(model_.layers);

  PrefetchBuffer buffer;
  if (resolved_.prefetch && !cold) {
    buffer = plan_prefetch(trace.at(token, 0).predicted, caches_[0],
                           first_window(timing_), timing_, model_.buffer_experts);
  }
  for (int i = 0; i < model_.layers; ++i) {
    const LayerView view = trace.at(token, i);
    LayerCacheState& cache = caches_[i];
    LayerOutcome lo;
    lo.cls = classify_activation(view.activated, cache, buffer);
    lo.latency = layer_latency(lo.cls, cache.split_ratio(), timing_);
    const auto topk = view.predicted.first(
        std::min<std::size_t>(K, view.predicted.size()));
    for (ExpertId e : view.activated) {
      if (cache.is_cached(e)) ++lo.cache_hits;
      if (contains(topk, e)) ++lo.predicted_hits;
      const double resident = cache.residency(e) + buffer.fraction(e);
      lo.on_demand_units += std::max(0.0, 1.0 - resident);
    }
    out.latency += timing_.t_comp_att + timing_.t_comp_moe + lo.latency.exposed;
    out.compute_floor += timing_.t_comp_att + timing_.t_comp_moe + 0.0;
    lo.buffer = std::move(buffer);
    buffer = PrefetchBuffer();

    observe_and_admit(i, view);

    if (resolved_.prefetch && i + 1 < model_.layers) {
      buffer = plan_prefetch(trace.at(token, i + 1).predicted, caches_[i + 1],
                             next_window(lo.latency.hide, lo.latency.miss, timing_),
                             timing_, model_.buffer_experts);
    }
    out.layers.push_back(std::move(lo));
  }
  out.latency += timing_.t_comp_head;
  out.compute_floor += timing_.t_comp_head;
  return out;
}

AllocationResult Simulator::reconfigure() {
  const std::vector<LayerTables> tables = stats_.snapshot();
  AllocationResult r = vram_allocation(resolved_.layer_budget * model_.layers,
                                       options_.granularity, tables, timing_,
                                       model_.buffer_experts);
  apply(r.config);
  return r;
}

nlohmann::json Simulator::cache_snapshot() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& c : caches_) layers.push_back(c.snapshot());
  return {{"format", "moesim-cache-snapshot"}, {"version", 1}, {"layers", std::move(layers)}};
}

double nearest_rank(std::vector<double> values, double pct) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  std::size_t rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

SimReport run(const ActivationTrace& trace, const ModelSpec& model,
              const DeviceSpec& device, const RunOptions& options,
              const RunHooks& hooks) {
  trace.check_shape(model);
  Simulator sim(model, device, options);
  const int L = model.layers;
  const int K = model.activated_per_token;

  SimReport report;
  report.mode = std::string(mode_name(options.mode));
  report.policy = std::string(policy_name(options.policy));
  report.timing = sim.timing();
  report.load_dominated = sim.timing().load_dominated();

  const std::int64_t prompt = std::min(trace.header().prompt_tokens, trace.size());
  report.prompt_tokens = prompt;
  if (prompt > 0) report.ttft = sim.prefill(trace, 0, prompt);

  std::vector<double> exposed_sum(L, 0.0);
  std::vector<std::int64_t> hits(L, 0), predicted_hits(L, 0);
  std::int64_t decoded = 0;
  for (std::int64_t t = prompt; t < trace.size(); ++t) {
    const bool cold = options.cold_start && t == 0;
    TokenOutcome out = sim.decode(trace, t, cold);
    report.token_latencies.push_back(out.latency);
    report.compute_floor = out.compute_floor;
    for (int i = 0; i < L; ++i) {
      const LayerOutcome& lo = out.layers[i];
      exposed_sum[i] += lo.latency.exposed;
      hits[i] += lo.cache_hits;
      predicted_hits[i] += lo.predicted_hits;
      report.on_demand_loads += lo.on_demand_units;
      report.prefetch_loads += lo.buffer.total_fraction();
    }
    if (hooks.on_token) hooks.on_token(out);
    ++decoded;
    if (sim.resolved().configurator && decoded % options.reconfig_interval == 0) {
      AllocationResult r = sim.reconfigure();
      ++report.reconfigurations;
      if (hooks.on_reconfigure) hooks.on_reconfigure(decoded, r);
    }
  }

  report.decode_tokens = decoded;
  if (decoded > 0) {
    double total = 0;
    for (Millis l : report.token_latencies) total += l;
    report.tpot_mean = total / static_cast<double>(decoded);
    report.tpot_p50 = nearest_rank(report.token_latencies, 50);
    report.tpot_p95 = nearest_rank(report.token_latencies, 95);
    report.tpot_p99 = nearest_rank(report.token_latencies, 99);
  } else {
    Millis floor = 0;
    for (int i = 0; i < L; ++i) floor += sim.timing().t_comp_att + sim.timing().t_comp_moe + 0.0;
    report.compute_floor = floor + sim.timing().t_comp_head;
  }

  if (hooks.on_finish) hooks.on_finish(sim);
  const CacheConfig final_config = sim.current_config();
  const double denom = static_cast<double>(std::max<std::int64_t>(decoded, 1)) * K;
  std::int64_t all_hits = 0, all_pred = 0;
  for (int i = 0; i < L; ++i) {
    LayerSummary s;
    s.mean_exposed = decoded > 0 ? exposed_sum[i] / static_cast<double>(decoded) : 0.0;
    s.hit_rate = hits[i] / denom;
    s.topk_accuracy = predicted_hits[i] / denom;
    s.final_config = final_config.layers[i];
    report.layers.push_back(s);
    all_hits += hits[i];
    all_pred += predicted_hits[i];
  }
  report.hit_rate = all_hits / (denom * L);
  report.topk_accuracy = all_pred / (denom * L);
  report.config = {{"model", model}, {"device", device}, {"run", to_json(options)}};
  return report;
}

}  // namespace moesim
