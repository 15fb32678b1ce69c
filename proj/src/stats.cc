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

#include "moesim/stats.h"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

#include "moesim/error.h"

namespace moesim {

LayerTables LayerTables::zeros(int experts, int activated, int predicted) {
  LayerTables t;
  t.experts = experts;
  t.activated = activated;
  t.predicted = predicted;
  t.hit_by_size.assign(experts + 1, 0.0);
  t.pred_by_rank.assign(predicted + 1, 0.0);
  t.pred_hit_by_size.assign(static_cast<std::size_t>(predicted + 1) * (experts + 1), 0.0);
  return t;
}

StatsAccumulator::StatsAccumulator(int layers, int experts, int activated,
                                   int predicted)
    : experts_(experts), activated_(activated), predicted_(predicted) {
  if (layers < 1 || experts < 1 || activated < 1 || predicted < 0 ||
      predicted > experts) {
    throw ConfigError("stats accumulator: invalid shape");
  }
  layers_.resize(layers);
  for (auto& l : layers_) init_layer(l);
}

void StatsAccumulator::init_layer(Layer& l) const {
  l.freq.assign(experts_, 0);
  l.order.resize(experts_);
  std::iota(l.order.begin(), l.order.end(), 0);
  l.position.resize(experts_);
  std::iota(l.position.begin(), l.position.end(), 0);
  l.rank_hit_hist.assign(experts_, 0);
  l.pred_hit_count.assign(predicted_, 0);
  l.pred_rank_hist.assign(static_cast<std::size_t>(predicted_) * experts_, 0);
}

void StatsAccumulator::bump(Layer& l, ExpertId e) const {
  const std::int64_t f = ++l.freq[e];
  int pos = l.position[e];
  while (pos > 0) {
    ExpertId prev = l.order[pos - 1];
    if (l.freq[prev] > f || (l.freq[prev] == f && prev < e)) break;
    l.order[pos] = prev;
    l.position[prev] = pos;
    --pos;
  }
  l.order[pos] = e;
  l.position[e] = pos;
}

void StatsAccumulator::observe(int layer, std::span<const ExpertId> activated,
                               std::span<const ExpertId> predicted) {
  Layer& l = layers_.at(layer);
  const auto in_range = [&](ExpertId e) { return e >= 0 && e < experts_; };
  for (ExpertId e : activated) {
    if (!in_range(e)) throw RuntimeError("stats: expert id out of range");
  }
  for (ExpertId e : predicted) {
    if (!in_range(e)) throw RuntimeError("stats: expert id out of range");
  }
  ++l.q;
  // Ranks come from counts before this token's increments.
  for (ExpertId e : activated) ++l.rank_hit_hist[l.position[e]];
  const int p = std::min<int>(predicted_, static_cast<int>(predicted.size()));
  for (int y = 0; y < p; ++y) {
    ExpertId e = predicted[y];
    if (std::find(activated.begin(), activated.end(), e) != activated.end()) {
      ++l.pred_hit_count[y];
    }
    ++l.pred_rank_hist[static_cast<std::size_t>(y) * experts_ + l.position[e]];
  }
  for (ExpertId e : activated) bump(l, e);
}

const StatsAccumulator::Layer& StatsAccumulator::checked(int layer) const {
  const Layer& l = layers_.at(layer);
  if (l.q == 0) throw RuntimeError("empty accumulator");
  return l;
}

double StatsAccumulator::hit_rate(int layer, int c) const {
  const Layer& l = checked(layer);
  if (c < 1 || c > experts_) throw std::out_of_range("cache size outside [1, N]");
  std::int64_t hits = 0;
  for (int r = 0; r < c; ++r) hits += l.rank_hit_hist[r];
  return static_cast<double>(hits) / (static_cast<double>(l.q) * activated_);
}

double StatsAccumulator::pred_accuracy(int layer, int y) const {
  const Layer& l = checked(layer);
  if (y < 1 || y > predicted_) throw std::out_of_range("rank outside [1, P]");
  return static_cast<double>(l.pred_hit_count[y - 1]) / static_cast<double>(l.q);
}

double StatsAccumulator::pred_hit(int layer, int y, int c) const {
  const Layer& l = checked(layer);
  if (y < 1 || y > predicted_) throw std::out_of_range("rank outside [1, P]");
  if (c < 1 || c > experts_) throw std::out_of_range("cache size outside [1, N]");
  std::int64_t hits = 0;
  const auto* row = &l.pred_rank_hist[static_cast<std::size_t>(y - 1) * experts_];
  for (int r = 0; r < c; ++r) hits += row[r];
  return static_cast<double>(hits) / static_cast<double>(l.q);
}

LayerTables StatsAccumulator::tables(int layer) const {
  const Layer& l = checked(layer);
  LayerTables t = LayerTables::zeros(experts_, activated_, predicted_);
  const double q = static_cast<double>(l.q);
  std::int64_t acc = 0;
  for (int c = 1; c <= experts_; ++c) {
    acc += l.rank_hit_hist[c - 1];
    t.hit_by_size[c] = static_cast<double>(acc) / (q * activated_);
  }
  for (int y = 1; y <= predicted_; ++y) {
    t.pred_by_rank[y] = static_cast<double>(l.pred_hit_count[y - 1]) / q;
    const auto* row = &l.pred_rank_hist[static_cast<std::size_t>(y - 1) * experts_];
    std::int64_t run = 0;
    for (int c = 1; c <= experts_; ++c) {
      run += row[c - 1];
      t.mutable_pred_hit(y, c) = static_cast<double>(run) / q;
    }
  }
  return t;
}

std::vector<LayerTables> StatsAccumulator::snapshot() const {
  std::vector<LayerTables> out;
  out.reserve(layers_.size());
  for (int i = 0; i < layers(); ++i) out.push_back(tables(i));
  return out;
}

nlohmann::json StatsAccumulator::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) {
    layers.push_back({{"q", l.q},
                      {"freq", l.freq},
                      {"rank_hit_hist", l.rank_hit_hist},
                      {"pred_hit_count", l.pred_hit_count},
                      {"pred_rank_hist", l.pred_rank_hist}});
  }
  return {{"format", "moesim-stats"},
          {"version", 1},
          {"L", layers_.size()},
          {"N", experts_},
          {"K", activated_},
          {"P", predicted_},
          {"layers", std::move(layers)}};
}

StatsAccumulator StatsAccumulator::from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "moesim-stats") {
      throw RuntimeError("not a moesim stats snapshot");
    }
    StatsAccumulator acc(j.at("L").get<int>(), j.at("N").get<int>(),
                         j.at("K").get<int>(), j.at("P").get<int>());
    const auto& layers = j.at("layers");
    if (static_cast<int>(layers.size()) != acc.layers()) {
      throw RuntimeError("stats snapshot: layer count mismatch");
    }
    for (int i = 0; i < acc.layers(); ++i) {
      const auto& src = layers[i];
      Layer& l = acc.layers_[i];
      l.q = src.at("q").get<std::int64_t>();
      l.freq = src.at("freq").get<std::vector<std::int64_t>>();
      l.rank_hit_hist = src.at("rank_hit_hist").get<std::vector<std::int64_t>>();
      l.pred_hit_count = src.at("pred_hit_count").get<std::vector<std::int64_t>>();
      l.pred_rank_hist = src.at("pred_rank_hist").get<std::vector<std::int64_t>>();
      if (static_cast<int>(l.freq.size()) != acc.experts_ ||
          static_cast<int>(l.rank_hit_hist.size()) != acc.experts_ ||
          static_cast<int>(l.pred_hit_count.size()) != acc.predicted_ ||
          l.pred_rank_hist.size() !=
              static_cast<std::size_t>(acc.predicted_) * acc.experts_) {
        throw RuntimeError("stats snapshot: layer " + std::to_string(i) +
                           " has mis-sized tables");
      }
      std::stable_sort(l.order.begin(), l.order.end(), [&](ExpertId a, ExpertId b) {
        return l.freq[a] > l.freq[b];
      });
      for (int r = 0; r < acc.experts_; ++r) l.position[l.order[r]] = r;
    }
    return acc;
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeError(std::string("malformed stats snapshot: ") + e.what());
  } catch (const ConfigError& e) {
    throw RuntimeError(std::string("malformed stats snapshot: ") + e.what());
  }
}

}  // namespace moesim
