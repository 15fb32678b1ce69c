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

#ifndef MOESIM_STATS_H_
#define MOESIM_STATS_H_

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "moesim/specs.h"

namespace moesim {

// Per-layer probability tables consumed by the configurator, all 1-based:
//   hit(C)         share of activations landing in the top-C frequency set
//   pred(y)        share of tokens whose y-th predicted expert was routed
//   pred_hit(y, C) share of tokens whose y-th predicted expert is in the
//                  top-C frequency set
struct LayerTables {
  int experts = 0;
  int activated = 0;
  int predicted = 0;
  std::vector<double> hit_by_size;       // [0..N], hit_by_size[0] = 0
  std::vector<double> pred_by_rank;      // [0..P], pred_by_rank[0] = 0
  std::vector<double> pred_hit_by_size;  // (P+1) x (N+1), row y

  double hit(int c) const { return hit_by_size[c]; }
  double pred(int y) const { return pred_by_rank[y]; }
  double pred_hit(int y, int c) const {
    return pred_hit_by_size[static_cast<std::size_t>(y) * (experts + 1) + c];
  }

  // Zero-filled tables of the given shape.
  static LayerTables zeros(int experts, int activated, int predicted);
  double& mutable_pred_hit(int y, int c) {
    return pred_hit_by_size[static_cast<std::size_t>(y) * (experts + 1) + c];
  }
};

// Counterfactual hit statistics. The cache model behind H and PH is "the C
// experts with the highest running activation count" (ties to the smaller
// id), evaluated on counts from before the current token.
class StatsAccumulator {
 public:
  StatsAccumulator() = default;
  StatsAccumulator(int layers, int experts, int activated, int predicted);

  int layers() const { return static_cast<int>(layers_.size()); }
  int experts() const { return experts_; }
  int activated() const { return activated_; }
  int predicted() const { return predicted_; }
  std::int64_t tokens(int layer) const { return layers_[layer].q; }

  void observe(int layer, std::span<const ExpertId> activated,
               std::span<const ExpertId> predicted);

  // Throw RuntimeError("empty accumulator") before the first observation and
  // std::out_of_range for C outside [1, N] or y outside [1, P].
  double hit_rate(int layer, int c) const;
  double pred_accuracy(int layer, int y) const;
  double pred_hit(int layer, int y, int c) const;

  // 1-based frequency rank of `e` under the current counts.
  int frequency_rank(int layer, ExpertId e) const {
    return layers_[layer].position[e] + 1;
  }

  LayerTables tables(int layer) const;
  std::vector<LayerTables> snapshot() const;

  nlohmann::json to_json() const;
  static StatsAccumulator from_json(const nlohmann::json& j);

 private:
  struct Layer {
    std::int64_t q = 0;
    std::vector<std::int64_t> freq;
    std::vector<ExpertId> order;  // experts by descending freq, then id
    std::vector<int> position;    // inverse of `order`
    std::vector<std::int64_t> rank_hit_hist;
    std::vector<std::int64_t> pred_hit_count;
    std::vector<std::int64_t> pred_rank_hist;  // P x N, row y-1
  };

  void init_layer(Layer& l) const;
  void bump(Layer& l, ExpertId e) const;
  const Layer& checked(int layer) const;

  int experts_ = 0;
  int activated_ = 0;
  int predicted_ = 0;
  std::vector<Layer> layers_;
};

}  // namespace moesim

#endif  // MOESIM_STATS_H_
