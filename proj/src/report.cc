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

#include "moesim/report.h"

#include <charconv>
#include <ostream>

namespace moesim {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

nlohmann::json report_to_json(const SimReport& r, bool with_tokens) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < r.layers.size(); ++i) {
    const LayerSummary& l = r.layers[i];
    layers.push_back({{"layer", i},
                      {"mean_exposed_ms", l.mean_exposed},
                      {"hit_rate", l.hit_rate},
                      {"topk_accuracy", l.topk_accuracy},
                      {"budget", l.final_config.budget},
                      {"cache_size", l.final_config.cache_size},
                      {"split", l.final_config.split}});
  }
  nlohmann::json j{
      {"schema_version", kReportSchemaVersion},
      {"mode", r.mode},
      {"policy", r.policy},
      {"ttft_ms", r.ttft},
      {"tpot_ms",
       {{"mean", r.tpot_mean}, {"p50", r.tpot_p50}, {"p95", r.tpot_p95}, {"p99", r.tpot_p99}}},
      {"compute_floor_ms", r.compute_floor},
      {"tokens", {{"prompt", r.prompt_tokens}, {"decode", r.decode_tokens}}},
      {"hit_rate", r.hit_rate},
      {"topk_accuracy", r.topk_accuracy},
      {"loads", {{"on_demand", r.on_demand_loads}, {"prefetch", r.prefetch_loads}}},
      {"reconfigurations", r.reconfigurations},
      {"load_dominated", r.load_dominated},
      {"timing", r.timing},
      {"layers", std::move(layers)},
      {"config", r.config}};
  if (with_tokens) j["token_latencies_ms"] = r.token_latencies;
  return j;
}

void write_token_csv(const SimReport& r, std::ostream& out) {
  out << "token,latency_ms\n";
  for (std::size_t i = 0; i < r.token_latencies.size(); ++i) {
    out << (r.prompt_tokens + static_cast<std::int64_t>(i)) << ','
        << format_double(r.token_latencies[i]) << '\n';
  }
}

void write_layer_csv(const SimReport& r, std::ostream& out) {
  out << "layer,mean_exposed_ms,hit_rate,topk_accuracy,budget,cache_size,split\n";
  for (std::size_t i = 0; i < r.layers.size(); ++i) {
    const LayerSummary& l = r.layers[i];
    out << i << ',' << format_double(l.mean_exposed) << ',' << format_double(l.hit_rate)
        << ',' << format_double(l.topk_accuracy) << ',' << format_double(l.final_config.budget)
        << ',' << l.final_config.cache_size << ',' << format_double(l.final_config.split)
        << '\n';
  }
}

}  // namespace moesim
