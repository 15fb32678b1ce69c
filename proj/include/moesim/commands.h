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

#ifndef MOESIM_COMMANDS_H_
#define MOESIM_COMMANDS_H_

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "moesim/configurator.h"
#include "moesim/engine.h"
#include "moesim/run_config.h"

namespace moesim {

// Parses "lo:hi:step" or a comma-separated list. Grid points are rounded to
// 12 decimals so 0.1:1.0:0.1 yields exactly ten values.
std::vector<double> parse_grid(const std::string& text);
std::vector<std::string> split_list(const std::string& text);

// Writes the trace to `path` (default <out>/trace.jsonl). Returns the path.
std::string cmd_gen(const RunConfig& cfg, const std::string& path = "");

struct RunOutputs {
  std::string report;      // default <out>/report.json
  std::string token_csv;   // default <out>/tokens.csv
  std::string layer_csv;   // default <out>/layers.csv
  std::string dump_cache;  // optional final cache snapshot
  std::string dump_stats;  // optional statistics snapshot (input of configure)
};

SimReport cmd_run(const RunConfig& cfg, const RunOutputs& outputs = {});

struct CompareGrid {
  std::vector<Mode> modes;
  std::vector<Policy> policies;
  std::vector<std::optional<double>> budgets;  // per layer; nullopt = device
};

// One run per grid point, fanned out with std::async. Writes
// <out>/compare.json and <out>/compare.csv (or `csv_path`) and returns the
// combined JSON.
nlohmann::json cmd_compare(const RunConfig& cfg, const CompareGrid& grid,
                           const std::string& csv_path = "");

// fixed_split over a grid of split ratios at one per-layer budget. Writes
// <out>/sweep_theta.csv (or `csv_path`) and returns the CSV text.
std::string cmd_sweep_theta(const RunConfig& cfg, const std::vector<double>& thetas,
                            double layer_budget, const std::string& csv_path = "");

// vram_allocation on a statistics snapshot file.
AllocationResult cmd_configure(const RunConfig& cfg, const std::string& stats_path,
                               std::optional<double> vram_budget);

void write_json_file(const nlohmann::json& j, const std::string& path);
void write_text_file(const std::string& text, const std::string& path);

}  // namespace moesim

#endif  // MOESIM_COMMANDS_H_
