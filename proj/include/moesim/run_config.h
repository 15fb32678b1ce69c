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

#ifndef MOESIM_RUN_CONFIG_H_
#define MOESIM_RUN_CONFIG_H_

#include <optional>
#include <string>

#include "json.hpp"
#include "moesim/engine.h"
#include "moesim/specs.h"
#include "moesim/trace.h"

namespace moesim {

// Environment variable naming the default output directory.
inline constexpr const char* kOutDirEnv = "MOESIM_OUT_DIR";

// Everything a command needs. Built from defaults, then a JSON config file,
// then command-line flags, each layer overriding the previous one.
struct RunConfig {
  nlohmann::json model = "qwen-like";  // builtin name or spec object
  nlohmann::json device = "a6000";
  // Trace file to replay; empty means synthesize from `workload`.
  std::string trace_path;
  TraceGenConfig workload = default_workload();
  RunOptions run;
  std::string output_dir;

  static TraceGenConfig default_workload();
};

// Applies the keys of a config-file object. Unknown keys are a ConfigError.
//   model, device        builtin name or object
//   trace                path of a trace file
//   workload             generator settings (see TraceGenConfig)
//   mode, policy, omega, rho, granularity, reconfig_interval, split,
//   layer_budget, configurator, prefetch, prefill_scale, cold_start,
//   gated_admission, seed, output_dir
void apply_config_json(RunConfig& cfg, const nlohmann::json& j);
RunConfig load_config_file(const std::string& path);

ModelSpec resolved_model(const RunConfig& cfg);
DeviceSpec resolved_device(const RunConfig& cfg);

// Throws ConfigError on inconsistent settings.
void validate_run_config(const RunConfig& cfg);

// Loads the trace file, or generates the workload trace.
ActivationTrace load_or_generate(const RunConfig& cfg, const ModelSpec& model);

// Full resolved configuration, embedded in every report.
nlohmann::json to_json(const RunConfig& cfg);

// Output directory: explicit value, else $MOESIM_OUT_DIR, else ".".
std::string output_dir(const RunConfig& cfg);

}  // namespace moesim

#endif  // MOESIM_RUN_CONFIG_H_
