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

#include "moesim/run_config.h"

#include <cstdlib>
#include <fstream>

#include "moesim/error.h"

namespace moesim {
namespace {

template <typename T>
T get_as(const nlohmann::json& j, const char* key) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

}  // namespace

TraceGenConfig RunConfig::default_workload() {
  TraceGenConfig w;
  w.zipf_exponent = 1.0;
  w.repeat_prob = 0.6;
  w.predictor_accuracy = {0.8};
  w.tokens = 2000;
  w.prompt_tokens = 32;
  return w;
}

void apply_config_json(RunConfig& cfg, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunOptions& o = cfg.run;
  for (const auto& [key, v] : j.items()) {
    const char* k = key.c_str();
    if (key == "model") {
      cfg.model = v;
    } else if (key == "device") {
      cfg.device = v;
    } else if (key == "trace") {
      cfg.trace_path = get_as<std::string>(v, k);
    } else if (key == "workload") {
      try {
        // Start from the current workload so partial objects only override.
        nlohmann::json merged = cfg.workload;
        merged.merge_patch(v);
        cfg.workload = merged.get<TraceGenConfig>();
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("workload: ") + e.what());
      }
    } else if (key == "mode") {
      o.mode = parse_mode(get_as<std::string>(v, k));
    } else if (key == "policy") {
      o.policy = parse_policy(get_as<std::string>(v, k));
    } else if (key == "omega") {
      o.lcp.omega = get_as<int>(v, k);
    } else if (key == "rho") {
      o.lcp.rho = get_as<double>(v, k);
    } else if (key == "granularity") {
      o.granularity = get_as<double>(v, k);
    } else if (key == "reconfig_interval") {
      o.reconfig_interval = get_as<std::int64_t>(v, k);
    } else if (key == "split") {
      o.split = get_as<double>(v, k);
    } else if (key == "layer_budget") {
      o.layer_budget = v.is_null() ? std::nullopt : std::optional(get_as<double>(v, k));
    } else if (key == "configurator") {
      o.configurator = v.is_null() ? std::nullopt : std::optional(get_as<bool>(v, k));
    } else if (key == "prefetch") {
      o.prefetch = v.is_null() ? std::nullopt : std::optional(get_as<bool>(v, k));
    } else if (key == "split_override") {
      o.split_override = v.is_null() ? std::nullopt : std::optional(get_as<double>(v, k));
    } else if (key == "prefill_scale") {
      o.prefill_scale = get_as<double>(v, k);
    } else if (key == "cold_start") {
      o.cold_start = get_as<bool>(v, k);
    } else if (key == "gated_admission") {
      o.gated_admission = get_as<bool>(v, k);
    } else if (key == "seed") {
      o.seed = get_as<std::uint64_t>(v, k);
      cfg.workload.seed = o.seed;
    } else if (key == "output_dir") {
      cfg.output_dir = get_as<std::string>(v, k);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
  RunConfig cfg;
  apply_config_json(cfg, j);
  return cfg;
}

ModelSpec resolved_model(const RunConfig& cfg) { return model_from_config(cfg.model); }

DeviceSpec resolved_device(const RunConfig& cfg) { return device_from_config(cfg.device); }

void validate_run_config(const RunConfig& cfg) {
  const ModelSpec model = resolved_model(cfg);
  const DeviceSpec device = resolved_device(cfg);
  validate_lcp_params(cfg.run.lcp);
  resolve_run(cfg.run, model, device);
  if (cfg.trace_path.empty()) validate_trace_config(model, cfg.workload);
}

ActivationTrace load_or_generate(const RunConfig& cfg, const ModelSpec& model) {
  if (!cfg.trace_path.empty()) {
    ActivationTrace t = read_trace(cfg.trace_path);
    t.check_shape(model);
    return t;
  }
  return generate_trace(model, cfg.workload);
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j{{"model", resolved_model(cfg)},
                   {"device", resolved_device(cfg)},
                   {"run", to_json(cfg.run)}};
  if (cfg.trace_path.empty()) {
    j["workload"] = cfg.workload;
  } else {
    j["trace"] = cfg.trace_path;
  }
  return j;
}

std::string output_dir(const RunConfig& cfg) {
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* env = std::getenv(kOutDirEnv); env != nullptr && *env != '\0') {
    return env;
  }
  return ".";
}

}  // namespace moesim
