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

#ifndef MOESIM_SPECS_H_
#define MOESIM_SPECS_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace moesim {

using ExpertId = std::int32_t;
// All latencies in the simulator are milliseconds.
using Millis = double;

// Static shape of a Mixture-of-Experts model.
struct ModelSpec {
  int layers = 0;
  int experts_per_layer = 0;
  int activated_per_token = 0;
  double expert_size_bytes = 0;
  double nonexpert_size_bytes = 0;
  // Prefetch buffer capacity in full-expert units.
  int buffer_experts = 0;

  bool operator==(const ModelSpec&) const = default;
};

// Target hardware costs. Compute times are per layer per token.
struct DeviceSpec {
  double pcie_bandwidth = 0;  // bytes per second
  // Expert-cache VRAM in full-expert units, after non-expert parameters and
  // the prefetch buffer have been reserved.
  double vram_budget_experts = 0;
  Millis t_comp_att = 0;
  Millis t_comp_moe = 0;
  Millis t_comp_head = 0;

  bool operator==(const DeviceSpec&) const = default;
};

// Timing constants derived from a (model, device) pair. The per-module
// compute times are carried along so that downstream code needs only this.
struct TimingProfile {
  Millis t_load_exp = 0;
  Millis t_comp_exp = 0;
  Millis t_comp_att = 0;
  Millis t_comp_moe = 0;
  Millis t_comp_head = 0;

  // Loading an expert is slower than computing one.
  bool load_dominated() const { return t_load_exp > t_comp_exp; }
  bool operator==(const TimingProfile&) const = default;
};

// Throws ConfigError naming the offending field.
ModelSpec validate_model_spec(const ModelSpec& spec);
DeviceSpec validate_device_spec(const DeviceSpec& spec);

TimingProfile derive_timing(const ModelSpec& model, const DeviceSpec& device);

// Built-in profiles. Unknown names throw ConfigError.
ModelSpec builtin_model(std::string_view name);
DeviceSpec builtin_device(std::string_view name);
std::vector<std::string> builtin_model_names();
std::vector<std::string> builtin_device_names();

void to_json(nlohmann::json& j, const ModelSpec& m);
void from_json(const nlohmann::json& j, ModelSpec& m);
void to_json(nlohmann::json& j, const DeviceSpec& d);
void from_json(const nlohmann::json& j, DeviceSpec& d);
void to_json(nlohmann::json& j, const TimingProfile& t);

// Accepts either a built-in name or an object. An object may carry a "base"
// built-in name whose fields the remaining keys override.
ModelSpec model_from_config(const nlohmann::json& j);
DeviceSpec device_from_config(const nlohmann::json& j);

}  // namespace moesim

#endif  // MOESIM_SPECS_H_
