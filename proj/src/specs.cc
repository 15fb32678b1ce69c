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

#include "moesim/specs.h"

#include <cmath>
#include <set>

#include "moesim/error.h"

namespace moesim {
namespace {

using nlohmann::json;

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

bool positive_finite(double v) { return std::isfinite(v) && v > 0; }

// Qwen1.5-MoE-A2.7B shape: 2048x1408 gated FFN experts in fp16.
constexpr double kQwenExpertBytes = 3.0 * 2048 * 1408 * 2;
// Mixtral-8x7B shape: 4096x14336 gated FFN experts quantized to 2 bits.
constexpr double kMixtralExpertBytes = 3.0 * 4096 * 14336 * 2 / 8;

// 400 MiB/s moves one qwen-like expert in exactly 41.25 ms, so four
// activated experts take 165 ms per layer against 57 ms of compute.
constexpr double kA6000Bandwidth = 400.0 * 1024 * 1024;

template <typename T>
void override_field(const json& j, const char* key, T& field,
                    std::set<std::string>& seen) {
  if (auto it = j.find(key); it != j.end()) {
    if (!it->is_number()) {
      throw ConfigError(std::string("field '") + key + "' must be a number");
    }
    field = it->get<T>();
    seen.insert(key);
  }
}

void reject_unknown(const json& j, const std::set<std::string>& seen,
                    const char* what) {
  for (const auto& [key, value] : j.items()) {
    if (key != "base" && !seen.count(key)) {
      throw ConfigError(std::string("unknown ") + what + " field '" + key +
                        "'");
    }
  }
}

}  // namespace

ModelSpec validate_model_spec(const ModelSpec& spec) {
  require(spec.layers >= 1, "model.layers must be >= 1");
  require(spec.experts_per_layer >= 2, "model.experts_per_layer must be >= 2");
  require(spec.activated_per_token >= 1,
          "model.activated_per_token must be >= 1");
  require(spec.activated_per_token < spec.experts_per_layer,
          "K must be < N (model.activated_per_token < "
          "model.experts_per_layer)");
  require(positive_finite(spec.expert_size_bytes),
          "model.expert_size_bytes must be > 0");
  require(std::isfinite(spec.nonexpert_size_bytes) &&
              spec.nonexpert_size_bytes >= 0,
          "model.nonexpert_size_bytes must be >= 0");
  require(spec.buffer_experts >= spec.activated_per_token,
          "model.buffer_experts must be >= K");
  return spec;
}

DeviceSpec validate_device_spec(const DeviceSpec& spec) {
  require(positive_finite(spec.pcie_bandwidth),
          "device.pcie_bandwidth must be > 0");
  require(positive_finite(spec.vram_budget_experts),
          "device.vram_budget_experts must be > 0");
  require(positive_finite(spec.t_comp_att), "device.t_comp_att must be > 0");
  require(positive_finite(spec.t_comp_moe), "device.t_comp_moe must be > 0");
  require(positive_finite(spec.t_comp_head), "device.t_comp_head must be > 0");
  return spec;
}

TimingProfile derive_timing(const ModelSpec& model, const DeviceSpec& device) {
  validate_model_spec(model);
  validate_device_spec(device);
  TimingProfile t;
  t.t_load_exp = model.expert_size_bytes / device.pcie_bandwidth * 1000.0;
  t.t_comp_exp = device.t_comp_moe / model.activated_per_token;
  t.t_comp_att = device.t_comp_att;
  t.t_comp_moe = device.t_comp_moe;
  t.t_comp_head = device.t_comp_head;
  return t;
}

ModelSpec builtin_model(std::string_view name) {
  if (name == "qwen-like") {
    return ModelSpec{.layers = 24,
                     .experts_per_layer = 60,
                     .activated_per_token = 4,
                     .expert_size_bytes = kQwenExpertBytes,
                     .nonexpert_size_bytes = 3685834240.0,
                     .buffer_experts = 4};
  }
  if (name == "mixtral-like") {
    return ModelSpec{.layers = 32,
                     .experts_per_layer = 8,
                     .activated_per_token = 2,
                     .expert_size_bytes = kMixtralExpertBytes,
                     .nonexpert_size_bytes = 801421696.0,
                     .buffer_experts = 2};
  }
  throw ConfigError("unknown model profile '" + std::string(name) + "'");
}

DeviceSpec builtin_device(std::string_view name) {
  // The head time is an assumed value; the per-layer split between attention
  // and MoE compute only has to sum to 57 ms.
  DeviceSpec d{.pcie_bandwidth = kA6000Bandwidth,
               .vram_budget_experts = 240,
               .t_comp_att = 17,
               .t_comp_moe = 40,
               .t_comp_head = 15};
  if (name == "a6000") return d;
  if (name == "fast-pcie") {
    d.pcie_bandwidth = 3 * kA6000Bandwidth;
    return d;
  }
  if (name == "slow-pcie") {
    d.pcie_bandwidth = kA6000Bandwidth / 2;
    return d;
  }
  throw ConfigError("unknown device profile '" + std::string(name) + "'");
}

std::vector<std::string> builtin_model_names() {
  return {"qwen-like", "mixtral-like"};
}

std::vector<std::string> builtin_device_names() {
  return {"a6000", "fast-pcie", "slow-pcie"};
}

void to_json(json& j, const ModelSpec& m) {
  j = json{{"layers", m.layers},
           {"experts_per_layer", m.experts_per_layer},
           {"activated_per_token", m.activated_per_token},
           {"expert_size_bytes", m.expert_size_bytes},
           {"nonexpert_size_bytes", m.nonexpert_size_bytes},
           {"buffer_experts", m.buffer_experts}};
}

void from_json(const json& j, ModelSpec& m) { m = model_from_config(j); }

void to_json(json& j, const DeviceSpec& d) {
  j = json{{"pcie_bandwidth", d.pcie_bandwidth},
           {"vram_budget_experts", d.vram_budget_experts},
           {"t_comp_att", d.t_comp_att},
           {"t_comp_moe", d.t_comp_moe},
           {"t_comp_head", d.t_comp_head}};
}

void from_json(const json& j, DeviceSpec& d) { d = device_from_config(j); }

void to_json(json& j, const TimingProfile& t) {
  j = json{{"t_load_exp", t.t_load_exp},   {"t_comp_exp", t.t_comp_exp},
           {"t_comp_att", t.t_comp_att},   {"t_comp_moe", t.t_comp_moe},
           {"t_comp_head", t.t_comp_head}, {"load_dominated", t.load_dominated()}};
}

ModelSpec model_from_config(const json& j) {
  if (j.is_string()) return builtin_model(j.get<std::string>());
  require(j.is_object(), "model must be a profile name or an object");
  ModelSpec m;
  if (auto it = j.find("base"); it != j.end()) {
    require(it->is_string(), "model.base must be a profile name");
    m = builtin_model(it->get<std::string>());
  }
  std::set<std::string> seen;
  override_field(j, "layers", m.layers, seen);
  override_field(j, "experts_per_layer", m.experts_per_layer, seen);
  override_field(j, "activated_per_token", m.activated_per_token, seen);
  override_field(j, "expert_size_bytes", m.expert_size_bytes, seen);
  override_field(j, "nonexpert_size_bytes", m.nonexpert_size_bytes, seen);
  override_field(j, "buffer_experts", m.buffer_experts, seen);
  reject_unknown(j, seen, "model");
  return validate_model_spec(m);
}

DeviceSpec device_from_config(const json& j) {
  if (j.is_string()) return builtin_device(j.get<std::string>());
  require(j.is_object(), "device must be a profile name or an object");
  DeviceSpec d;
  if (auto it = j.find("base"); it != j.end()) {
    require(it->is_string(), "device.base must be a profile name");
    d = builtin_device(it->get<std::string>());
  }
  std::set<std::string> seen;
  override_field(j, "pcie_bandwidth", d.pcie_bandwidth, seen);
  override_field(j, "vram_budget_experts", d.vram_budget_experts, seen);
  override_field(j, "t_comp_att", d.t_comp_att, seen);
  override_field(j, "t_comp_moe", d.t_comp_moe, seen);
  override_field(j, "t_comp_head", d.t_comp_head, seen);
  reject_unknown(j, seen, "device");
  return validate_device_spec(d);
}

}  // namespace moesim
