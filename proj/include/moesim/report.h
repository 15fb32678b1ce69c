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

#ifndef MOESIM_REPORT_H_
#define MOESIM_REPORT_H_

#include <iosfwd>
#include <string>

#include "json.hpp"
#include "moesim/engine.h"

namespace moesim {

inline constexpr int kReportSchemaVersion = 1;

// Summary JSON. Per-token latencies are left to the CSV writer unless
// `with_tokens` is set.
nlohmann::json report_to_json(const SimReport& report, bool with_tokens = false);

// Shortest round-trip decimal form of `v`.
std::string format_double(double v);

// token,latency_ms
void write_token_csv(const SimReport& report, std::ostream& out);
// layer,mean_exposed_ms,hit_rate,topk_accuracy,budget,cache_size,split
void write_layer_csv(const SimReport& report, std::ostream& out);

}  // namespace moesim

#endif  // MOESIM_REPORT_H_
