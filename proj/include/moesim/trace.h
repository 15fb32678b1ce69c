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

#ifndef MOESIM_TRACE_H_
#define MOESIM_TRACE_H_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "moesim/specs.h"

namespace moesim {

// Routing outcome of one token at one layer.
struct LayerActivation {
  std::vector<ExpertId> activated;  // K ids, descending router score
  std::vector<double> scores;       // router scores of `activated`
  std::vector<ExpertId> predicted;  // P ids, descending predicted score

  bool operator==(const LayerActivation&) const = default;
};

struct TokenRecord {
  std::int64_t token_index = 0;
  std::vector<LayerActivation> per_layer;

  bool operator==(const TokenRecord&) const = default;
};

// Synthetic workload knobs.
struct TraceGenConfig {
  // Per-layer popularity skew; `zipf_per_layer` (empty or one per layer)
  // overrides the global exponent.
  double zipf_exponent = 1.0;
  std::vector<double> zipf_per_layer;
  // Probability that each expert of the previous token is routed again.
  double repeat_prob = 0.0;
  // Target top-K prediction accuracy, one value for all layers or one per
  // layer.
  std::vector<double> predictor_accuracy = {0.8};
  // Per-token probability that two experts of a layer swap popularity. Zero
  // keeps the popularity law stationary.
  double popularity_drift = 0.0;
  // Predicted ranking length; 0 selects min(N, 2K).
  int prediction_length = 0;
  std::uint64_t seed = 0;
  std::int64_t tokens = 0;
  std::int64_t prompt_tokens = 0;

  bool operator==(const TraceGenConfig&) const = default;
};

void to_json(nlohmann::json& j, const TraceGenConfig& c);
void from_json(const nlohmann::json& j, TraceGenConfig& c);

// Throws ConfigError on out-of-range knobs.
void validate_trace_config(const ModelSpec& model, const TraceGenConfig& cfg);

struct TraceHeader {
  int layers = 0;
  int experts = 0;
  int activated = 0;
  int predicted = 0;
  std::int64_t prompt_tokens = 0;
  std::uint64_t seed = 0;
  // Generator settings when the trace is synthetic, null otherwise.
  nlohmann::json generator;

  bool operator==(const TraceHeader&) const = default;
};

// Non-owning view of one (token, layer) entry.
struct LayerView {
  std::span<const ExpertId> activated;
  std::span<const double> scores;
  std::span<const ExpertId> predicted;
};

// In-memory trace with flat storage: tokens x layers x {K, K, P}.
class ActivationTrace {
 public:
  ActivationTrace() = default;
  explicit ActivationTrace(TraceHeader header);

  const TraceHeader& header() const { return header_; }
  std::int64_t size() const { return tokens_; }
  bool is_prompt(std::int64_t token) const {
    return token < header_.prompt_tokens;
  }

  LayerView at(std::int64_t token, int layer) const;
  TokenRecord record(std::int64_t token) const;

  // Validates against the header; throws RuntimeError on violation.
  void append(const TokenRecord& record);
  void reserve(std::int64_t tokens);

  // Throws RuntimeError unless the trace was produced for this model shape.
  void check_shape(const ModelSpec& model) const;

  bool operator==(const ActivationTrace&) const = default;

 private:
  friend ActivationTrace generate_trace(const ModelSpec&,
                                        const TraceGenConfig&);

  std::size_t slot(std::int64_t token, int layer) const {
    return static_cast<std::size_t>(token) * header_.layers + layer;
  }

  TraceHeader header_;
  std::int64_t tokens_ = 0;
  std::vector<ExpertId> activated_;
  std::vector<double> scores_;
  std::vector<ExpertId> predicted_;
};

// Synthesizes a trace with a long-tail popularity law per layer, temporal
// locality through previous-token repeats, and a noisy predicted ranking.
// Deterministic in (model, cfg).
ActivationTrace generate_trace(const ModelSpec& model,
                               const TraceGenConfig& cfg);

// Fraction of activated experts that appear in the predicted top-K.
double topk_prediction_accuracy(const ActivationTrace& trace, int layer);

// JSON-Lines trace files. Line 1 is the header, then one token per line.
void write_trace(const ActivationTrace& trace, std::ostream& out);
void write_trace(const ActivationTrace& trace, const std::string& path);
ActivationTrace read_trace(std::istream& in);
ActivationTrace read_trace(const std::string& path);

// Single-pass reader; errors carry the 1-based line number.
class TraceReader {
 public:
  explicit TraceReader(std::istream& in);
  const TraceHeader& header() const { return header_; }
  std::optional<TokenRecord> next();

 private:
  std::istream& in_;
  TraceHeader header_;
  std::int64_t line_ = 1;
  std::int64_t expected_token_ = 0;
};

}  // namespace moesim

#endif  // MOESIM_TRACE_H_
