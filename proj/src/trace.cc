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

#include "moesim/trace.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

#include "moesim/error.h"
#include "moesim/random.h"

namespace moesim {
namespace {

using nlohmann::json;

constexpr const char* kFormat = "moesim-trace";
constexpr int kFormatVersion = 1;

int default_prediction_length(int experts, int activated) {
  return std::min(experts, 2 * activated);
}

double per_layer(const std::vector<double>& values, int layer) {
  return values.size() == 1 ? values[0] : values[layer];
}

// Validates one layer entry; returns an empty string when it is well formed.
std::string check_layer(const TraceHeader& h, const LayerActivation& a) {
  auto check_ids = [&](const std::vector<ExpertId>& ids,
                       const char* what) -> std::string {
    std::vector<char> seen(h.experts, 0);
    for (ExpertId e : ids) {
      if (e < 0 || e >= h.experts) {
        return std::string(what) + " id " + std::to_string(e) +
               " out of range [0, " + std::to_string(h.experts) + ")";
      }
      if (seen[e]) {
        return std::string(what) + " id " + std::to_string(e) + " repeated";
      }
      seen[e] = 1;
    }
    return {};
  };
  if (static_cast<int>(a.activated.size()) != h.activated) {
    return "expected " + std::to_string(h.activated) + " activated experts, got " +
           std::to_string(a.activated.size());
  }
  if (a.scores.size() != a.activated.size()) {
    return "expected " + std::to_string(h.activated) + " scores, got " +
           std::to_string(a.scores.size());
  }
  if (static_cast<int>(a.predicted.size()) != h.predicted) {
    return "expected " + std::to_string(h.predicted) + " predicted experts, got " +
           std::to_string(a.predicted.size());
  }
  if (auto err = check_ids(a.activated, "activated"); !err.empty()) return err;
  if (auto err = check_ids(a.predicted, "predicted"); !err.empty()) return err;
  double sum = 0;
  for (double s : a.scores) {
    if (!(s > 0 && s <= 1)) return "score outside (0, 1]";
    sum += s;
  }
  if (sum > 1 + 1e-9) return "scores sum above 1";
  return {};
}

void check_header(const TraceHeader& h) {
  if (h.layers < 1 || h.experts < 2 || h.activated < 1 ||
      h.activated >= h.experts) {
    throw RuntimeError("trace header: need L >= 1 and 1 <= K < N");
  }
  if (h.predicted < h.activated || h.predicted > h.experts) {
    throw RuntimeError("trace header: need K <= P <= N");
  }
  if (h.prompt_tokens < 0) {
    throw RuntimeError("trace header: prompt_tokens must be >= 0");
  }
}

// Popularity of one layer: Zipf weights over a random expert permutation.
struct LayerPopularity {
  std::vector<double> weights;
  WeightedSampler sampler;

  void rebuild() { sampler = WeightedSampler(weights); }
};

// Appends `m` distinct experts outside `excluded` to `out`. Each allowed
// expert is included with probability m * w / sum(w), capped at 1 with the
// excess spread over the rest, via systematic sampling over a shuffled order.
template <typename G>
void sample_proportional(G& rng, const std::vector<double>& weights,
                         const std::vector<char>& excluded, int m,
                         std::vector<ExpertId>& out) {
  std::vector<ExpertId> allowed;
  for (std::size_t e = 0; e < weights.size(); ++e) {
    if (!excluded[e]) allowed.push_back(static_cast<ExpertId>(e));
  }
  std::vector<double> incl(weights.size(), 0.0);
  std::vector<char> capped(weights.size(), 0);
  int remaining = m;
  for (bool changed = true; changed && remaining > 0;) {
    changed = false;
    double total = 0;
    for (ExpertId e : allowed) {
      if (!capped[e]) total += weights[e];
    }
    for (ExpertId e : allowed) {
      if (capped[e]) continue;
      incl[e] = remaining * weights[e] / total;
      if (incl[e] >= 1.0) {
        incl[e] = 1.0;
        capped[e] = 1;
        --remaining;
        changed = true;
      }
    }
  }
  shuffle_in_place(rng, std::span<ExpertId>(allowed));
  double threshold = uniform01(rng);
  double acc = 0;
  int taken = 0;
  for (ExpertId e : allowed) {
    acc += incl[e];
    if (taken < m && acc > threshold) {
      out.push_back(e);
      ++taken;
      threshold += 1.0;
    }
  }
  // Rounding can leave the last threshold a hair above the total.
  for (ExpertId e : allowed) {
    if (taken >= m) break;
    if (std::find(out.end() - taken, out.end(), e) == out.end()) {
      out.push_back(e);
      ++taken;
    }
  }
}

void append_number(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

void append_number(std::string& out, std::int64_t v) {
  char buf[24];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

template <typename T>
void append_array(std::string& out, std::span<const T> values) {
  out.push_back('[');
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out.push_back(',');
    if constexpr (std::is_floating_point_v<T>) {
      append_number(out, values[i]);
    } else {
      append_number(out, static_cast<std::int64_t>(values[i]));
    }
  }
  out.push_back(']');
}

json header_to_json(const TraceHeader& h) {
  return json{{"format", kFormat},       {"version", kFormatVersion},
              {"L", h.layers},           {"N", h.experts},
              {"K", h.activated},        {"P", h.predicted},
              {"prompt_tokens", h.prompt_tokens},
              {"seed", h.seed},          {"generator", h.generator}};
}

std::vector<ExpertId> parse_ids(const json& j, const char* key) {
  const json& arr = j.at(key);
  if (!arr.is_array()) throw std::invalid_argument(std::string(key) + " must be an array");
  std::vector<ExpertId> ids;
  ids.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number_integer()) {
      throw std::invalid_argument(std::string(key) + " must hold integers");
    }
    ids.push_back(v.get<ExpertId>());
  }
  return ids;
}

}  // namespace

void to_json(json& j, const TraceGenConfig& c) {
  j = json{{"zipf_exponent", c.zipf_exponent},
           {"zipf_per_layer", c.zipf_per_layer},
           {"repeat_prob", c.repeat_prob},
           {"predictor_accuracy", c.predictor_accuracy},
           {"popularity_drift", c.popularity_drift},
           {"prediction_length", c.prediction_length},
           {"seed", c.seed},
           {"tokens", c.tokens},
           {"prompt_tokens", c.prompt_tokens}};
}

void from_json(const json& j, TraceGenConfig& c) {
  if (!j.is_object()) throw ConfigError("generator config must be an object");
  TraceGenConfig out;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "zipf_exponent") {
        out.zipf_exponent = value.get<double>();
      } else if (key == "zipf_per_layer") {
        out.zipf_per_layer = value.get<std::vector<double>>();
      } else if (key == "repeat_prob") {
        out.repeat_prob = value.get<double>();
      } else if (key == "predictor_accuracy") {
        out.predictor_accuracy = value.is_array()
                                     ? value.get<std::vector<double>>()
                                     : std::vector<double>{value.get<double>()};
      } else if (key == "popularity_drift") {
        out.popularity_drift = value.get<double>();
      } else if (key == "prediction_length") {
        out.prediction_length = value.get<int>();
      } else if (key == "seed") {
        out.seed = value.get<std::uint64_t>();
      } else if (key == "tokens") {
        out.tokens = value.get<std::int64_t>();
      } else if (key == "prompt_tokens") {
        out.prompt_tokens = value.get<std::int64_t>();
      } else {
        throw ConfigError("unknown generator field '" + key + "'");
      }
    } catch (const json::exception&) {
      throw ConfigError("generator field '" + key + "' has the wrong type");
    }
  }
  c = std::move(out);
}

void validate_trace_config(const ModelSpec& model, const TraceGenConfig& cfg) {
  validate_model_spec(model);
  const int L = model.layers;
  const int N = model.experts_per_layer;
  const int K = model.activated_per_token;
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(cfg.tokens >= 1, "generator.tokens must be >= 1");
  require(cfg.prompt_tokens >= 0 && cfg.prompt_tokens <= cfg.tokens,
          "generator.prompt_tokens must be in [0, tokens]");
  require(std::isfinite(cfg.zipf_exponent) && cfg.zipf_exponent >= 0,
          "generator.zipf_exponent must be >= 0");
  require(cfg.zipf_per_layer.empty() ||
              static_cast<int>(cfg.zipf_per_layer.size()) == L,
          "generator.zipf_per_layer must be empty or have one entry per layer");
  for (double z : cfg.zipf_per_layer) {
    require(std::isfinite(z) && z >= 0, "generator.zipf_per_layer entries must be >= 0");
  }
  require(cfg.repeat_prob >= 0 && cfg.repeat_prob <= 1,
          "generator.repeat_prob must be in [0, 1]");
  require(cfg.predictor_accuracy.size() == 1 ||
              static_cast<int>(cfg.predictor_accuracy.size()) == L,
          "generator.predictor_accuracy must have 1 or L entries");
  for (double a : cfg.predictor_accuracy) {
    require(a >= 0 && a <= 1, "generator.predictor_accuracy entries must be in [0, 1]");
  }
  require(cfg.popularity_drift >= 0 && cfg.popularity_drift <= 1,
          "generator.popularity_drift must be in [0, 1]");
  require(cfg.prediction_length == 0 ||
              (cfg.prediction_length >= K && cfg.prediction_length <= N),
          "generator.prediction_length must be 0 or in [K, N]");
}

ActivationTrace::ActivationTrace(TraceHeader header) : header_(std::move(header)) {
  check_header(header_);
}

LayerView ActivationTrace::at(std::int64_t token, int layer) const {
  const std::size_t s = slot(token, layer);
  const std::size_t K = header_.activated;
  const std::size_t P = header_.predicted;
  return LayerView{
      std::span<const ExpertId>(activated_).subspan(s * K, K),
      std::span<const double>(scores_).subspan(s * K, K),
      std::span<const ExpertId>(predicted_).subspan(s * P, P)};
}

TokenRecord ActivationTrace::record(std::int64_t token) const {
  TokenRecord r;
  r.token_index = token;
  r.per_layer.reserve(header_.layers);
  for (int i = 0; i < header_.layers; ++i) {
    LayerView v = at(token, i);
    r.per_layer.push_back(LayerActivation{
        {v.activated.begin(), v.activated.end()},
        {v.scores.begin(), v.scores.end()},
        {v.predicted.begin(), v.predicted.end()}});
  }
  return r;
}

void ActivationTrace::reserve(std::int64_t tokens) {
  const auto slots = static_cast<std::size_t>(tokens) * header_.layers;
  activated_.reserve(slots * header_.activated);
  scores_.reserve(slots * header_.activated);
  predicted_.reserve(slots * header_.predicted);
}

void ActivationTrace::append(const TokenRecord& r) {
  if (static_cast<int>(r.per_layer.size()) != header_.layers) {
    throw RuntimeError("token " + std::to_string(r.token_index) + ": expected " +
                       std::to_string(header_.layers) + " layers, got " +
                       std::to_string(r.per_layer.size()));
  }
  for (int i = 0; i < header_.layers; ++i) {
    if (auto err = check_layer(header_, r.per_layer[i]); !err.empty()) {
      throw RuntimeError("token " + std::to_string(r.token_index) + " layer " +
                         std::to_string(i) + ": " + err);
    }
  }
  for (const auto& a : r.per_layer) {
    activated_.insert(activated_.end(), a.activated.begin(), a.activated.end());
    scores_.insert(scores_.end(), a.scores.begin(), a.scores.end());
    predicted_.insert(predicted_.end(), a.predicted.begin(), a.predicted.end());
  }
  ++tokens_;
}

void ActivationTrace::check_shape(const ModelSpec& model) const {
  if (header_.layers != model.layers ||
      header_.experts != model.experts_per_layer ||
      header_.activated != model.activated_per_token) {
    throw RuntimeError(
        "trace shape (L=" + std::to_string(header_.layers) +
        ", N=" + std::to_string(header_.experts) +
        ", K=" + std::to_string(header_.activated) +
        ") does not match model (L=" + std::to_string(model.layers) +
        ", N=" + std::to_string(model.experts_per_layer) +
        ", K=" + std::to_string(model.activated_per_token) + ")");
  }
}

ActivationTrace generate_trace(const ModelSpec& model,
                               const TraceGenConfig& cfg) {
  validate_trace_config(model, cfg);
  const int L = model.layers;
  const int N = model.experts_per_layer;
  const int K = model.activated_per_token;
  const int P = cfg.prediction_length ? cfg.prediction_length
                                      : default_prediction_length(N, K);

  TraceHeader header{.layers = L,
                     .experts = N,
                     .activated = K,
                     .predicted = P,
                     .prompt_tokens = cfg.prompt_tokens,
                     .seed = cfg.seed,
                     .generator = cfg};
  ActivationTrace trace(std::move(header));
  const auto T = cfg.tokens;
  const std::size_t slots = static_cast<std::size_t>(T) * L;
  trace.activated_.resize(slots * K);
  trace.scores_.resize(slots * K);
  trace.predicted_.resize(slots * P);
  trace.tokens_ = T;

  std::vector<ExpertId> chosen;
  std::vector<ExpertId> previous;
  std::vector<double> draws(K);
  std::vector<std::size_t> order(K);
  std::vector<char> excluded(N);
  std::vector<ExpertId> tail;
  std::vector<ExpertId> demoted;

  // Layers are independent streams, so a layer's content does not depend on
  // how many layers the model has before it.
  for (int layer = 0; layer < L; ++layer) {
    std::mt19937_64 act_rng(mix_seed(cfg.seed, layer, 1));
    std::mt19937_64 pred_rng(mix_seed(cfg.seed, layer, 2));
    std::mt19937_64 drift_rng(mix_seed(cfg.seed, layer, 3));
    const double zipf =
        cfg.zipf_per_layer.empty() ? cfg.zipf_exponent : cfg.zipf_per_layer[layer];
    const double accuracy = per_layer(cfg.predictor_accuracy, layer);

    std::vector<ExpertId> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    shuffle_in_place(act_rng, std::span<ExpertId>(perm));
    LayerPopularity pop;
    pop.weights.assign(N, 0.0);
    for (int r = 0; r < N; ++r) {
      pop.weights[perm[r]] = 1.0 / std::pow(static_cast<double>(r + 1), zipf);
    }
    pop.rebuild();
    previous.clear();

    for (std::int64_t t = 0; t < T; ++t) {
      if (cfg.popularity_drift > 0 && uniform01(drift_rng) < cfg.popularity_drift) {
        std::size_t a = uniform_index(drift_rng, N);
        std::size_t b = uniform_index(drift_rng, N - 1);
        if (b >= a) ++b;
        std::swap(pop.weights[a], pop.weights[b]);
        pop.rebuild();
      }

      chosen.clear();
      std::fill(excluded.begin(), excluded.end(), 0);
      for (ExpertId e : previous) {
        if (uniform01(act_rng) < cfg.repeat_prob) {
          chosen.push_back(e);
          excluded[e] = 1;
        }
      }
      sample_proportional(act_rng, pop.weights, excluded,
                          K - static_cast<int>(chosen.size()), chosen);
      shuffle_in_place(act_rng, std::span<ExpertId>(chosen));
      previous = chosen;

      // Router scores: softmax over exponential draws, descending.
      double max_draw = 0;
      for (int j = 0; j < K; ++j) {
        draws[j] = -std::log1p(-uniform01(act_rng));
        max_draw = std::max(max_draw, draws[j]);
      }
      double denom = 0;
      for (int j = 0; j < K; ++j) {
        draws[j] = std::exp(draws[j] - max_draw);
        denom += draws[j];
      }
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return draws[a] > draws[b]; });

      const std::size_t s = trace.slot(t, layer);
      ExpertId* act = &trace.activated_[s * K];
      double* sc = &trace.scores_[s * K];
      ExpertId* pred = &trace.predicted_[s * P];
      for (int j = 0; j < K; ++j) {
        act[j] = chosen[j];
        sc[j] = draws[order[j]] / denom;
      }

      // Predicted ranking: the true order with each activated expert swapped
      // out of the top-K with probability 1 - accuracy. Variable-length draws
      // come from a per-token stream so the activation-independent decisions
      // stay aligned across accuracy settings.
      SplitMix64 token_rng(pred_rng());
      demoted.clear();
      std::vector<char> keep(K);
      for (int j = 0; j < K; ++j) {
        keep[j] = uniform01(pred_rng) < accuracy;
      }
      std::fill(excluded.begin(), excluded.end(), 0);
      for (int j = 0; j < K; ++j) excluded[act[j]] = 1;
      // With fewer than K non-activated experts a swap may have no distractor
      // left; the activated expert then stays in place.
      int spare = N - K;
      for (int j = 0; j < K; ++j) {
        if (keep[j] || spare == 0) {
          pred[j] = act[j];
        } else {
          auto d = static_cast<ExpertId>(pop.sampler.sample_excluding(token_rng, excluded));
          excluded[d] = 1;
          --spare;
          pred[j] = d;
          demoted.push_back(act[j]);
        }
      }
      const int tail_len = P - K;
      tail.clear();
      const int fillers = std::max(0, tail_len - static_cast<int>(demoted.size()));
      for (int j = 0; j < fillers; ++j) {
        auto d = static_cast<ExpertId>(pop.sampler.sample_excluding(token_rng, excluded));
        excluded[d] = 1;
        tail.push_back(d);
      }
      for (ExpertId e : demoted) {
        tail.insert(tail.begin() + uniform_index(token_rng, tail.size() + 1), e);
      }
      tail.resize(tail_len);
      std::copy(tail.begin(), tail.end(), pred + K);
    }
  }
  return trace;
}

double topk_prediction_accuracy(const ActivationTrace& trace, int layer) {
  const int K = trace.header().activated;
  std::int64_t hits = 0;
  for (std::int64_t t = 0; t < trace.size(); ++t) {
    LayerView v = trace.at(t, layer);
    for (ExpertId e : v.activated) {
      if (std::find(v.predicted.begin(), v.predicted.begin() + K, e) !=
          v.predicted.begin() + K) {
        ++hits;
      }
    }
  }
  return trace.size() ? static_cast<double>(hits) / (trace.size() * K) : 0.0;
}

void write_trace(const ActivationTrace& trace, std::ostream& out) {
  out << header_to_json(trace.header()).dump() << '\n';
  std::string line;
  for (std::int64_t t = 0; t < trace.size(); ++t) {
    line.clear();
    line += "{\"t\":";
    append_number(line, t);
    line += ",\"layers\":[";
    for (int i = 0; i < trace.header().layers; ++i) {
      LayerView v = trace.at(t, i);
      if (i) line.push_back(',');
      line += "{\"act\":";
      append_array(line, v.activated);
      line += ",\"sc\":";
      append_array(line, v.scores);
      line += ",\"pred\":";
      append_array(line, v.predicted);
      line.push_back('}');
    }
    line += "]}\n";
    out << line;
  }
  if (!out) throw RuntimeError("failed writing trace");
}

void write_trace(const ActivationTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open '" + path + "' for writing");
  write_trace(trace, out);
}

TraceReader::TraceReader(std::istream& in) : in_(in) {
  std::string text;
  if (!std::getline(in_, text)) throw RuntimeError("line 1: missing trace header");
  try {
    json j = json::parse(text);
    if (j.value("format", "") != kFormat) {
      throw RuntimeError("line 1: not a moesim trace header");
    }
    if (j.at("version").get<int>() != kFormatVersion) {
      throw RuntimeError("line 1: unsupported trace version");
    }
    header_.layers = j.at("L").get<int>();
    header_.experts = j.at("N").get<int>();
    header_.activated = j.at("K").get<int>();
    header_.predicted = j.at("P").get<int>();
    header_.prompt_tokens = j.value("prompt_tokens", std::int64_t{0});
    header_.seed = j.value("seed", std::uint64_t{0});
    header_.generator = j.value("generator", json());
  } catch (const json::exception& e) {
    throw RuntimeError(std::string("line 1: malformed header: ") + e.what());
  }
  try {
    check_header(header_);
  } catch (const RuntimeError& e) {
    throw RuntimeError(std::string("line 1: ") + e.what());
  }
}

std::optional<TokenRecord> TraceReader::next() {
  std::string text;
  while (std::getline(in_, text)) {
    ++line_;
    if (text.empty()) continue;
    const std::string where = "line " + std::to_string(line_) + ": ";
    TokenRecord r;
    try {
      json j = json::parse(text);
      r.token_index = j.at("t").get<std::int64_t>();
      const json& layers = j.at("layers");
      if (!layers.is_array()) throw std::invalid_argument("layers must be an array");
      for (const auto& l : layers) {
        LayerActivation a;
        a.activated = parse_ids(l, "act");
        a.predicted = parse_ids(l, "pred");
        a.scores = l.at("sc").get<std::vector<double>>();
        r.per_layer.push_back(std::move(a));
      }
    } catch (const std::exception& e) {
      throw RuntimeError(where + "malformed token record: " + e.what());
    }
    if (r.token_index != expected_token_) {
      throw RuntimeError(where + "expected token " + std::to_string(expected_token_) +
                         ", got " + std::to_string(r.token_index));
    }
    if (static_cast<int>(r.per_layer.size()) != header_.layers) {
      throw RuntimeError(where + "token " + std::to_string(r.token_index) +
                         ": expected " + std::to_string(header_.layers) +
                         " layers, got " + std::to_string(r.per_layer.size()));
    }
    for (int i = 0; i < header_.layers; ++i) {
      if (auto err = check_layer(header_, r.per_layer[i]); !err.empty()) {
        throw RuntimeError(where + "token " + std::to_string(r.token_index) +
                           " layer " + std::to_string(i) + ": " + err);
      }
    }
    ++expected_token_;
    return r;
  }
  return std::nullopt;
}

ActivationTrace read_trace(std::istream& in) {
  TraceReader reader(in);
  ActivationTrace trace(reader.header());
  while (auto r = reader.next()) trace.append(*r);
  return trace;
}

ActivationTrace read_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open trace '" + path + "'");
  return read_trace(in);
}

}  // namespace moesim
