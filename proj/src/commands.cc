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

#include "moesim/commands.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>

#include "moesim/error.h"
#include "moesim/report.h"

namespace moesim {
namespace {

void log(const std::string& msg) { std::cerr << "moesim: " << msg << '\n'; }

std::string out_path(const RunConfig& cfg, const std::string& explicit_path,
                     const char* file) {
  if (!explicit_path.empty()) return explicit_path;
  return (std::filesystem::path(output_dir(cfg)) / file).string();
}

std::ofstream open_out(const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write '" + path + "'");
  return out;
}

double parse_number(const std::string& s) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("not a number: '" + s + "'");
  }
  if (used != s.size()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

double round12(double v) { return std::round(v * 1e12) / 1e12; }

SimReport run_with_config(const RunConfig& cfg, const ActivationTrace& trace,
                          const ModelSpec& model, const DeviceSpec& device,
                          const RunOptions& options) {
  SimReport r = run(trace, model, device, options);
  RunConfig resolved = cfg;
  resolved.run = options;
  r.config = to_json(resolved);
  return r;
}

}  // namespace

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ':')) parts.push_back(item);
    if (parts.size() != 3) throw ConfigError("grid must be lo:hi:step, got '" + text + "'");
    const double lo = parse_number(parts[0]);
    const double hi = parse_number(parts[1]);
    const double step = parse_number(parts[2]);
    if (!(step > 0) || hi < lo) throw ConfigError("empty grid '" + text + "'");
    const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9)) + 1;
    for (long i = 0; i < n; ++i) out.push_back(round12(lo + static_cast<double>(i) * step));
  } else {
    for (const auto& s : split_list(text)) out.push_back(parse_number(s));
  }
  if (out.empty()) throw ConfigError("empty grid '" + text + "'");
  return out;
}

void write_json_file(const nlohmann::json& j, const std::string& path) {
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
}

void write_text_file(const std::string& text, const std::string& path) {
  std::ofstream out = open_out(path);
  out << text;
}

std::string cmd_gen(const RunConfig& cfg, const std::string& path) {
  const ModelSpec model = resolved_model(cfg);
  validate_trace_config(model, cfg.workload);
  const std::string target = out_path(cfg, path, "trace.jsonl");
  log("generating " + std::to_string(cfg.workload.tokens) + " tokens");
  const ActivationTrace trace = generate_trace(model, cfg.workload);
  std::ofstream out = open_out(target);
  write_trace(trace, out);
  log("wrote " + target);
  return target;
}

SimReport cmd_run(const RunConfig& cfg, const RunOutputs& outputs) {
  validate_run_config(cfg);
  const ModelSpec model = resolved_model(cfg);
  const DeviceSpec device = resolved_device(cfg);
  const ActivationTrace trace = load_or_generate(cfg, model);
  log("running " + std::string(mode_name(cfg.run.mode)) + " over " +
      std::to_string(trace.size()) + " tokens");

  RunHooks hooks;
  if (!outputs.dump_cache.empty() || !outputs.dump_stats.empty()) {
    hooks.on_finish = [&](const Simulator& sim) {
      if (!outputs.dump_cache.empty()) write_json_file(sim.cache_snapshot(), outputs.dump_cache);
      if (!outputs.dump_stats.empty()) write_json_file(sim.stats().to_json(), outputs.dump_stats);
    };
  }
  SimReport report = run(trace, model, device, cfg.run, hooks);
  report.config = to_json(cfg);

  write_json_file(report_to_json(report), out_path(cfg, outputs.report, "report.json"));
  {
    std::ofstream out = open_out(out_path(cfg, outputs.token_csv, "tokens.csv"));
    write_token_csv(report, out);
  }
  {
    std::ofstream out = open_out(out_path(cfg, outputs.layer_csv, "layers.csv"));
    write_layer_csv(report, out);
  }
  log("TPOT mean " + format_double(report.tpot_mean) + " ms");
  return report;
}

nlohmann::json cmd_compare(const RunConfig& cfg, const CompareGrid& grid,
                           const std::string& csv_path) {
  validate_run_config(cfg);
  const ModelSpec model = resolved_model(cfg);
  const DeviceSpec device = resolved_device(cfg);
  const ActivationTrace trace = load_or_generate(cfg, model);

  std::vector<RunOptions> points;
  for (const auto& budget : grid.budgets) {
    for (Mode mode : grid.modes) {
      for (Policy policy : grid.policies) {
        RunOptions o = cfg.run;
        o.mode = mode;
        o.policy = policy;
        if (budget) o.layer_budget = budget;
        resolve_run(o, model, device);
        points.push_back(o);
      }
    }
  }
  log("comparing " + std::to_string(points.size()) + " configurations");
  std::vector<std::future<SimReport>> futures;
  for (const auto& o : points) {
    futures.push_back(std::async(std::launch::async, [&, o] {
      return run_with_config(cfg, trace, model, device, o);
    }));
  }

  nlohmann::json rows = nlohmann::json::array();
  std::ostringstream csv;
  csv << "mode,policy,layer_budget,ttft_ms,tpot_mean_ms,tpot_p50_ms,tpot_p95_ms,"
         "tpot_p99_ms,hit_rate,topk_accuracy,on_demand_loads,prefetch_loads\n";
  for (std::size_t i = 0; i < futures.size(); ++i) {
    const SimReport r = futures[i].get();
    const double budget = resolve_run(points[i], model, device).layer_budget;
    nlohmann::json row = report_to_json(r);
    row["layer_budget"] = budget;
    rows.push_back(std::move(row));
    csv << r.mode << ',' << r.policy << ',' << format_double(budget) << ','
        << format_double(r.ttft) << ',' << format_double(r.tpot_mean) << ','
        << format_double(r.tpot_p50) << ',' << format_double(r.tpot_p95) << ','
        << format_double(r.tpot_p99) << ',' << format_double(r.hit_rate) << ','
        << format_double(r.topk_accuracy) << ',' << format_double(r.on_demand_loads)
        << ',' << format_double(r.prefetch_loads) << '\n';
  }
  nlohmann::json combined{{"schema_version", kReportSchemaVersion},
                          {"config", to_json(cfg)},
                          {"runs", std::move(rows)}};
  write_json_file(combined, out_path(cfg, "", "compare.json"));
  write_text_file(csv.str(), out_path(cfg, csv_path, "compare.csv"));
  return combined;
}

std::string cmd_sweep_theta(const RunConfig& cfg, const std::vector<double>& thetas,
                            double layer_budget, const std::string& csv_path) {
  validate_run_config(cfg);
  const ModelSpec model = resolved_model(cfg);
  const DeviceSpec device = resolved_device(cfg);
  if (!(layer_budget > 0)) throw ConfigError("sweep-theta needs a budget > 0");
  std::vector<RunOptions> points;
  for (double theta : thetas) {
    RunOptions o = cfg.run;
    o.mode = Mode::kFixedSplit;
    o.split = theta;
    o.split_override.reset();
    o.layer_budget = layer_budget;
    resolve_run(o, model, device);
    if (cache_size_for(layer_budget, theta) < 1) {
      throw ConfigError("theta " + format_double(theta) + " holds no expert");
    }
    points.push_back(o);
  }
  const ActivationTrace trace = load_or_generate(cfg, model);
  log("sweeping " + std::to_string(points.size()) + " split ratios");
  std::vector<std::future<SimReport>> futures;
  for (const auto& o : points) {
    futures.push_back(std::async(std::launch::async, [&, o] {
      return run_with_config(cfg, trace, model, device, o);
    }));
  }
  std::ostringstream csv;
  csv << "theta,layer_budget,cache_size,tpot_mean_ms,tpot_p50_ms,tpot_p95_ms,tpot_p99_ms,"
         "hit_rate\n";
  for (std::size_t i = 0; i < futures.size(); ++i) {
    const SimReport r = futures[i].get();
    const int c = std::min(model.experts_per_layer, cache_size_for(layer_budget, thetas[i]));
    csv << format_double(thetas[i]) << ',' << format_double(layer_budget) << ',' << c << ','
        << format_double(r.tpot_mean) << ',' << format_double(r.tpot_p50) << ','
        << format_double(r.tpot_p95) << ',' << format_double(r.tpot_p99) << ','
        << format_double(r.hit_rate) << '\n';
  }
  write_text_file(csv.str(), out_path(cfg, csv_path, "sweep_theta.csv"));
  return csv.str();
}

AllocationResult cmd_configure(const RunConfig& cfg, const std::string& stats_path,
                               std::optional<double> vram_budget) {
  const ModelSpec model = resolved_model(cfg);
  const DeviceSpec device = resolved_device(cfg);
  std::ifstream in(stats_path);
  if (!in) throw RuntimeError("cannot open stats file '" + stats_path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw RuntimeError("stats file '" + stats_path + "': " + e.what());
  }
  const StatsAccumulator stats = StatsAccumulator::from_json(j);
  if (stats.layers() != model.layers || stats.experts() != model.experts_per_layer ||
      stats.activated() != model.activated_per_token) {
    throw RuntimeError("stats snapshot shape does not match the model");
  }
  double budget = device.vram_budget_experts;
  if (cfg.run.layer_budget) budget = *cfg.run.layer_budget * model.layers;
  if (vram_budget) budget = *vram_budget;
  return vram_allocation(budget, cfg.run.granularity, stats.snapshot(),
                         derive_timing(model, device), model.buffer_experts);
}

}  // namespace moesim
