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

// Command-line front end: gen | run | compare | sweep-theta | configure.
//
// Settings resolve as flags > --config file > built-in defaults. Data goes to
// files (default directory: --out-dir, else $MOESIM_OUT_DIR, else .) or
// standard output; logs go to standard error.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "moesim/commands.h"
#include "moesim/error.h"
#include "moesim/report.h"
#include "moesim/run_config.h"

namespace {

using moesim::RunConfig;

// Flags shared by every subcommand.
struct CommonFlags {
  std::string config;
  std::optional<std::string> model;
  std::optional<std::string> device;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> trace;
  // Workload.
  std::optional<std::int64_t> tokens;
  std::optional<std::int64_t> prompt_tokens;
  std::optional<double> zipf;
  std::optional<double> repeat;
  std::optional<std::string> accuracy;
  std::optional<double> drift;
  std::optional<int> prediction_length;
  // Run.
  std::optional<std::string> mode;
  std::optional<std::string> policy;
  std::optional<int> omega;
  std::optional<double> rho;
  std::optional<double> zeta;
  std::optional<std::int64_t> tau;
  std::optional<double> theta;
  std::optional<double> budget;
  std::optional<bool> configurator;
  std::optional<bool> prefetch;
  std::optional<double> prefill_scale;
  bool cold_start = false;
  bool gated = false;
};

void add_common(CLI::App* app, CommonFlags& f, bool run_flags) {
  app->add_option("--config", f.config, "JSON config file");
  app->add_option("--model", f.model, "Model profile name or JSON file");
  app->add_option("--device", f.device, "Device profile name or JSON file");
  app->add_option("--seed", f.seed, "Seed for trace generation and policies");
  app->add_option("--out-dir", f.out_dir, "Output directory");
  app->add_option("--tokens", f.tokens, "Synthetic trace length");
  app->add_option("--prompt-tokens", f.prompt_tokens, "Prompt tokens at the trace start");
  app->add_option("--zipf", f.zipf, "Popularity skew");
  app->add_option("--repeat", f.repeat, "Previous-token repeat probability");
  app->add_option("--accuracy", f.accuracy, "Predictor accuracy, one value or one per layer");
  app->add_option("--drift", f.drift, "Per-token popularity drift probability");
  app->add_option("--prediction-length", f.prediction_length, "Predicted ranking length");
  if (!run_flags) return;
  app->add_option("--trace", f.trace, "Trace file to replay instead of generating one");
  app->add_option("--mode", f.mode, "moepic|cache_only|prefetch_only|full_cache_prefetch|fixed_split");
  app->add_option("--policy", f.policy, "lcp|lru|lfu|rnd");
  app->add_option("--omega", f.omega, "LCP decay period");
  app->add_option("--rho", f.rho, "LCP decay base");
  app->add_option("--zeta", f.zeta, "Configurator granularity");
  app->add_option("--tau", f.tau, "Decode tokens between reconfigurations");
  app->add_option("--theta", f.theta, "Split ratio (moepic start, fixed_split)");
  app->add_option("--budget", f.budget, "Per-layer VRAM budget in experts");
  app->add_option("--configurator", f.configurator, "Force the configurator on/off");
  app->add_option("--prefetch", f.prefetch, "Force prefetching on/off");
  app->add_option("--prefill-scale", f.prefill_scale, "Prefill compute multiplier");
  app->add_flag("--cold-start", f.cold_start, "Empty prefetch plan for the first token");
  app->add_flag("--gated-admission", f.gated, "Admit only experts that beat the victim");
}

// A profile flag is a builtin name unless it names a JSON file.
nlohmann::json profile_source(const std::string& value) {
  if (value.size() > 5 && value.ends_with(".json")) {
    std::ifstream in(value);
    if (!in) throw moesim::ConfigError("cannot open profile '" + value + "'");
    try {
      return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw moesim::ConfigError("profile '" + value + "': " + e.what());
    }
  }
  return value;
}

RunConfig build_config(const CommonFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : moesim::load_config_file(f.config);
  if (f.model) cfg.model = profile_source(*f.model);
  if (f.device) cfg.device = profile_source(*f.device);
  if (f.seed) {
    cfg.run.seed = *f.seed;
    cfg.workload.seed = *f.seed;
  }
  if (f.out_dir) cfg.output_dir = *f.out_dir;
  if (f.trace) cfg.trace_path = *f.trace;
  if (f.tokens) cfg.workload.tokens = *f.tokens;
  if (f.prompt_tokens) cfg.workload.prompt_tokens = *f.prompt_tokens;
  if (f.zipf) cfg.workload.zipf_exponent = *f.zipf;
  if (f.repeat) cfg.workload.repeat_prob = *f.repeat;
  if (f.accuracy) cfg.workload.predictor_accuracy = moesim::parse_grid(*f.accuracy);
  if (f.drift) cfg.workload.popularity_drift = *f.drift;
  if (f.prediction_length) cfg.workload.prediction_length = *f.prediction_length;
  if (f.mode) cfg.run.mode = moesim::parse_mode(*f.mode);
  if (f.policy) cfg.run.policy = moesim::parse_policy(*f.policy);
  if (f.omega) cfg.run.lcp.omega = *f.omega;
  if (f.rho) cfg.run.lcp.rho = *f.rho;
  if (f.zeta) cfg.run.granularity = *f.zeta;
  if (f.tau) cfg.run.reconfig_interval = *f.tau;
  if (f.theta) cfg.run.split_override = *f.theta;
  if (f.budget) cfg.run.layer_budget = *f.budget;
  if (f.configurator) cfg.run.configurator = *f.configurator;
  if (f.prefetch) cfg.run.prefetch = *f.prefetch;
  if (f.prefill_scale) cfg.run.prefill_scale = *f.prefill_scale;
  if (f.cold_start) cfg.run.cold_start = true;
  if (f.gated) cfg.run.gated_admission = true;
  return cfg;
}

void print_error(const char* kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
}

int run_main(int argc, char** argv) {
  CLI::App app{"moesim: trace-driven simulator for split-expert MoE offloading"};
  app.require_subcommand(1);

  CommonFlags gen_flags, run_flags, cmp_flags, sweep_flags, conf_flags;
  std::string gen_output, run_report, dump_cache, dump_stats, sweep_output, conf_output;
  std::string conf_stats, cmp_modes = "cache_only,prefetch_only,moepic", cmp_policies,
                          cmp_budgets, thetas = "0.1:1.0:0.1";
  std::optional<double> sweep_budget, conf_vram;

  CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic trace");
  add_common(gen, gen_flags, false);
  gen->add_option("-o,--output", gen_output, "Trace path (default <out>/trace.jsonl)");

  CLI::App* run = app.add_subcommand("run", "Replay one configuration");
  add_common(run, run_flags, true);
  run->add_option("--report", run_report, "Report path (default <out>/report.json)");
  run->add_option("--dump-cache", dump_cache, "Write the final cache snapshot");
  run->add_option("--dump-stats", dump_stats, "Write the statistics snapshot");

  CLI::App* cmp = app.add_subcommand("compare", "Run a mode x policy x budget grid");
  add_common(cmp, cmp_flags, true);
  cmp->add_option("--modes", cmp_modes, "Comma-separated modes");
  cmp->add_option("--policies", cmp_policies, "Comma-separated policies (default: --policy)");
  cmp->add_option("--budgets", cmp_budgets, "Per-layer budgets (default: device)");

  CLI::App* sweep = app.add_subcommand("sweep-theta", "fixed_split over split ratios");
  add_common(sweep, sweep_flags, true);
  sweep->add_option("--thetas", thetas, "lo:hi:step or comma list");
  sweep->add_option("-o,--output", sweep_output, "CSV path (default <out>/sweep_theta.csv)");

  CLI::App* conf = app.add_subcommand("configure", "Cache configuration from statistics");
  add_common(conf, conf_flags, true);
  conf->add_option("--stats", conf_stats, "Statistics snapshot (run --dump-stats)")->required();
  conf->add_option("--vram", conf_vram, "Total VRAM budget in experts");
  conf->add_option("-o,--output", conf_output, "Config path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("config", e.what());
    return 1;
  }

  if (gen->parsed()) {
    std::cout << moesim::cmd_gen(build_config(gen_flags), gen_output) << '\n';
  } else if (run->parsed()) {
    moesim::RunOutputs out;
    out.report = run_report;
    out.dump_cache = dump_cache;
    out.dump_stats = dump_stats;
    const moesim::SimReport r = moesim::cmd_run(build_config(run_flags), out);
    std::cout << "tpot_mean_ms=" << moesim::format_double(r.tpot_mean)
              << " ttft_ms=" << moesim::format_double(r.ttft) << '\n';
  } else if (cmp->parsed()) {
    const RunConfig cfg = build_config(cmp_flags);
    moesim::CompareGrid grid;
    for (const auto& m : moesim::split_list(cmp_modes)) grid.modes.push_back(moesim::parse_mode(m));
    if (cmp_policies.empty()) {
      grid.policies.push_back(cfg.run.policy);
    } else {
      for (const auto& p : moesim::split_list(cmp_policies)) {
        grid.policies.push_back(moesim::parse_policy(p));
      }
    }
    if (cmp_budgets.empty()) {
      grid.budgets.push_back(cfg.run.layer_budget);
    } else {
      for (double b : moesim::parse_grid(cmp_budgets)) grid.budgets.push_back(b);
    }
    if (grid.modes.empty()) throw moesim::ConfigError("compare needs at least one mode");
    const nlohmann::json result = moesim::cmd_compare(cfg, grid);
    for (const auto& row : result.at("runs")) {
      std::cout << row.at("mode").get<std::string>() << ' '
                << row.at("policy").get<std::string>() << " tpot_mean_ms="
                << moesim::format_double(row.at("tpot_ms").at("mean").get<double>()) << '\n';
    }
  } else if (sweep->parsed()) {
    const RunConfig cfg = build_config(sweep_flags);
    const double budget = sweep_flags.budget ? *sweep_flags.budget
                                             : moesim::resolved_device(cfg).vram_budget_experts /
                                                   moesim::resolved_model(cfg).layers;
    std::cout << moesim::cmd_sweep_theta(cfg, moesim::parse_grid(thetas), budget, sweep_output);
  } else if (conf->parsed()) {
    const moesim::AllocationResult r =
        moesim::cmd_configure(build_config(conf_flags), conf_stats, conf_vram);
    nlohmann::json j = moesim::to_json(r.config);
    j["iterations"] = r.iterations;
    j["converged"] = r.converged;
    j["uniform_objective_ms"] = r.uniform_objective;
    j["objective_ms"] = r.objective_history.back();
    if (conf_output.empty()) {
      std::cout << j.dump(2) << '\n';
    } else {
      moesim::write_json_file(j, conf_output);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_main(argc, argv);
  } catch (const moesim::ConfigError& e) {
    print_error("config", e.what());
    return 1;
  } catch (const moesim::RuntimeError& e) {
    print_error("runtime", e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return 2;
  }
}
