#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hfta/bench.h"
#include "hfta/conv.h"
#include "hfta/errors.h"
#include "hfta/fault.h"
#include "hfta/graph.h"
#include "hfta/planner.h"
#include "hfta/verify.h"
#include "hfta/version.h"

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw hfta::ConfigError("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw hfta::ConfigError("cannot write " + path);
  out << text;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct VerifyArgs {
  std::vector<std::string> suites;
  bool inject_fault = false;
};

int cmd_verify(const VerifyArgs& args, std::uint64_t seed) {
  hfta::VerifyOptions opt;
  opt.suites = args.suites;
  opt.seed = seed;
  if (args.inject_fault) hfta::set_fault(hfta::Fault::kConvGroupsOffByOne);
  const std::vector<hfta::CheckResult> results = hfta::run_verify(opt);
  bool ok = true;
  std::string suite;
  for (const hfta::CheckResult& r : results) {
    if (r.suite != suite) {
      suite = r.suite;
      std::printf("[%s]\n", suite.c_str());
    }
    std::printf("  %-4s %-26s max_dev %.3e  tol %.1e%s%s\n", r.passed ? "ok" : "FAIL", r.name.c_str(),
                r.max_deviation, r.tolerance, r.detail.empty() ? "" : "  ", r.detail.c_str());
    ok = ok && r.passed;
  }
  std::printf("%s\n", ok ? "verify: all checks passed" : "verify: FAILED");
  return ok ? kOk : kFailed;
}

struct BenchArgs {
  std::string model = "mlp3";
  std::string modes = "serial,concurrent,fused";
  std::string b_list = "1,2,4,8";
  std::int64_t steps = 500;
  std::int64_t warmup = 20;
  std::string out;
};

int cmd_bench(const BenchArgs& args, std::uint64_t seed) {
  hfta::BenchConfig cfg;
  cfg.model = args.model;
  cfg.modes.clear();
  for (const std::string& m : split_list(args.modes)) cfg.modes.push_back(hfta::parse_bench_mode(m));
  cfg.b_list.clear();
  for (const std::string& b : split_list(args.b_list)) {
    try {
      cfg.b_list.push_back(std::stoll(b));
    } catch (const std::exception&) {
      throw hfta::ConfigError("b-list entry '" + b + "' is not an integer");
    }
    if (cfg.b_list.back() < 1) throw hfta::ConfigError("b-list entries must be >= 1");
  }
  cfg.steps = args.steps;
  cfg.warmup = args.warmup;
  cfg.seed = seed;
  const std::vector<hfta::BenchRecord> records = hfta::run_bench(cfg);
  if (ends_with(args.out, ".json")) {
    write_output(args.out, hfta::bench_json(records, cfg).dump(2) + "\n");
  } else {
    write_output(args.out, hfta::bench_csv(records, cfg));
  }
  if (!args.out.empty() && args.out != "-") {
    for (const hfta::BenchRecord& r : records) {
      std::printf("%-10s B=%-3lld %12.1f samples/s  x%.2f  kernels/step %lld  %s\n",
                  hfta::bench_mode_name(r.mode).c_str(), static_cast<long long>(r.B),
                  r.samples_per_second, r.normalized_throughput,
                  static_cast<long long>(r.kernel_invocations_per_step), r.status.c_str());
    }
  }
  return kOk;
}

struct FuseArgs {
  std::vector<std::string> inputs;
  std::string plan;
  std::string out;
};

int cmd_fuse(const FuseArgs& args) {
  std::vector<hfta::GraphSpec> specs;
  for (const std::string& path : args.inputs) specs.push_back(hfta::load_graph(read_file(path)));
  const hfta::FusePlan plan =
      args.plan.empty() ? hfta::FusePlan::full() : hfta::FusePlan::from_json(nlohmann::json::parse(read_file(args.plan)));
  const hfta::FusibilityReport report = hfta::check_fusible(specs);
  hfta::GraphSpec fused;
  try {
    fused = hfta::fuse_graphs(specs, plan);
  } catch (const hfta::PlanError& e) {
    std::cerr << e.report().to_string() << "error: " << e.what() << "\n";
    return kUsage;
  }
  std::cout << report.to_string();
  write_output(args.out, hfta::save_graph(fused));
  return kOk;
}

struct TuneArgs {
  std::string config;
  std::string out;
  std::string scheduler;
  std::int64_t steps_per_epoch = 2;
};

int cmd_tune(const TuneArgs& args, std::optional<std::uint64_t> seed) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(args.config));
  } catch (const nlohmann::json::exception& e) {
    throw hfta::ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!args.scheduler.empty() && doc.is_object()) doc["scheduler"] = args.scheduler;
  const hfta::TuneRun run = hfta::run_tune(doc, seed, args.steps_per_epoch);
  write_output(args.out, hfta::tune_history(run));
  if (!args.out.empty() && args.out != "-") {
    const auto& best = run.result.best;
    std::printf("%s/%s: %zu iterations, %.3f device-seconds\n", run.config.algorithm.c_str(),
                run.config.scheduler.c_str(), run.result.history.size(), run.result.total_cost_device_seconds);
    if (best) std::printf("best: %s\n", hfta::record_to_json(*best).dump().c_str());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Horizontally fused training: verification, benchmarks, graph fusion and tuning"};
  app.set_version_flag("--version", std::string(hfta::kVersion));
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = app.add_option("--seed", seed, "Random seed")->capture_default_str();

  VerifyArgs verify;
  CLI::App* verify_cmd = app.add_subcommand("verify", "Check fused execution against serial execution");
  verify_cmd->add_option("--suite", verify.suites, "fusion, gradients, optimizers or convergence (repeatable)");
  verify_cmd->add_flag("--inject-fault", verify.inject_fault, "Use a wrong group count in fused convolutions");

  BenchArgs bench;
  CLI::App* bench_cmd = app.add_subcommand("bench", "Measure serial, concurrent and fused training throughput");
  bench_cmd->add_option("--model", bench.model, "Zoo model")->capture_default_str();
  bench_cmd->add_option("--modes", bench.modes, "Comma-separated modes")->capture_default_str();
  bench_cmd->add_option("--b-list", bench.b_list, "Comma-separated model counts")->capture_default_str();
  bench_cmd->add_option("--steps", bench.steps, "Timed steps per job")->capture_default_str();
  bench_cmd->add_option("--warmup", bench.warmup, "Untimed steps per job")->capture_default_str();
  bench_cmd->add_option("--out", bench.out, "CSV path, or .json for JSON (default stdout)");

  FuseArgs fuse;
  CLI::App* fuse_cmd = app.add_subcommand("fuse", "Fuse graph JSON files into one");
  fuse_cmd->add_option("--inputs", fuse.inputs, "Graph files, one per model")->required();
  fuse_cmd->add_option("--plan", fuse.plan, "Plan JSON {\"blocks\": {...}, \"default\": bool}");
  fuse_cmd->add_option("--out", fuse.out, "Output path (default stdout)");

  TuneArgs tune;
  CLI::App* tune_cmd = app.add_subcommand("tune", "Run a hyperparameter search over a zoo model");
  tune_cmd->add_option("--config", tune.config, "Tuning config JSON")->required();
  tune_cmd->add_option("--out", tune.out, "History path (default stdout)");
  tune_cmd->add_option("--scheduler", tune.scheduler, "Override the config's scheduler");
  tune_cmd->add_option("--steps-per-epoch", tune.steps_per_epoch, "Training steps per epoch")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*verify_cmd) return cmd_verify(verify, seed);
    if (*bench_cmd) return cmd_bench(bench, seed);
    if (*fuse_cmd) return cmd_fuse(fuse);
    if (*tune_cmd) {
      return cmd_tune(tune, *seed_opt ? std::optional<std::uint64_t>(seed) : std::nullopt);
    }
  } catch (const hfta::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
