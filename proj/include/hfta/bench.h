#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfta/hfht.h"
#include "hfta/zoo.h"

namespace hfta {

enum class BenchMode { kSerial, kConcurrent, kFused };
std::string bench_mode_name(BenchMode mode);
BenchMode parse_bench_mode(const std::string& name);

struct BenchConfig {
  std::string model = "mlp3";
  std::vector<BenchMode> modes{BenchMode::kSerial, BenchMode::kConcurrent, BenchMode::kFused};
  std::vector<std::int64_t> b_list{1, 2, 4, 8};
  std::int64_t steps = 500;
  std::int64_t warmup = 20;
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // concurrent width; 0 reads HFTA_THREADS
};

struct BenchRecord {
  std::string model;
  BenchMode mode = BenchMode::kSerial;
  std::int64_t B = 1;
  std::int64_t steps = 0;
  double wall_seconds = 0.0;
  double samples_per_second = 0.0;
  double normalized_throughput = 0.0;
  std::uint64_t seed = 0;
  std::string status = "ok";
  // Forward kernel calls per training step, summed over the B models.
  std::int64_t kernel_invocations_per_step = 0;
  std::map<std::string, std::int64_t> kernel_counts;  // per step
};

// One (mode, B) measurement; normalized_throughput is left at zero.
BenchRecord bench_one(const ZooEntry& entry, BenchMode mode, std::int64_t B, std::int64_t steps,
                      std::int64_t warmup, std::uint64_t seed, std::size_t threads = 0);

// Every requested (mode, B) pair, B-major. A serial row is always measured
// for each B and normalized_throughput is relative to it.
std::vector<BenchRecord> run_bench(const BenchConfig& config);

nlohmann::json bench_config_json(const BenchConfig& config);
std::string config_hash(const nlohmann::json& config);

std::string bench_csv(const std::vector<BenchRecord>& records, const BenchConfig& config);
nlohmann::json bench_json(const std::vector<BenchRecord>& records, const BenchConfig& config);

// Copy of a zoo graph whose inputs take `batch` samples.
GraphSpec with_batch(const GraphSpec& spec, std::int64_t batch);

// Tuning objective over a zoo model trained with Adam. Recognized
// hyperparameters: lr, beta1, beta2, weight_decay and batch_size; missing
// ones take Adam defaults and the zoo batch. Metric is minus the loss on a
// fixed held-out batch. Results depend only on each set's uid and values,
// so fused and serial scheduling agree exactly.
struct ZooEvalOptions {
  std::string model = "mlp3";
  std::uint64_t seed = 0;
  std::int64_t steps_per_epoch = 2;
  bool fuse = true;  // run multi-set jobs as one fused network
};
EvalFn zoo_eval(const ZooEvalOptions& options);

struct TuneRun {
  nlohmann::json document;  // config as run, seed override applied
  TuneConfig config;
  std::vector<HyperbandBracket> schedule;  // hyperband only
  TuneResult result;
};

// Parses a tuning config and runs it against its zoo model.
TuneRun run_tune(nlohmann::json document, std::optional<std::uint64_t> seed = std::nullopt,
                 std::int64_t steps_per_epoch = 2);

// JSON lines: a header (version, seed, config hash, bracket schedule), one
// line per evaluated set with cumulative device-seconds, then a summary.
std::string tune_history(const TuneRun& run);

}  // namespace hfta
