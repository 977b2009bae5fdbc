#include "hfta/bench.h"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <new>
#include <sstream>
#include <thread>

#include "hfta/errors.h"
#include "hfta/kernel_counter.h"
#include "hfta/layout.h"
#include "hfta/trainer.h"
#include "hfta/version.h"

namespace hfta {
namespace {

using Clock = std::chrono::steady_clock;

// One training job with a fixed batch, reused every step.
struct Job {
  Trainer trainer;
  std::vector<Tensor> inputs;
  Tensor target;
  RunContext ctx;

  void run(std::int64_t steps) {
    for (std::int64_t s = 0; s < steps; ++s) trainer.step(inputs, target, ctx);
  }
};

std::vector<double> default_lrs(std::int64_t B) {
  std::vector<double> lrs;
  for (std::int64_t b = 0; b < B; ++b) lrs.push_back(1e-3 * (1.0 + 0.1 * static_cast<double>(b)));
  return lrs;
}

std::vector<Job> build_jobs(const ZooEntry& entry, BenchMode mode, std::int64_t B, std::uint64_t seed) {
  const Rng root = Rng(seed).split("bench").split(entry.name);
  std::vector<Network> nets;
  std::vector<Rng> data;
  for (std::int64_t b = 0; b < B; ++b) {
    nets.push_back(Network::initialize(entry.spec, root.split("init").split(static_cast<std::uint64_t>(b)), b));
    data.push_back(root.split("data").split(static_cast<std::uint64_t>(b)));
  }
  const std::vector<double> lrs = default_lrs(B);
  std::vector<Job> jobs;
  if (mode == BenchMode::kFused) {
    Network fused = Network::fuse(nets, FusePlan::full());
    const Batch batch = synthetic_job_batch(entry, data);
    FusedOptimizer opt(fused.parameters(), adam_hyper(lrs));
    jobs.push_back(Job{Trainer(fused, std::move(opt), entry.loss), {batch.x}, batch.y, RunContext{true, root.split("ctx")}});
    return jobs;
  }
  for (std::int64_t b = 0; b < B; ++b) {
    const Batch batch = synthetic_batch(entry, data[b]);
    const std::vector<double> lr{lrs[b]};
    FusedOptimizer opt(nets[b].parameters(), adam_hyper(lr));
    jobs.push_back(Job{Trainer(nets[b], std::move(opt), entry.loss), {batch.x}, batch.y, RunContext{true, root.split("ctx")}});
  }
  return jobs;
}

// Runs fn(job) for every job on `width` threads and returns when all finish.
template <typename Fn>
void run_pool(std::vector<Job>& jobs, std::size_t width, Fn fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        fn(jobs[i]);
      } catch (...) {
        const std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < std::min(width, jobs.size()); ++t) threads.emplace_back(worker);
  for (std::thread& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::string csv_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

GraphSpec spec_for_batch(const std::string& model, std::int64_t batch) {
  return with_batch(zoo_entry(model).spec, batch);
}

double value_or(const HyperParamSet& set, const std::string& name, double fallback) {
  const auto it = set.values.find(name);
  return it == set.values.end() ? fallback : it->second;
}

std::vector<double> evaluate_job(const ZooEvalOptions& opt, std::span<const HyperParamSet> job,
                                 double epochs) {
  ZooEntry entry = zoo_entry(opt.model);
  const auto k = static_cast<std::int64_t>(job.size());
  const std::int64_t batch = std::llround(value_or(job.front(), "batch_size", static_cast<double>(entry.batch)));
  if (batch < 1) throw ConfigError("batch_size must be >= 1");
  if (batch != entry.batch) {
    entry.spec = spec_for_batch(opt.model, batch);
    entry.batch = batch;
  }
  const Rng root = Rng(opt.seed).split("tune").split(opt.model);
  const std::int64_t steps = std::max<std::int64_t>(1, std::llround(epochs * static_cast<double>(opt.steps_per_epoch)));

  std::vector<Network> nets;
  HyperVector lr{"lr", {}}, beta1{"beta1", {}}, beta2{"beta2", {}}, wd{"weight_decay", {}};
  for (const HyperParamSet& set : job) {
    nets.push_back(Network::initialize(entry.spec, root.split("init").split(static_cast<std::uint64_t>(set.uid)), set.uid));
    lr.values.push_back(value_or(set, "lr", 1e-3));
    beta1.values.push_back(value_or(set, "beta1", 0.9));
    beta2.values.push_back(value_or(set, "beta2", 0.999));
    wd.values.push_back(value_or(set, "weight_decay", 0.0));
  }
  const bool fused = opt.fuse && k > 1;
  std::vector<Trainer> trainers;
  if (fused) {
    Network net = Network::fuse(nets, FusePlan::full());
    trainers.emplace_back(net, FusedOptimizer(net.parameters(), AdamHyper{lr, beta1, beta2, wd}), entry.loss);
  } else {
    for (std::int64_t b = 0; b < k; ++b) {
      const AdamHyper h{lr.slice(b, 1), beta1.slice(b, 1), beta2.slice(b, 1), wd.slice(b, 1)};
      trainers.emplace_back(nets[b], FusedOptimizer(nets[b].parameters(), h), entry.loss);
    }
  }
  const auto to_inputs = [&](const Tensor& x) {
    return std::vector<Tensor>{fused ? replicate(x, k, FusedLayout::kModelLeading) : x};
  };
  for (std::int64_t s = 0; s < steps; ++s) {
    const Batch data = synthetic_batch(entry, root.split("data").split(static_cast<std::uint64_t>(s)));
    const RunContext ctx{true, root.split("step").split(static_cast<std::uint64_t>(s))};
    const std::vector<Tensor> in = to_inputs(data.x);
    for (Trainer& t : trainers) t.step(in, data.y, ctx);
  }
  const Batch held_out = synthetic_batch(entry, root.split("held-out"));
  const RunContext eval_ctx{false, root.split("eval")};
  const std::vector<Tensor> in = to_inputs(held_out.x);
  std::vector<double> metrics;
  for (const Trainer& t : trainers) {
    for (double loss : t.evaluate(in, held_out.y, eval_ctx)) {
      metrics.push_back(std::isfinite(loss) ? -loss : -std::numeric_limits<double>::infinity());
    }
  }
  return metrics;
}

}  // namespace

std::string bench_mode_name(BenchMode mode) {
  switch (mode) {
    case BenchMode::kSerial: return "serial";
    case BenchMode::kConcurrent: return "concurrent";
    case BenchMode::kFused: return "fused";
  }
  return "?";
}

BenchMode parse_bench_mode(const std::string& name) {
  if (name == "serial") return BenchMode::kSerial;
  if (name == "concurrent") return BenchMode::kConcurrent;
  if (name == "fused") return BenchMode::kFused;
  throw ConfigError("unknown bench mode '" + name + "' (expected serial, concurrent or fused)");
}

BenchRecord bench_one(const ZooEntry& entry, BenchMode mode, std::int64_t B, std::int64_t steps,
                      std::int64_t warmup, std::uint64_t seed, std::size_t threads) {
  if (B < 1) throw ConfigError("B must be >= 1");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (warmup < 0) throw ConfigError("warmup must be >= 0");
  BenchRecord rec;
  rec.model = entry.name;
  rec.mode = mode;
  rec.B = B;
  rec.steps = steps;
  rec.seed = seed;
  try {
    std::vector<Job> jobs = build_jobs(entry, mode, B, seed);
    const std::size_t width = threads > 0 ? threads : concurrent_width_from_env();
    std::vector<std::map<std::string, std::int64_t>> counts(jobs.size());
    const auto timed = [&](Job& job) {
      KernelCounter::reset();
      job.run(steps);
      counts[&job - jobs.data()] = KernelCounter::snapshot();
    };
    if (mode == BenchMode::kConcurrent) {
      run_pool(jobs, width, [&](Job& job) { job.run(warmup); });
    } else {
      for (Job& job : jobs) job.run(warmup);
    }
    const Clock::time_point start = Clock::now();
    if (mode == BenchMode::kConcurrent) {
      run_pool(jobs, width, timed);
    } else {
      for (Job& job : jobs) timed(job);
    }
    rec.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    std::int64_t total = 0;
    for (const auto& job_counts : counts) {
      for (const auto& [kernel, n] : job_counts) {
        rec.kernel_counts[kernel] += n;
        total += n;
      }
    }
    for (auto& [kernel, n] : rec.kernel_counts) n /= steps;
    rec.kernel_invocations_per_step = total / steps;
    const double samples = static_cast<double>(B * entry.batch * steps);
    rec.samples_per_second = rec.wall_seconds > 0.0 ? samples / rec.wall_seconds : 0.0;
  } catch (const std::bad_alloc&) {
    rec.status = "oom";
    rec.wall_seconds = 0.0;
    rec.samples_per_second = 0.0;
    rec.kernel_counts.clear();
    rec.kernel_invocations_per_step = 0;
  }
  return rec;
}

std::vector<BenchRecord> run_bench(const BenchConfig& config) {
  if (config.modes.empty()) throw ConfigError("at least one bench mode is required");
  if (config.b_list.empty()) throw ConfigError("b-list must not be empty");
  const ZooEntry entry = zoo_entry(config.model);
  std::vector<BenchRecord> out;
  for (std::int64_t B : config.b_list) {
    const BenchRecord serial = bench_one(entry, BenchMode::kSerial, B, config.steps, config.warmup,
                                         config.seed, config.threads);
    const double base = serial.status == "ok" ? serial.samples_per_second : 0.0;
    const auto normalize = [&](BenchRecord r) {
      r.normalized_throughput = base > 0.0 && r.status == "ok" ? r.samples_per_second / base : 0.0;
      return r;
    };
    out.push_back(normalize(serial));
    for (BenchMode mode : config.modes) {
      if (mode == BenchMode::kSerial) continue;
      out.push_back(normalize(bench_one(entry, mode, B, config.steps, config.warmup, config.seed, config.threads)));
    }
  }
  return out;
}

nlohmann::json bench_config_json(const BenchConfig& config) {
  nlohmann::json modes = nlohmann::json::array();
  for (BenchMode m : config.modes) modes.push_back(bench_mode_name(m));
  return {{"model", config.model}, {"modes", modes},       {"b_list", config.b_list},
          {"steps", config.steps}, {"warmup", config.warmup}, {"seed", config.seed}};
}

std::string config_hash(const nlohmann::json& config) { return hex64(fnv1a64(config.dump())); }

std::string bench_csv(const std::vector<BenchRecord>& records, const BenchConfig& config) {
  std::ostringstream os;
  os << "# hfta " << kVersion << "\n";
  os << "# seed " << config.seed << "\n";
  os << "# config_hash " << config_hash(bench_config_json(config)) << "\n";
  os << "model,mode,B,steps,wall_seconds,samples_per_second,normalized_throughput,seed,status\n";
  for (const BenchRecord& r : records) {
    os << r.model << ',' << bench_mode_name(r.mode) << ',' << r.B << ',' << r.steps << ','
       << csv_real(r.wall_seconds) << ',' << csv_real(r.samples_per_second) << ','
       << csv_real(r.normalized_throughput) << ',' << r.seed << ',' << r.status << "\n";
  }
  return os.str();
}

nlohmann::json bench_json(const std::vector<BenchRecord>& records, const BenchConfig& config) {
  nlohmann::json rows = nlohmann::json::array();
  for (const BenchRecord& r : records) {
    rows.push_back({{"model", r.model},
                    {"mode", bench_mode_name(r.mode)},
                    {"B", r.B},
                    {"steps", r.steps},
                    {"wall_seconds", r.wall_seconds},
                    {"samples_per_second", r.samples_per_second},
                    {"normalized_throughput", r.normalized_throughput},
                    {"seed", r.seed},
                    {"status", r.status},
                    {"kernel_invocations_per_step", r.kernel_invocations_per_step},
                    {"kernel_counts", r.kernel_counts}});
  }
  const nlohmann::json cfg = bench_config_json(config);
  return {{"version", kVersion}, {"seed", config.seed}, {"config_hash", config_hash(cfg)},
          {"config", cfg},       {"records", rows}};
}

GraphSpec with_batch(const GraphSpec& spec, std::int64_t batch) {
  if (batch < 1) throw ConfigError("batch must be >= 1");
  GraphSpec out = spec;
  for (Node& node : out.nodes) {
    if (node.kind == OpKind::kInput) node.config.at("shape")[0] = batch;
  }
  infer_shapes(out);
  return out;
}

EvalFn zoo_eval(const ZooEvalOptions& options) {
  zoo_entry(options.model);
  if (options.steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
  return [options](std::span<const HyperParamSet> job, double epochs) {
    return JobOutcome{evaluate_job(options, job, epochs), std::nullopt};
  };
}

}  // namespace hfta

namespace hfta {

TuneRun run_tune(nlohmann::json document, std::optional<std::uint64_t> seed,
                 std::int64_t steps_per_epoch) {
  if (seed && document.is_object()) document["seed"] = *seed;
  TuneRun run;
  run.config = parse_tune_config(document);
  run.document = std::move(document);
  const TuneConfig& cfg = run.config;
  const EvalFn eval = zoo_eval(ZooEvalOptions{cfg.model, cfg.seed, steps_per_epoch, true});
  const SchedulerConfig sched{parse_scheduler(cfg.scheduler), cfg.max_B, 0};
  const Rng rng = Rng(cfg.seed).split("search");
  if (cfg.algorithm == "hyperband") {
    run.schedule = hyperband_schedule(cfg.R, cfg.eta, cfg.skip_last);
    run.result = hyperband(cfg.params, cfg.R, cfg.eta, cfg.skip_last, sched, eval, rng);
  } else {
    run.result = random_search(cfg.params, cfg.total_sets, cfg.epochs_per_set, sched, eval, rng);
  }
  return run;
}

std::string tune_history(const TuneRun& run) {
  using nlohmann::json;
  json schedule = json::array();
  for (const HyperbandBracket& b : run.schedule) {
    json rounds = json::array();
    for (const HyperbandRound& r : b.rounds) rounds.push_back({{"n", r.n}, {"r", r.r}, {"keep", r.keep}});
    schedule.push_back({{"s", b.s}, {"n", b.n}, {"r", b.r}, {"rounds", rounds}});
  }
  const TuneConfig& cfg = run.config;
  std::string out;
  const auto line = [&](const json& j) { out += j.dump() + "\n"; };
  line({{"type", "header"},
        {"version", kVersion},
        {"seed", cfg.seed},
        {"config_hash", config_hash(run.document)},
        {"algorithm", cfg.algorithm},
        {"scheduler", cfg.scheduler},
        {"model", cfg.model},
        {"schedule", schedule}});
  double cumulative = 0.0;
  for (const IterationReport& it : run.result.history) {
    for (const TuneRecord& rec : it.records) {
      cumulative += rec.cost_device_seconds;
      json j = record_to_json(rec);
      j["type"] = "record";
      j["iteration"] = it.iteration;
      j["bracket"] = it.bracket;
      j["round"] = it.round;
      j["epochs"] = it.epochs;
      j["cumulative_device_seconds"] = cumulative;
      line(j);
    }
  }
  line({{"type", "summary"},
        {"best", run.result.best ? record_to_json(*run.result.best) : json(nullptr)},
        {"iterations", run.result.history.size()},
        {"total_device_seconds", run.result.total_cost_device_seconds}});
  return out;
}

}  // namespace hfta
