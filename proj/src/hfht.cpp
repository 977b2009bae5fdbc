#include "hfta/hfht.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <set>
#include <thread>

#include "hfta/errors.h"

namespace hfta {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

std::string fmt(double v) {
  json j = v;
  return j.dump();
}

std::int64_t ipow(std::int64_t base, std::int64_t exp) {
  std::int64_t out = 1;
  for (std::int64_t i = 0; i < exp; ++i) out *= base;
  return out;
}

struct JobRun {
  std::vector<TuneRecord> records;
  double cost = 0.0;
};

JobRun run_job(std::span<const HyperParamSet> members, double epochs, const EvalFn& eval) {
  JobRun run;
  const auto start = Clock::now();
  JobOutcome outcome{};
  std::string failure;
  try {
    outcome = eval(members, epochs);
    if (outcome.metrics.size() != members.size()) {
      failure = "eval_fn returned " + std::to_string(outcome.metrics.size()) + " metrics for " +
                std::to_string(members.size()) + " sets";
    }
  } catch (const std::exception& e) {
    failure = e.what();
  }
  const double wall = std::chrono::duration<double>(Clock::now() - start).count();
  run.cost = failure.empty() ? outcome.cost_seconds.value_or(wall) : wall;
  if (run.cost < 0.0) run.cost = 0.0;
  const double share = run.cost / static_cast<double>(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) {
    TuneRecord r{members[i], 0.0, share, false, {}};
    if (failure.empty()) {
      r.metric = outcome.metrics[i];
    } else {
      r.error = true;
      r.metric = -std::numeric_limits<double>::infinity();
      r.message = failure;
    }
    run.records.push_back(std::move(r));
  }
  return run;
}

bool better(const TuneRecord& a, const TuneRecord& b) {
  if (a.error != b.error) return !a.error;
  if (a.metric != b.metric) return a.metric > b.metric;
  return a.set.original_index < b.set.original_index;
}

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  throw ConfigError(path + ": " + what);
}

std::int64_t read_int(const json& doc, const std::string& key, const std::string& path,
                      std::int64_t fallback) {
  if (!doc.contains(key)) return fallback;
  const json& v = doc.at(key);
  if (!v.is_number_integer()) config_error(path + key, "must be an integer");
  return v.get<std::int64_t>();
}

double read_real(const json& doc, const std::string& key, const std::string& path, double fallback) {
  if (!doc.contains(key)) return fallback;
  const json& v = doc.at(key);
  if (!v.is_number()) config_error(path + key, "must be a number");
  return v.get<double>();
}

std::string read_string(const json& doc, const std::string& key, const std::string& path,
                        const std::string& fallback) {
  if (!doc.contains(key)) return fallback;
  const json& v = doc.at(key);
  if (!v.is_string()) config_error(path + key, "must be a string");
  return v.get<std::string>();
}

}  // namespace

bool Domain::contains(double value) const {
  if (discrete()) return std::find(choices.begin(), choices.end(), value) != choices.end();
  return value >= lo && value <= hi;
}

double Domain::sample(Rng& rng) const {
  if (discrete()) return choices[rng.below(choices.size())];
  return lo == hi ? lo : rng.uniform(lo, hi);
}

void validate_set(const HyperParamSet& set, std::span<const HyperParamDef> defs) {
  const std::string where = "set " + std::to_string(set.original_index);
  for (const HyperParamDef& d : defs) {
    auto it = set.values.find(d.name);
    if (it == set.values.end()) throw ValidationError(where + ": field '" + d.name + "' is missing");
    if (!d.domain.contains(it->second)) {
      throw ValidationError(where + ": field '" + d.name + "' value " + fmt(it->second) +
                            " lies outside its domain");
    }
  }
  for (const auto& [name, value] : set.values) {
    const bool known = std::any_of(defs.begin(), defs.end(),
                                   [&](const HyperParamDef& d) { return d.name == name; });
    if (!known) throw ValidationError(where + ": field '" + name + "' is not defined");
  }
}

std::vector<Partition> partition_and_fuse(std::span<const HyperParamSet> sets,
                                          std::span<const HyperParamDef> defs,
                                          std::int64_t max_B) {
  if (max_B < 0) throw ConfigError("max_B must be >= 0");
  std::vector<Partition> groups;
  for (const HyperParamSet& set : sets) {
    validate_set(set, defs);
    std::vector<double> key;
    for (const HyperParamDef& d : defs) {
      if (!d.fusible) key.push_back(set.values.at(d.name));
    }
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const Partition& p) { return p.infusible_key == key; });
    if (it == groups.end()) {
      groups.push_back({{}, key});
      it = groups.end() - 1;
    }
    it->members.push_back(set);
  }
  if (max_B == 0) return groups;
  std::vector<Partition> out;
  for (const Partition& g : groups) {
    for (std::int64_t start = 0; start < g.size(); start += max_B) {
      Partition chunk{{}, g.infusible_key};
      const std::int64_t stop = std::min(g.size(), start + max_B);
      chunk.members.assign(g.members.begin() + start, g.members.begin() + stop);
      out.push_back(std::move(chunk));
    }
  }
  return out;
}

std::vector<TuneRecord> unfuse_and_reorder(const std::vector<std::vector<TuneRecord>>& results) {
  std::vector<TuneRecord> flat;
  for (const auto& part : results) flat.insert(flat.end(), part.begin(), part.end());
  std::vector<const TuneRecord*> slot(flat.size(), nullptr);
  for (const TuneRecord& r : flat) {
    const std::int64_t i = r.set.original_index;
    if (i < 0 || i >= static_cast<std::int64_t>(flat.size())) {
      throw IntegrityError("original index " + std::to_string(i) + " is outside [0, " +
                           std::to_string(flat.size()) + ")");
    }
    if (slot[i] != nullptr) throw IntegrityError("original index " + std::to_string(i) + " appears twice");
    slot[i] = &r;
  }
  std::vector<TuneRecord> out;
  out.reserve(flat.size());
  for (const TuneRecord* r : slot) out.push_back(*r);
  return out;
}

std::string scheduler_name(SchedulerKind kind) {
  switch (kind) {
    case SchedulerKind::kSerial: return "serial";
    case SchedulerKind::kConcurrent: return "concurrent";
    case SchedulerKind::kHfta: return "hfta";
  }
  return "?";
}

SchedulerKind parse_scheduler(const std::string& name) {
  if (name == "serial") return SchedulerKind::kSerial;
  if (name == "concurrent") return SchedulerKind::kConcurrent;
  if (name == "hfta") return SchedulerKind::kHfta;
  throw ConfigError("unknown scheduler '" + name + "'");
}

std::size_t concurrent_width_from_env() {
  const char* env = std::getenv("HFTA_THREADS");
  if (env == nullptr) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1) throw ConfigError("HFTA_THREADS must be a positive integer");
  return static_cast<std::size_t>(v);
}

ScheduleResult run_scheduler(const SchedulerConfig& config, std::span<const HyperParamSet> sets,
                             std::span<const HyperParamDef> defs, double epochs,
                             const EvalFn& eval) {
  ScheduleResult result;
  std::vector<std::vector<TuneRecord>> parts;

  if (config.kind == SchedulerKind::kHfta) {
    for (const Partition& p : partition_and_fuse(sets, defs, config.max_B)) {
      JobRun run = run_job(p.members, epochs, eval);
      result.cost_device_seconds += run.cost;
      parts.push_back(std::move(run.records));
      ++result.jobs;
    }
  } else {
    for (const HyperParamSet& s : sets) validate_set(s, defs);
    std::vector<JobRun> runs(sets.size());
    if (config.kind == SchedulerKind::kSerial) {
      for (std::size_t i = 0; i < sets.size(); ++i) runs[i] = run_job(sets.subspan(i, 1), epochs, eval);
    } else {
      const std::size_t width =
          std::max<std::size_t>(1, config.threads ? config.threads : concurrent_width_from_env());
      std::atomic<std::size_t> next{0};
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < std::min(width, sets.size()); ++w) {
        pool.emplace_back([&] {
          for (std::size_t i = next++; i < sets.size(); i = next++) {
            runs[i] = run_job(sets.subspan(i, 1), epochs, eval);
          }
        });
      }
      for (std::thread& t : pool) t.join();
    }
    for (JobRun& run : runs) {
      result.cost_device_seconds += run.cost;
      parts.push_back(std::move(run.records));
      ++result.jobs;
    }
  }
  result.records = unfuse_and_reorder(parts);
  return result;
}

TuneResult tune(TuningAlgorithm& algorithm, const SchedulerConfig& scheduler,
                std::span<const HyperParamDef> defs, const EvalFn& eval) {
  TuneResult result;
  std::int64_t iteration = 0;
  while (std::optional<Proposal> proposal = algorithm.propose()) {
    ScheduleResult run = run_scheduler(scheduler, proposal->sets, defs, proposal->epochs, eval);
    for (const TuneRecord& r : run.records) {
      if (!result.best || better(r, *result.best)) result.best = r;
    }
    result.total_cost_device_seconds += run.cost_device_seconds;
    algorithm.update(run.records);
    result.history.push_back({iteration++, proposal->bracket, proposal->round, proposal->epochs,
                              static_cast<std::int64_t>(proposal->sets.size()), run.jobs,
                              run.cost_device_seconds, std::move(run.records)});
  }
  return result;
}

std::vector<HyperParamSet> sample_sets(std::span<const HyperParamDef> defs, std::int64_t count,
                                       Rng& rng, std::int64_t first_uid) {
  std::vector<HyperParamSet> sets;
  for (std::int64_t i = 0; i < count; ++i) {
    HyperParamSet s;
    s.original_index = i;
    s.uid = first_uid + i;
    for (const HyperParamDef& d : defs) s.values[d.name] = d.domain.sample(rng);
    sets.push_back(std::move(s));
  }
  return sets;
}

RandomSearch::RandomSearch(std::vector<HyperParamDef> defs, std::int64_t total_sets,
                           double epochs_per_set, Rng rng)
    : defs_(std::move(defs)), total_sets_(total_sets), epochs_(epochs_per_set), rng_(rng) {
  if (total_sets_ < 1) throw ConfigError("total_sets must be >= 1");
  if (!(epochs_ > 0.0)) throw ConfigError("epochs_per_set must be positive");
}

std::optional<Proposal> RandomSearch::propose() {
  if (done_) return std::nullopt;
  done_ = true;
  return Proposal{sample_sets(defs_, total_sets_, rng_), epochs_, 0, 0};
}

std::int64_t hyperband_s_max(std::int64_t R, std::int64_t eta) {
  std::int64_t s = 0;
  for (std::int64_t p = eta; p <= R; p *= eta) ++s;
  return s;
}

std::vector<HyperbandBracket> hyperband_schedule(std::int64_t R, std::int64_t eta,
                                                 std::int64_t skip_last) {
  if (R < 1) throw ConfigError("R must be >= 1");
  if (eta < 2) throw ConfigError("eta must be >= 2");
  if (skip_last < 0) throw ConfigError("skip_last must be >= 0");
  const std::int64_t s_max = hyperband_s_max(R, eta);
  if (skip_last >= s_max + 1) {
    throw ConfigError("skip_last " + std::to_string(skip_last) + " removes every round: the largest bracket has " +
                      std::to_string(s_max + 1));
  }
  std::vector<HyperbandBracket> schedule;
  for (std::int64_t s = s_max; s >= 0; --s) {
    const std::int64_t eta_s = ipow(eta, s);
    HyperbandBracket b;
    b.s = s;
    b.n = ((s_max + 1) * eta_s + s) / (s + 1);
    b.r = static_cast<double>(R) / static_cast<double>(eta_s);
    const std::int64_t rounds = s + 1 - skip_last;
    for (std::int64_t i = 0; i < rounds; ++i) {
      const std::int64_t eta_i = ipow(eta, i);
      HyperbandRound round;
      round.n = b.n / eta_i;
      round.r = b.r * static_cast<double>(eta_i);
      round.keep = i + 1 < rounds ? round.n / eta : 0;
      b.rounds.push_back(round);
    }
    if (!b.rounds.empty()) schedule.push_back(std::move(b));
  }
  return schedule;
}

Hyperband::Hyperband(std::vector<HyperParamDef> defs, std::int64_t R, std::int64_t eta,
                     std::int64_t skip_last, Rng rng)
    : defs_(std::move(defs)), schedule_(hyperband_schedule(R, eta, skip_last)), rng_(rng) {}

std::optional<Proposal> Hyperband::propose() {
  while (bracket_ < schedule_.size()) {
    const HyperbandBracket& b = schedule_[bracket_];
    if (round_ == 0) {
      current_ = sample_sets(defs_, b.n, rng_, next_uid_);
      next_uid_ += b.n;
    }
    if (round_ < b.rounds.size() && !current_.empty()) {
      for (std::size_t i = 0; i < current_.size(); ++i) current_[i].original_index = static_cast<std::int64_t>(i);
      return Proposal{current_, b.rounds[round_].r, b.s, static_cast<std::int64_t>(round_)};
    }
    ++bracket_;
    round_ = 0;
  }
  return std::nullopt;
}

void Hyperband::update(const std::vector<TuneRecord>& records) {
  const HyperbandBracket& b = schedule_.at(bracket_);
  const std::int64_t keep = b.rounds.at(round_).keep;
  std::vector<TuneRecord> ranked = records;
  std::stable_sort(ranked.begin(), ranked.end(), better);
  current_.clear();
  for (std::int64_t i = 0; i < keep && i < static_cast<std::int64_t>(ranked.size()); ++i) {
    current_.push_back(ranked[i].set);
  }
  ++round_;
  if (round_ >= b.rounds.size()) {
    ++bracket_;
    round_ = 0;
  }
}

TuneResult random_search(std::span<const HyperParamDef> defs, std::int64_t total_sets,
                         double epochs_per_set, const SchedulerConfig& scheduler,
                         const EvalFn& eval, Rng rng) {
  RandomSearch algo({defs.begin(), defs.end()}, total_sets, epochs_per_set, rng);
  return tune(algo, scheduler, defs, eval);
}

TuneResult hyperband(std::span<const HyperParamDef> defs, std::int64_t R, std::int64_t eta,
                     std::int64_t skip_last, const SchedulerConfig& scheduler,
                     const EvalFn& eval, Rng rng) {
  Hyperband algo({defs.begin(), defs.end()}, R, eta, skip_last, rng);
  return tune(algo, scheduler, defs, eval);
}

TuneConfig parse_tune_config(const json& doc) {
  if (!doc.is_object()) config_error("$", "expected an object");
  static const std::set<std::string> known = {"algorithm", "R",     "eta",       "skip_last",
                                              "total_sets", "epochs_per_set", "max_B",
                                              "scheduler",  "seed",  "params",    "model"};
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) config_error(key, "unknown key");
  }
  TuneConfig cfg;
  cfg.algorithm = read_string(doc, "algorithm", "", cfg.algorithm);
  if (cfg.algorithm != "random" && cfg.algorithm != "hyperband") {
    config_error("algorithm", "must be \"random\" or \"hyperband\"");
  }
  cfg.R = read_int(doc, "R", "", cfg.R);
  cfg.eta = read_int(doc, "eta", "", cfg.eta);
  cfg.skip_last = read_int(doc, "skip_last", "", cfg.skip_last);
  cfg.total_sets = read_int(doc, "total_sets", "", cfg.total_sets);
  cfg.epochs_per_set = read_real(doc, "epochs_per_set", "", cfg.epochs_per_set);
  cfg.max_B = read_int(doc, "max_B", "", cfg.max_B);
  cfg.scheduler = read_string(doc, "scheduler", "", cfg.scheduler);
  cfg.model = read_string(doc, "model", "", cfg.model);
  const std::int64_t seed = read_int(doc, "seed", "", 0);
  if (seed < 0) config_error("seed", "must be non-negative");
  cfg.seed = static_cast<std::uint64_t>(seed);
  try {
    parse_scheduler(cfg.scheduler);
  } catch (const ConfigError&) {
    config_error("scheduler", "must be serial, concurrent or hfta");
  }
  if (cfg.max_B < 0) config_error("max_B", "must be >= 0");
  if (cfg.algorithm == "random") {
    if (cfg.total_sets < 1) config_error("total_sets", "must be >= 1");
    if (!(cfg.epochs_per_set > 0.0)) config_error("epochs_per_set", "must be positive");
  } else {
    if (cfg.R < 1) config_error("R", "must be >= 1");
    if (cfg.eta < 2) config_error("eta", "must be >= 2");
    if (cfg.skip_last < 0) config_error("skip_last", "must be >= 0");
    if (cfg.skip_last >= hyperband_s_max(cfg.R, cfg.eta) + 1) {
      config_error("skip_last", "removes every round of every bracket");
    }
  }
  if (!doc.contains("params") || !doc.at("params").is_array() || doc.at("params").empty()) {
    config_error("params", "must be a non-empty array");
  }
  std::set<std::string> names;
  for (std::size_t i = 0; i < doc.at("params").size(); ++i) {
    const json& p = doc.at("params")[i];
    const std::string path = "params[" + std::to_string(i) + "]";
    if (!p.is_object()) config_error(path, "expected an object");
    for (const auto& [key, value] : p.items()) {
      if (key != "name" && key != "fusible" && key != "domain") config_error(path + "." + key, "unknown key");
    }
    HyperParamDef def;
    def.name = read_string(p, "name", path + ".", "");
    if (def.name.empty()) config_error(path + ".name", "must be a non-empty string");
    if (!names.insert(def.name).second) config_error(path + ".name", "duplicate name '" + def.name + "'");
    if (!p.contains("fusible") || !p.at("fusible").is_boolean()) {
      config_error(path + ".fusible", "must be a boolean");
    }
    def.fusible = p.at("fusible").get<bool>();
    if (!p.contains("domain") || !p.at("domain").is_object()) config_error(path + ".domain", "must be an object");
    const json& d = p.at("domain");
    const std::string dpath = path + ".domain";
    if (d.contains("choices")) {
      if (d.size() != 1) config_error(dpath, "choices cannot be mixed with lo/hi");
      if (!d.at("choices").is_array() || d.at("choices").empty()) {
        config_error(dpath + ".choices", "must be a non-empty array");
      }
      for (std::size_t c = 0; c < d.at("choices").size(); ++c) {
        const json& v = d.at("choices")[c];
        if (!v.is_number()) config_error(dpath + ".choices[" + std::to_string(c) + "]", "must be a number");
        def.domain.choices.push_back(v.get<double>());
      }
    } else {
      for (const auto& [key, value] : d.items()) {
        if (key != "lo" && key != "hi") config_error(dpath + "." + key, "unknown key");
      }
      if (!d.contains("lo")) config_error(dpath + ".lo", "is required");
      if (!d.contains("hi")) config_error(dpath + ".hi", "is required");
      def.domain.lo = read_real(d, "lo", dpath + ".", 0.0);
      def.domain.hi = read_real(d, "hi", dpath + ".", 0.0);
      if (def.domain.lo > def.domain.hi) config_error(dpath, "lo must not exceed hi");
    }
    cfg.params.push_back(std::move(def));
  }
  return cfg;
}

json record_to_json(const TuneRecord& record) {
  json values = json::object();
  for (const auto& [name, value] : record.set.values) values[name] = value;
  json j = {{"index", record.set.original_index},
            {"uid", record.set.uid},
            {"values", values},
            {"device_seconds", record.cost_device_seconds}};
  if (record.error) {
    j["metric"] = nullptr;
    j["error"] = record.message;
  } else {
    j["metric"] = record.metric;
  }
  return j;
}

}  // namespace hfta
