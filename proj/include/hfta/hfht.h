#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfta/rng.h"

namespace hfta {

// Closed interval [lo, hi], or a finite set of choices when `choices` is
// non-empty.
struct Domain {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> choices;

  bool discrete() const { return !choices.empty(); }
  bool contains(double value) const;
  double sample(Rng& rng) const;
};

struct HyperParamDef {
  std::string name;
  Domain domain;
  bool fusible = true;
};

struct HyperParamSet {
  std::map<std::string, double> values;
  std::int64_t original_index = 0;  // position in the proposed batch
  std::int64_t uid = 0;             // stable identity across rounds
};

struct Partition {
  std::vector<HyperParamSet> members;
  std::vector<double> infusible_key;
  std::int64_t size() const { return static_cast<std::int64_t>(members.size()); }
};

struct TuneRecord {
  HyperParamSet set;
  double metric = 0.0;
  double cost_device_seconds = 0.0;
  bool error = false;
  std::string message;
};

// Throws ValidationError naming the set and field for missing, unknown or
// out-of-domain values.
void validate_set(const HyperParamSet& set, std::span<const HyperParamDef> defs);

// Groups sets by their infusible values (in order of first appearance) and
// splits groups larger than max_B (0 = unbounded) into ordered chunks.
std::vector<Partition> partition_and_fuse(std::span<const HyperParamSet> sets,
                                          std::span<const HyperParamDef> defs,
                                          std::int64_t max_B = 0);

// Flattens per-partition records into original_index order; throws
// IntegrityError on a missing or duplicate index.
std::vector<TuneRecord> unfuse_and_reorder(const std::vector<std::vector<TuneRecord>>& results);

// ---------------------------------------------------------------------------
// Schedulers

enum class SchedulerKind { kSerial, kConcurrent, kHfta };
std::string scheduler_name(SchedulerKind kind);
SchedulerKind parse_scheduler(const std::string& name);

struct JobOutcome {
  std::vector<double> metrics;        // one per job member
  std::optional<double> cost_seconds;  // measured wall time when absent
};

// Trains one job (a single set, or a fused partition) for `epochs` and
// reports per-member metrics.
using EvalFn = std::function<JobOutcome(std::span<const HyperParamSet> job, double epochs)>;

struct SchedulerConfig {
  SchedulerKind kind = SchedulerKind::kSerial;
  std::int64_t max_B = 0;
  std::size_t threads = 0;  // concurrent width; 0 reads HFTA_THREADS (default 1)
};

struct ScheduleResult {
  std::vector<TuneRecord> records;  // original_index order
  double cost_device_seconds = 0.0;
  std::int64_t jobs = 0;
};

ScheduleResult run_scheduler(const SchedulerConfig& config, std::span<const HyperParamSet> sets,
                             std::span<const HyperParamDef> defs, double epochs,
                             const EvalFn& eval);

std::size_t concurrent_width_from_env();

// ---------------------------------------------------------------------------
// Tuning algorithms

struct Proposal {
  std::vector<HyperParamSet> sets;
  double epochs = 1.0;
  std::int64_t bracket = 0;
  std::int64_t round = 0;
};

class TuningAlgorithm {
 public:
  virtual ~TuningAlgorithm() = default;
  virtual std::optional<Proposal> propose() = 0;
  virtual void update(const std::vector<TuneRecord>& records) = 0;
};

struct IterationReport {
  std::int64_t iteration = 0;
  std::int64_t bracket = 0;
  std::int64_t round = 0;
  double epochs = 0.0;
  std::int64_t parallelism = 0;  // |H|
  std::int64_t jobs = 0;
  double cost_device_seconds = 0.0;
  std::vector<TuneRecord> records;
};

struct TuneResult {
  std::optional<TuneRecord> best;
  std::vector<IterationReport> history;
  double total_cost_device_seconds = 0.0;
};

// The propose / schedule / reorder / select loop. Best = highest metric;
// ties go to the earlier iteration, then the lower original_index.
TuneResult tune(TuningAlgorithm& algorithm, const SchedulerConfig& scheduler,
                std::span<const HyperParamDef> defs, const EvalFn& eval);

std::vector<HyperParamSet> sample_sets(std::span<const HyperParamDef> defs, std::int64_t count,
                                       Rng& rng, std::int64_t first_uid = 0);

class RandomSearch : public TuningAlgorithm {
 public:
  RandomSearch(std::vector<HyperParamDef> defs, std::int64_t total_sets, double epochs_per_set,
               Rng rng);
  std::optional<Proposal> propose() override;
  void update(const std::vector<TuneRecord>&) override {}

 private:
  std::vector<HyperParamDef> defs_;
  std::int64_t total_sets_;
  double epochs_;
  Rng rng_;
  bool done_ = false;
};

struct HyperbandRound {
  std::int64_t n = 0;    // configurations evaluated
  double r = 0.0;        // epochs each
  std::int64_t keep = 0;  // survivors promoted to the next round
};

struct HyperbandBracket {
  std::int64_t s = 0;
  std::int64_t n = 0;
  double r = 0.0;
  std::vector<HyperbandRound> rounds;  // after dropping skip_last
};

// s_max = floor(log_eta R); bracket s starts with
// n = ceil((s_max+1)/(s+1) * eta^s) sets at r = R * eta^-s epochs and
// keeps floor(n_i / eta) after each round. skip_last drops that many final
// rounds from every bracket; brackets left without rounds are omitted.
// ConfigError when R < 1, eta < 2, skip_last < 0, or no bracket keeps a round.
std::vector<HyperbandBracket> hyperband_schedule(std::int64_t R, std::int64_t eta,
                                                 std::int64_t skip_last);
std::int64_t hyperband_s_max(std::int64_t R, std::int64_t eta);

class Hyperband : public TuningAlgorithm {
 public:
  Hyperband(std::vector<HyperParamDef> defs, std::int64_t R, std::int64_t eta,
            std::int64_t skip_last, Rng rng);
  std::optional<Proposal> propose() override;
  void update(const std::vector<TuneRecord>& records) override;
  const std::vector<HyperbandBracket>& schedule() const { return schedule_; }

 private:
  std::vector<HyperParamDef> defs_;
  std::vector<HyperbandBracket> schedule_;
  Rng rng_;
  std::size_t bracket_ = 0;
  std::size_t round_ = 0;
  std::vector<HyperParamSet> current_;
  std::int64_t next_uid_ = 0;
};

TuneResult random_search(std::span<const HyperParamDef> defs, std::int64_t total_sets,
                         double epochs_per_set, const SchedulerConfig& scheduler,
                         const EvalFn& eval, Rng rng);
TuneResult hyperband(std::span<const HyperParamDef> defs, std::int64_t R, std::int64_t eta,
                     std::int64_t skip_last, const SchedulerConfig& scheduler,
                     const EvalFn& eval, Rng rng);

// Tuning config file.
struct TuneConfig {
  std::string algorithm = "random";
  std::int64_t R = 81;
  std::int64_t eta = 3;
  std::int64_t skip_last = 0;
  std::int64_t total_sets = 10;
  double epochs_per_set = 1.0;
  std::int64_t max_B = 0;
  std::string scheduler = "hfta";
  std::uint64_t seed = 0;
  std::string model = "mlp3";
  std::vector<HyperParamDef> params;
};

// ConfigError messages carry the offending field path, e.g. "params[1].domain.lo".
TuneConfig parse_tune_config(const nlohmann::json& doc);

nlohmann::json record_to_json(const TuneRecord& record);

}  // namespace hfta
