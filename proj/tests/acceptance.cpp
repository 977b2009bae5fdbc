// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hfta/bench.h"
#include "hfta/graph.h"
#include "hfta/hfht.h"
#include "hfta/layout.h"
#include "hfta/network.h"
#include "hfta/planner.h"
#include "hfta/verify.h"
#include "hfta/zoo.h"

using namespace hfta;

namespace {

struct Outcome {
  bool passed = true;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* title, double budget_seconds, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = secs < budget_seconds;
  const bool ok = o.passed && in_time;
  if (!ok) ++failures;
  std::printf("%s criterion %d %-28s %7.2fs (limit %.0fs)  %s%s\n", ok ? "PASS" : "FAIL", id, title, secs, budget_seconds,
              o.detail.c_str(), in_time ? "" : " [over time]");
  std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome suite(const std::string& name) {
  VerifyOptions opts;
  opts.suites = {name};
  Outcome o;
  double worst_ratio = 0.0;
  int checks = 0;
  for (const CheckResult& r : run_verify(opts)) {
    ++checks;
    if (!r.passed) {
      o.passed = false;
      o.detail += r.name + " failed (" + r.detail + "); ";
    }
    if (r.tolerance > 0) worst_ratio = std::max(worst_ratio, r.max_deviation / r.tolerance);
  }
  if (checks == 0) o = {false, "no checks ran"};
  o.detail += std::to_string(checks) + " checks, worst deviation/tolerance " + fmt("%.3g", worst_ratio);
  return o;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Successive-halving enumerator written directly from the bracket rules:
// for s = s_max..0, n = ceil((s_max+1)/(s+1) * eta^s), r = R/eta^s, and
// each round keeps floor(n_i/eta) of the best configurations.
std::vector<std::pair<std::int64_t, double>> enumerate_hyperband(std::int64_t R, std::int64_t eta, std::int64_t skip) {
  std::int64_t s_max = 0;
  for (std::int64_t p = eta; p <= R; p *= eta) ++s_max;
  std::vector<std::pair<std::int64_t, double>> out;
  for (std::int64_t s = s_max; s >= 0; --s) {
    std::int64_t es = 1;
    for (std::int64_t i = 0; i < s; ++i) es *= eta;
    std::int64_t n = ((s_max + 1) * es + s) / (s + 1);
    double r = static_cast<double>(R) / static_cast<double>(es);
    for (std::int64_t i = 0; i <= s - skip && n > 0; ++i) {
      out.emplace_back(n, r);
      n /= eta;
      r *= static_cast<double>(eta);
    }
  }
  return out;
}

Outcome criterion5() {
  BenchConfig c;
  c.model = "mlp3";
  c.modes = {BenchMode::kSerial, BenchMode::kFused};
  c.b_list = {8};
  const std::vector<BenchRecord> rs = run_bench(c);
  double ratio = 0.0;
  for (const BenchRecord& r : rs)
    if (r.mode == BenchMode::kFused) ratio = r.normalized_throughput;
  const ZooEntry e = zoo_entry("mlp3");
  std::vector<std::int64_t> counts;
  for (std::int64_t B : {1, 2, 4, 8}) counts.push_back(bench_one(e, BenchMode::kFused, B, 2, 0, 0).kernel_invocations_per_step);
  const bool flat = std::all_of(counts.begin(), counts.end(), [&](std::int64_t v) { return v == counts[0]; });
  Outcome o{ratio > 1.0 && flat, ""};
  o.detail = "fused/serial " + fmt("%.3f", ratio) + "x (soft target 1.2x " + (ratio >= 1.2 ? "met" : "not met") +
             "), fused kernels/step at B=1,2,4,8: " + std::to_string(counts[0]) + "," + std::to_string(counts[1]) + "," +
             std::to_string(counts[2]) + "," + std::to_string(counts[3]);
  return o;
}

Outcome criterion6() {
  Outcome o;
  // (a) partition coverage and ordering.
  const std::vector<HyperParamDef> defs{{"lr", {1e-4, 1e-1, {}}, true},
                                        {"batch_size", {0, 0, {8, 16, 32}}, false},
                                        {"depth", {0, 0, {1, 2}}, false}};
  Rng rng(61);
  int bad_batches = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto count = static_cast<std::int64_t>(rng.below(24));
    const auto cap = static_cast<std::int64_t>(rng.below(6));
    const std::vector<HyperParamSet> sets = sample_sets(defs, count, rng);
    std::vector<int> hits(static_cast<std::size_t>(count), 0);
    bool ok = true;
    for (const Partition& p : partition_and_fuse(sets, defs, cap)) {
      ok = ok && p.size() >= 1 && (cap == 0 || p.size() <= cap);
      for (std::int64_t i = 0; i < p.size(); ++i) {
        const HyperParamSet& m = p.members[i];
        if (m.original_index < 0 || m.original_index >= count) {
          ok = false;
          continue;
        }
        ++hits[m.original_index];
        ok = ok && m.values.at("batch_size") == p.infusible_key[0] && m.values.at("depth") == p.infusible_key[1];
        ok = ok && (i == 0 || p.members[i - 1].original_index < m.original_index);
      }
    }
    ok = ok && std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; });
    if (!ok) ++bad_batches;
  }
  o.passed = bad_batches == 0;
  o.detail = "(a) " + std::to_string(bad_batches) + "/1000 bad batches; ";

  // (b) bracket schedule against the enumerator, plus the published settings.
  std::vector<std::pair<std::int64_t, double>> got;
  for (const HyperbandBracket& b : hyperband_schedule(81, 3, 0))
    for (const HyperbandRound& r : b.rounds) got.emplace_back(r.n, r.r);
  const auto want = enumerate_hyperband(81, 3, 0);
  bool same = got.size() == want.size();
  for (std::size_t i = 0; same && i < got.size(); ++i) same = got[i].first == want[i].first && std::abs(got[i].second - want[i].second) < 1e-9;
  const EvalFn eval = [](std::span<const HyperParamSet> job, double epochs) {
    JobOutcome out;
    for (const HyperParamSet& s : job)
      out.metrics.push_back(-std::abs(std::log10(s.values.at("lr")) + 2.0) + 1e-4 * epochs - 1e-3 * s.values.at("depth"));
    return out;
  };
  bool settings_ok = true;
  for (auto [R, eta, skip] : std::vector<std::tuple<std::int64_t, std::int64_t, std::int64_t>>{{250, 5, 1}, {81, 3, 2}})
    settings_ok = settings_ok && hyperband(defs, R, eta, skip, {SchedulerKind::kHfta, 0, 0}, eval, Rng(62)).best.has_value();
  o.passed = o.passed && same && settings_ok;
  o.detail += std::string("(b) schedule ") + (same ? "matches" : "differs") + " (" + std::to_string(got.size()) +
              " rounds), published settings " + (settings_ok ? "ran" : "failed") + "; ";

  // (c) scheduler invariance.
  bool agree = true;
  for (std::uint64_t seed : {63u, 64u, 65u}) {
    const TuneResult s = hyperband(defs, 81, 3, 0, {SchedulerKind::kSerial, 0, 0}, eval, Rng(seed));
    const TuneResult f = hyperband(defs, 81, 3, 0, {SchedulerKind::kHfta, 0, 0}, eval, Rng(seed));
    const TuneResult rs = random_search(defs, 40, 3.0, {SchedulerKind::kSerial, 0, 0}, eval, Rng(seed));
    const TuneResult rf = random_search(defs, 40, 3.0, {SchedulerKind::kHfta, 0, 0}, eval, Rng(seed));
    agree = agree && s.best && f.best && s.best->set.values == f.best->set.values && s.best->metric == f.best->metric;
    agree = agree && rs.best && rf.best && rs.best->set.values == rf.best->set.values;
  }
  o.passed = o.passed && agree;
  o.detail += std::string("(c) serial and hfta best sets ") + (agree ? "identical" : "differ");
  return o;
}

Outcome criterion7() {
  Outcome o;
  int round_trips = 0;
  for (const char* name : {"mlp3", "minicnn", "minigan_g", "blocks4", "mlp3_wide"}) {
    const std::string text = read_file(std::string(HFTA_SOURCE_DIR) + "/fixtures/" + name + ".json");
    const GraphSpec g = load_graph(text);
    if (save_graph(g) != text || load_graph(save_graph(g)) != g) {
      o.passed = false;
      o.detail += std::string(name) + " round trip differs; ";
    }
    ++round_trips;
  }
  const GraphSpec g = load_graph(read_file(std::string(HFTA_SOURCE_DIR) + "/fixtures/blocks4.json"));
  const std::int64_t B = 3;
  std::vector<Network> nets;
  for (std::int64_t b = 0; b < B; ++b) nets.push_back(Network::initialize(g, Rng(71).split(static_cast<std::uint64_t>(b)), b));
  const Shape x_shape = g.node(g.inputs[0]).config.at("shape").get<Shape>();
  Rng data(72);
  std::vector<Tensor> xs;
  for (std::int64_t b = 0; b < B; ++b) {
    std::vector<double> v(static_cast<std::size_t>(numel(x_shape)));
    for (double& d : v) d = data.normal();
    xs.push_back(Tensor(x_shape, std::move(v)));
  }
  const RunContext ctx{true, Rng(73)};
  std::vector<Tensor> serial;
  for (std::int64_t b = 0; b < B; ++b) {
    const std::vector<Tensor> in{xs[b]};
    serial.push_back(nets[b].forward(in, ctx).front());
  }
  const std::vector<Tensor> fin{stack_models(xs, FusedLayout::kModelLeading)};
  const auto deviation = [&](const FusePlan& plan) {
    const std::vector<Tensor> parts = split_models(Network::fuse(nets, plan).forward(fin, ctx).front(), FusedLayout::kModelLeading, B);
    double worst = 0.0;
    for (std::int64_t b = 0; b < B; ++b) worst = std::max(worst, max_abs_diff(parts[b], serial[b]));
    return worst;
  };
  const double unfused = deviation(FusePlan::none(g));
  double worst_mask = 0.0;
  const std::uint64_t masks = 1ull << g.blocks.size();
  for (std::uint64_t m = 0; m < masks; ++m) worst_mask = std::max(worst_mask, deviation(FusePlan::from_mask(g, m)));
  const std::vector<GraphSpec> specs(static_cast<std::size_t>(B), g);
  std::vector<std::size_t> nodes(masks);
  for (std::uint64_t m = 0; m < masks; ++m) nodes[m] = fuse_graphs(specs, FusePlan::from_mask(g, m)).nodes.size();
  int violations = 0;
  for (std::uint64_t a = 0; a < masks; ++a)
    for (std::uint64_t b = 0; b < masks; ++b)
      if ((a & b) == a && nodes[a] < nodes[b]) ++violations;
  o.passed = o.passed && unfused == 0.0 && worst_mask <= 1e-10 && violations == 0;
  o.detail += std::to_string(round_trips) + " fixtures round-trip, unfused deviation " + fmt("%.3g", unfused) + ", " +
              std::to_string(masks) + " masks worst " + fmt("%.3g", worst_mask) + ", " + std::to_string(violations) +
              " monotonicity violations (nodes " + std::to_string(nodes[0]) + " -> " + std::to_string(nodes[masks - 1]) + ")";
  return o;
}

}  // namespace

int main() {
  criterion(1, "fusion oracle", 180, [] { return suite("fusion"); });
  criterion(2, "gradient reconstruction", 180, [] { return suite("gradients"); });
  criterion(3, "optimizer equivalence", 60, [] { return suite("optimizers"); });
  criterion(4, "convergence overlap", 120, [] { return suite("convergence"); });
  criterion(5, "throughput direction", 120, criterion5);
  criterion(6, "hfht correctness", 120, criterion6);
  criterion(7, "planner round trips", 60, criterion7);
  std::printf("acceptance: %s\n", failures == 0 ? "all criteria passed" : "FAILED");
  return failures == 0 ? 0 : 1;
}
