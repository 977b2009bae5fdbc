#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hfta {

struct CheckResult {
  std::string suite;  // fusion, gradients, optimizers, convergence
  std::string name;   // e.g. "conv", "adam", "fd/conv2d"
  double max_deviation = 0.0;
  double tolerance = 0.0;
  bool passed = true;
  std::string detail;
};

struct VerifyOptions {
  std::vector<std::string> suites;  // empty: all
  std::uint64_t seed = 0;
  std::int64_t configs_per_family = 20;
  std::vector<std::int64_t> fusion_models{1, 2, 3, 5};
  std::vector<std::int64_t> gradient_models{1, 2, 4};
  std::vector<std::int64_t> optimizer_models{1, 2, 4};
  std::int64_t optimizer_steps = 50;
  std::int64_t convergence_iterations = 200;
  std::vector<double> convergence_lrs{0.0005, 0.001, 0.002};
};

std::vector<std::string> verify_suite_names();

std::vector<CheckResult> verify_fusion(const VerifyOptions& options);
std::vector<CheckResult> verify_gradients(const VerifyOptions& options);
std::vector<CheckResult> verify_optimizers(const VerifyOptions& options);

struct ConvergenceTrace {
  std::vector<double> lrs;
  // [model][iteration]
  std::vector<std::vector<double>> serial;
  std::vector<std::vector<double>> fused;
};
ConvergenceTrace convergence_trace(const VerifyOptions& options);
std::vector<CheckResult> verify_convergence(const VerifyOptions& options);

// Runs the selected suites; throws ConfigError for unknown suite names.
std::vector<CheckResult> run_verify(const VerifyOptions& options);

}  // namespace hfta
