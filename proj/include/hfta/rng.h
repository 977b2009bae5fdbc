#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hfta {

// Splittable generator. A key names a stream; split() derives child keys
// deterministically so that, e.g., model b's dropout stream at step t is
// the same whether model b trains alone or inside a fused job.
class Rng {
 public:
  explicit Rng(std::uint64_t key = 0) : key_(key), engine_(key) {}

  std::uint64_t key() const { return key_; }

  Rng split(std::uint64_t tag) const;
  Rng split(std::string_view tag) const;

  double uniform(double lo = 0.0, double hi = 1.0);
  double normal(double mean = 0.0, double stddev = 1.0);
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t key_;
  std::mt19937_64 engine_;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace hfta
