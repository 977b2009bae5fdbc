#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace hfta {

// Per-thread count of kernel-level invocations, keyed by kernel name.
// Every forward kernel bumps its counter once per call, so a fused layer
// serving B models shows up as one invocation.
class KernelCounter {
 public:
  static void record(std::string_view kernel);
  static std::int64_t count(std::string_view kernel);
  static std::int64_t total();
  static std::map<std::string, std::int64_t> snapshot();
  static void reset();
};

}  // namespace hfta
