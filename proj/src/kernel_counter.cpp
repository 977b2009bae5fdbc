#include "hfta/kernel_counter.h"

namespace hfta {
namespace {

thread_local std::map<std::string, std::int64_t, std::less<>> counts;

}  // namespace

void KernelCounter::record(std::string_view kernel) {
  auto it = counts.find(kernel);
  if (it == counts.end()) {
    counts.emplace(std::string(kernel), 1);
  } else {
    ++it->second;
  }
}

std::int64_t KernelCounter::count(std::string_view kernel) {
  auto it = counts.find(kernel);
  return it == counts.end() ? 0 : it->second;
}

std::int64_t KernelCounter::total() {
  std::int64_t sum = 0;
  for (const auto& [name, n] : counts) sum += n;
  return sum;
}

std::map<std::string, std::int64_t> KernelCounter::snapshot() {
  return {counts.begin(), counts.end()};
}

void KernelCounter::reset() { counts.clear(); }

}  // namespace hfta
