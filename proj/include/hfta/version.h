#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace hfta {

inline constexpr std::string_view kVersion = "0.1.0";

// 64-bit FNV-1a, printed as 16 hex digits.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

}  // namespace hfta
