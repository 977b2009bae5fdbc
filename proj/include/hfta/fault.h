#pragma once

namespace hfta {

// Deliberate defects for exercising the verification battery's negative
// controls. Never set outside tests and `verify --inject-fault`.
enum class Fault { kNone, kConvGroupsOffByOne };

void set_fault(Fault fault);
Fault active_fault();

}  // namespace hfta
