// verify.hpp - part of dtreg. Runnable property suites behind `dtreg verify`:
// every analytic guarantee the engine relies on, checked with residuals.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dtreg {

struct PropertyResult {
    std::string name;
    double residual = 0.0;
    double limit = 0.0;
    bool pass = false;
};

std::vector<PropertyResult> verify_spd3(uint64_t seed = 17);
std::vector<PropertyResult> verify_flow(uint64_t seed = 17);

}  // namespace dtreg
