#pragma once

#include <string>
#include <vector>

namespace reflexsplit {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Runs the built-in oracle/invariant suite. `inject_fault` deliberately
// perturbs one named check ("schedule", "blend", "crgf", "lfsb",
// "loss-gradients") so the harness itself can be verified to catch bugs.
std::vector<CheckResult> run_selfcheck(const std::string& inject_fault = "");

} // namespace reflexsplit
