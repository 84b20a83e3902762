#pragma once

#include <string>
#include <vector>

#include "diffspeech/config.hpp"

namespace diffspeech {

struct CheckResult {
  std::string name;
  bool pass = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

// Read-only, idempotent invariant suite: schedule closed forms vs quadrature,
// moment identities, gradient checks, loss identities, ODE/SDE marginal match,
// alpha = 0 identity, and the guidance norm identity.
std::vector<CheckResult> run_verification(const RunConfig& cfg);

inline bool all_passed(const std::vector<CheckResult>& checks) {
  for (const auto& c : checks)
    if (!c.pass) return false;
  return true;
}

json checks_to_json(const std::vector<CheckResult>& checks);

}  // namespace diffspeech
