#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hatetiny {

inline constexpr double kGradCheckThreshold = 1e-2;

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
};

// Finite-difference checks for every differentiable primitive plus a full
// transformer block of the micro preset, one result per check. All results
// are expected under kGradCheckThreshold.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed);

bool gradcheck_suite_passed(const std::vector<GradCheckResult>& results);

}  // namespace hatetiny
