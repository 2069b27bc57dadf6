#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace pimms::verify {

enum class Level { quick, full };

Level parse_level(std::string_view s);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Invariant suite: gradient checks, permutation invariance, routing
/// equivalences and metric oracles. `full` adds larger instance counts, the
/// curriculum Monte Carlo and exhaustive Wilcoxon enumeration.
std::vector<CheckResult> run_suite(Level level, const std::function<void(const CheckResult&)>& on_result = {});

}  // namespace pimms::verify
