#include "vitalloc/baselines.hpp"

#include <string>

#include "vitalloc/error.hpp"

namespace vitalloc {

std::string_view baseline_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::kNoAction: return "no_action";
    case BaselineKind::kRandom: return "random";
    case BaselineKind::kExtremeValues: return "extreme_values";
    case BaselineKind::kHighestVariability: return "highest_variability";
  }
  return "?";
}

BaselineKind parse_baseline(std::string_view name) {
  for (auto k : kAllBaselines) {
    if (baseline_name(k) == name) return k;
  }
  throw Error(ErrorCode::kInvalidInput, "unknown baseline '" + std::string(name) + "'");
}

double baseline_score(BaselineKind kind, const ArmState& state,
                      std::span<const VitalSignSpec> specs, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(specs.size());
  require(state.size() == 2 * d, ErrorCode::kInvalidInput, "arm state has the wrong dimension");
  switch (kind) {
    case BaselineKind::kNoAction:
      return 0.0;
    case BaselineKind::kRandom:
      return rng.uniform();
    case BaselineKind::kExtremeValues: {
      double sum = 0.0;
      for (Eigen::Index i = 0; i < d; ++i) {
        const bool inverted = specs[static_cast<std::size_t>(i)].direction == Direction::kBelowIsAbnormal;
        sum += inverted ? 1.0 - state[i] : state[i];
      }
      return sum;
    }
    case BaselineKind::kHighestVariability:
      return -state.tail(d).sum();
  }
  return 0.0;
}

std::vector<int> baseline_select(BaselineKind kind, const AllocationMask& mask,
                                 const std::vector<ArmState>& states,
                                 std::span<const VitalSignSpec> specs, int budget, Rng& rng) {
  if (kind == BaselineKind::kNoAction) return std::vector<int>(mask.arms.size(), 0);
  require(states.size() == mask.arms.size(), ErrorCode::kInvalidInput,
          "one state per present arm required");
  std::vector<double> priority(states.size());
  for (std::size_t j = 0; j < states.size(); ++j) {
    priority[j] = baseline_score(kind, states[j], specs, rng);
  }
  return allocate_by_priority(mask, priority, budget);
}

Enforcement baseline_enforcement(BaselineKind kind) {
  return kind == BaselineKind::kNoAction ? Enforcement::kSkipMinimumMonitoring : Enforcement::kAll;
}

}  // namespace vitalloc
