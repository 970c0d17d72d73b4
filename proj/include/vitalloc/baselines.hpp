#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "vitalloc/env.hpp"
#include "vitalloc/rng.hpp"
#include "vitalloc/vitals.hpp"

namespace vitalloc {

enum class BaselineKind { kNoAction, kRandom, kExtremeValues, kHighestVariability };

std::string_view baseline_name(BaselineKind kind);
BaselineKind parse_baseline(std::string_view name);
inline constexpr BaselineKind kAllBaselines[] = {
    BaselineKind::kNoAction, BaselineKind::kRandom, BaselineKind::kExtremeValues,
    BaselineKind::kHighestVariability};

// Keep-priority of an arm: the device is taken from the eligible arm with the
// lowest score.
//   extreme_values: summed normalized values, below-is-abnormal signs as
//     1 - v, so the least abnormal arm loses its device.
//   highest_variability: minus the summed trailing variance, so the least
//     stable arm loses its device.
//   random: a uniform draw.
// no_action never allocates and has no score (returns 0).
double baseline_score(BaselineKind kind, const ArmState& state,
                      std::span<const VitalSignSpec> specs, Rng& rng);

// Same contract as the learned policy's selection with the keep-priority in
// place of theta(1|s). no_action returns all zeros, ignoring the mask.
std::vector<int> baseline_select(BaselineKind kind, const AllocationMask& mask,
                                 const std::vector<ArmState>& states,
                                 std::span<const VitalSignSpec> specs, int budget, Rng& rng);

// Enforcement level the environment should apply for a baseline.
Enforcement baseline_enforcement(BaselineKind kind);

}  // namespace vitalloc
