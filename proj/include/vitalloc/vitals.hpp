#pragma once

#include <Eigen/Core>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vitalloc/kv_config.hpp"
#include "vitalloc/rng.hpp"

namespace vitalloc {

// One reading per configured sign, in the order of the sign list.
using VitalVector = Eigen::VectorXd;

enum class Direction { kAboveIsAbnormal, kBelowIsAbnormal };

struct VitalSignSpec {
  std::string name;
  double threshold = 0.0;
  Direction direction = Direction::kAboveIsAbnormal;
  double penalty_scale = 1.0;      // divisor inside the exponential
  double intervention_mean = 0.0;  // magnitude of the shift toward normal
  double intervention_sd = 0.0;
  double data_min = 0.0;           // min-max normalization range
  double data_max = 1.0;

  void validate() const;

  // Strictly beyond the threshold; a reading exactly at it is normal.
  bool is_abnormal(double reading) const {
    return direction == Direction::kAboveIsAbnormal ? reading > threshold
                                                    : reading < threshold;
  }
};

using SignSpecs = std::vector<VitalSignSpec>;

// Built-in signs with the alert thresholds, penalty scales and intervention
// effects used by the simulator. Normalization ranges are placeholders until
// a corpus provides them (see `fit_ranges` in ingest).
VitalSignSpec heart_rate_spec();
VitalSignSpec respiratory_rate_spec();
VitalSignSpec spo2_spec();
VitalSignSpec temperature_spec();

// "mimic4": heart rate, respiratory rate, skin temperature.
// "mimic3" / "mbarara": heart rate, respiratory rate, SPO2.
SignSpecs preset_specs(std::string_view name);

// Keys: `preset`, `signs` (comma list), and `<sign>.<field>` overrides where
// field is one of threshold, direction (above|below), penalty_scale,
// intervention_mean, intervention_sd, data_min, data_max.
SignSpecs load_sign_specs(const KeyValueConfig& cfg);
void write_sign_specs(const SignSpecs& specs, std::ostream& out);

// 0 on the normal side (including the threshold itself). On the abnormal side
// -exp(|reading - threshold| / scale), so the value jumps from 0 to -1 as the
// threshold is crossed.
double penalty(const VitalSignSpec& sign, double reading);

// Sum of per-sign penalties over raw-unit readings.
double reward(const VitalVector& raw, std::span<const VitalSignSpec> specs);

bool any_abnormal(const VitalVector& raw, std::span<const VitalSignSpec> specs);

// Clinician response to an alert: every abnormal sign moves toward its normal
// side by a Normal(intervention_mean, intervention_sd) draw. Normal signs are
// untouched and consume no randomness. With `truncate_shift` negative draws
// are clipped to zero; otherwise they are applied as drawn.
VitalVector apply_intervention(const VitalVector& raw,
                               std::span<const VitalSignSpec> specs, Rng& rng,
                               bool truncate_shift = false);

VitalVector normalize(const VitalVector& raw, std::span<const VitalSignSpec> specs);
VitalVector denormalize(const VitalVector& unit, std::span<const VitalSignSpec> specs);

}  // namespace vitalloc
