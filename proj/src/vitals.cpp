#include "vitalloc/vitals.hpp"

#include <cmath>
#include <ostream>

#include "vitalloc/error.hpp"

namespace vitalloc {
namespace {

void check_dims(Eigen::Index n, std::span<const VitalSignSpec> specs) {
  require(static_cast<std::size_t>(n) == specs.size(), ErrorCode::kInvalidInput,
          "vital vector has " + std::to_string(n) + " entries, expected " +
              std::to_string(specs.size()));
}

const char* direction_name(Direction d) {
  return d == Direction::kAboveIsAbnormal ? "above" : "below";
}

}  // namespace

void VitalSignSpec::validate() const {
  require(!name.empty(), ErrorCode::kInvalidInput, "sign without a name");
  require(std::isfinite(threshold), ErrorCode::kInvalidInput, name + ": threshold not finite");
  require(penalty_scale > 0.0, ErrorCode::kInvalidInput, name + ": penalty_scale must be > 0");
  // sd == 0 is accepted and gives a deterministic shift.
  require(intervention_sd >= 0.0, ErrorCode::kInvalidInput, name + ": intervention_sd must be >= 0");
  require(std::isfinite(data_min) && std::isfinite(data_max), ErrorCode::kInvalidInput,
          name + ": normalization range not finite");
  require(data_min < data_max, ErrorCode::kDegenerateRange,
          name + ": data_min must be < data_max");
}

VitalSignSpec heart_rate_spec() {
  return {"heart_rate", 120.0, Direction::kAboveIsAbnormal, 17.0, 15.0, 5.0, 30.0, 200.0};
}
VitalSignSpec respiratory_rate_spec() {
  return {"respiratory_rate", 30.0, Direction::kAboveIsAbnormal, 5.0, 10.0, 3.33, 4.0, 60.0};
}
VitalSignSpec spo2_spec() {
  return {"spo2", 90.0, Direction::kBelowIsAbnormal, 4.0, 3.0, 1.0, 60.0, 100.0};
}
VitalSignSpec temperature_spec() {
  return {"temperature", 38.0, Direction::kAboveIsAbnormal, 2.0, 1.5, 0.5, 32.0, 42.0};
}

SignSpecs preset_specs(std::string_view name) {
  if (name == "mimic4") return {heart_rate_spec(), respiratory_rate_spec(), temperature_spec()};
  if (name == "mimic3" || name == "mbarara") {
    return {heart_rate_spec(), respiratory_rate_spec(), spo2_spec()};
  }
  throw Error(ErrorCode::kInvalidInput, "unknown preset '" + std::string(name) +
                                            "' (expected mimic3, mimic4 or mbarara)");
}

SignSpecs load_sign_specs(const KeyValueConfig& cfg) {
  SignSpecs specs = preset_specs(cfg.get_string("preset", "mimic3"));
  if (auto names = cfg.get("signs")) {
    const SignSpecs known = {heart_rate_spec(), respiratory_rate_spec(), spo2_spec(),
                             temperature_spec()};
    SignSpecs chosen;
    for (auto& raw : split(*names, ',')) {
      auto n = trim(raw);
      if (n.empty()) continue;
      VitalSignSpec s;
      s.name = n;
      for (const auto& k : known) {
        if (k.name == n) s = k;
      }
      for (const auto& p : specs) {
        if (p.name == n) s = p;
      }
      chosen.push_back(s);
    }
    specs = std::move(chosen);
  }
  for (auto& s : specs) {
    const auto key = [&](const char* field) { return s.name + "." + field; };
    s.threshold = cfg.get_double(key("threshold"), s.threshold);
    s.penalty_scale = cfg.get_double(key("penalty_scale"), s.penalty_scale);
    s.intervention_mean = cfg.get_double(key("intervention_mean"), s.intervention_mean);
    s.intervention_sd = cfg.get_double(key("intervention_sd"), s.intervention_sd);
    s.data_min = cfg.get_double(key("data_min"), s.data_min);
    s.data_max = cfg.get_double(key("data_max"), s.data_max);
    if (auto d = cfg.get(key("direction"))) {
      if (*d == "above") {
        s.direction = Direction::kAboveIsAbnormal;
      } else if (*d == "below") {
        s.direction = Direction::kBelowIsAbnormal;
      } else {
        throw Error(ErrorCode::kParse, key("direction") + " must be 'above' or 'below'");
      }
    }
    s.validate();
  }
  require(!specs.empty(), ErrorCode::kInvalidInput, "no vital signs configured");
  return specs;
}

void write_sign_specs(const SignSpecs& specs, std::ostream& out) {
  out.precision(17);
  out << "signs = ";
  for (std::size_t i = 0; i < specs.size(); ++i) out << (i ? "," : "") << specs[i].name;
  out << "\n";
  for (const auto& s : specs) {
    out << s.name << ".threshold = " << s.threshold << "\n"
        << s.name << ".direction = " << direction_name(s.direction) << "\n"
        << s.name << ".penalty_scale = " << s.penalty_scale << "\n"
        << s.name << ".intervention_mean = " << s.intervention_mean << "\n"
        << s.name << ".intervention_sd = " << s.intervention_sd << "\n"
        << s.name << ".data_min = " << s.data_min << "\n"
        << s.name << ".data_max = " << s.data_max << "\n";
  }
}

double penalty(const VitalSignSpec& sign, double reading) {
  require(std::isfinite(reading), ErrorCode::kInvalidInput,
          sign.name + ": non-finite reading");
  if (!sign.is_abnormal(reading)) return 0.0;
  return -std::exp(std::abs(reading - sign.threshold) / sign.penalty_scale);
}

double reward(const VitalVector& raw, std::span<const VitalSignSpec> specs) {
  check_dims(raw.size(), specs);
  double total = 0.0;
  for (std::size_t i = 0; i < specs.size(); ++i) total += penalty(specs[i], raw[i]);
  return total;
}

bool any_abnormal(const VitalVector& raw, std::span<const VitalSignSpec> specs) {
  check_dims(raw.size(), specs);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].is_abnormal(raw[i])) return true;
  }
  return false;
}

VitalVector apply_intervention(const VitalVector& raw,
                               std::span<const VitalSignSpec> specs, Rng& rng,
                               bool truncate_shift) {
  check_dims(raw.size(), specs);
  VitalVector out = raw;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    if (!s.is_abnormal(raw[i])) continue;
    double shift = rng.normal(s.intervention_mean, s.intervention_sd);
    if (truncate_shift && shift < 0.0) shift = 0.0;
    out[i] += s.direction == Direction::kAboveIsAbnormal ? -shift : shift;
  }
  return out;
}

VitalVector normalize(const VitalVector& raw, std::span<const VitalSignSpec> specs) {
  check_dims(raw.size(), specs);
  VitalVector out(raw.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const double range = specs[i].data_max - specs[i].data_min;
    require(range > 0.0, ErrorCode::kDegenerateRange, specs[i].name + ": data_max == data_min");
    out[i] = (raw[i] - specs[i].data_min) / range;
  }
  return out;
}

VitalVector denormalize(const VitalVector& unit, std::span<const VitalSignSpec> specs) {
  check_dims(unit.size(), specs);
  VitalVector out(unit.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const double range = specs[i].data_max - specs[i].data_min;
    require(range > 0.0, ErrorCode::kDegenerateRange, specs[i].name + ": data_max == data_min");
    out[i] = unit[i] * range + specs[i].data_min;
  }
  return out;
}

}  // namespace vitalloc
