#include "vitalloc/env.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>

#include "vitalloc/error.hpp"
#include "vitalloc/kv_config.hpp"

namespace vitalloc {

InstanceConfig InstanceConfig::for_setting(int budget, int patients) {
  InstanceConfig cfg;
  cfg.budget = budget;
  cfg.patients = patients;
  cfg.arrival_batch = patients / 10;
  return cfg;
}

std::vector<int> InstanceConfig::arrival_steps() const {
  std::vector<int> out(static_cast<std::size_t>(budget), 1);
  if (arrival_batch <= 0) return out;
  for (int t = 1 + arrival_period; t <= horizon; t += arrival_period) {
    out.insert(out.end(), static_cast<std::size_t>(arrival_batch), t);
  }
  return out;
}

int InstanceConfig::max_forced_active() const {
  const auto arrivals = arrival_steps();
  int worst = 0;
  for (int t = 1; t <= horizon; ++t) {
    int forced = 0;
    for (int a : arrivals) {
      if (a <= t && t < a + t_min && t <= a + stay - 1) ++forced;
    }
    worst = std::max(worst, forced);
  }
  return worst;
}

void InstanceConfig::validate() const {
  require(horizon >= 1, ErrorCode::kInvalidInput, "horizon must be >= 1");
  require(budget >= 0, ErrorCode::kInvalidInput, "budget must be >= 0");
  require(1 <= t_min && t_min <= t_max, ErrorCode::kInvalidInput, "need 1 <= t_min <= t_max");
  require(stay >= 1, ErrorCode::kInvalidInput, "stay must be >= 1");
  require(patients >= 1, ErrorCode::kInvalidInput, "patients must be >= 1");
  require(arrival_batch >= 0, ErrorCode::kInvalidInput, "arrival_batch must be >= 0");
  require(arrival_period >= 1, ErrorCode::kInvalidInput, "arrival_period must be >= 1");
  require(gamma > 0.0 && gamma <= 1.0, ErrorCode::kInvalidInput, "gamma must be in (0, 1]");
  require(response_prob >= 0.0 && response_prob <= 1.0, ErrorCode::kInvalidInput,
          "response_prob must be in [0, 1]");
  require(window >= 1, ErrorCode::kInvalidInput, "window must be >= 1");
  require(max_blend >= 0.0 && max_blend <= 1.0, ErrorCode::kInvalidInput,
          "max_blend must be in [0, 1]");
  require(arrival_batch <= budget, ErrorCode::kInfeasible,
          "arrival_batch exceeds the budget; new arms could not be served");
  require(max_forced_active() <= budget, ErrorCode::kInfeasible,
          "arrival schedule forces more than `budget` arms active at once");
}

std::size_t AllocationMask::count(Slot s) const {
  return static_cast<std::size_t>(std::count(slots.begin(), slots.end(), s));
}

const char* slot_name(Slot s) {
  switch (s) {
    case Slot::kForcedActive: return "forced_active";
    case Slot::kForcedPassive: return "forced_passive";
    case Slot::kEligible: return "eligible";
  }
  return "?";
}

ArmState arm_state(const std::deque<VitalVector>& history) {
  require(!history.empty(), ErrorCode::kInvalidInput, "arm has no observations");
  const auto d = history.back().size();
  ArmState s(2 * d);
  s.head(d) = history.back();
  s.tail(d).setZero();
  if (history.size() >= 2) {
    VitalVector mean = VitalVector::Zero(d);
    for (const auto& v : history) mean += v;
    mean /= static_cast<double>(history.size());
    VitalVector var = VitalVector::Zero(d);
    for (const auto& v : history) var += (v - mean).cwiseAbs2();
    s.tail(d) = var / static_cast<double>(history.size());
  }
  return s;
}

TransitionOutcome transition(const PatientModel& model, const VitalVector& vitals, int action,
                             std::span<const VitalSignSpec> specs, const TransitionParams& params,
                             Rng& transition_rng, Rng& response_rng, Rng& intervention_rng) {
  TransitionOutcome out;
  out.input = vitals;
  if (action == 1) {
    const VitalVector raw = denormalize(vitals, specs);
    if (any_abnormal(raw, specs)) {
      out.alerted = true;
      if (response_rng.bernoulli(params.response_prob)) {
        out.intervened = true;
        out.input = normalize(
            apply_intervention(raw, specs, intervention_rng, params.truncate_intervention), specs);
      }
    }
  }
  out.next = model.conditional_next(out.input, transition_rng);
  require(out.next.allFinite(), ErrorCode::kNumericFailure, "sampled a non-finite state");
  return out;
}

std::vector<std::string> constraint_violations(const AllocationMask& mask,
                                               std::span<const int> actions, int budget,
                                               Enforcement enforcement) {
  std::vector<std::string> out;
  const auto where = [&](std::size_t i) {
    return "step " + std::to_string(mask.step) + " arm " + std::to_string(mask.arms[i]);
  };
  if (actions.size() != mask.arms.size()) {
    out.push_back("step " + std::to_string(mask.step) + ": " + std::to_string(actions.size()) +
                  " actions for " + std::to_string(mask.arms.size()) + " present arms");
    return out;
  }
  int used = 0;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (actions[i] != 0 && actions[i] != 1) {
      out.push_back(where(i) + ": action must be 0 or 1");
      continue;
    }
    used += actions[i];
    if (mask.slots[i] == Slot::kForcedActive && actions[i] != 1 &&
        enforcement == Enforcement::kAll) {
      out.push_back(where(i) + ": minimum monitoring period not honoured");
    }
    if (mask.slots[i] == Slot::kForcedPassive && actions[i] != 0) {
      out.push_back(where(i) + ": device given to a forced-passive arm");
    }
  }
  if (used > budget) {
    out.push_back("step " + std::to_string(mask.step) + ": " + std::to_string(used) +
                  " devices used, budget " + std::to_string(budget));
  }
  return out;
}

Instance::Instance(InstanceConfig config, const Mixture& mixture, SignSpecs specs,
                   std::uint64_t seed)
    : config_(std::move(config)), specs_(std::move(specs)) {
  config_.validate();
  mixture.validate();
  require(mixture.dim() == 2 * static_cast<Eigen::Index>(specs_.size()),
          ErrorCode::kInvalidInput, "mixture dimension does not match the sign count");
  const Rng root(seed);
  const auto arrivals = config_.arrival_steps();
  arms_.reserve(arrivals.size());
  for (std::size_t i = 0; i < arrivals.size(); ++i) {
    Rng patient_rng = root.derive("patient", i);
    PatientModel model =
        sample_patient(mixture, patient_rng, config_.max_blend, config_.regularization);
    VitalVector initial = model.initial_state(patient_rng);
    Arm arm{static_cast<ArmId>(i),
            std::move(model),
            arrivals[i],
            arrivals[i] + config_.stay - 1,
            initial,
            {initial},
            false,
            0,
            {},
            root.derive("transition", i),
            root.derive("response", i),
            root.derive("intervention", i)};
    arms_.push_back(std::move(arm));
  }
}

std::vector<ArmId> Instance::present(int t) const {
  std::vector<ArmId> out;
  for (const auto& a : arms_) {
    if (a.present(t)) out.push_back(a.id);
  }
  return out;
}

AllocationMask Instance::build_mask(int t) const {
  require(1 <= t && t <= config_.horizon, ErrorCode::kInvalidInput,
          "step " + std::to_string(t) + " outside [1, horizon]");
  AllocationMask mask;
  mask.step = t;
  mask.arms = present(t);
  for (ArmId id : mask.arms) {
    const auto& a = arms_[static_cast<std::size_t>(id)];
    Slot slot = Slot::kEligible;
    if (a.ever_passive || t >= a.arrival + config_.t_max) {
      slot = Slot::kForcedPassive;
    } else if (t < a.arrival + config_.t_min) {
      slot = Slot::kForcedActive;
    }
    mask.slots.push_back(slot);
  }
  require(mask.count(Slot::kForcedActive) <= static_cast<std::size_t>(config_.budget),
          ErrorCode::kInfeasible,
          "step " + std::to_string(t) + ": more arms in their minimum period than devices");
  return mask;
}

std::vector<ArmStep> Instance::apply_actions(int t, std::span<const int> actions,
                                             Enforcement enforcement) {
  require(t == step_, ErrorCode::kContractViolation,
          "expected step " + std::to_string(step_) + ", got " + std::to_string(t));
  const AllocationMask mask = build_mask(t);
  const auto violations = constraint_violations(mask, actions, config_.budget, enforcement);
  require(violations.empty(), ErrorCode::kContractViolation,
          violations.empty() ? std::string() : violations.front());

  const TransitionParams params{config_.response_prob, config_.truncate_intervention};
  std::vector<ArmStep> out;
  out.reserve(mask.arms.size());
  for (std::size_t i = 0; i < mask.arms.size(); ++i) {
    auto& arm = arms_[static_cast<std::size_t>(mask.arms[i])];
    ArmStep step;
    step.arm = arm.id;
    step.action = actions[i];
    step.slot = mask.slots[i];
    step.state = arm_state(arm.history);
    step.raw = denormalize(arm.vitals, specs_);
    step.reward = reward(step.raw, specs_);

    const auto outcome = transition(arm.model, arm.vitals, step.action, specs_, params,
                                    arm.transition_rng, arm.response_rng, arm.intervention_rng);
    step.alerted = outcome.alerted;
    step.intervened = outcome.intervened;

    if (step.action == 1) {
      ++arm.active_steps;
    } else {
      arm.ever_passive = true;
    }
    arm.actions.push_back(static_cast<std::uint8_t>(step.action));
    arm.vitals = outcome.next;
    arm.history.push_back(outcome.next);
    while (arm.history.size() > static_cast<std::size_t>(config_.window)) arm.history.pop_front();
    out.push_back(std::move(step));
  }
  ++step_;
  return out;
}

Instance spawn_instance(const InstanceConfig& config, const Mixture& mixture,
                        const SignSpecs& specs, std::uint64_t seed) {
  return Instance(config, mixture, specs, seed);
}

std::vector<int> allocate_by_priority(const AllocationMask& mask, std::span<const double> priority,
                                      int budget) {
  require(priority.size() == mask.arms.size(), ErrorCode::kInvalidInput,
          "one priority per present arm required");
  std::vector<int> actions(mask.arms.size(), 0);
  std::vector<std::size_t> eligible;
  int remaining = budget;
  for (std::size_t i = 0; i < mask.arms.size(); ++i) {
    if (mask.slots[i] == Slot::kForcedActive) {
      actions[i] = 1;
      --remaining;
    } else if (mask.slots[i] == Slot::kEligible) {
      eligible.push_back(i);
    }
  }
  std::stable_sort(eligible.begin(), eligible.end(), [&](std::size_t a, std::size_t b) {
    if (priority[a] != priority[b]) return priority[a] > priority[b];
    return mask.arms[a] < mask.arms[b];
  });
  for (std::size_t k = 0; k < eligible.size() && remaining > 0; ++k, --remaining) {
    actions[eligible[k]] = 1;
  }
  return actions;
}

double episode_return(std::span<const double> step_rewards, double gamma) {
  double total = 0.0;
  double discount = 1.0;
  for (double r : step_rewards) {
    total += discount * r;
    discount *= gamma;
  }
  return total;
}

EpisodeResult run_episode(Instance& instance, const Allocator& allocate, Enforcement enforcement,
                          bool keep_trace, const StepObserver& observer) {
  EpisodeResult result;
  const int horizon = instance.config().horizon;
  for (int t = instance.step(); t <= horizon; ++t) {
    const AllocationMask mask = instance.build_mask(t);
    std::vector<ArmState> states;
    states.reserve(mask.arms.size());
    for (ArmId id : mask.arms) states.push_back(instance.state(id));
    const std::vector<int> actions = allocate(mask, states);
    const auto steps = instance.apply_actions(t, actions, enforcement);
    double total = 0.0;
    for (const auto& s : steps) {
      total += s.reward;
      if (keep_trace) {
        result.trace.push_back({t, s.arm, s.action, s.slot, s.reward, s.intervened, s.raw, s.state});
      }
    }
    result.step_rewards.push_back(total);
    if (observer) observer(mask, steps);
  }
  result.discounted_return = episode_return(result.step_rewards, instance.config().gamma);
  return result;
}

void write_trace_header(const SignSpecs& specs, std::ostream& out) {
  out << "episode,step,arm,action,slot,reward,intervened";
  for (const auto& s : specs) out << "," << s.name;
  for (const auto& s : specs) out << ",state_" << s.name;
  for (const auto& s : specs) out << ",var_" << s.name;
  out << "\n";
}

void write_trace(const std::vector<TraceRow>& rows, std::ostream& out,
                 const std::string& episode_label) {
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << episode_label << "," << r.step << "," << r.arm << "," << r.action << ","
        << slot_name(r.slot) << "," << r.reward << "," << (r.intervened ? 1 : 0);
    for (Eigen::Index i = 0; i < r.raw.size(); ++i) out << "," << r.raw[i];
    for (Eigen::Index i = 0; i < r.state.size(); ++i) out << "," << r.state[i];
    out << "\n";
  }
}

std::vector<std::vector<TraceRow>> read_traces(std::istream& in, std::size_t signs) {
  std::vector<std::vector<TraceRow>> out;
  std::string line;
  int lineno = 0;
  std::string current_label;
  const auto d = static_cast<Eigen::Index>(signs);
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 || trim(line).empty()) continue;
    const auto f = split(line, ',');
    require(f.size() == 7 + 3 * signs, ErrorCode::kParse,
            "trace line " + std::to_string(lineno) + ": wrong field count");
    TraceRow r;
    try {
      r.step = std::stoi(f[1]);
      r.arm = std::stoi(f[2]);
      r.action = std::stoi(f[3]);
      r.reward = std::stod(f[5]);
      r.intervened = f[6] == "1";
      r.raw.resize(d);
      r.state.resize(2 * d);
      for (Eigen::Index i = 0; i < d; ++i) r.raw[i] = std::stod(f[static_cast<std::size_t>(7 + i)]);
      for (Eigen::Index i = 0; i < 2 * d; ++i) {
        r.state[i] = std::stod(f[static_cast<std::size_t>(7 + d + i)]);
      }
    } catch (const std::exception&) {
      throw Error(ErrorCode::kParse, "trace line " + std::to_string(lineno) + ": bad number");
    }
    if (f[4] == "forced_active") {
      r.slot = Slot::kForcedActive;
    } else if (f[4] == "forced_passive") {
      r.slot = Slot::kForcedPassive;
    } else if (f[4] == "eligible") {
      r.slot = Slot::kEligible;
    } else {
      throw Error(ErrorCode::kParse, "trace line " + std::to_string(lineno) + ": bad slot");
    }
    if (out.empty() || f[0] != current_label) {
      out.emplace_back();
      current_label = f[0];
    }
    out.back().push_back(std::move(r));
  }
  return out;
}

}  // namespace vitalloc
