#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "vitalloc/gmm.hpp"
#include "vitalloc/rng.hpp"
#include "vitalloc/vitals.hpp"

namespace vitalloc {

using ArmId = int;

// Per-sign normalized current value followed by per-sign variance over the
// trailing window; length 2d.
using ArmState = Eigen::VectorXd;

struct InstanceConfig {
  int horizon = 100;
  int budget = 3;
  int t_min = 3;
  int t_max = 25;
  int stay = 50;            // steps present, including the arrival step
  int patients = 20;        // typical population N
  int arrival_batch = 2;    // arms per arrival event after the first step
  int arrival_period = 5;
  double gamma = 0.9;
  double response_prob = 0.7;  // chance an alert is acted upon
  int window = 5;
  bool truncate_intervention = false;
  double max_blend = 0.15;
  double regularization = 1e-6;

  // Table defaults with arrival_batch = N / 10.
  static InstanceConfig for_setting(int budget, int patients);

  // Throws kInvalidInput for bad fields and kInfeasible if the arrival
  // schedule would ever force more than `budget` arms active at once.
  void validate() const;
  std::vector<int> arrival_steps() const;  // one entry per arm, in id order
  int max_forced_active() const;
};

enum class Slot : std::uint8_t { kForcedActive, kForcedPassive, kEligible };

struct AllocationMask {
  int step = 0;
  std::vector<ArmId> arms;  // present arms, ascending id
  std::vector<Slot> slots;  // parallel to `arms`

  std::size_t count(Slot s) const;
};

struct Arm {
  ArmId id = 0;
  PatientModel model;
  int arrival = 1;
  int departure = 1;
  VitalVector vitals;                // normalized
  std::deque<VitalVector> history;   // trailing window, newest last
  bool ever_passive = false;
  int active_steps = 0;
  std::vector<std::uint8_t> actions;  // one per step present so far
  Rng transition_rng;
  Rng response_rng;
  Rng intervention_rng;

  bool present(int t) const { return arrival <= t && t <= departure; }
};

ArmState arm_state(const std::deque<VitalVector>& history);

struct TransitionParams {
  double response_prob = 0.7;
  bool truncate_intervention = false;
};

struct TransitionOutcome {
  VitalVector next;       // normalized
  VitalVector input;      // normalized state the conditional was taken on
  bool alerted = false;
  bool intervened = false;
};

// One arm's transition. Passive, or active with all signs normal, samples the
// conditional given the current state. Active with an abnormal sign raises an
// alert; with probability response_prob the abnormal signs are shifted toward
// normal before conditioning.
TransitionOutcome transition(const PatientModel& model, const VitalVector& vitals, int action,
                             std::span<const VitalSignSpec> specs, const TransitionParams& params,
                             Rng& transition_rng, Rng& response_rng, Rng& intervention_rng);

enum class Enforcement {
  kAll,
  // Budget, forced-passive and one-shot rules only. Used by the no-action
  // reference, which leaves newly arrived arms unmonitored.
  kSkipMinimumMonitoring,
};

// Human-readable descriptions of every violated allocation rule.
std::vector<std::string> constraint_violations(const AllocationMask& mask,
                                               std::span<const int> actions, int budget,
                                               Enforcement enforcement = Enforcement::kAll);

struct ArmStep {
  ArmId arm = 0;
  int action = 0;
  Slot slot = Slot::kEligible;
  ArmState state;       // before the transition
  VitalVector raw;      // raw-unit vitals the reward was charged on
  double reward = 0.0;
  bool alerted = false;
  bool intervened = false;
};

class Instance {
 public:
  Instance(InstanceConfig config, const Mixture& mixture, SignSpecs specs, std::uint64_t seed);

  const InstanceConfig& config() const { return config_; }
  const SignSpecs& specs() const { return specs_; }
  const std::vector<Arm>& arms() const { return arms_; }
  // Next step `apply_actions` expects.
  int step() const { return step_; }

  std::vector<ArmId> present(int t) const;
  ArmState state(ArmId id) const { return arm_state(arms_.at(static_cast<std::size_t>(id)).history); }

  // forced_active: present, t < arrival + t_min, never passive.
  // forced_passive: t >= arrival + t_max, or ever passive.
  // eligible: everything else (still holding a device past t_min).
  AllocationMask build_mask(int t) const;

  // Actions are parallel to `build_mask(t).arms`. Rewards are charged on the
  // current state before it transitions. Steps must be applied in order.
  std::vector<ArmStep> apply_actions(int t, std::span<const int> actions,
                                     Enforcement enforcement = Enforcement::kAll);

 private:
  InstanceConfig config_;
  SignSpecs specs_;
  std::vector<Arm> arms_;
  int step_ = 1;
};

// B arms at step 1, then arrival_batch arms every arrival_period steps; each
// arm draws its own transition model and initial state. Deterministic in seed.
Instance spawn_instance(const InstanceConfig& config, const Mixture& mixture,
                        const SignSpecs& specs, std::uint64_t seed);

// Forced arms take their forced action; the remaining budget goes to eligible
// arms by descending priority, ties to the lowest arm id.
std::vector<int> allocate_by_priority(const AllocationMask& mask, std::span<const double> priority,
                                      int budget);

// sum_t gamma^(t-1) * step_rewards[t-1]
double episode_return(std::span<const double> step_rewards, double gamma);

struct TraceRow {
  int step = 0;
  ArmId arm = 0;
  int action = 0;
  Slot slot = Slot::kEligible;
  double reward = 0.0;
  bool intervened = false;
  VitalVector raw;
  ArmState state;
};

struct EpisodeResult {
  std::vector<double> step_rewards;  // summed over present arms
  double discounted_return = 0.0;
  std::vector<TraceRow> trace;       // only filled when requested
};

// Chooses actions (parallel to mask.arms) given each present arm's state.
using Allocator =
    std::function<std::vector<int>(const AllocationMask&, const std::vector<ArmState>&)>;
// Observes every step's outcome, e.g. to fill a training buffer.
using StepObserver = std::function<void(const AllocationMask&, const std::vector<ArmStep>&)>;

EpisodeResult run_episode(Instance& instance, const Allocator& allocate,
                          Enforcement enforcement = Enforcement::kAll, bool keep_trace = false,
                          const StepObserver& observer = {});

void write_trace_header(const SignSpecs& specs, std::ostream& out);
void write_trace(const std::vector<TraceRow>& rows, std::ostream& out,
                 const std::string& episode_label = "0");
// Reads rows written by `write_trace`, one vector per episode label in file order.
std::vector<std::vector<TraceRow>> read_traces(std::istream& in, std::size_t signs);

const char* slot_name(Slot s);

}  // namespace vitalloc
