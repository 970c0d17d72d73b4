#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vitalloc/baselines.hpp"
#include "vitalloc/env.hpp"
#include "vitalloc/gmm.hpp"
#include "vitalloc/ingest.hpp"
#include "vitalloc/kv_config.hpp"
#include "vitalloc/policy.hpp"

namespace vitalloc {

struct Setting {
  int budget = 3;
  int patients = 20;
};

// (B, N) pairs of the standard comparison grid.
std::vector<Setting> default_grid();
std::vector<Setting> parse_settings(const std::string& text);  // "3x20,4x20"

// A fitted transition-model source: sign semantics with the normalization
// ranges of the training corpus, and the mixture over normalized tuples.
struct Model {
  SignSpecs specs;
  Mixture mixture;
};

struct ModelFit {
  Model model;
  FitResult fit;
  std::size_t trajectories_used = 0;
  std::size_t tuples = 0;
};

// Range fitting, hourly medians, tuple extraction and EM.
ModelFit fit_model(const std::vector<RawTrajectory>& trajs, const SignSpecs& specs, int components,
                   std::uint64_t seed, const FitConfig& config = {});

// `dir/mixture.txt` and `dir/signs.cfg`.
void save_model(const Model& model, const std::filesystem::path& dir);
Model load_model(const std::filesystem::path& dir);

struct ExperimentConfig {
  std::string preset = "mimic3";
  // Raw trajectory CSV; empty means a synthetic corpus from the planted mixture.
  std::string data_path;
  int synthetic_patients = 400;
  int synthetic_steps = 48;
  int components = 5;
  InstanceConfig instance;  // budget/patients are replaced per setting
  PpoConfig ppo;
  int n_epochs = 50;
  int n_eval_instances = 50;
  int n_seeds = 100;
  std::uint64_t master_seed = 0;
  std::vector<Setting> settings = default_grid();
  // Discount applied when scoring evaluation episodes; 1 sums raw rewards.
  double eval_discount = 1.0;
  int threads = 0;  // 0: hardware concurrency

  // Keys follow the hyperparameter table names, e.g. `agent_clip_ratio`,
  // `start_entropy_coeff`, `trains_per_epoch`, `discount_factor`.
  static ExperimentConfig from_kv(const KeyValueConfig& kv);
  void validate() const;
  InstanceConfig instance_for(const Setting& s) const;
};

// Loads `data_path` or generates the synthetic corpus, then fits the model.
// Streams derive from the master seed.
ModelFit prepare_model(const ExperimentConfig& cfg, const SignSpecs& specs);

inline constexpr const char* kPpoMethod = "ppo";
// Result order: ppo, then the baselines with no_action last.
std::vector<std::string> method_names();

struct TrainingCurveRow {
  int epoch = 0;
  double episode_return = 0.0;  // discounted, of the training instance
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double entropy_coeff = 0.0;
  double entropy = 0.0;
};

struct TrainResult {
  ActorCritic policy;
  std::vector<TrainingCurveRow> curve;
};

// The training loop: one fresh instance per epoch, collect with the current
// policy, then one PPO update. All randomness derives from `seed`.
TrainResult train_policy(const ExperimentConfig& cfg, const Mixture& mixture,
                         const SignSpecs& specs, const InstanceConfig& instance,
                         std::uint64_t seed);

// Mergeable count of active steps per arm.
struct ActivationCdf {
  int t_min = 0;
  int t_max = 0;
  std::vector<long long> counts;  // counts[k]: arms with exactly k active steps

  long long arms() const;
  double cdf(int k) const;  // fraction of arms with at most k active steps
  double fraction_at_least(int k) const;
  double fraction_below_t_max() const;
  bool monotone() const;
  void merge(const ActivationCdf& other);
};

// Histogram of arm states at the decision step of each voluntary
// active -> passive flip, per state dimension over [0, 1]. Values outside the
// range land in the edge bins.
struct RemovalHistogram {
  int bins = 20;
  std::vector<std::string> dimensions;
  std::vector<std::vector<long long>> counts;  // [dimension][bin]
  long long voluntary = 0;
  long long forced = 0;  // at t_max, or departure while monitored

  void merge(const RemovalHistogram& other);
};

ActivationCdf analyze_activation_cdf(const std::vector<std::vector<TraceRow>>& episodes,
                                     int t_min, int t_max);
RemovalHistogram analyze_removal_states(const std::vector<std::vector<TraceRow>>& episodes,
                                        const SignSpecs& specs, int horizon, int bins = 20);

struct EvalResult {
  double mean_return = 0.0;
  std::vector<double> returns;  // per evaluation instance
};

// Evaluates one method on the shared evaluation instances of a seed.
EvalResult evaluate_policy(const ActorCritic& policy, const ExperimentConfig& cfg,
                           const Mixture& mixture, const SignSpecs& specs,
                           const InstanceConfig& instance, std::uint64_t seed,
                           std::vector<std::vector<TraceRow>>* traces = nullptr);
EvalResult evaluate_baseline(BaselineKind kind, const ExperimentConfig& cfg,
                             const Mixture& mixture, const SignSpecs& specs,
                             const InstanceConfig& instance, std::uint64_t seed,
                             std::vector<std::vector<TraceRow>>* traces = nullptr);

struct SeedResult {
  Setting setting;
  int seed_index = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> methods;
  std::vector<double> mean_returns;  // parallel to methods
  std::vector<double> normalized;    // (method - no_action) / N
  std::vector<TrainingCurveRow> curve;
  ActivationCdf activation;          // of the trained policy's evaluation
  RemovalHistogram removals;
};

SeedResult run_seed(const ExperimentConfig& cfg, const Mixture& mixture, const SignSpecs& specs,
                    const Setting& setting, std::uint64_t seed, int seed_index = 0);

struct Aggregate {
  double mean = 0.0;
  double standard_error = 0.0;  // sample sd / sqrt(n); 0 for n < 2
  int n = 0;
};
Aggregate aggregate(const std::vector<double>& values);

struct ResultRow {
  std::string method;
  int budget = 0;
  int patients = 0;
  Aggregate normalized;
};

struct ExperimentResult {
  std::vector<SeedResult> seeds;  // ordered by setting, then seed index
  std::vector<ResultRow> rows;    // ordered by setting, then method
  std::vector<ActivationCdf> activation;  // per setting
  std::vector<RemovalHistogram> removals; // per setting
};

std::uint64_t seed_for(std::uint64_t master_seed, const Setting& setting, int seed_index);

// Runs every (setting, seed) pair on a worker pool and reduces in a fixed
// order, so the result does not depend on the thread count.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Mixture& mixture,
                                const SignSpecs& specs);

// Writes results.csv, per_seed.csv, training_curves.csv, activation_cdf.csv,
// removal_hist.csv, removal_summary.csv and SVG plots. Refuses a non-empty
// directory unless `overwrite`.
void emit_outputs(const ExperimentResult& result, const std::filesystem::path& dir,
                  bool overwrite);

// activation_cdf.csv, removal_hist.csv and their plots for one trace set.
void emit_analysis(const ActivationCdf& cdf, const RemovalHistogram& hist,
                   const std::filesystem::path& dir, bool overwrite);

// Creates `dir` or checks it may be written into.
void prepare_output_dir(const std::filesystem::path& dir, bool overwrite);

void write_training_curve(const std::vector<TrainingCurveRow>& rows, std::ostream& out);

// Minimal structural check of an SVG document: one root <svg> element with
// balanced tags.
bool well_formed_svg(const std::string& text);

}  // namespace vitalloc
