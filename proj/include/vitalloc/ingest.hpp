#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vitalloc/gmm.hpp"
#include "vitalloc/vitals.hpp"

namespace vitalloc {

struct RawSample {
  double minutes = 0.0;
  VitalVector readings;  // raw units, ordered like the sign specs
};

struct RawTrajectory {
  std::string patient_id;
  std::vector<RawSample> samples;  // sorted by time
};

struct HourlyTrajectory {
  std::string patient_id;
  std::vector<VitalVector> steps;  // normalized, one per surviving hour
  int skipped_hours = 0;           // empty hours closed up by compaction
};

struct TransitionTuple {
  VitalVector current;
  VitalVector next;
};

inline constexpr std::size_t kMinHourlyPoints = 10;

// CSV with header `patient_id,timestamp_min,<sign>...`. Sign columns may come
// in any order but must match the configured signs exactly. Rows with an empty
// or NaN reading are dropped. Trajectories are returned sorted by patient id.
std::vector<RawTrajectory> read_trajectories(std::istream& in, const SignSpecs& specs,
                                             const std::string& origin = "<stream>");
std::vector<RawTrajectory> load_trajectories(const std::filesystem::path& path,
                                             const SignSpecs& specs);
void write_trajectories(const std::vector<RawTrajectory>& trajs, const SignSpecs& specs,
                        std::ostream& out);

// Normalization ranges taken from every raw reading in the corpus, before
// any trajectory is excluded for being short.
SignSpecs fit_ranges(const std::vector<RawTrajectory>& trajs, SignSpecs specs);

// Hour k covers minutes [60k, 60(k+1)). Each sign takes the median of its
// readings in the hour (mean of the middle two for even counts). Empty hours
// are skipped. Returns nullopt when fewer than `min_points` hours survive.
std::optional<HourlyTrajectory> hourly_median(const RawTrajectory& traj, const SignSpecs& specs,
                                              std::size_t min_points = kMinHourlyPoints);

double median(std::vector<double> values);

std::vector<TransitionTuple> extract_tuples(const std::vector<HourlyTrajectory>& trajs);

// Rows are tuples, columns are (current, next) stacked.
Eigen::MatrixXd tuple_matrix(const std::vector<TransitionTuple>& tuples);
void write_tuples(const std::vector<TransitionTuple>& tuples, const SignSpecs& specs,
                  std::ostream& out);

struct SyntheticCorpusConfig {
  Mixture planted;          // normalized units
  double max_blend = 0.0;   // 0 keeps patients on pure planted components
  double first_minute = 15.0;
};

// Ground-truth mixture for synthetic data: stable, elevated, volatile and
// chronically abnormal groups, plus one deteriorating group whose vitals drift
// toward the abnormal side with high persistence.
Mixture default_planted_mixture(const SignSpecs& specs);

// Each patient follows one sampled transition model for `steps` hours with one
// reading per hour. Output depends only on `seed`.
std::vector<RawTrajectory> generate_synthetic_corpus(int n_patients, int steps,
                                                     std::uint64_t seed, const SignSpecs& specs,
                                                     const SyntheticCorpusConfig& config);
std::vector<RawTrajectory> generate_synthetic_corpus(int n_patients, int steps,
                                                     std::uint64_t seed, const SignSpecs& specs);

}  // namespace vitalloc
