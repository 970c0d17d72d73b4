#include "vitalloc/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "vitalloc/error.hpp"
#include "vitalloc/kv_config.hpp"

namespace vitalloc {
namespace {

std::string at_line(const std::string& origin, int line) {
  return origin + ":" + std::to_string(line);
}

// Parses one numeric cell. Empty and NaN cells are missing readings.
std::optional<double> parse_reading(const std::string& cell, const std::string& where) {
  const auto text = trim(cell);
  if (text.empty()) return std::nullopt;
  double v = 0.0;
  std::size_t used = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kParse, where + ": not a number: '" + text + "'");
  }
  if (used != text.size()) throw Error(ErrorCode::kParse, where + ": not a number: '" + text + "'");
  if (std::isnan(v)) return std::nullopt;
  if (!std::isfinite(v)) throw Error(ErrorCode::kParse, where + ": infinite reading");
  return v;
}

struct SignProfile {
  double normal;    // typical healthy reading
  double elevated;  // close to, but inside, the alert threshold
  double sd;        // stationary spread
  double drift;     // per-hour movement toward the abnormal side
};

SignProfile profile_for(const VitalSignSpec& s) {
  if (s.name == "heart_rate") return {85.0, 110.0, 6.0, 2.5};
  if (s.name == "respiratory_rate") return {19.0, 26.0, 2.0, 0.9};
  if (s.name == "spo2") return {97.0, 92.5, 1.0, -0.5};
  if (s.name == "temperature") return {37.0, 37.6, 0.3, 0.12};
  const double toward = s.direction == Direction::kAboveIsAbnormal ? 1.0 : -1.0;
  return {s.threshold - toward * 2.0 * s.penalty_scale,
          s.threshold - toward * 0.5 * s.penalty_scale, 0.4 * s.penalty_scale,
          toward * 0.1 * s.penalty_scale};
}

// Joint (current, next) Gaussian of x' = center + drift + rho (x - center) + noise
// with stationary spread `scale * sd` per sign. Everything in normalized units.
Gaussian ar1_component(const SignSpecs& specs, const std::vector<double>& center,
                       const std::vector<double>& drift, double rho, double scale) {
  const auto d = static_cast<Eigen::Index>(specs.size());
  VitalVector c(d), dr(d);
  Eigen::VectorXd var(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const auto& s = specs[static_cast<std::size_t>(i)];
    const double range = s.data_max - s.data_min;
    c[i] = (center[static_cast<std::size_t>(i)] - s.data_min) / range;
    dr[i] = drift[static_cast<std::size_t>(i)] / range;
    const double sd = scale * profile_for(s).sd / range;
    var[i] = sd * sd;
  }
  const Eigen::MatrixXd stat = var.asDiagonal();
  Gaussian g{Eigen::VectorXd(2 * d), Eigen::MatrixXd(2 * d, 2 * d)};
  g.mean << c, c + dr;
  g.cov << stat, rho * stat, rho * stat, stat;
  return g;
}

}  // namespace

std::vector<RawTrajectory> read_trajectories(std::istream& in, const SignSpecs& specs,
                                             const std::string& origin) {
  std::string line;
  int lineno = 1;
  if (!std::getline(in, line)) return {};
  if (!line.empty() && line.back() == '\r') line.pop_back();
  // Strip a UTF-8 byte order mark.
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);

  const auto header = split(line, ',');
  require(header.size() >= 3 && trim(header[0]) == "patient_id" &&
              trim(header[1]) == "timestamp_min",
          ErrorCode::kSchema,
          at_line(origin, 1) + ": header must start with patient_id,timestamp_min");
  std::vector<std::size_t> column_to_sign;
  std::vector<bool> seen(specs.size(), false);
  for (std::size_t c = 2; c < header.size(); ++c) {
    const auto name = trim(header[c]);
    auto it = std::find_if(specs.begin(), specs.end(),
                           [&](const VitalSignSpec& s) { return s.name == name; });
    require(it != specs.end(), ErrorCode::kSchema,
            at_line(origin, 1) + ": unknown sign column '" + name + "'");
    const auto idx = static_cast<std::size_t>(it - specs.begin());
    require(!seen[idx], ErrorCode::kSchema, at_line(origin, 1) + ": duplicate column '" + name + "'");
    seen[idx] = true;
    column_to_sign.push_back(idx);
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    require(seen[i], ErrorCode::kSchema,
            at_line(origin, 1) + ": missing sign column '" + specs[i].name + "'");
  }

  std::map<std::string, RawTrajectory> by_patient;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    const auto where = at_line(origin, lineno);
    require(fields.size() == header.size(), ErrorCode::kParse,
            where + ": expected " + std::to_string(header.size()) + " fields, found " +
                std::to_string(fields.size()));
    const auto id = trim(fields[0]);
    require(!id.empty(), ErrorCode::kParse, where + ": empty patient_id");
    const auto minutes = parse_reading(fields[1], where);
    require(minutes.has_value(), ErrorCode::kParse, where + ": missing timestamp");

    RawSample sample{*minutes, VitalVector(static_cast<Eigen::Index>(specs.size()))};
    bool complete = true;
    for (std::size_t c = 2; c < fields.size(); ++c) {
      const auto v = parse_reading(fields[c], where);
      if (!v) {
        complete = false;
        continue;
      }
      sample.readings[static_cast<Eigen::Index>(column_to_sign[c - 2])] = *v;
    }
    if (!complete) continue;
    auto& traj = by_patient[id];
    traj.patient_id = id;
    traj.samples.push_back(std::move(sample));
  }

  std::vector<RawTrajectory> out;
  out.reserve(by_patient.size());
  for (auto& [id, traj] : by_patient) {
    std::stable_sort(traj.samples.begin(), traj.samples.end(),
                     [](const RawSample& a, const RawSample& b) { return a.minutes < b.minutes; });
    out.push_back(std::move(traj));
  }
  return out;
}

std::vector<RawTrajectory> load_trajectories(const std::filesystem::path& path,
                                             const SignSpecs& specs) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  return read_trajectories(in, specs, path.string());
}

void write_trajectories(const std::vector<RawTrajectory>& trajs, const SignSpecs& specs,
                        std::ostream& out) {
  out << "patient_id,timestamp_min";
  for (const auto& s : specs) out << "," << s.name;
  out << "\n" << std::setprecision(17);
  for (const auto& t : trajs) {
    for (const auto& s : t.samples) {
      out << t.patient_id << "," << s.minutes;
      for (Eigen::Index i = 0; i < s.readings.size(); ++i) out << "," << s.readings[i];
      out << "\n";
    }
  }
}

SignSpecs fit_ranges(const std::vector<RawTrajectory>& trajs, SignSpecs specs) {
  const auto d = specs.size();
  std::vector<double> lo(d, std::numeric_limits<double>::infinity());
  std::vector<double> hi(d, -std::numeric_limits<double>::infinity());
  for (const auto& t : trajs) {
    for (const auto& s : t.samples) {
      for (std::size_t i = 0; i < d; ++i) {
        lo[i] = std::min(lo[i], s.readings[static_cast<Eigen::Index>(i)]);
        hi[i] = std::max(hi[i], s.readings[static_cast<Eigen::Index>(i)]);
      }
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    require(std::isfinite(lo[i]) && lo[i] < hi[i], ErrorCode::kDegenerateRange,
            specs[i].name + ": corpus has no spread to normalize over");
    specs[i].data_min = lo[i];
    specs[i].data_max = hi[i];
  }
  return specs;
}

double median(std::vector<double> values) {
  require(!values.empty(), ErrorCode::kInvalidInput, "median of an empty set");
  const auto mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

std::optional<HourlyTrajectory> hourly_median(const RawTrajectory& traj, const SignSpecs& specs,
                                              std::size_t min_points) {
  const auto d = static_cast<Eigen::Index>(specs.size());
  std::map<long long, std::vector<const RawSample*>> buckets;
  for (const auto& s : traj.samples) {
    buckets[static_cast<long long>(std::floor(s.minutes / 60.0))].push_back(&s);
  }

  HourlyTrajectory out;
  out.patient_id = traj.patient_id;
  std::optional<long long> previous;
  for (const auto& [hour, samples] : buckets) {
    if (previous && hour > *previous + 1) out.skipped_hours += static_cast<int>(hour - *previous - 1);
    previous = hour;
    VitalVector raw(d);
    std::vector<double> values;
    for (Eigen::Index i = 0; i < d; ++i) {
      values.clear();
      for (const auto* s : samples) values.push_back(s->readings[i]);
      raw[i] = median(values);
    }
    out.steps.push_back(normalize(raw, specs));
  }
  if (out.steps.size() < min_points) return std::nullopt;
  return out;
}

std::vector<TransitionTuple> extract_tuples(const std::vector<HourlyTrajectory>& trajs) {
  std::vector<TransitionTuple> out;
  for (const auto& t : trajs) {
    for (std::size_t i = 0; i + 1 < t.steps.size(); ++i) out.push_back({t.steps[i], t.steps[i + 1]});
  }
  return out;
}

Eigen::MatrixXd tuple_matrix(const std::vector<TransitionTuple>& tuples) {
  if (tuples.empty()) return {};
  const auto d = tuples.front().current.size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(tuples.size()), 2 * d);
  for (std::size_t r = 0; r < tuples.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    m.row(row).head(d) = tuples[r].current.transpose();
    m.row(row).tail(d) = tuples[r].next.transpose();
  }
  return m;
}

void write_tuples(const std::vector<TransitionTuple>& tuples, const SignSpecs& specs,
                  std::ostream& out) {
  for (std::size_t i = 0; i < specs.size(); ++i) out << (i ? "," : "") << specs[i].name;
  for (const auto& s : specs) out << ",next_" << s.name;
  out << "\n" << std::setprecision(17);
  for (const auto& t : tuples) {
    for (Eigen::Index i = 0; i < t.current.size(); ++i) out << (i ? "," : "") << t.current[i];
    for (Eigen::Index i = 0; i < t.next.size(); ++i) out << "," << t.next[i];
    out << "\n";
  }
}

Mixture default_planted_mixture(const SignSpecs& specs) {
  std::vector<double> normal, elevated, chronic, drift, none(specs.size(), 0.0);
  for (const auto& s : specs) {
    const auto p = profile_for(s);
    normal.push_back(p.normal);
    elevated.push_back(p.elevated);
    // Sits past the threshold by roughly one penalty scale.
    const double toward = s.direction == Direction::kAboveIsAbnormal ? 1.0 : -1.0;
    chronic.push_back(s.threshold + toward * 0.8 * s.penalty_scale);
    drift.push_back(p.drift);
  }
  Mixture m;
  m.components = {
      ar1_component(specs, normal, none, 0.8, 1.0),    // stable
      ar1_component(specs, elevated, none, 0.8, 1.0),  // elevated but normal
      ar1_component(specs, normal, none, 0.5, 2.0),    // volatile
      ar1_component(specs, chronic, none, 0.85, 1.0),  // chronically abnormal
      ar1_component(specs, normal, drift, 0.95, 1.0),  // deteriorating
  };
  m.weights = {0.35, 0.2, 0.15, 0.1, 0.2};
  m.validate();
  return m;
}

std::vector<RawTrajectory> generate_synthetic_corpus(int n_patients, int steps,
                                                     std::uint64_t seed, const SignSpecs& specs,
                                                     const SyntheticCorpusConfig& config) {
  require(n_patients >= 1, ErrorCode::kInvalidInput, "n_patients must be >= 1");
  require(steps >= 1, ErrorCode::kInvalidInput, "steps must be >= 1");
  config.planted.validate();
  require(config.planted.dim() == 2 * static_cast<Eigen::Index>(specs.size()),
          ErrorCode::kInvalidInput, "planted mixture dimension does not match the sign count");
  const Rng root(seed);
  const int width = std::max(5, static_cast<int>(std::to_string(n_patients).size()));
  std::vector<RawTrajectory> out;
  out.reserve(static_cast<std::size_t>(n_patients));
  for (int p = 0; p < n_patients; ++p) {
    Rng rng = root.derive("synthetic-patient", static_cast<std::uint64_t>(p));
    const PatientModel model = sample_patient(config.planted, rng, config.max_blend);
    std::ostringstream id;
    id << "P" << std::setw(width) << std::setfill('0') << p;
    RawTrajectory traj{id.str(), {}};
    VitalVector x = model.initial_state(rng);
    for (int t = 0; t < steps; ++t) {
      traj.samples.push_back({config.first_minute + 60.0 * t, denormalize(x, specs)});
      x = model.conditional_next(x, rng);
    }
    out.push_back(std::move(traj));
  }
  return out;
}

std::vector<RawTrajectory> generate_synthetic_corpus(int n_patients, int steps,
                                                     std::uint64_t seed, const SignSpecs& specs) {
  return generate_synthetic_corpus(n_patients, steps, seed, specs,
                                   SyntheticCorpusConfig{default_planted_mixture(specs)});
}

}  // namespace vitalloc
