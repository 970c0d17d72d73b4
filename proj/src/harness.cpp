#include "vitalloc/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "vitalloc/error.hpp"

namespace vitalloc {

namespace fs = std::filesystem;

ModelFit fit_model(const std::vector<RawTrajectory>& trajs, const SignSpecs& specs, int components,
                   std::uint64_t seed, const FitConfig& config) {
  require(!trajs.empty(), ErrorCode::kInsufficientData, "no trajectories to fit");
  ModelFit out;
  out.model.specs = fit_ranges(trajs, specs);
  std::vector<HourlyTrajectory> hourly;
  for (const auto& t : trajs) {
    if (auto h = hourly_median(t, out.model.specs)) hourly.push_back(std::move(*h));
  }
  out.trajectories_used = hourly.size();
  const auto tuples = extract_tuples(hourly);
  out.tuples = tuples.size();
  out.fit = fit_mixture(tuple_matrix(tuples), components, seed, config);
  out.model.mixture = out.fit.mixture;
  return out;
}

void save_model(const Model& model, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream out(dir / "mixture.txt");
    require(out.good(), ErrorCode::kIo, "cannot write " + (dir / "mixture.txt").string());
    write_mixture(model.mixture, out);
  }
  std::ofstream out(dir / "signs.cfg");
  require(out.good(), ErrorCode::kIo, "cannot write " + (dir / "signs.cfg").string());
  write_sign_specs(model.specs, out);
}

Model load_model(const fs::path& dir) {
  Model m;
  m.specs = load_sign_specs(KeyValueConfig::load(dir / "signs.cfg"));
  std::ifstream in(dir / "mixture.txt");
  require(in.good(), ErrorCode::kIo, "cannot read " + (dir / "mixture.txt").string());
  m.mixture = read_mixture(in);
  require(m.mixture.dim() == 2 * static_cast<Eigen::Index>(m.specs.size()), ErrorCode::kSchema,
          "mixture in " + dir.string() + " does not match its sign set");
  return m;
}

std::vector<Setting> default_grid() {
  return {{3, 20}, {4, 20}, {5, 20}, {4, 30}, {5, 30}, {6, 30},
          {5, 40}, {6, 40}, {7, 40}, {6, 50}, {7, 50}, {8, 50}};
}

std::vector<Setting> parse_settings(const std::string& text) {
  std::vector<Setting> out;
  for (const auto& raw : split(text, ',')) {
    const auto item = trim(raw);
    if (item.empty()) continue;
    const auto x = item.find('x');
    require(x != std::string::npos, ErrorCode::kParse, "setting '" + item + "' is not BxN");
    try {
      std::size_t a = 0, b = 0;
      const std::string lhs = item.substr(0, x), rhs = item.substr(x + 1);
      Setting s{std::stoi(lhs, &a), std::stoi(rhs, &b)};
      require(a == lhs.size() && b == rhs.size(), ErrorCode::kParse,
              "setting '" + item + "' is not BxN");
      out.push_back(s);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kParse, "setting '" + item + "' is not BxN");
    }
  }
  require(!out.empty(), ErrorCode::kParse, "no settings given");
  return out;
}

namespace {

Optimizer parse_optimizer(const std::string& name) {
  if (name == "sgd") return Optimizer::kSgd;
  if (name == "adam") return Optimizer::kAdam;
  throw Error(ErrorCode::kInvalidInput, "unknown optimizer '" + name + "'");
}

int to_int(std::int64_t v, const char* key) {
  require(v >= std::numeric_limits<int>::min() && v <= std::numeric_limits<int>::max(),
          ErrorCode::kInvalidInput, std::string(key) + " out of range");
  return static_cast<int>(v);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_kv(const KeyValueConfig& kv) {
  ExperimentConfig c;
  auto geti = [&](const char* key, int fallback) { return to_int(kv.get_int(key, fallback), key); };

  c.preset = kv.get_string("preset", c.preset);
  c.data_path = kv.get_string("data", c.data_path);
  c.synthetic_patients = geti("synthetic_patients", c.synthetic_patients);
  c.synthetic_steps = geti("synthetic_steps", c.synthetic_steps);
  c.components = geti("components", c.components);
  c.ppo.hidden_layers = geti("hidden_layers", c.ppo.hidden_layers);
  c.ppo.hidden_units = geti("neurons_per_hidden_layer", c.ppo.hidden_units);
  c.ppo.clip = kv.get_double("agent_clip_ratio", c.ppo.clip);
  c.ppo.entropy_start = kv.get_double("start_entropy_coeff", c.ppo.entropy_start);
  c.ppo.entropy_end = kv.get_double("end_entropy_coeff", c.ppo.entropy_end);
  c.ppo.actor_lr = kv.get_double("actor_learning_rate", c.ppo.actor_lr);
  c.ppo.critic_lr = kv.get_double("critic_learning_rate", c.ppo.critic_lr);
  c.ppo.trains_per_epoch = geti("trains_per_epoch", c.ppo.trains_per_epoch);
  c.ppo.gamma = kv.get_double("discount_factor", c.ppo.gamma);
  c.ppo.normalize_advantages = kv.get_bool("normalize_advantages", c.ppo.normalize_advantages);
  c.ppo.optimizer = parse_optimizer(kv.get_string("optimizer", "sgd"));
  c.ppo.stochastic_ranking = kv.get_bool("stochastic_ranking", c.ppo.stochastic_ranking);

  auto& in = c.instance;
  in.horizon = geti("horizon", in.horizon);
  in.t_min = geti("t_min", in.t_min);
  in.t_max = geti("t_max", in.t_max);
  in.stay = geti("stay", in.stay);
  in.arrival_period = geti("arrival_period", in.arrival_period);
  in.response_prob = kv.get_double("response_probability", in.response_prob);
  in.window = geti("window", in.window);
  in.truncate_intervention = kv.get_bool("truncate_intervention", in.truncate_intervention);
  in.max_blend = kv.get_double("max_blend", in.max_blend);
  in.regularization = kv.get_double("regularization", in.regularization);
  in.gamma = c.ppo.gamma;
  if (kv.has("budget")) in.budget = geti("budget", in.budget);
  if (kv.has("patients")) in.patients = geti("patients", in.patients);

  c.n_epochs = geti("n_epochs", c.n_epochs);
  c.n_eval_instances = geti("n_eval_instances", c.n_eval_instances);
  c.n_seeds = geti("n_seeds", c.n_seeds);
  c.master_seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  if (kv.has("settings")) c.settings = parse_settings(*kv.get("settings"));
  c.eval_discount = kv.get_double("eval_discount", c.eval_discount);
  c.threads = geti("threads", c.threads);
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  ppo.validate();
  require(n_epochs >= 1, ErrorCode::kInvalidInput, "n_epochs must be >= 1");
  require(n_eval_instances >= 1, ErrorCode::kInvalidInput, "n_eval_instances must be >= 1");
  require(n_seeds >= 1, ErrorCode::kInvalidInput, "n_seeds must be >= 1");
  require(eval_discount > 0.0 && eval_discount <= 1.0, ErrorCode::kInvalidInput,
          "eval_discount must be in (0, 1]");
  require(data_path.empty() || fs::exists(data_path), ErrorCode::kIo,
          "data file " + data_path + " does not exist");
  require(synthetic_patients >= 1 && synthetic_steps >= 2, ErrorCode::kInvalidInput,
          "synthetic corpus needs >= 1 patient and >= 2 steps");
  require(components >= 1, ErrorCode::kInvalidInput, "components must be >= 1");
  require(threads >= 0, ErrorCode::kInvalidInput, "threads must be >= 0");
  require(!settings.empty(), ErrorCode::kInvalidInput, "no settings");
  for (const auto& s : settings) instance_for(s).validate();
}

InstanceConfig ExperimentConfig::instance_for(const Setting& s) const {
  InstanceConfig c = instance;
  c.budget = s.budget;
  c.patients = s.patients;
  c.arrival_batch = std::max(1, s.patients / 10);
  c.gamma = ppo.gamma;
  return c;
}

ModelFit prepare_model(const ExperimentConfig& cfg, const SignSpecs& specs) {
  const Rng root(cfg.master_seed);
  const auto trajs = cfg.data_path.empty()
                         ? generate_synthetic_corpus(cfg.synthetic_patients, cfg.synthetic_steps,
                                                     root.derive_seed("synthetic-corpus"), specs)
                         : load_trajectories(cfg.data_path, specs);
  FitConfig fit;
  fit.regularization = cfg.instance.regularization;
  return fit_model(trajs, specs, cfg.components, root.derive_seed("mixture-fit"), fit);
}

std::vector<std::string> method_names() {
  return {kPpoMethod, "random", "extreme_values", "highest_variability", "no_action"};
}

TrainResult train_policy(const ExperimentConfig& cfg, const Mixture& mixture,
                         const SignSpecs& specs, const InstanceConfig& instance,
                         std::uint64_t seed) {
  const Rng root(seed);
  PpoLearner learner(2 * static_cast<int>(specs.size()), cfg.ppo, root.derive_seed("policy-init"));
  Rng ranking = root.derive("train-ranking");
  TrainResult out;
  out.curve.reserve(static_cast<std::size_t>(cfg.n_epochs));
  EpisodeBuffer buffer;
  for (int epoch = 1; epoch <= cfg.n_epochs; ++epoch) {
    Instance inst = spawn_instance(instance, mixture, specs,
                                   root.derive_seed("train-instance", static_cast<std::uint64_t>(epoch)));
    buffer.clear();
    const auto episode = learner.collect(inst, buffer, ranking);
    const auto stats = learner.update(buffer, epoch, cfg.n_epochs);
    out.curve.push_back({epoch, episode.discounted_return, stats.actor_loss, stats.critic_loss,
                         stats.entropy_coeff, stats.entropy});
  }
  out.policy = learner.policy();
  return out;
}

long long ActivationCdf::arms() const {
  long long n = 0;
  for (auto c : counts) n += c;
  return n;
}

double ActivationCdf::cdf(int k) const {
  const long long n = arms();
  if (n == 0 || k < 0) return 0.0;
  long long below = 0;
  for (int i = 0; i <= k && i < static_cast<int>(counts.size()); ++i) below += counts[static_cast<std::size_t>(i)];
  return static_cast<double>(below) / static_cast<double>(n);
}

double ActivationCdf::fraction_at_least(int k) const { return arms() == 0 ? 0.0 : 1.0 - cdf(k - 1); }

double ActivationCdf::fraction_below_t_max() const { return cdf(t_max - 1); }

bool ActivationCdf::monotone() const {
  double prev = 0.0;
  for (int k = 0; k < static_cast<int>(counts.size()); ++k) {
    const double v = cdf(k);
    if (v < prev || v < 0.0 || v > 1.0 + 1e-12) return false;
    prev = v;
  }
  return true;
}

void ActivationCdf::merge(const ActivationCdf& other) {
  if (counts.empty()) {
    t_min = other.t_min;
    t_max = other.t_max;
  }
  if (counts.size() < other.counts.size()) counts.resize(other.counts.size(), 0);
  for (std::size_t i = 0; i < other.counts.size(); ++i) counts[i] += other.counts[i];
}

void RemovalHistogram::merge(const RemovalHistogram& other) {
  if (dimensions.empty()) {
    bins = other.bins;
    dimensions = other.dimensions;
    counts.assign(other.counts.size(), std::vector<long long>(static_cast<std::size_t>(bins), 0));
  }
  require(dimensions == other.dimensions && bins == other.bins, ErrorCode::kInvalidInput,
          "cannot merge histograms of different shape");
  for (std::size_t d = 0; d < counts.size(); ++d) {
    for (std::size_t b = 0; b < counts[d].size(); ++b) counts[d][b] += other.counts[d][b];
  }
  voluntary += other.voluntary;
  forced += other.forced;
}

namespace {

// Rows of one episode grouped per arm, in step order.
std::map<ArmId, std::vector<const TraceRow*>> rows_by_arm(const std::vector<TraceRow>& episode) {
  std::map<ArmId, std::vector<const TraceRow*>> out;
  for (const auto& r : episode) out[r.arm].push_back(&r);
  for (auto& [arm, rows] : out) {
    std::stable_sort(rows.begin(), rows.end(),
                     [](const TraceRow* a, const TraceRow* b) { return a->step < b->step; });
  }
  return out;
}

}  // namespace

ActivationCdf analyze_activation_cdf(const std::vector<std::vector<TraceRow>>& episodes,
                                     int t_min, int t_max) {
  require(t_min >= 0 && t_max >= t_min, ErrorCode::kInvalidInput, "need 0 <= t_min <= t_max");
  ActivationCdf out;
  out.t_min = t_min;
  out.t_max = t_max;
  out.counts.assign(static_cast<std::size_t>(t_max) + 1, 0);
  for (const auto& episode : episodes) {
    for (const auto& [arm, rows] : rows_by_arm(episode)) {
      long long active = 0;
      for (const auto* r : rows) active += r->action;
      if (active >= static_cast<long long>(out.counts.size())) out.counts.resize(static_cast<std::size_t>(active) + 1, 0);
      ++out.counts[static_cast<std::size_t>(active)];
    }
  }
  return out;
}

RemovalHistogram analyze_removal_states(const std::vector<std::vector<TraceRow>>& episodes,
                                        const SignSpecs& specs, int horizon, int bins) {
  require(bins >= 1, ErrorCode::kInvalidInput, "bins must be >= 1");
  RemovalHistogram out;
  out.bins = bins;
  for (const auto& s : specs) out.dimensions.push_back(s.name);
  for (const auto& s : specs) out.dimensions.push_back("var_" + s.name);
  out.counts.assign(out.dimensions.size(), std::vector<long long>(static_cast<std::size_t>(bins), 0));

  for (const auto& episode : episodes) {
    for (const auto& [arm, rows] : rows_by_arm(episode)) {
      bool removed = false;
      for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i - 1]->action != 1 || rows[i]->action != 0) continue;
        removed = true;
        if (rows[i]->slot != Slot::kEligible) {
          ++out.forced;
          break;
        }
        ++out.voluntary;
        const auto& state = rows[i]->state;
        require(static_cast<std::size_t>(state.size()) == out.dimensions.size(),
                ErrorCode::kInvalidInput, "trace state has the wrong dimension");
        for (std::size_t d = 0; d < out.dimensions.size(); ++d) {
          const double v = state[static_cast<Eigen::Index>(d)];
          int b = static_cast<int>(std::floor(v * bins));
          b = std::clamp(b, 0, bins - 1);
          ++out.counts[d][static_cast<std::size_t>(b)];
        }
        break;
      }
      // Still monitored when it left before the end of the horizon.
      if (!removed && !rows.empty() && rows.back()->action == 1 && rows.back()->step < horizon) {
        ++out.forced;
      }
    }
  }
  return out;
}

namespace {

EvalResult evaluate_with(const ExperimentConfig& cfg, const Mixture& mixture, const SignSpecs& specs,
                         const InstanceConfig& instance, std::uint64_t seed,
                         Enforcement enforcement,
                         const std::function<Allocator(std::size_t)>& make_allocator,
                         std::vector<std::vector<TraceRow>>* traces) {
  const Rng root(seed);
  EvalResult out;
  out.returns.reserve(static_cast<std::size_t>(cfg.n_eval_instances));
  for (int j = 0; j < cfg.n_eval_instances; ++j) {
    Instance inst = spawn_instance(instance, mixture, specs,
                                   root.derive_seed("eval-instance", static_cast<std::uint64_t>(j)));
    auto episode = run_episode(inst, make_allocator(static_cast<std::size_t>(j)), enforcement,
                               traces != nullptr);
    out.returns.push_back(episode_return(episode.step_rewards, cfg.eval_discount));
    if (traces) traces->push_back(std::move(episode.trace));
  }
  double sum = 0.0;
  for (double r : out.returns) sum += r;
  out.mean_return = sum / static_cast<double>(out.returns.size());
  return out;
}

}  // namespace

EvalResult evaluate_policy(const ActorCritic& policy, const ExperimentConfig& cfg,
                           const Mixture& mixture, const SignSpecs& specs,
                           const InstanceConfig& instance, std::uint64_t seed,
                           std::vector<std::vector<TraceRow>>* traces) {
  const int budget = instance.budget;
  return evaluate_with(
      cfg, mixture, specs, instance, seed, Enforcement::kAll,
      [&](std::size_t) -> Allocator {
        return [&policy, budget](const AllocationMask& mask, const std::vector<ArmState>& states) {
          return select_actions(policy, mask, states, budget);
        };
      },
      traces);
}

EvalResult evaluate_baseline(BaselineKind kind, const ExperimentConfig& cfg,
                             const Mixture& mixture, const SignSpecs& specs,
                             const InstanceConfig& instance, std::uint64_t seed,
                             std::vector<std::vector<TraceRow>>* traces) {
  const int budget = instance.budget;
  const Rng root(seed);
  const std::string stream = "baseline-" + std::string(baseline_name(kind));
  return evaluate_with(
      cfg, mixture, specs, instance, seed, baseline_enforcement(kind),
      [&](std::size_t j) -> Allocator {
        auto rng = std::make_shared<Rng>(root.derive(stream, j));
        return [kind, &specs, budget, rng](const AllocationMask& mask,
                                           const std::vector<ArmState>& states) {
          return baseline_select(kind, mask, states, specs, budget, *rng);
        };
      },
      traces);
}

SeedResult run_seed(const ExperimentConfig& cfg, const Mixture& mixture, const SignSpecs& specs,
                    const Setting& setting, std::uint64_t seed, int seed_index) {
  const InstanceConfig instance = cfg.instance_for(setting);
  instance.validate();
  const Rng root(seed);
  const std::uint64_t eval_seed = root.derive_seed("evaluation");

  SeedResult out;
  out.setting = setting;
  out.seed_index = seed_index;
  out.seed = seed;
  out.methods = method_names();

  auto trained = train_policy(cfg, mixture, specs, instance, root.derive_seed("training"));
  out.curve = std::move(trained.curve);

  std::vector<std::vector<TraceRow>> traces;
  const auto ppo = evaluate_policy(trained.policy, cfg, mixture, specs, instance, eval_seed, &traces);
  out.activation = analyze_activation_cdf(traces, instance.t_min, instance.t_max);
  out.removals = analyze_removal_states(traces, specs, instance.horizon);
  traces.clear();

  out.mean_returns.push_back(ppo.mean_return);
  for (std::size_t m = 1; m < out.methods.size(); ++m) {
    const auto kind = parse_baseline(out.methods[m]);
    out.mean_returns.push_back(
        evaluate_baseline(kind, cfg, mixture, specs, instance, eval_seed).mean_return);
  }
  const double reference = out.mean_returns.back();
  for (double r : out.mean_returns) {
    out.normalized.push_back((r - reference) / static_cast<double>(setting.patients));
  }
  return out;
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.n = static_cast<int>(values.size());
  if (values.empty()) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / a.n;
  if (a.n < 2) return a;
  double ss = 0.0;
  for (double v : values) ss += (v - a.mean) * (v - a.mean);
  a.standard_error = std::sqrt(ss / (a.n - 1)) / std::sqrt(static_cast<double>(a.n));
  return a;
}

std::uint64_t seed_for(std::uint64_t master_seed, const Setting& setting, int seed_index) {
  const auto key = static_cast<std::uint64_t>(setting.budget) * 100000u +
                   static_cast<std::uint64_t>(setting.patients);
  return Rng(master_seed).derive("setting", key).derive_seed("seed", static_cast<std::uint64_t>(seed_index));
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Mixture& mixture,
                                const SignSpecs& specs) {
  cfg.validate();
  require(mixture.dim() == 2 * static_cast<Eigen::Index>(specs.size()), ErrorCode::kInvalidInput,
          "mixture dimension does not match the sign set");

  struct Job {
    std::size_t setting;
    int seed_index;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < cfg.settings.size(); ++s) {
    for (int i = 0; i < cfg.n_seeds; ++i) jobs.push_back({s, i});
  }

  std::vector<SeedResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= jobs.size()) return;
      try {
        const auto& setting = cfg.settings[jobs[k].setting];
        results[k] = run_seed(cfg, mixture, specs, setting,
                              seed_for(cfg.master_seed, setting, jobs[k].seed_index),
                              jobs[k].seed_index);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(jobs.size());
        return;
      }
    }
  };

  unsigned n_threads = cfg.threads > 0 ? static_cast<unsigned>(cfg.threads)
                                       : std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(jobs.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  ExperimentResult out;
  const auto methods = method_names();
  std::size_t k = 0;
  for (const auto& setting : cfg.settings) {
    std::vector<std::vector<double>> per_method(methods.size());
    ActivationCdf cdf;
    RemovalHistogram hist;
    for (int i = 0; i < cfg.n_seeds; ++i, ++k) {
      const auto& r = results[k];
      for (std::size_t m = 0; m < methods.size(); ++m) per_method[m].push_back(r.normalized[m]);
      cdf.merge(r.activation);
      hist.merge(r.removals);
    }
    for (std::size_t m = 0; m < methods.size(); ++m) {
      out.rows.push_back({methods[m], setting.budget, setting.patients, aggregate(per_method[m])});
    }
    out.activation.push_back(std::move(cdf));
    out.removals.push_back(std::move(hist));
  }
  out.seeds = std::move(results);
  return out;
}

void prepare_output_dir(const fs::path& dir, bool overwrite) {
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    require(fs::is_directory(dir, ec), ErrorCode::kIo, dir.string() + " exists and is not a directory");
    require(overwrite || fs::is_empty(dir, ec), ErrorCode::kIo,
            "output directory " + dir.string() + " is not empty (use --overwrite)");
    return;
  }
  fs::create_directories(dir, ec);
  require(!ec, ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
}

void write_training_curve(const std::vector<TrainingCurveRow>& rows, std::ostream& out) {
  out << "epoch,episode_return,actor_loss,critic_loss,entropy_coeff,entropy\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.episode_return << ',' << r.actor_loss << ',' << r.critic_loss << ','
        << r.entropy_coeff << ',' << r.entropy << '\n';
  }
}

namespace {

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out << std::setprecision(10);
  return out;
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

std::string escape_xml(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};

class Svg {
 public:
  Svg(double width, double height) {
    body_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
          << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
          << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
          << "\" fill=\"white\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string& color, double w = 1.0) {
    body_ << "<line x1=\"" << fmt(x1) << "\" y1=\"" << fmt(y1) << "\" x2=\"" << fmt(x2)
          << "\" y2=\"" << fmt(y2) << "\" stroke=\"" << color << "\" stroke-width=\"" << w << "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& color) {
    body_ << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" width=\"" << fmt(std::max(w, 0.0))
          << "\" height=\"" << fmt(std::max(h, 0.0)) << "\" fill=\"" << color << "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color) {
    body_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : pts) body_ << fmt(x) << ',' << fmt(y) << ' ';
    body_ << "\"/>\n";
  }
  void text(double x, double y, const std::string& s, int size = 11, const char* anchor = "start") {
    body_ << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" font-family=\"sans-serif\" font-size=\""
          << size << "\" text-anchor=\"" << anchor << "\">" << escape_xml(s) << "</text>\n";
  }
  std::string str() const { return body_.str() + "</svg>\n"; }

 private:
  std::ostringstream body_;
};

void save(const Svg& svg, const fs::path& path) {
  auto out = open_output(path);
  out << svg.str();
}

void plot_rewards(const ExperimentResult& result, const fs::path& path) {
  const auto methods = method_names();
  const std::size_t n_methods = methods.size() - 1;  // no_action is the zero line
  std::vector<std::pair<int, int>> settings;
  for (const auto& r : result.rows) {
    if (settings.empty() || settings.back() != std::pair{r.budget, r.patients}) {
      settings.emplace_back(r.budget, r.patients);
    }
  }
  double lo = 0.0, hi = 0.0;
  for (const auto& r : result.rows) {
    lo = std::min(lo, r.normalized.mean - r.normalized.standard_error);
    hi = std::max(hi, r.normalized.mean + r.normalized.standard_error);
  }
  if (hi - lo < 1e-9) hi = lo + 1.0;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;

  const double left = 60, top = 30, plot_h = 300;
  const double group_w = 20.0 * static_cast<double>(n_methods) + 20.0;
  const double width = left + group_w * static_cast<double>(settings.size()) + 170;
  const double height = top + plot_h + 60;
  auto y_of = [&](double v) { return top + plot_h * (hi - v) / (hi - lo); };

  Svg svg(width, height);
  svg.text(left, 18, "Normalized reward by setting (B, N); error bars are one standard error", 12);
  svg.line(left, top, left, top + plot_h, "black");
  svg.line(left, y_of(0.0), left + group_w * static_cast<double>(settings.size()), y_of(0.0), "black");
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    svg.line(left - 4, y_of(v), left, y_of(v), "black");
    svg.text(left - 6, y_of(v) + 4, fmt(v, 2), 10, "end");
  }
  for (std::size_t s = 0; s < settings.size(); ++s) {
    const double gx = left + group_w * static_cast<double>(s) + 10;
    for (std::size_t m = 0; m < n_methods; ++m) {
      const auto it = std::find_if(result.rows.begin(), result.rows.end(), [&](const ResultRow& r) {
        return r.method == methods[m] && std::pair{r.budget, r.patients} == settings[s];
      });
      if (it == result.rows.end()) continue;
      const double x = gx + 20.0 * static_cast<double>(m);
      const double y0 = y_of(0.0), y1 = y_of(it->normalized.mean);
      svg.rect(x, std::min(y0, y1), 16, std::abs(y1 - y0), kPalette[m % 6]);
      const double e1 = y_of(it->normalized.mean + it->normalized.standard_error);
      const double e2 = y_of(it->normalized.mean - it->normalized.standard_error);
      svg.line(x + 8, e1, x + 8, e2, "black");
    }
    svg.text(gx + group_w / 2 - 10, top + plot_h + 20,
             "(" + std::to_string(settings[s].first) + ", " + std::to_string(settings[s].second) + ")",
             10, "middle");
  }
  const double lx = width - 160;
  for (std::size_t m = 0; m < n_methods; ++m) {
    svg.rect(lx, top + 16.0 * static_cast<double>(m), 10, 10, kPalette[m % 6]);
    svg.text(lx + 14, top + 9 + 16.0 * static_cast<double>(m), methods[m], 10);
  }
  save(svg, path);
}

void plot_cdf(const ActivationCdf& cdf, const std::string& title, const fs::path& path) {
  const double left = 50, top = 30, w = 400, h = 250;
  const int kmax = std::max(1, static_cast<int>(cdf.counts.size()) - 1);
  Svg svg(left + w + 30, top + h + 50);
  svg.text(left, 18, title, 12);
  svg.line(left, top, left, top + h, "black");
  svg.line(left, top + h, left + w, top + h, "black");
  auto x_of = [&](double k) { return left + w * k / kmax; };
  auto y_of = [&](double p) { return top + h * (1.0 - p); };
  std::vector<std::pair<double, double>> pts;
  double prev = 0.0;
  for (int k = 0; k <= kmax; ++k) {
    const double p = cdf.cdf(k);
    pts.emplace_back(x_of(k), y_of(prev));
    pts.emplace_back(x_of(k), y_of(p));
    prev = p;
  }
  svg.polyline(pts, kPalette[0]);
  for (int k = 0; k <= kmax; k += std::max(1, kmax / 5)) {
    svg.text(x_of(k), top + h + 15, std::to_string(k), 10, "middle");
  }
  svg.text(left + w / 2, top + h + 35, "active steps per patient", 11, "middle");
  for (int i = 0; i <= 4; ++i) svg.text(left - 5, y_of(i / 4.0) + 4, fmt(i / 4.0, 2), 10, "end");
  save(svg, path);
}

void plot_histogram(const RemovalHistogram& hist, const std::string& title, const fs::path& path) {
  const double panel_w = 220, panel_h = 140, gap = 30, top = 40;
  const std::size_t dims = hist.dimensions.size();
  const std::size_t cols = std::max<std::size_t>(1, (dims + 1) / 2);
  const std::size_t rows = dims > cols ? 2 : 1;
  Svg svg(gap + (panel_w + gap) * static_cast<double>(cols),
          top + (panel_h + gap + 10) * static_cast<double>(rows));
  svg.text(gap, 18,
           title + " (voluntary " + std::to_string(hist.voluntary) + ", forced " +
               std::to_string(hist.forced) + ")",
           12);
  for (std::size_t d = 0; d < dims; ++d) {
    const double x0 = gap + (panel_w + gap) * static_cast<double>(d % cols);
    const double y0 = top + (panel_h + gap + 10) * static_cast<double>(d / cols);
    long long peak = 1;
    for (auto c : hist.counts[d]) peak = std::max(peak, c);
    const double bw = panel_w / hist.bins;
    for (int b = 0; b < hist.bins; ++b) {
      const double frac = static_cast<double>(hist.counts[d][static_cast<std::size_t>(b)]) / static_cast<double>(peak);
      svg.rect(x0 + bw * b, y0 + panel_h * (1.0 - frac), bw - 1, panel_h * frac, kPalette[d % 6]);
    }
    svg.line(x0, y0 + panel_h, x0 + panel_w, y0 + panel_h, "black");
    svg.text(x0, y0 + panel_h + 14, "0", 9);
    svg.text(x0 + panel_w, y0 + panel_h + 14, "1", 9, "end");
    svg.text(x0 + panel_w / 2, y0 + panel_h + 14, hist.dimensions[d], 10, "middle");
  }
  save(svg, path);
}

std::string setting_tag(int budget, int patients) {
  return "B" + std::to_string(budget) + "_N" + std::to_string(patients);
}

}  // namespace

void emit_analysis(const ActivationCdf& cdf, const RemovalHistogram& hist, const fs::path& dir,
                   bool overwrite) {
  prepare_output_dir(dir, overwrite);
  {
    auto out = open_output(dir / "activation_cdf.csv");
    out << "active_steps,arms,cdf\n";
    for (std::size_t k = 0; k < cdf.counts.size(); ++k) {
      out << k << ',' << cdf.counts[k] << ',' << cdf.cdf(static_cast<int>(k)) << '\n';
    }
  }
  {
    auto out = open_output(dir / "removal_hist.csv");
    out << "dimension,bin,bin_lo,bin_hi,count\n";
    for (std::size_t d = 0; d < hist.dimensions.size(); ++d) {
      for (int b = 0; b < hist.bins; ++b) {
        out << hist.dimensions[d] << ',' << b << ',' << static_cast<double>(b) / hist.bins << ','
            << static_cast<double>(b + 1) / hist.bins << ',' << hist.counts[d][static_cast<std::size_t>(b)]
            << '\n';
      }
    }
  }
  {
    auto out = open_output(dir / "removal_summary.csv");
    out << "voluntary,forced,arms,fraction_below_t_max,fraction_at_least_t_min\n";
    out << hist.voluntary << ',' << hist.forced << ',' << cdf.arms() << ','
        << cdf.fraction_below_t_max() << ',' << cdf.fraction_at_least(cdf.t_min) << '\n';
  }
  plot_cdf(cdf, "Active-step CDF", dir / "activation_cdf.svg");
  plot_histogram(hist, "States at voluntary removal", dir / "removal_hist.svg");
}

void emit_outputs(const ExperimentResult& result, const fs::path& dir, bool overwrite) {
  prepare_output_dir(dir, overwrite);
  {
    auto out = open_output(dir / "results.csv");
    out << "method,budget,patients,mean_normalized_reward,standard_error,seeds\n";
    for (const auto& r : result.rows) {
      out << r.method << ',' << r.budget << ',' << r.patients << ',' << r.normalized.mean << ','
          << r.normalized.standard_error << ',' << r.normalized.n << '\n';
    }
  }
  {
    auto out = open_output(dir / "per_seed.csv");
    out << "budget,patients,seed_index,seed,method,mean_return,normalized_reward\n";
    for (const auto& s : result.seeds) {
      for (std::size_t m = 0; m < s.methods.size(); ++m) {
        out << s.setting.budget << ',' << s.setting.patients << ',' << s.seed_index << ',' << s.seed
            << ',' << s.methods[m] << ',' << s.mean_returns[m] << ',' << s.normalized[m] << '\n';
      }
    }
  }
  {
    auto out = open_output(dir / "training_curves.csv");
    out << "budget,patients,seed_index,epoch,episode_return,actor_loss,critic_loss,entropy_coeff,entropy\n";
    for (const auto& s : result.seeds) {
      for (const auto& r : s.curve) {
        out << s.setting.budget << ',' << s.setting.patients << ',' << s.seed_index << ',' << r.epoch
            << ',' << r.episode_return << ',' << r.actor_loss << ',' << r.critic_loss << ','
            << r.entropy_coeff << ',' << r.entropy << '\n';
      }
    }
  }

  std::vector<Setting> settings;
  for (const auto& r : result.rows) {
    if (settings.empty() || settings.back().budget != r.budget || settings.back().patients != r.patients) {
      settings.push_back({r.budget, r.patients});
    }
  }
  {
    auto out = open_output(dir / "activation_cdf.csv");
    out << "budget,patients,active_steps,arms,cdf\n";
    for (std::size_t i = 0; i < result.activation.size(); ++i) {
      const auto& c = result.activation[i];
      for (std::size_t k = 0; k < c.counts.size(); ++k) {
        out << settings[i].budget << ',' << settings[i].patients << ',' << k << ',' << c.counts[k]
            << ',' << c.cdf(static_cast<int>(k)) << '\n';
      }
    }
  }
  {
    auto out = open_output(dir / "removal_hist.csv");
    out << "budget,patients,dimension,bin,bin_lo,bin_hi,count\n";
    for (std::size_t i = 0; i < result.removals.size(); ++i) {
      const auto& h = result.removals[i];
      for (std::size_t d = 0; d < h.dimensions.size(); ++d) {
        for (int b = 0; b < h.bins; ++b) {
          out << settings[i].budget << ',' << settings[i].patients << ',' << h.dimensions[d] << ','
              << b << ',' << static_cast<double>(b) / h.bins << ','
              << static_cast<double>(b + 1) / h.bins << ',' << h.counts[d][static_cast<std::size_t>(b)]
              << '\n';
        }
      }
    }
  }
  {
    auto out = open_output(dir / "removal_summary.csv");
    out << "budget,patients,voluntary,forced,arms,fraction_below_t_max,fraction_at_least_t_min\n";
    for (std::size_t i = 0; i < result.removals.size(); ++i) {
      const auto& h = result.removals[i];
      const auto& c = result.activation[i];
      out << settings[i].budget << ',' << settings[i].patients << ',' << h.voluntary << ',' << h.forced
          << ',' << c.arms() << ',' << c.fraction_below_t_max() << ','
          << c.fraction_at_least(c.t_min) << '\n';
    }
  }

  plot_rewards(result, dir / "rewards.svg");
  for (std::size_t i = 0; i < settings.size(); ++i) {
    const auto tag = setting_tag(settings[i].budget, settings[i].patients);
    const auto label = "B=" + std::to_string(settings[i].budget) + ", N=" + std::to_string(settings[i].patients);
    plot_cdf(result.activation[i], "Active-step CDF, " + label, dir / ("activation_cdf_" + tag + ".svg"));
    plot_histogram(result.removals[i], "States at voluntary removal, " + label,
                   dir / ("removal_hist_" + tag + ".svg"));
  }
}

bool well_formed_svg(const std::string& text) {
  std::vector<std::string> stack;
  bool saw_root = false;
  std::size_t i = 0;
  while ((i = text.find('<', i)) != std::string::npos) {
    const auto end = text.find('>', i);
    if (end == std::string::npos) return false;
    std::string tag = text.substr(i + 1, end - i - 1);
    i = end + 1;
    if (tag.empty()) return false;
    if (tag[0] == '?' || tag[0] == '!') continue;
    if (tag[0] == '/') {
      const auto name = trim(tag.substr(1));
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
      continue;
    }
    const bool self_closing = tag.back() == '/';
    const auto name = tag.substr(0, tag.find_first_of(" \t\n/"));
    if (stack.empty()) {
      if (saw_root || name != "svg") return false;
      saw_root = true;
    }
    if (!self_closing) stack.push_back(name);
  }
  return saw_root && stack.empty();
}

}  // namespace vitalloc
