#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "vitalloc/baselines.hpp"
#include "vitalloc/error.hpp"
#include "vitalloc/harness.hpp"
#include "vitalloc/ingest.hpp"
#include "vitalloc/policy.hpp"

namespace fs = std::filesystem;
using namespace vitalloc;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> seeds;
  std::optional<int> budget;
  std::optional<int> patients;
  std::string out;
  bool overwrite = false;
  std::optional<std::string> preset;
};

void add_common(CLI::App* app, CommonFlags& f, bool needs_out = true) {
  app->add_option("--config", f.config, "Key-value config file")->check(CLI::ExistingFile);
  app->add_option("--seed", f.seed, "Master seed");
  app->add_option("--budget", f.budget, "Devices B");
  app->add_option("--patients", f.patients, "Typical population N");
  auto* out = app->add_option("--out", f.out, "Output path");
  if (needs_out) out->required();
  app->add_flag("--overwrite", f.overwrite, "Replace existing outputs");
  app->add_option("--preset", f.preset, "Vital-sign preset")
      ->check(CLI::IsMember({"mimic3", "mimic4", "mbarara"}));
}

// Config file first, then command-line overrides.
KeyValueConfig merged_config(const CommonFlags& f) {
  KeyValueConfig kv = f.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(f.config);
  if (f.seed) kv.set("seed", std::to_string(*f.seed));
  if (f.seeds) kv.set("n_seeds", std::to_string(*f.seeds));
  if (f.preset) kv.set("preset", *f.preset);
  if (f.budget || f.patients) {
    const int b = f.budget.value_or(static_cast<int>(kv.get_int("budget", 3)));
    const int n = f.patients.value_or(static_cast<int>(kv.get_int("patients", 20)));
    kv.set("budget", std::to_string(b));
    kv.set("patients", std::to_string(n));
    kv.set("settings", std::to_string(b) + "x" + std::to_string(n));
  }
  return kv;
}

Setting single_setting(const KeyValueConfig& kv) {
  return {static_cast<int>(kv.get_int("budget", 3)), static_cast<int>(kv.get_int("patients", 20))};
}

void refuse_existing_file(const fs::path& path, bool overwrite) {
  require(overwrite || !fs::exists(path), ErrorCode::kIo,
          path.string() + " exists (use --overwrite)");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::ofstream open_file(const fs::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out << std::setprecision(10);
  return out;
}

Model model_from(const std::string& model_dir, const ExperimentConfig& cfg, const SignSpecs& specs) {
  if (!model_dir.empty()) return load_model(model_dir);
  return prepare_model(cfg, specs).model;
}

int run_synth(const CommonFlags& f, int steps) {
  const auto kv = merged_config(f);
  const auto specs = load_sign_specs(kv);
  const int n = f.patients.value_or(static_cast<int>(kv.get_int("synthetic_patients", 400)));
  const auto trajs = generate_synthetic_corpus(n, steps, static_cast<std::uint64_t>(kv.get_int("seed", 0)), specs);
  refuse_existing_file(f.out, f.overwrite);
  auto out = open_file(f.out);
  write_trajectories(trajs, specs, out);
  std::cout << "wrote " << trajs.size() << " synthetic trajectories to " << f.out << "\n";
  return 0;
}

int run_fit(const CommonFlags& f, const std::string& data, std::optional<int> components) {
  auto kv = merged_config(f);
  if (!data.empty()) kv.set("data", data);
  if (components) kv.set("components", std::to_string(*components));
  const auto cfg = ExperimentConfig::from_kv(kv);
  const auto specs = load_sign_specs(kv);
  prepare_output_dir(f.out, f.overwrite);
  const auto fit = prepare_model(cfg, specs);
  save_model(fit.model, f.out);
  auto log = open_file(fs::path(f.out) / "fit_log.csv");
  log << "iteration,log_likelihood\n";
  for (std::size_t i = 0; i < fit.fit.log_likelihood.size(); ++i) {
    log << i << ',' << fit.fit.log_likelihood[i] << '\n';
  }
  std::cout << "fitted " << fit.model.mixture.size() << " components on " << fit.tuples
            << " tuples from " << fit.trajectories_used << " trajectories ("
            << fit.fit.iterations << " iterations, " << (fit.fit.converged ? "converged" : "not converged")
            << ")\n";
  return 0;
}

int run_train(const CommonFlags& f, const std::string& model_dir) {
  const auto kv = merged_config(f);
  const auto cfg = ExperimentConfig::from_kv(kv);
  const auto model = model_from(model_dir, cfg, load_sign_specs(kv));
  const auto instance = cfg.instance_for(single_setting(kv));
  instance.validate();
  prepare_output_dir(f.out, f.overwrite);
  const auto trained = train_policy(cfg, model.mixture, model.specs, instance, cfg.master_seed);
  {
    auto out = open_file(fs::path(f.out) / "policy.txt");
    write_checkpoint(trained.policy, out);
  }
  auto curve = open_file(fs::path(f.out) / "training_curve.csv");
  write_training_curve(trained.curve, curve);
  if (model_dir.empty()) save_model(model, fs::path(f.out) / "model");
  std::cout << "trained " << cfg.n_epochs << " epochs; final episode return "
            << trained.curve.back().episode_return << "\n";
  return 0;
}

int run_evaluate(const CommonFlags& f, const std::string& model_dir, const std::string& policy_path,
                 bool traces) {
  const auto kv = merged_config(f);
  const auto cfg = ExperimentConfig::from_kv(kv);
  const auto model = model_from(model_dir, cfg, load_sign_specs(kv));
  const auto setting = single_setting(kv);
  const auto instance = cfg.instance_for(setting);
  instance.validate();
  prepare_output_dir(f.out, f.overwrite);
  const std::uint64_t seed = Rng(cfg.master_seed).derive_seed("evaluation");

  std::vector<std::pair<std::string, EvalResult>> results;
  auto dump = [&](const std::string& method, const std::vector<std::vector<TraceRow>>& eps) {
    if (!traces) return;
    auto out = open_file(fs::path(f.out) / ("traces_" + method + ".csv"));
    write_trace_header(model.specs, out);
    for (std::size_t j = 0; j < eps.size(); ++j) write_trace(eps[j], out, std::to_string(j));
  };
  if (!policy_path.empty()) {
    std::ifstream in(policy_path);
    require(in.good(), ErrorCode::kIo, "cannot read " + policy_path);
    const auto policy = read_checkpoint(in);
    require(policy.state_dim() == 2 * static_cast<int>(model.specs.size()), ErrorCode::kSchema,
            "checkpoint does not match the model's sign set");
    std::vector<std::vector<TraceRow>> eps;
    results.emplace_back(kPpoMethod, evaluate_policy(policy, cfg, model.mixture, model.specs,
                                                     instance, seed, traces ? &eps : nullptr));
    dump(kPpoMethod, eps);
  }
  for (const auto& name : method_names()) {
    if (name == kPpoMethod) continue;
    std::vector<std::vector<TraceRow>> eps;
    results.emplace_back(name, evaluate_baseline(parse_baseline(name), cfg, model.mixture,
                                                 model.specs, instance, seed, traces ? &eps : nullptr));
    dump(name, eps);
  }
  const double reference = results.back().second.mean_return;
  auto out = open_file(fs::path(f.out) / "evaluation.csv");
  out << "method,budget,patients,mean_return,normalized_reward\n";
  for (const auto& [name, r] : results) {
    const double norm = (r.mean_return - reference) / setting.patients;
    out << name << ',' << setting.budget << ',' << setting.patients << ',' << r.mean_return << ','
        << norm << '\n';
    std::cout << std::left << std::setw(22) << name << " mean return " << std::setw(12)
              << r.mean_return << " normalized " << norm << "\n";
  }
  auto per = open_file(fs::path(f.out) / "returns.csv");
  per << "method,instance,return\n";
  for (const auto& [name, r] : results) {
    for (std::size_t j = 0; j < r.returns.size(); ++j) per << name << ',' << j << ',' << r.returns[j] << '\n';
  }
  return 0;
}

int run_experiment_cmd(const CommonFlags& f, const std::string& model_dir, const std::string& data,
                       const std::string& settings, std::optional<int> threads) {
  auto kv = merged_config(f);
  if (!data.empty()) kv.set("data", data);
  if (!settings.empty()) kv.set("settings", settings);
  if (threads) kv.set("threads", std::to_string(*threads));
  const auto cfg = ExperimentConfig::from_kv(kv);
  prepare_output_dir(f.out, f.overwrite);
  const auto model = model_from(model_dir, cfg, load_sign_specs(kv));
  const auto result = run_experiment(cfg, model.mixture, model.specs);
  emit_outputs(result, f.out, true);
  save_model(model, fs::path(f.out) / "model");
  for (const auto& r : result.rows) {
    std::cout << "B=" << r.budget << " N=" << r.patients << "  " << std::left << std::setw(20)
              << r.method << std::right << std::fixed << std::setprecision(4) << std::setw(10)
              << r.normalized.mean << " +- " << r.normalized.standard_error << "\n";
  }
  return 0;
}

int run_analyze(const CommonFlags& f, const std::string& traces_path, const std::string& model_dir) {
  const auto kv = merged_config(f);
  const auto cfg = ExperimentConfig::from_kv(kv);
  const SignSpecs specs = model_dir.empty() ? load_sign_specs(kv) : load_model(model_dir).specs;
  std::ifstream in(traces_path);
  require(in.good(), ErrorCode::kIo, "cannot read " + traces_path);
  const auto episodes = read_traces(in, specs.size());
  const auto cdf = analyze_activation_cdf(episodes, cfg.instance.t_min, cfg.instance.t_max);
  const auto hist = analyze_removal_states(episodes, specs, cfg.instance.horizon);
  emit_analysis(cdf, hist, f.out, f.overwrite);
  std::cout << episodes.size() << " episodes, " << cdf.arms() << " arms; "
            << 100.0 * cdf.fraction_below_t_max() << "% below t_max, "
            << 100.0 * cdf.fraction_at_least(cdf.t_min) << "% at or above t_min; "
            << hist.voluntary << " voluntary and " << hist.forced << " forced removals\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming monitoring-device allocation: fit, train, evaluate, experiment"};
  app.require_subcommand(1);

  CommonFlags synth_f, fit_f, train_f, eval_f, exp_f, an_f;
  int steps = 48;
  std::string fit_data, train_model, eval_model, eval_policy, exp_model, exp_data, exp_settings,
      an_traces, an_model;
  std::optional<int> components, threads;
  bool eval_traces = false;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic raw-vitals corpus");
  add_common(synth, synth_f);
  synth->add_option("--steps", steps, "Hours per patient")->check(CLI::PositiveNumber);

  auto* fit = app.add_subcommand("fit", "Hourly resampling, tuple extraction and mixture fit");
  add_common(fit, fit_f);
  fit->add_option("--data", fit_data, "Raw trajectory CSV (default: synthetic corpus)")
      ->check(CLI::ExistingFile);
  fit->add_option("--components", components, "Mixture components")->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "Train one policy and write a checkpoint");
  add_common(train, train_f);
  train->add_option("--model", train_model, "Directory written by `fit`")->check(CLI::ExistingDirectory);

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint against the baselines");
  add_common(evaluate, eval_f);
  evaluate->add_option("--model", eval_model, "Directory written by `fit`")->check(CLI::ExistingDirectory);
  evaluate->add_option("--policy", eval_policy, "Checkpoint written by `train`")->check(CLI::ExistingFile);
  evaluate->add_flag("--traces", eval_traces, "Write per-method episode traces");

  auto* experiment = app.add_subcommand("experiment", "Full protocol over settings and seeds");
  add_common(experiment, exp_f);
  experiment->add_option("--seeds", exp_f.seeds, "Seeds per setting")->check(CLI::PositiveNumber);
  experiment->add_option("--model", exp_model, "Directory written by `fit`")->check(CLI::ExistingDirectory);
  experiment->add_option("--data", exp_data, "Raw trajectory CSV")->check(CLI::ExistingFile);
  experiment->add_option("--settings", exp_settings, "Settings as BxN list, e.g. 3x20,4x20");
  experiment->add_option("--threads", threads, "Worker threads (0: all cores)");

  auto* analyze = app.add_subcommand("analyze", "Activation CDF and removal-state histograms");
  add_common(analyze, an_f);
  analyze->add_option("--traces", an_traces, "Trace CSV written by `evaluate --traces`")
      ->required()
      ->check(CLI::ExistingFile);
  analyze->add_option("--model", an_model, "Model directory for the sign set")->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return run_synth(synth_f, steps);
    if (*fit) return run_fit(fit_f, fit_data, components);
    if (*train) return run_train(train_f, train_model);
    if (*evaluate) return run_evaluate(eval_f, eval_model, eval_policy, eval_traces);
    if (*experiment) return run_experiment_cmd(exp_f, exp_model, exp_data, exp_settings, threads);
    if (*analyze) return run_analyze(an_f, an_traces, an_model);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
