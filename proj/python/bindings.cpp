#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>
#include <sstream>

#include "vitalloc/baselines.hpp"
#include "vitalloc/error.hpp"
#include "vitalloc/gmm.hpp"
#include "vitalloc/harness.hpp"
#include "vitalloc/ingest.hpp"
#include "vitalloc/policy.hpp"
#include "vitalloc/vitals.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace vitalloc;

namespace {

ExperimentConfig config_from(const std::map<std::string, std::string>& values) {
  KeyValueConfig kv;
  for (const auto& [k, v] : values) kv.set(k, v);
  return ExperimentConfig::from_kv(kv);
}

py::dict curve_row(const TrainingCurveRow& r) {
  return py::dict("epoch"_a = r.epoch, "episode_return"_a = r.episode_return, "actor_loss"_a = r.actor_loss,
                  "critic_loss"_a = r.critic_loss, "entropy_coeff"_a = r.entropy_coeff,
                  "entropy"_a = r.entropy);
}

}  // namespace

PYBIND11_MODULE(_vitalloc, m) {
  m.doc() = "Monitoring-device allocation for streaming patient populations";

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  py::enum_<Direction>(m, "Direction")
      .value("above", Direction::kAboveIsAbnormal)
      .value("below", Direction::kBelowIsAbnormal);

  py::class_<VitalSignSpec>(m, "VitalSignSpec")
      .def_readwrite("name", &VitalSignSpec::name)
      .def_readwrite("threshold", &VitalSignSpec::threshold)
      .def_readwrite("direction", &VitalSignSpec::direction)
      .def_readwrite("penalty_scale", &VitalSignSpec::penalty_scale)
      .def_readwrite("intervention_mean", &VitalSignSpec::intervention_mean)
      .def_readwrite("intervention_sd", &VitalSignSpec::intervention_sd)
      .def_readwrite("data_min", &VitalSignSpec::data_min)
      .def_readwrite("data_max", &VitalSignSpec::data_max)
      .def("is_abnormal", &VitalSignSpec::is_abnormal)
      .def("__repr__", [](const VitalSignSpec& s) { return "<VitalSignSpec " + s.name + ">"; });

  m.def("preset_specs", &preset_specs, "name"_a);
  m.def("penalty", &penalty, "sign"_a, "reading"_a);
  m.def("reward", [](const VitalVector& raw, const SignSpecs& specs) { return reward(raw, specs); },
        "raw"_a, "specs"_a);
  m.def("normalize", [](const VitalVector& raw, const SignSpecs& specs) { return normalize(raw, specs); });
  m.def("denormalize", [](const VitalVector& v, const SignSpecs& specs) { return denormalize(v, specs); });

  m.def(
      "synth",
      [](const std::filesystem::path& path, int patients, int steps, std::uint64_t seed, const std::string& preset) {
        const auto specs = preset_specs(preset);
        const auto trajs = generate_synthetic_corpus(patients, steps, seed, specs);
        std::ofstream out(path);
        if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
        write_trajectories(trajs, specs, out);
        return trajs.size();
      },
      "path"_a, "patients"_a = 400, "steps"_a = 48, "seed"_a = 0, "preset"_a = "mimic3");

  py::class_<Gaussian>(m, "Gaussian")
      .def(py::init([](Eigen::VectorXd mean, Eigen::MatrixXd cov) { return Gaussian{std::move(mean), std::move(cov)}; }),
           "mean"_a, "cov"_a)
      .def_readonly("mean", &Gaussian::mean)
      .def_readonly("cov", &Gaussian::cov);

  py::class_<Mixture>(m, "Mixture")
      .def_readonly("components", &Mixture::components)
      .def_readonly("weights", &Mixture::weights)
      .def("__len__", &Mixture::size)
      .def("log_likelihood", [](const Mixture& mix, const Eigen::MatrixXd& data) { return log_likelihood(mix, data); });

  m.def("default_planted_mixture", &default_planted_mixture, "specs"_a);

  py::class_<FitResult>(m, "FitResult")
      .def_readonly("mixture", &FitResult::mixture)
      .def_readonly("log_likelihood", &FitResult::log_likelihood)
      .def_readonly("iterations", &FitResult::iterations)
      .def_readonly("converged", &FitResult::converged);

  m.def("fit_mixture",
        [](const Eigen::MatrixXd& data, int k, std::uint64_t seed) { return fit_mixture(data, k, seed); },
        "data"_a, "k"_a, "seed"_a = 0);

  py::class_<PatientModel>(m, "PatientModel")
      .def(py::init<Gaussian, double>(), "joint"_a, "regularization"_a = 1e-6)
      .def("conditional_mean", &PatientModel::conditional_mean)
      .def_property_readonly("conditional_cov", &PatientModel::conditional_cov);

  py::class_<Model>(m, "Model")
      .def_readonly("specs", &Model::specs)
      .def_readonly("mixture", &Model::mixture)
      .def("save", [](const Model& model, const std::filesystem::path& dir) { save_model(model, dir); })
      .def_static("load", &load_model, "dir"_a);

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init(&config_from), "values"_a = std::map<std::string, std::string>{})
      .def_readwrite("n_epochs", &ExperimentConfig::n_epochs)
      .def_readwrite("n_eval_instances", &ExperimentConfig::n_eval_instances)
      .def_readwrite("n_seeds", &ExperimentConfig::n_seeds)
      .def_readwrite("master_seed", &ExperimentConfig::master_seed)
      .def_readwrite("threads", &ExperimentConfig::threads)
      .def_property(
          "settings",
          [](const ExperimentConfig& c) {
            std::vector<std::pair<int, int>> out;
            for (const auto& s : c.settings) out.emplace_back(s.budget, s.patients);
            return out;
          },
          [](ExperimentConfig& c, const std::vector<std::pair<int, int>>& v) {
            c.settings.clear();
            for (const auto& [b, n] : v) c.settings.push_back({b, n});
          });

  m.def(
      "prepare_model",
      [](const ExperimentConfig& cfg) {
        const auto fit = prepare_model(cfg, preset_specs(cfg.preset));
        return py::make_tuple(fit.model, fit.fit);
      },
      "config"_a);

  py::class_<ActorCritic>(m, "Policy")
      .def("probabilities", &ActorCritic::actor_forward, "state"_a)
      .def("value", &ActorCritic::value, "state"_a)
      .def("save",
           [](const ActorCritic& p, const std::filesystem::path& path) {
             std::ofstream out(path);
             write_checkpoint(p, out);
           })
      .def_static("load", [](const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
        return read_checkpoint(in);
      });

  m.def(
      "train",
      [](const ExperimentConfig& cfg, const Model& model, int budget, int patients, std::uint64_t seed) {
        auto result = train_policy(cfg, model.mixture, model.specs, cfg.instance_for({budget, patients}), seed);
        py::list curve;
        for (const auto& r : result.curve) curve.append(curve_row(r));
        return py::make_tuple(std::move(result.policy), curve);
      },
      "config"_a, "model"_a, "budget"_a = 3, "patients"_a = 20, "seed"_a = 0);

  m.def(
      "evaluate",
      [](const ExperimentConfig& cfg, const Model& model, const std::string& method, int budget, int patients,
         std::uint64_t seed, const ActorCritic* policy) {
        const auto inst = cfg.instance_for({budget, patients});
        if (method == kPpoMethod) {
          if (!policy) throw Error(ErrorCode::kInvalidInput, "method ppo needs a policy");
          return evaluate_policy(*policy, cfg, model.mixture, model.specs, inst, seed).returns;
        }
        return evaluate_baseline(parse_baseline(method), cfg, model.mixture, model.specs, inst, seed).returns;
      },
      "config"_a, "model"_a, "method"_a, "budget"_a = 3, "patients"_a = 20, "seed"_a = 0,
      "policy"_a = nullptr);

  m.def("method_names", &method_names);

  m.def(
      "aggregate",
      [](const std::vector<double>& v) {
        const auto a = aggregate(v);
        return py::make_tuple(a.mean, a.standard_error, a.n);
      },
      "values"_a);

  m.def(
      "run_experiment",
      [](const ExperimentConfig& cfg, const Model& model, const std::filesystem::path& out, bool overwrite) {
        ExperimentResult result;
        {
          py::gil_scoped_release release;
          result = run_experiment(cfg, model.mixture, model.specs);
          emit_outputs(result, out, overwrite);
        }
        py::list rows;
        for (const auto& r : result.rows) {
          rows.append(py::dict("method"_a = r.method, "budget"_a = r.budget, "patients"_a = r.patients,
                               "mean"_a = r.normalized.mean, "standard_error"_a = r.normalized.standard_error,
                               "seeds"_a = r.normalized.n));
        }
        return rows;
      },
      "config"_a, "model"_a, "out"_a, "overwrite"_a = false);
}
