#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "helpers.hpp"
#include "vitalloc/error.hpp"
#include "vitalloc/harness.hpp"

using namespace vitalloc;
using testing::toy;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.n_epochs = 3;
  cfg.n_eval_instances = 3;
  cfg.n_seeds = 3;
  cfg.settings = {{3, 20}, {4, 20}};
  cfg.master_seed = 77;
  cfg.threads = 1;
  return cfg;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("vitalloc_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// One arm's rows: `active` monitored steps from `arrival`, then passive.
std::vector<TraceRow> arm_rows(ArmId arm, int arrival, int active, int steps, double state_value,
                               int t_max = 25) {
  std::vector<TraceRow> rows;
  for (int k = 0; k < steps; ++k) {
    TraceRow r;
    r.arm = arm;
    r.step = arrival + k;
    r.action = k < active ? 1 : 0;
    r.slot = k < 3 ? Slot::kForcedActive
                   : (k >= t_max || k > active ? Slot::kForcedPassive : Slot::kEligible);
    r.state = ArmState::Constant(6, state_value);
    r.raw = VitalVector::Zero(3);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

TEST_CASE("aggregate") {
  auto a = aggregate({1.0, 3.0});
  CHECK(a.mean == 2.0);
  CHECK(a.standard_error == doctest::Approx(1.0));
  CHECK(a.n == 2);
  a = aggregate({4.0, 4.0, 4.0});
  CHECK(a.standard_error == 0.0);
  a = aggregate({5.0});
  CHECK(a.mean == 5.0);
  CHECK(a.standard_error == 0.0);
}

TEST_CASE("settings parsing and config keys") {
  const auto s = parse_settings("3x20, 5x40");
  REQUIRE(s.size() == 2);
  CHECK(s[1].budget == 5);
  CHECK(s[1].patients == 40);
  CHECK_THROWS_AS(parse_settings("3-20"), Error);
  CHECK_THROWS_AS(parse_settings("3x"), Error);
  CHECK(default_grid().size() == 12);

  const auto cfg = ExperimentConfig::from_kv(KeyValueConfig::parse(
      "hidden_layers = 3\nneurons_per_hidden_layer = 8\nagent_clip_ratio = 0.2\n"
      "start_entropy_coeff = 0.1\nactor_learning_rate = 0.01\ncritic_learning_rate = 0.02\n"
      "trains_per_epoch = 7\ndiscount_factor = 0.95\nn_epochs = 4\nn_seeds = 2\nsettings = 4x30\n"
      "optimizer = adam\nseed = 12\n"));
  CHECK(cfg.ppo.hidden_layers == 3);
  CHECK(cfg.ppo.hidden_units == 8);
  CHECK(cfg.ppo.clip == 0.2);
  CHECK(cfg.ppo.entropy_start == 0.1);
  CHECK(cfg.ppo.actor_lr == 0.01);
  CHECK(cfg.ppo.critic_lr == 0.02);
  CHECK(cfg.ppo.trains_per_epoch == 7);
  CHECK(cfg.ppo.gamma == 0.95);
  CHECK(cfg.ppo.optimizer == Optimizer::kAdam);
  CHECK(cfg.n_epochs == 4);
  CHECK(cfg.master_seed == 12);
  CHECK(cfg.instance_for(cfg.settings[0]).arrival_batch == 3);
  CHECK_THROWS_AS(ExperimentConfig::from_kv(KeyValueConfig::parse("n_epochs = 0\n")), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_kv(KeyValueConfig::parse("data = /nonexistent.csv\n")), Error);
}

TEST_CASE("run_seed") {
  const auto cfg = tiny_config();
  const auto a = run_seed(cfg, toy().mixture, toy().specs, {3, 20}, 5);
  const auto b = run_seed(cfg, toy().mixture, toy().specs, {3, 20}, 5);
  REQUIRE(a.methods == method_names());
  CHECK(a.methods.back() == "no_action");
  CHECK(a.mean_returns == b.mean_returns);
  CHECK(a.normalized.back() == 0.0);
  CHECK(a.mean_returns.back() <= 0.0);
  CHECK(a.curve.size() == 3);
  for (std::size_t m = 0; m < a.methods.size(); ++m) {
    CHECK(a.normalized[m] == doctest::Approx((a.mean_returns[m] - a.mean_returns.back()) / 20.0));
  }
  // at least the N initial arms of each evaluation instance are counted
  CHECK(a.activation.arms() >= 3 * 20);
  CHECK(a.activation.fraction_at_least(3) == 1.0);
}

TEST_CASE("evaluation instances are shared across methods") {
  const auto cfg = tiny_config();
  const auto inst = cfg.instance_for({3, 20});
  std::vector<std::vector<TraceRow>> ta, tb;
  evaluate_baseline(BaselineKind::kRandom, cfg, toy().mixture, toy().specs, inst, 9, &ta);
  evaluate_baseline(BaselineKind::kExtremeValues, cfg, toy().mixture, toy().specs, inst, 9, &tb);
  REQUIRE(ta.size() == tb.size());
  // Same arrivals and initial states; rewards at step 1 depend only on those.
  for (std::size_t e = 0; e < ta.size(); ++e) {
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(ta[e][i].step == 1);
      CHECK(ta[e][i].raw == tb[e][i].raw);
    }
  }
}

TEST_CASE("activation CDF") {
  SUBCASE("every arm exactly t_min steps") {
    std::vector<std::vector<TraceRow>> eps(1);
    for (ArmId a = 0; a < 5; ++a) {
      const auto rows = arm_rows(a, 1, 3, 10, 0.5);
      eps[0].insert(eps[0].end(), rows.begin(), rows.end());
    }
    const auto cdf = analyze_activation_cdf(eps, 3, 25);
    CHECK(cdf.cdf(2) == 0.0);
    CHECK(cdf.cdf(3) == 1.0);
    CHECK(cdf.fraction_at_least(3) == 1.0);
    CHECK(cdf.fraction_below_t_max() == 1.0);
  }
  SUBCASE("monotone and ends at one") {
    std::vector<std::vector<TraceRow>> eps(2);
    for (ArmId a = 0; a < 12; ++a) {
      const auto rows = arm_rows(a, 1, 3 + 2 * a, 40, 0.5);
      eps[static_cast<std::size_t>(a % 2)].insert(eps[static_cast<std::size_t>(a % 2)].end(), rows.begin(),
                                                   rows.end());
    }
    const auto cdf = analyze_activation_cdf(eps, 3, 25);
    CHECK(cdf.monotone());
    CHECK(cdf.cdf(25) == 1.0);
    CHECK(cdf.arms() == 12);
    CHECK(cdf.cdf(4) == doctest::Approx(1.0 / 12));
    CHECK(cdf.fraction_below_t_max() == doctest::Approx(11.0 / 12));
  }
  SUBCASE("merging adds counts") {
    ActivationCdf a{3, 25, {0, 0, 0, 2}}, b{3, 25, {0, 0, 0, 1, 1}};
    a.merge(b);
    CHECK(a.arms() == 4);
    CHECK(a.counts[3] == 3);
  }
}

TEST_CASE("removal histogram") {
  const auto& specs = toy().specs;
  SUBCASE("no voluntary removals") {
    std::vector<std::vector<TraceRow>> eps(1);
    const auto rows = arm_rows(0, 1, 25, 40, 0.5);  // forced off at t_max
    eps[0] = rows;
    const auto h = analyze_removal_states(eps, specs, 100);
    CHECK(h.voluntary == 0);
    CHECK(h.forced == 1);
    for (const auto& d : h.counts) {
      for (auto c : d) CHECK(c == 0);
    }
  }
  SUBCASE("hand-binned states") {
    std::vector<std::vector<TraceRow>> eps(1);
    const std::vector<double> values = {0.0, 0.02, 0.07, 0.5, 0.999, 1.0, 1.3, -0.2};
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto rows = arm_rows(static_cast<ArmId>(i), 1, 5, 20, values[i]);
      eps[0].insert(eps[0].end(), rows.begin(), rows.end());
    }
    const auto h = analyze_removal_states(eps, specs, 100);
    CHECK(h.voluntary == 8);
    CHECK(h.forced == 0);
    REQUIRE(h.dimensions.size() == 6);
    // floor(v * 20) clamped to [0, 19]
    std::vector<long long> expect(20, 0);
    for (int b : {0, 0, 1, 10, 19, 19, 19, 0}) ++expect[static_cast<std::size_t>(b)];
    for (const auto& d : h.counts) CHECK(d == expect);
    long long total = 0;
    for (auto c : h.counts[0]) total += c;
    CHECK(total == h.voluntary);
  }
  SUBCASE("departure while monitored counts as forced") {
    std::vector<std::vector<TraceRow>> eps(1);
    eps[0] = arm_rows(0, 60, 20, 20, 0.5);  // leaves at step 79, still active
    const auto h = analyze_removal_states(eps, specs, 100);
    CHECK(h.forced == 1);
    CHECK(h.voluntary == 0);
  }
}

TEST_CASE("experiment outputs") {
  const auto cfg = tiny_config();
  const auto result = run_experiment(cfg, toy().mixture, toy().specs);
  CHECK(result.rows.size() == method_names().size() * cfg.settings.size());
  CHECK(result.seeds.size() == 6);
  for (const auto& r : result.rows) {
    if (r.method == "no_action") {
      CHECK(r.normalized.mean == 0.0);
      CHECK(r.normalized.standard_error == 0.0);
    }
    CHECK(r.normalized.n == 3);
  }

  const auto dir = scratch("outputs");
  emit_outputs(result, dir, false);
  for (const char* f : {"results.csv", "per_seed.csv", "training_curves.csv", "activation_cdf.csv",
                        "removal_hist.csv", "rewards.svg"}) {
    CHECK(fs::exists(dir / f));
  }
  int svgs = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".svg") {
      ++svgs;
      CHECK(well_formed_svg(slurp(e.path())));
    }
  }
  CHECK(svgs == 1 + 2 * 2);

  // results.csv: header plus one row per method and setting
  std::istringstream results(slurp(dir / "results.csv"));
  std::string line;
  int lines = 0;
  while (std::getline(results, line)) ++lines;
  CHECK(lines == 1 + 10);

  // recompute the aggregate from per_seed.csv
  std::istringstream per(slurp(dir / "per_seed.csv"));
  std::getline(per, line);
  std::map<std::string, std::vector<double>> by_key;
  while (std::getline(per, line)) {
    const auto f = split(line, ',');
    by_key[f[0] + "x" + f[1] + ":" + f[4]].push_back(std::stod(f[6]));
  }
  for (const auto& r : result.rows) {
    const auto& v = by_key[std::to_string(r.budget) + "x" + std::to_string(r.patients) + ":" + r.method];
    REQUIRE(v.size() == 3);
    const double mean = (v[0] + v[1] + v[2]) / 3;
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    CHECK(r.normalized.mean == doctest::Approx(mean).epsilon(1e-8));
    CHECK(r.normalized.standard_error == doctest::Approx(std::sqrt(ss / 2) / std::sqrt(3.0)).epsilon(1e-6));
  }

  try {
    emit_outputs(result, dir, false);
    FAIL("expected refusal");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
  }
  CHECK_NOTHROW(emit_outputs(result, dir, true));
  fs::remove_all(dir);
}

TEST_CASE("experiment results do not depend on the thread count") {
  auto cfg = tiny_config();
  cfg.settings = {{3, 20}};
  cfg.n_seeds = 4;
  const auto one = run_experiment(cfg, toy().mixture, toy().specs);
  cfg.threads = 3;
  const auto three = run_experiment(cfg, toy().mixture, toy().specs);
  const auto d1 = scratch("threads1"), d3 = scratch("threads3");
  emit_outputs(one, d1, false);
  emit_outputs(three, d3, false);
  for (const char* f : {"results.csv", "per_seed.csv", "training_curves.csv", "activation_cdf.csv",
                        "removal_hist.csv"}) {
    CHECK(slurp(d1 / f) == slurp(d3 / f));
  }
  fs::remove_all(d1);
  fs::remove_all(d3);
}

TEST_CASE("svg well-formedness check") {
  CHECK(well_formed_svg("<svg a=\"1\"><g><rect/></g><text>x</text></svg>"));
  CHECK_FALSE(well_formed_svg("<svg><g></svg>"));
  CHECK_FALSE(well_formed_svg("<html></html>"));
  CHECK_FALSE(well_formed_svg("<svg></svg><svg></svg>"));
}

TEST_CASE("model save and load") {
  const auto corpus = generate_synthetic_corpus(40, 20, 3, toy().specs);
  const auto fit = fit_model(corpus, toy().specs, 2, 4);
  CHECK(fit.trajectories_used == 40);
  CHECK(fit.tuples == 40 * 19);
  const auto dir = scratch("model");
  save_model(fit.model, dir);
  const auto back = load_model(dir);
  CHECK(back.mixture.components[1].cov == fit.model.mixture.components[1].cov);
  CHECK(back.specs[0].data_min == fit.model.specs[0].data_min);
  fs::remove_all(dir);
  try {
    load_model(dir);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
  }
}
