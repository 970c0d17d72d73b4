#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "vitalloc/error.hpp"
#include "vitalloc/gmm.hpp"
#include "vitalloc/ingest.hpp"

using namespace vitalloc;

namespace {

const std::string kHeader = "patient_id,timestamp_min,heart_rate,respiratory_rate,spo2\n";

std::vector<RawTrajectory> parse(const std::string& text) {
  std::istringstream in(text);
  return read_trajectories(in, preset_specs("mimic3"), "test.csv");
}

RawTrajectory hourly_traj(const std::string& id, int hours, double base = 80.0) {
  RawTrajectory t{id, {}};
  for (int h = 0; h < hours; ++h) {
    VitalVector v(3);
    v << base + h, 18.0, 97.0;
    t.samples.push_back({60.0 * h + 10.0, v});
  }
  return t;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidInput;
}

// Sorting-based median, independent of the library routine.
double oracle_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST_CASE("trajectory CSV reading") {
  SUBCASE("header only") { CHECK(parse(kHeader).empty()); }

  SUBCASE("rows group by patient") {
    std::string text = kHeader;
    for (int i = 0; i < 12; ++i) {
      text += "B," + std::to_string(60 * i) + ",80,18,97\n";
      text += "A," + std::to_string(60 * i) + ",90,20,95\n";
    }
    const auto trajs = parse(text);
    REQUIRE(trajs.size() == 2);
    CHECK(trajs[0].patient_id == "A");
    CHECK(trajs[0].samples.size() == 12);
    CHECK(trajs[1].samples.size() == 12);
  }

  SUBCASE("missing and NaN readings drop the row") {
    const auto trajs = parse(kHeader + "A,0,80,18,97\nA,60,nan,18,97\nA,120,80,,97\nA,180,81,18,96\n");
    REQUIRE(trajs.size() == 1);
    CHECK(trajs[0].samples.size() == 2);
  }

  SUBCASE("leading columns are fixed") {
    CHECK(code_of([] { parse("spo2,patient_id,heart_rate,timestamp_min,respiratory_rate\n95,A,88,30,17\n"); }) ==
          ErrorCode::kSchema);
  }

  SUBCASE("samples are ordered by time") {
    const auto trajs = parse(kHeader + "A,120,80,18,97\nA,0,81,18,97\nA,60,82,18,97\n");
    CHECK(trajs[0].samples[0].minutes == 0.0);
    CHECK(trajs[0].samples[2].minutes == 120.0);
  }

  SUBCASE("errors") {
    CHECK(code_of([] { parse("patient_id,timestamp_min,heart_rate,respiratory_rate,lactate\n"); }) ==
          ErrorCode::kSchema);
    CHECK(code_of([] { parse("patient_id,timestamp_min,heart_rate,respiratory_rate\n"); }) ==
          ErrorCode::kSchema);
    CHECK(code_of([] { parse(kHeader + "A,0,80,18\n"); }) == ErrorCode::kParse);
    try {
      parse(kHeader + "A,0,80,18,97\nA,60,eighty,18,97\n");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kParse);
      CHECK(std::string(e.what()).find("3") != std::string::npos);
    }
  }
}

TEST_CASE("trajectories round-trip through CSV") {
  const auto specs = preset_specs("mimic3");
  const auto trajs = generate_synthetic_corpus(4, 12, 9, specs);
  std::ostringstream out;
  write_trajectories(trajs, specs, out);
  std::istringstream in(out.str());
  const auto back = read_trajectories(in, specs);
  REQUIRE(back.size() == trajs.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    REQUIRE(back[i].samples.size() == trajs[i].samples.size());
    for (std::size_t j = 0; j < trajs[i].samples.size(); ++j) {
      CHECK(back[i].samples[j].readings == trajs[i].samples[j].readings);
    }
  }
}

TEST_CASE("median conventions") {
  CHECK(median({70, 80, 90}) == 80.0);
  CHECK(median({90, 70, 80}) == 80.0);
  CHECK(median({70, 80}) == 75.0);
  CHECK(median({5}) == 5.0);
  std::mt19937_64 gen(4);
  std::normal_distribution<double> dist(0, 10);
  for (int n = 1; n < 40; ++n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = dist(gen);
    CHECK(median(v) == oracle_median(v));
  }
}

TEST_CASE("hourly medians") {
  auto specs = preset_specs("mimic3");
  specs[0].data_min = 0;
  specs[0].data_max = 200;

  SUBCASE("median of the readings in a bucket") {
    RawTrajectory t = hourly_traj("A", 12);
    for (double hr : {70.0, 90.0}) {
      VitalVector v(3);
      v << hr, 18, 97;
      t.samples.push_back({20.0, v});
    }
    std::stable_sort(t.samples.begin(), t.samples.end(),
                     [](const RawSample& a, const RawSample& b) { return a.minutes < b.minutes; });
    // hour 0 holds 80 (original), 70 and 90
    const auto h = hourly_median(t, specs);
    REQUIRE(h);
    CHECK(h->steps[0][0] * 200.0 == doctest::Approx(80.0));
  }

  SUBCASE("fewer than ten hours is excluded") {
    CHECK_FALSE(hourly_median(hourly_traj("A", 9), specs).has_value());
    const auto h = hourly_median(hourly_traj("A", 10), specs);
    REQUIRE(h);
    CHECK(h->steps.size() == 10);
  }

  SUBCASE("empty hours are compacted") {
    auto t = hourly_traj("A", 14);
    t.samples.erase(t.samples.begin() + 3, t.samples.begin() + 5);
    const auto h = hourly_median(t, specs);
    REQUIRE(h);
    CHECK(h->steps.size() == 12);
    CHECK(h->skipped_hours == 2);
    CHECK(h->steps[3][0] * 200.0 == doctest::Approx(85.0));
  }

  SUBCASE("permutation invariant within an hour") {
    RawTrajectory t{"A", {}};
    std::vector<double> readings = {71, 95, 88, 60, 102, 77};
    for (int h = 0; h < 10; ++h) {
      for (double r : readings) {
        VitalVector v(3);
        v << r + h, 18, 97;
        t.samples.push_back({60.0 * h + 5.0, v});
      }
    }
    const auto a = hourly_median(t, specs);
    std::mt19937_64 gen(1);
    for (int h = 0; h < 10; ++h) {
      std::shuffle(t.samples.begin() + 6 * h, t.samples.begin() + 6 * (h + 1), gen);
    }
    const auto b = hourly_median(t, specs);
    REQUIRE(a);
    REQUIRE(b);
    for (std::size_t i = 0; i < a->steps.size(); ++i) CHECK(a->steps[i] == b->steps[i]);
  }

  SUBCASE("values lie in [0, 1] when ranges come from the same corpus") {
    const auto corpus = generate_synthetic_corpus(30, 24, 5, preset_specs("mimic3"));
    const auto fitted = fit_ranges(corpus, preset_specs("mimic3"));
    for (const auto& t : corpus) {
      const auto h = hourly_median(t, fitted);
      REQUIRE(h);
      for (const auto& v : h->steps) {
        CHECK(v.minCoeff() >= 0.0);
        CHECK(v.maxCoeff() <= 1.0);
      }
    }
  }
}

TEST_CASE("fit_ranges covers every reading, including short trajectories") {
  auto a = hourly_traj("A", 12, 60.0);
  auto b = hourly_traj("B", 2, 150.0);  // excluded later, still counted here
  b.samples[0].readings[1] = 25.0;
  b.samples[1].readings[2] = 91.0;
  const auto specs = fit_ranges({a, b}, preset_specs("mimic3"));
  CHECK(specs[0].data_min == 60.0);
  CHECK(specs[0].data_max == 151.0);
  CHECK(specs[1].data_min == 18.0);
  CHECK(specs[1].data_max == 25.0);
  CHECK(specs[2].data_min == 91.0);
  CHECK(code_of([&] { fit_ranges({a}, preset_specs("mimic3")); }) == ErrorCode::kDegenerateRange);
}

TEST_CASE("tuple extraction") {
  auto specs = preset_specs("mimic3");
  const auto h1 = *hourly_median(hourly_traj("A", 10), specs);
  const auto h2 = *hourly_median(hourly_traj("B", 10, 100.0), specs);
  CHECK(extract_tuples({h1}).size() == 9);

  const auto both = extract_tuples({h1, h2});
  REQUIRE(both.size() == 18);
  // The seam between patients would pair hour 9 of A with hour 0 of B.
  for (const auto& t : both) CHECK(std::abs(t.next[0] - t.current[0]) < 2.0 / 170.0);

  HourlyTrajectory constant{"C", std::vector<VitalVector>(10, VitalVector::Constant(3, 0.4)), 0};
  for (const auto& t : extract_tuples({constant})) CHECK(t.current == t.next);

  const auto m = tuple_matrix(both);
  CHECK(m.rows() == 18);
  CHECK(m.cols() == 6);
}

TEST_CASE("synthetic corpus") {
  const auto specs = preset_specs("mimic3");
  const auto a = generate_synthetic_corpus(5, 20, 42, specs);
  REQUIRE(a.size() == 5);
  for (const auto& t : a) CHECK(t.samples.size() == 20);

  std::ostringstream s1, s2, s3;
  write_trajectories(a, specs, s1);
  write_trajectories(generate_synthetic_corpus(5, 20, 42, specs), specs, s2);
  write_trajectories(generate_synthetic_corpus(5, 20, 43, specs), specs, s3);
  CHECK(s1.str() == s2.str());
  CHECK(s1.str() != s3.str());
}

TEST_CASE("planted stationary mixture is recovered by EM from a large synthetic corpus") {
  const auto specs = preset_specs("mimic3");
  // Stationary AR(1) components, so every tuple is an exact draw from its component.
  auto component = [](double a, double b, double c, double rho) {
    Eigen::VectorXd m(3);
    m << a, b, c;
    const Eigen::MatrixXd s = Eigen::MatrixXd::Identity(3, 3) * 0.03 * 0.03;
    Gaussian g{Eigen::VectorXd(6), Eigen::MatrixXd(6, 6)};
    g.mean << m, m;
    g.cov << s, rho * s, rho * s, s;
    return g;
  };
  Mixture planted;
  planted.components = {component(0.3, 0.3, 0.7, 0.8), component(0.6, 0.4, 0.5, 0.7),
                        component(0.4, 0.6, 0.3, 0.9)};
  planted.weights = {0.5, 0.3, 0.2};
  const auto corpus = generate_synthetic_corpus(2000, 12, 11, specs, SyntheticCorpusConfig{planted});
  std::vector<HourlyTrajectory> hourly;
  for (const auto& t : corpus) hourly.push_back(*hourly_median(t, specs));
  const auto fit = fit_mixture(tuple_matrix(extract_tuples(hourly)), 3, 3);
  // Greedy matching of each planted mean to the nearest unused fitted mean.
  std::vector<bool> used(fit.mixture.size(), false);
  for (const auto& p : planted.components) {
    std::size_t best = 0;
    double best_d = 1e9;
    for (std::size_t j = 0; j < fit.mixture.size(); ++j) {
      const double d = (fit.mixture.components[j].mean - p.mean).cwiseAbs().maxCoeff();
      if (!used[j] && d < best_d) {
        best_d = d;
        best = j;
      }
    }
    used[best] = true;
    CHECK(best_d < 0.05);
  }
}

TEST_CASE("default planted mixture is fitted into the same neighbourhood") {
  const auto specs = preset_specs("mimic3");
  const auto planted = default_planted_mixture(specs);
  const auto corpus = generate_synthetic_corpus(1000, 24, 11, specs);
  std::vector<HourlyTrajectory> hourly;
  for (const auto& t : corpus) hourly.push_back(*hourly_median(t, specs));
  const auto fit = fit_mixture(tuple_matrix(extract_tuples(hourly)), static_cast<int>(planted.size()), 3);
  CHECK(fit.converged);
  // The deteriorating group drifts, so only the pooled mean is a tight target.
  Eigen::VectorXd planted_mean = Eigen::VectorXd::Zero(6), fitted_mean = Eigen::VectorXd::Zero(6);
  for (std::size_t k = 0; k < planted.size(); ++k) {
    planted_mean += planted.weights[k] * planted.components[k].mean;
    fitted_mean += fit.mixture.weights[k] * fit.mixture.components[k].mean;
  }
  CHECK((planted_mean - fitted_mean).cwiseAbs().maxCoeff() < 0.1);
}
