#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "helpers.hpp"
#include "vitalloc/error.hpp"
#include "vitalloc/vitals.hpp"

using namespace vitalloc;
using testing::sample_mean;

namespace {

VitalVector vec(std::initializer_list<double> xs) {
  VitalVector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

}  // namespace

TEST_CASE("built-in signs carry the published thresholds and intervention effects") {
  const auto hr = heart_rate_spec();
  CHECK(hr.threshold == 120.0);
  CHECK(hr.penalty_scale == 17.0);
  CHECK(hr.intervention_mean == 15.0);
  CHECK(hr.intervention_sd == 5.0);
  CHECK(hr.direction == Direction::kAboveIsAbnormal);

  const auto temp = temperature_spec();
  CHECK(temp.threshold == 38.0);
  CHECK(temp.penalty_scale == 2.0);
  CHECK(temp.intervention_mean == 1.5);
  CHECK(temp.intervention_sd == 0.5);

  const auto rr = respiratory_rate_spec();
  CHECK(rr.threshold == 30.0);
  CHECK(rr.penalty_scale == 5.0);
  CHECK(rr.intervention_mean == 10.0);
  CHECK(rr.intervention_sd == doctest::Approx(3.33));

  const auto spo2 = spo2_spec();
  CHECK(spo2.threshold == 90.0);
  CHECK(spo2.penalty_scale == 4.0);
  CHECK(spo2.intervention_mean == 3.0);
  CHECK(spo2.intervention_sd == 1.0);
  CHECK(spo2.direction == Direction::kBelowIsAbnormal);
}

TEST_CASE("presets select the sign sets") {
  const auto m4 = preset_specs("mimic4");
  REQUIRE(m4.size() == 3);
  CHECK(m4[2].name == temperature_spec().name);
  for (const char* name : {"mimic3", "mbarara"}) {
    const auto s = preset_specs(name);
    REQUIRE(s.size() == 3);
    CHECK(s[0].name == heart_rate_spec().name);
    CHECK(s[1].name == respiratory_rate_spec().name);
    CHECK(s[2].name == spo2_spec().name);
  }
  CHECK_THROWS_AS(preset_specs("eicu"), Error);
}

TEST_CASE("penalty") {
  const double e = std::numbers::e;
  SUBCASE("normal side is free") {
    CHECK(penalty(heart_rate_spec(), 100.0) == 0.0);
    CHECK(penalty(spo2_spec(), 97.0) == 0.0);
  }
  SUBCASE("threshold itself is normal, one step past it costs about one") {
    CHECK(penalty(heart_rate_spec(), 120.0) == 0.0);
    CHECK(penalty(spo2_spec(), 90.0) == 0.0);
    CHECK(penalty(heart_rate_spec(), 120.0 + 1e-9) == doctest::Approx(-1.0));
  }
  SUBCASE("unit-scale deviation costs e") {
    CHECK(std::abs(penalty(heart_rate_spec(), 137.0) + e) < 1e-12);
    CHECK(std::abs(penalty(spo2_spec(), 86.0) + e) < 1e-12);
    CHECK(std::abs(penalty(respiratory_rate_spec(), 35.0) + e) < 1e-12);
    CHECK(std::abs(penalty(temperature_spec(), 40.0) + e) < 1e-12);
  }
  SUBCASE("matches the exponential form at arbitrary deviations") {
    for (double dev : {0.3, 2.0, 11.0, 40.0}) {
      CHECK(penalty(heart_rate_spec(), 120.0 + dev) == doctest::Approx(-std::exp(dev / 17.0)));
      CHECK(penalty(spo2_spec(), 90.0 - dev) == doctest::Approx(-std::exp(dev / 4.0)));
    }
  }
  SUBCASE("non-finite reading") {
    try {
      penalty(heart_rate_spec(), std::numeric_limits<double>::quiet_NaN());
      FAIL("expected an error");
    } catch (const Error& err) {
      CHECK(err.code() == ErrorCode::kInvalidInput);
    }
  }
}

TEST_CASE("penalty is monotone in the abnormal-side deviation") {
  for (const auto& sign : {heart_rate_spec(), respiratory_rate_spec(), spo2_spec(), temperature_spec()}) {
    const double dir = sign.direction == Direction::kAboveIsAbnormal ? 1.0 : -1.0;
    double prev = 0.0;
    for (int i = 1; i <= 200; ++i) {
      const double p = penalty(sign, sign.threshold + dir * 0.1 * i);
      CHECK(p <= prev);
      prev = p;
    }
  }
}

TEST_CASE("reward sums penalties") {
  const auto specs = preset_specs("mimic3");
  const double e = std::numbers::e;
  CHECK(reward(vec({100, 18, 97}), specs) == 0.0);
  CHECK(reward(vec({137, 35, 86}), specs) == doctest::Approx(-8.15485).epsilon(1e-6));
  CHECK(std::abs(reward(vec({137, 35, 86}), specs) + 3 * e) < 1e-12);
  CHECK(reward(vec({137, 18, 97}), specs) == doctest::Approx(-2.71828).epsilon(1e-6));
  CHECK_THROWS_AS(reward(vec({137, 18}), specs), Error);
  CHECK(any_abnormal(vec({137, 18, 97}), specs));
  CHECK_FALSE(any_abnormal(vec({120, 30, 90}), specs));
}

TEST_CASE("apply_intervention") {
  const auto specs = preset_specs("mimic3");
  Rng rng(3);
  SUBCASE("normal readings are fixed points") {
    const auto v = vec({100, 18, 97});
    CHECK(apply_intervention(v, specs, rng) == v);
  }
  SUBCASE("deterministic shift") {
    auto s = specs;
    s[0].intervention_sd = 0.0;
    const auto out = apply_intervention(vec({140, 18, 97}), s, rng);
    CHECK(out[0] == doctest::Approx(125.0));
    CHECK(out[1] == 18.0);
    CHECK(out[2] == 97.0);
  }
  SUBCASE("below-is-abnormal signs move up; Monte Carlo mean") {
    const int n = 100000;
    std::vector<double> xs;
    xs.reserve(n);
    for (int i = 0; i < n; ++i) xs.push_back(apply_intervention(vec({100, 18, 86}), specs, rng)[2]);
    CHECK(std::abs(sample_mean(xs) - 89.0) < 4.0 * 1.0 / std::sqrt(n));
  }
  SUBCASE("truncated shifts never move a sign away from normal") {
    auto s = specs;
    s[0].intervention_mean = 0.0;  // half the draws would be negative
    for (int i = 0; i < 2000; ++i) {
      const auto out = apply_intervention(vec({140, 35, 86}), s, rng, true);
      CHECK(out[0] <= 140.0);
      CHECK(out[1] <= 35.0);
      CHECK(out[2] >= 86.0);
    }
  }
}

TEST_CASE("normalize and denormalize") {
  auto specs = preset_specs("mimic3");
  specs[0].data_min = 40;
  specs[0].data_max = 180;
  const auto lo = vec({40, specs[1].data_min, specs[2].data_min});
  const auto hi = vec({180, specs[1].data_max, specs[2].data_max});
  CHECK(normalize(lo, specs).isZero());
  CHECK(normalize(hi, specs).isOnes());
  const auto v = vec({97.3, 22.1, 93.4});
  CHECK((denormalize(normalize(v, specs), specs) - v).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(normalize(vec({200, 22, 93}), specs)[0] > 1.0);  // no clamping
  specs[1].data_max = specs[1].data_min;
  try {
    normalize(v, specs);
    FAIL("expected an error");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::kDegenerateRange);
  }
}

TEST_CASE("sign validation") {
  auto s = heart_rate_spec();
  CHECK_NOTHROW(s.validate());
  s.penalty_scale = 0.0;
  CHECK_THROWS_AS(s.validate(), Error);
  s = heart_rate_spec();
  s.data_max = s.data_min;
  CHECK_THROWS_AS(s.validate(), Error);
  s = heart_rate_spec();
  s.intervention_sd = -1.0;
  CHECK_THROWS_AS(s.validate(), Error);
}

TEST_CASE("sign specs round-trip through key-value text") {
  auto specs = preset_specs("mimic4");
  specs[0].data_min = 41.25;
  specs[2].threshold = 38.5;
  std::ostringstream out;
  write_sign_specs(specs, out);
  const auto back = load_sign_specs(KeyValueConfig::parse(out.str()));
  REQUIRE(back.size() == specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    CHECK(back[i].name == specs[i].name);
    CHECK(back[i].threshold == specs[i].threshold);
    CHECK(back[i].direction == specs[i].direction);
    CHECK(back[i].data_min == specs[i].data_min);
    CHECK(back[i].data_max == specs[i].data_max);
    CHECK(back[i].intervention_sd == specs[i].intervention_sd);
  }
}

TEST_CASE("sign overrides from config") {
  const auto kv = KeyValueConfig::parse(
      "preset = mimic4\n"
      "signs = heart_rate, spo2\n"
      "spo2.threshold = 92\n"
      "heart_rate.direction = below\n");
  const auto specs = load_sign_specs(kv);
  REQUIRE(specs.size() == 2);
  CHECK(specs[1].threshold == 92.0);
  CHECK(specs[1].direction == Direction::kBelowIsAbnormal);
  CHECK(specs[0].direction == Direction::kBelowIsAbnormal);
  CHECK_THROWS_AS(load_sign_specs(KeyValueConfig::parse("heart_rate.direction = sideways")), Error);
}
