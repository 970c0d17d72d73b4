#pragma once

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "vitalloc/env.hpp"
#include "vitalloc/gmm.hpp"
#include "vitalloc/ingest.hpp"
#include "vitalloc/vitals.hpp"

namespace testing {

using namespace vitalloc;

// Preset signs with the planted ground-truth mixture over their placeholder ranges.
struct Toy {
  SignSpecs specs = preset_specs("mimic3");
  Mixture mixture = default_planted_mixture(specs);
};

inline const Toy& toy() {
  static const Toy t;
  return t;
}

inline Gaussian gaussian2(double mx, double my, double sxx, double sxy, double syy) {
  Gaussian g;
  g.mean = Eigen::Vector2d(mx, my);
  g.cov.resize(2, 2);
  g.cov << sxx, sxy, sxy, syy;
  return g;
}

inline double sample_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sample_var(const std::vector<double>& v) {
  const double m = sample_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// Mask over arms 0..n-1 with the given slots.
inline AllocationMask make_mask(std::vector<Slot> slots, int step = 10) {
  AllocationMask m;
  m.step = step;
  for (std::size_t i = 0; i < slots.size(); ++i) m.arms.push_back(static_cast<ArmId>(i));
  m.slots = std::move(slots);
  return m;
}

}  // namespace testing
