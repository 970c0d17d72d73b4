#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "vitalloc/rng.hpp"
#include "vitalloc/vitals.hpp"

namespace vitalloc {

// Joint Gaussian over a stacked (current, next) vital vector of length 2d.
struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

struct Mixture {
  std::vector<Gaussian> components;
  std::vector<double> weights;

  std::size_t size() const { return components.size(); }
  Eigen::Index dim() const { return components.empty() ? 0 : components.front().mean.size(); }
  void validate() const;
};

struct FitConfig {
  int max_iterations = 200;
  double tolerance = 1e-6;       // relative log-likelihood improvement
  double regularization = 1e-6;  // added to every covariance diagonal
};

struct FitResult {
  Mixture mixture;
  // Log-likelihood of every parameter set visited, starting from the seeding.
  std::vector<double> log_likelihood;
  int iterations = 0;
  bool converged = false;
};

// EM for a k-component full-covariance mixture. `data` holds one sample per
// row. Means are seeded k-means++ style, weights start uniform and every
// covariance starts at the pooled sample covariance.
FitResult fit_mixture(const Eigen::MatrixXd& data, int k, std::uint64_t seed,
                      const FitConfig& config = {});

double log_likelihood(const Mixture& mixture, const Eigen::MatrixXd& data);

// One arm's transition model. The conditional machinery is precomputed at
// construction, so a model is immutable and cheap to sample from.
class PatientModel {
 public:
  explicit PatientModel(Gaussian joint, double regularization = 1e-6);

  const Gaussian& gaussian() const { return joint_; }
  Eigen::Index signs() const { return d_; }

  // Sample of the joint, keeping only the current-step block.
  VitalVector initial_state(Rng& rng) const;
  // Draw from N(mu2 + S21 S11^-1 (x - mu1), S22 - S21 S11^-1 S12).
  VitalVector conditional_next(const VitalVector& current, Rng& rng) const;

  VitalVector conditional_mean(const VitalVector& current) const;
  const Eigen::MatrixXd& conditional_cov() const { return cond_cov_; }

 private:
  Gaussian joint_;
  Eigen::Index d_ = 0;
  Eigen::MatrixXd marginal_factor_;  // A with A A^T = S11
  Eigen::MatrixXd gain_;             // S21 S11^-1
  Eigen::MatrixXd cond_cov_;
  Eigen::MatrixXd cond_factor_;
};

// Convex combination (1 - w) * primary + w * secondary of means and covariances.
Gaussian blend_components(const Mixture& mixture, std::size_t primary,
                          std::size_t secondary, double w);

// Primary component drawn by weight, secondary uniformly over all components
// (it may coincide with the primary), blend weight ~ Uniform(0, max_blend).
PatientModel sample_patient(const Mixture& mixture, Rng& rng, double max_blend = 0.15,
                            double regularization = 1e-6);

// Symmetric square-root style factor A (A A^T = cov) that tolerates
// semi-definite input; negative eigenvalues from round-off are clipped.
Eigen::MatrixXd sampling_factor(const Eigen::MatrixXd& cov);

Eigen::VectorXd sample_gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& factor,
                                Rng& rng);

// Versioned text format; doubles are written with 17 significant digits so a
// reload is bit-exact.
void write_mixture(const Mixture& mixture, std::ostream& out);
Mixture read_mixture(std::istream& in);

}  // namespace vitalloc
