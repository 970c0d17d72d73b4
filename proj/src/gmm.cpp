#include "vitalloc/gmm.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>

#include "vitalloc/error.hpp"

namespace vitalloc {
namespace {

constexpr const char* kMixtureMagic = "vitalloc-mixture";
constexpr int kMixtureVersion = 1;

bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

// Cholesky with escalating diagonal loading. Returns false if the matrix stays
// indefinite after the last attempt.
bool regularized_cholesky(Eigen::MatrixXd& cov, double eps, Eigen::LLT<Eigen::MatrixXd>& llt) {
  const auto n = cov.rows();
  double load = eps > 0.0 ? eps : 1e-12;
  for (int attempt = 0; attempt < 8; ++attempt) {
    llt.compute(cov);
    if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 0.0) {
      return true;
    }
    cov += load * Eigen::MatrixXd::Identity(n, n);
    load *= 10.0;
  }
  return false;
}

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& data) {
  const Eigen::RowVectorXd mean = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - mean;
  return centered.transpose() * centered / static_cast<double>(data.rows());
}

// Per-component log densities, n x k.
Eigen::MatrixXd component_log_density(const Mixture& m, const Eigen::MatrixXd& data) {
  const auto n = data.rows();
  const auto dim = data.cols();
  Eigen::MatrixXd out(n, static_cast<Eigen::Index>(m.size()));
  const double log2pi = std::log(2.0 * std::numbers::pi);
  for (std::size_t j = 0; j < m.size(); ++j) {
    Eigen::LLT<Eigen::MatrixXd> llt(m.components[j].cov);
    require(llt.info() == Eigen::Success, ErrorCode::kDegenerateFit,
            "component " + std::to_string(j) + " covariance is not positive definite");
    const Eigen::MatrixXd centered =
        (data.rowwise() - m.components[j].mean.transpose()).transpose();
    const Eigen::MatrixXd solved = llt.matrixL().solve(centered);
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    out.col(static_cast<Eigen::Index>(j)) =
        (-0.5 * (solved.colwise().squaredNorm().array() + log_det + dim * log2pi))
            .transpose();
  }
  return out;
}

// Adds log weights in place and returns per-row log-sum-exp.
Eigen::VectorXd log_normalizer(Eigen::MatrixXd& log_joint, const std::vector<double>& weights) {
  for (Eigen::Index j = 0; j < log_joint.cols(); ++j) {
    const double w = weights[static_cast<std::size_t>(j)];
    log_joint.col(j).array() += w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity();
  }
  Eigen::VectorXd lse(log_joint.rows());
  for (Eigen::Index i = 0; i < log_joint.rows(); ++i) {
    const double peak = log_joint.row(i).maxCoeff();
    lse[i] = peak + std::log((log_joint.row(i).array() - peak).exp().sum());
  }
  return lse;
}

std::vector<Eigen::Index> seed_means(const Eigen::MatrixXd& data, int k, Rng& rng) {
  const auto n = data.rows();
  std::vector<Eigen::Index> chosen;
  chosen.push_back(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n))));
  Eigen::VectorXd dist2 = (data.rowwise() - data.row(chosen[0])).rowwise().squaredNorm();
  while (static_cast<int>(chosen.size()) < k) {
    const double total = dist2.sum();
    Eigen::Index pick = 0;
    if (total <= 0.0) {
      pick = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
    } else {
      double u = rng.uniform() * total;
      for (pick = 0; pick < n - 1; ++pick) {
        u -= dist2[pick];
        if (u < 0.0) break;
      }
    }
    chosen.push_back(pick);
    dist2 = dist2.cwiseMin((data.rowwise() - data.row(pick)).rowwise().squaredNorm());
  }
  return chosen;
}

void expect_token(std::istream& in, const std::string& token) {
  std::string got;
  in >> got;
  require(static_cast<bool>(in) && got == token, ErrorCode::kParse,
          "mixture file: expected '" + token + "', found '" + got + "'");
}

double read_number(std::istream& in) {
  double v = 0.0;
  in >> v;
  require(static_cast<bool>(in), ErrorCode::kParse, "mixture file: truncated numeric data");
  return v;
}

}  // namespace

void Mixture::validate() const {
  require(!components.empty(), ErrorCode::kInvalidInput, "mixture has no components");
  require(weights.size() == components.size(), ErrorCode::kInvalidInput,
          "mixture weight count does not match component count");
  const auto dim = components.front().mean.size();
  require(dim > 0 && dim % 2 == 0, ErrorCode::kInvalidInput,
          "mixture dimension must be even (current and next blocks)");
  double total = 0.0;
  for (std::size_t j = 0; j < components.size(); ++j) {
    const auto& c = components[j];
    require(weights[j] >= 0.0, ErrorCode::kInvalidInput, "negative mixture weight");
    require(c.mean.size() == dim && c.cov.rows() == dim && c.cov.cols() == dim,
            ErrorCode::kInvalidInput, "component dimension mismatch");
    require(all_finite(c.mean) && all_finite(c.cov), ErrorCode::kInvalidInput,
            "non-finite component parameters");
    require((c.cov - c.cov.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * (1.0 + c.cov.cwiseAbs().maxCoeff()),
            ErrorCode::kInvalidInput, "component covariance not symmetric");
    total += weights[j];
  }
  require(std::abs(total - 1.0) <= 1e-9, ErrorCode::kInvalidInput,
          "mixture weights do not sum to 1");
}

double log_likelihood(const Mixture& mixture, const Eigen::MatrixXd& data) {
  Eigen::MatrixXd log_joint = component_log_density(mixture, data);
  return log_normalizer(log_joint, mixture.weights).sum();
}

FitResult fit_mixture(const Eigen::MatrixXd& data, int k, std::uint64_t seed,
                      const FitConfig& config) {
  require(k >= 1, ErrorCode::kInvalidInput, "component count must be >= 1");
  require(data.rows() >= k, ErrorCode::kInsufficientData,
          "need at least " + std::to_string(k) + " samples, got " + std::to_string(data.rows()));
  require(data.cols() >= 1 && all_finite(data), ErrorCode::kInvalidInput,
          "training data must be finite and non-empty");

  const auto n = data.rows();
  const auto dim = data.cols();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(dim, dim);
  Rng rng(seed);

  FitResult result;
  Mixture& m = result.mixture;
  const Eigen::MatrixXd pooled = sample_covariance(data) + config.regularization * eye;
  for (auto row : seed_means(data, k, rng)) {
    m.components.push_back({data.row(row).transpose(), pooled});
  }
  m.weights.assign(static_cast<std::size_t>(k), 1.0 / k);

  for (int iter = 0;; ++iter) {
    // E-step
    Eigen::MatrixXd log_joint = component_log_density(m, data);
    const Eigen::VectorXd lse = log_normalizer(log_joint, m.weights);
    const double ll = lse.sum();
    require(std::isfinite(ll), ErrorCode::kDegenerateFit, "log-likelihood is not finite");
    result.log_likelihood.push_back(ll);
    if (iter > 0) {
      const double prev = result.log_likelihood[result.log_likelihood.size() - 2];
      if (ll - prev < config.tolerance * std::abs(prev)) {
        result.converged = true;
        break;
      }
    }
    if (iter >= config.max_iterations) break;

    // M-step
    const Eigen::MatrixXd resp = (log_joint.colwise() - lse).array().exp().matrix();
    for (Eigen::Index j = 0; j < k; ++j) {
      auto& comp = m.components[static_cast<std::size_t>(j)];
      const double nk = resp.col(j).sum();
      m.weights[static_cast<std::size_t>(j)] = nk / static_cast<double>(n);
      if (nk < 1e-12 * static_cast<double>(n)) continue;  // empty; keep last parameters
      comp.mean = (data.transpose() * resp.col(j)) / nk;
      const Eigen::MatrixXd centered = data.rowwise() - comp.mean.transpose();
      comp.cov = (centered.transpose() * resp.col(j).asDiagonal() * centered) / nk;
      comp.cov = 0.5 * (comp.cov + comp.cov.transpose()) + config.regularization * eye;
      Eigen::LLT<Eigen::MatrixXd> llt;
      require(regularized_cholesky(comp.cov, config.regularization, llt),
              ErrorCode::kDegenerateFit,
              "component " + std::to_string(j) + " covariance stayed singular");
    }
    double wsum = 0.0;
    for (double w : m.weights) wsum += w;
    for (double& w : m.weights) w /= wsum;
    result.iterations = iter + 1;
  }
  return result;
}

Eigen::MatrixXd sampling_factor(const Eigen::MatrixXd& cov) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (cov + cov.transpose()));
  require(eig.info() == Eigen::Success, ErrorCode::kNumericFailure,
          "eigendecomposition of covariance failed");
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal();
}

Eigen::VectorXd sample_gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& factor,
                                Rng& rng) {
  Eigen::VectorXd z(factor.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  return mean + factor * z;
}

PatientModel::PatientModel(Gaussian joint, double regularization) : joint_(std::move(joint)) {
  const auto dim = joint_.mean.size();
  require(dim > 0 && dim % 2 == 0, ErrorCode::kInvalidInput,
          "patient model dimension must be even");
  require(joint_.cov.rows() == dim && joint_.cov.cols() == dim, ErrorCode::kInvalidInput,
          "patient model covariance has the wrong shape");
  require(all_finite(joint_.mean) && all_finite(joint_.cov), ErrorCode::kInvalidInput,
          "patient model parameters not finite");
  d_ = dim / 2;

  const Eigen::MatrixXd s11 = joint_.cov.topLeftCorner(d_, d_);
  const Eigen::MatrixXd s12 = joint_.cov.topRightCorner(d_, d_);
  const Eigen::MatrixXd s21 = joint_.cov.bottomLeftCorner(d_, d_);
  const Eigen::MatrixXd s22 = joint_.cov.bottomRightCorner(d_, d_);
  marginal_factor_ = sampling_factor(s11);

  Eigen::LLT<Eigen::MatrixXd> llt(s11);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-12) {
    llt.compute(s11 + regularization * Eigen::MatrixXd::Identity(d_, d_));
  }
  require(llt.info() == Eigen::Success && llt.rcond() > 0.0, ErrorCode::kDegenerateModel,
          "current-step covariance block is not invertible after regularization");
  gain_ = llt.solve(s12).transpose();
  cond_cov_ = s22 - gain_ * s12;
  cond_cov_ = 0.5 * (cond_cov_ + cond_cov_.transpose());
  cond_factor_ = sampling_factor(cond_cov_);
}

VitalVector PatientModel::initial_state(Rng& rng) const {
  return sample_gaussian(joint_.mean.head(d_), marginal_factor_, rng);
}

VitalVector PatientModel::conditional_mean(const VitalVector& current) const {
  require(current.size() == d_, ErrorCode::kInvalidInput, "current state has the wrong dimension");
  return joint_.mean.tail(d_) + gain_ * (current - joint_.mean.head(d_));
}

VitalVector PatientModel::conditional_next(const VitalVector& current, Rng& rng) const {
  return sample_gaussian(conditional_mean(current), cond_factor_, rng);
}

Gaussian blend_components(const Mixture& mixture, std::size_t primary, std::size_t secondary,
                          double w) {
  require(primary < mixture.size() && secondary < mixture.size(), ErrorCode::kInvalidInput,
          "component index out of range");
  const auto& a = mixture.components[primary];
  const auto& b = mixture.components[secondary];
  return {(1.0 - w) * a.mean + w * b.mean, (1.0 - w) * a.cov + w * b.cov};
}

PatientModel sample_patient(const Mixture& mixture, Rng& rng, double max_blend,
                            double regularization) {
  double u = rng.uniform();
  std::size_t primary = mixture.size() - 1;
  for (std::size_t j = 0; j < mixture.size(); ++j) {
    u -= mixture.weights[j];
    if (u < 0.0) {
      primary = j;
      break;
    }
  }
  const std::size_t secondary = rng.index(mixture.size());
  const double w = rng.uniform(0.0, max_blend);
  return PatientModel(blend_components(mixture, primary, secondary, w), regularization);
}

void write_mixture(const Mixture& mixture, std::ostream& out) {
  mixture.validate();
  const auto dim = mixture.dim();
  out.precision(17);
  out << kMixtureMagic << " " << kMixtureVersion << "\n";
  out << "components " << mixture.size() << "\n";
  out << "dim " << dim << "\n";
  for (std::size_t j = 0; j < mixture.size(); ++j) {
    const auto& c = mixture.components[j];
    out << "weight " << mixture.weights[j] << "\n";
    out << "mean";
    for (Eigen::Index i = 0; i < dim; ++i) out << " " << c.mean[i];
    out << "\ncov";
    for (Eigen::Index r = 0; r < dim; ++r) {
      for (Eigen::Index col = 0; col < dim; ++col) out << " " << c.cov(r, col);
    }
    out << "\n";
  }
}

Mixture read_mixture(std::istream& in) {
  expect_token(in, kMixtureMagic);
  int version = 0;
  in >> version;
  require(static_cast<bool>(in) && version == kMixtureVersion, ErrorCode::kParse,
          "unsupported mixture file version");
  expect_token(in, "components");
  std::size_t k = 0;
  in >> k;
  expect_token(in, "dim");
  Eigen::Index dim = 0;
  in >> dim;
  require(static_cast<bool>(in) && k > 0 && dim > 0, ErrorCode::kParse,
          "mixture file: bad header");
  Mixture m;
  for (std::size_t j = 0; j < k; ++j) {
    expect_token(in, "weight");
    m.weights.push_back(read_number(in));
    Gaussian g{Eigen::VectorXd(dim), Eigen::MatrixXd(dim, dim)};
    expect_token(in, "mean");
    for (Eigen::Index i = 0; i < dim; ++i) g.mean[i] = read_number(in);
    expect_token(in, "cov");
    for (Eigen::Index r = 0; r < dim; ++r) {
      for (Eigen::Index c = 0; c < dim; ++c) g.cov(r, c) = read_number(in);
    }
    m.components.push_back(std::move(g));
  }
  m.validate();
  return m;
}

}  // namespace vitalloc
