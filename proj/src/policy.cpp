#include "vitalloc/policy.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "vitalloc/error.hpp"

namespace vitalloc {
namespace {

constexpr const char* kCheckpointMagic = "vitalloc-policy";
constexpr int kCheckpointVersion = 1;

Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double peak = logits.col(j).maxCoeff();
    const Eigen::VectorXd e = (logits.col(j).array() - peak).exp();
    out.col(j) = e / e.sum();
  }
  return out;
}

void write_network(const std::string& name, const Mlp& net, std::ostream& out) {
  out << "network " << name << " " << net.layers().size() << "\n";
  for (const auto& l : net.layers()) {
    out << "layer " << l.weight.rows() << " " << l.weight.cols() << "\n";
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out << (c ? " " : "") << l.weight(r, c);
      out << "\n";
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) out << (r ? " " : "") << l.bias[r];
    out << "\n";
  }
}

void expect(std::istream& in, const std::string& token) {
  std::string got;
  in >> got;
  require(static_cast<bool>(in) && got == token, ErrorCode::kParse,
          "checkpoint: expected '" + token + "', found '" + got + "'");
}

Mlp read_network(const std::string& name, std::istream& in) {
  expect(in, "network");
  expect(in, name);
  std::size_t count = 0;
  in >> count;
  require(static_cast<bool>(in) && count > 0, ErrorCode::kParse, "checkpoint: bad layer count");
  Mlp net;
  for (std::size_t i = 0; i < count; ++i) {
    expect(in, "layer");
    Eigen::Index rows = 0, cols = 0;
    in >> rows >> cols;
    require(static_cast<bool>(in) && rows > 0 && cols > 0, ErrorCode::kParse,
            "checkpoint: bad layer shape");
    DenseLayer l{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) in >> l.weight(r, c);
    }
    for (Eigen::Index r = 0; r < rows; ++r) in >> l.bias[r];
    require(static_cast<bool>(in), ErrorCode::kParse, "checkpoint: truncated layer data");
    if (!net.layers().empty()) {
      require(net.layers().back().weight.rows() == cols, ErrorCode::kParse,
              "checkpoint: layer shapes do not chain");
    }
    net.layers().push_back(std::move(l));
  }
  return net;
}

}  // namespace

Mlp::Mlp(const std::vector<int>& sizes, Rng& rng, double output_gain) {
  require(sizes.size() >= 2, ErrorCode::kInvalidInput, "network needs input and output sizes");
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const int in = sizes[i];
    const int out = sizes[i + 1];
    require(in > 0 && out > 0, ErrorCode::kInvalidInput, "layer sizes must be positive");
    const double limit = std::sqrt(6.0 / (in + out));
    const double gain = i + 2 == sizes.size() ? output_gain : 1.0;
    DenseLayer l{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    for (Eigen::Index r = 0; r < out; ++r) {
      for (Eigen::Index c = 0; c < in; ++c) l.weight(r, c) = gain * rng.uniform(-limit, limit);
    }
    layers_.push_back(std::move(l));
  }
}

int Mlp::input_size() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols());
}
int Mlp::output_size() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows());
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input) const {
  Tape tape;
  return forward(input, tape);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input, Tape& tape) const {
  require(input.rows() == input_size(), ErrorCode::kInvalidInput,
          "network input has " + std::to_string(input.rows()) + " features, expected " +
              std::to_string(input_size()));
  tape.activations.clear();
  tape.activations.push_back(input);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Eigen::MatrixXd z = layers_[i].weight * tape.activations.back();
    z.colwise() += layers_[i].bias;
    if (i + 1 < layers_.size()) z = z.array().tanh().matrix();
    tape.activations.push_back(std::move(z));
  }
  return tape.activations.back();
}

MlpGrad Mlp::backward(const Tape& tape, const Eigen::MatrixXd& grad_output) const {
  MlpGrad grad(layers_.size());
  Eigen::MatrixXd delta = grad_output;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const Eigen::MatrixXd& in = tape.activations[i];
    grad[i].weight = delta * in.transpose();
    grad[i].bias = delta.rowwise().sum();
    if (i > 0) {
      delta = (layers_[i].weight.transpose() * delta).cwiseProduct(
          (1.0 - in.array().square()).matrix());
    }
  }
  return grad;
}

Eigen::Index Mlp::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

Eigen::VectorXd Mlp::flatten(const MlpGrad& grad) {
  Eigen::Index n = 0;
  for (const auto& l : grad) n += l.weight.size() + l.bias.size();
  Eigen::VectorXd flat(n);
  Eigen::Index at = 0;
  for (const auto& l : grad) {
    flat.segment(at, l.weight.size()) = l.weight.reshaped();
    at += l.weight.size();
    flat.segment(at, l.bias.size()) = l.bias;
    at += l.bias.size();
  }
  return flat;
}

Eigen::VectorXd Mlp::flatten() const { return flatten(layers_); }

void Mlp::assign(const Eigen::VectorXd& flat) {
  require(flat.size() == parameter_count(), ErrorCode::kInvalidInput,
          "parameter vector has the wrong length");
  Eigen::Index at = 0;
  for (auto& l : layers_) {
    l.weight.reshaped() = flat.segment(at, l.weight.size());
    at += l.weight.size();
    l.bias = flat.segment(at, l.bias.size());
    at += l.bias.size();
  }
}

void PpoConfig::validate() const {
  require(hidden_layers >= 0 && hidden_units >= 1, ErrorCode::kInvalidInput,
          "bad network shape");
  require(clip > 0.0, ErrorCode::kInvalidInput, "clip must be > 0");
  require(entropy_start >= 0.0 && entropy_end >= 0.0, ErrorCode::kInvalidInput,
          "entropy coefficients must be >= 0");
  require(actor_lr > 0.0 && critic_lr > 0.0, ErrorCode::kInvalidInput,
          "learning rates must be > 0");
  require(trains_per_epoch >= 1, ErrorCode::kInvalidInput, "trains_per_epoch must be >= 1");
  require(gamma > 0.0 && gamma <= 1.0, ErrorCode::kInvalidInput, "gamma must be in (0, 1]");
}

double entropy_coefficient(const PpoConfig& cfg, int epoch, int n_epochs) {
  if (n_epochs <= 1) return cfg.entropy_start;
  const double frac = static_cast<double>(std::clamp(epoch, 1, n_epochs) - 1) / (n_epochs - 1);
  return cfg.entropy_start + (cfg.entropy_end - cfg.entropy_start) * frac;
}

void EpisodeBuffer::finalize(double gamma) {
  std::map<ArmId, std::vector<std::size_t>> by_arm;
  for (std::size_t i = 0; i < records_.size(); ++i) by_arm[records_[i].arm].push_back(i);
  for (auto& [arm, idx] : by_arm) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return records_[a].step < records_[b].step;
    });
    double g = 0.0;
    for (auto it = idx.rbegin(); it != idx.rend(); ++it) {
      g = records_[*it].reward + gamma * g;
      records_[*it].return_to_go = g;
    }
  }
}

Batch make_batch(const EpisodeBuffer& buffer) {
  const auto& recs = buffer.records();
  require(!recs.empty(), ErrorCode::kInvalidInput, "empty buffer");
  const auto n = static_cast<Eigen::Index>(recs.size());
  Batch b;
  b.states.resize(recs.front().state.size(), n);
  b.actions.resize(recs.size());
  b.old_prob.resize(n);
  b.returns.resize(n);
  b.advantages = Eigen::VectorXd::Zero(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& r = recs[static_cast<std::size_t>(j)];
    b.states.col(j) = r.state;
    b.actions[static_cast<std::size_t>(j)] = r.action;
    b.old_prob[j] = r.old_prob;
    b.returns[j] = r.return_to_go;
  }
  return b;
}

Eigen::MatrixXd action_probabilities(const Mlp& actor, const Eigen::MatrixXd& states) {
  return softmax_columns(actor.forward(states));
}

LossAndGrad actor_loss(const Mlp& actor, const Batch& batch, double clip, double entropy_coeff) {
  const auto n = batch.size();
  require(n > 0, ErrorCode::kInvalidInput, "empty batch");
  Mlp::Tape tape;
  const Eigen::MatrixXd logits = actor.forward(batch.states, tape);
  const Eigen::MatrixXd p = softmax_columns(logits);
  Eigen::MatrixXd grad_logits(p.rows(), n);

  double surrogate = 0.0;
  double entropy = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const int a = batch.actions[static_cast<std::size_t>(j)];
    const double adv = batch.advantages[j];
    const double ratio = p(a, j) / batch.old_prob[j];
    const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
    const double unclipped_obj = ratio * adv;
    const double clipped_obj = clipped * adv;
    surrogate += std::min(unclipped_obj, clipped_obj);
    // d objective / d ratio; zero where the clamped branch is the minimum.
    const double d_ratio = unclipped_obj <= clipped_obj ? adv : 0.0;

    double h = 0.0;
    for (Eigen::Index k = 0; k < p.rows(); ++k) {
      if (p(k, j) > 0.0) h -= p(k, j) * std::log(p(k, j));
    }
    entropy += h;
    for (Eigen::Index k = 0; k < p.rows(); ++k) {
      const double onehot = k == a ? 1.0 : 0.0;
      const double d_obj = d_ratio * ratio * (onehot - p(k, j));
      const double log_p = p(k, j) > 0.0 ? std::log(p(k, j)) : 0.0;
      const double d_entropy = -p(k, j) * (log_p + h);
      grad_logits(k, j) = -inv_n * d_obj - entropy_coeff * inv_n * d_entropy;
    }
  }
  LossAndGrad out;
  out.mean_entropy = entropy * inv_n;
  out.loss = -surrogate * inv_n - entropy_coeff * out.mean_entropy;
  out.grad = actor.backward(tape, grad_logits);
  return out;
}

LossAndGrad critic_loss(const Mlp& critic, const Batch& batch) {
  const auto n = batch.size();
  require(n > 0, ErrorCode::kInvalidInput, "empty batch");
  Mlp::Tape tape;
  const Eigen::RowVectorXd values = critic.forward(batch.states, tape).row(0);
  const Eigen::RowVectorXd err = values - batch.returns.transpose();
  LossAndGrad out;
  out.loss = err.squaredNorm() / static_cast<double>(n);
  const Eigen::MatrixXd grad = (2.0 / static_cast<double>(n)) * err;
  out.grad = critic.backward(tape, grad);
  return out;
}

ActorCritic::ActorCritic(int state_dim, const PpoConfig& cfg, Rng& rng) {
  std::vector<int> sizes{state_dim};
  for (int i = 0; i < cfg.hidden_layers; ++i) sizes.push_back(cfg.hidden_units);
  auto actor_sizes = sizes;
  actor_sizes.push_back(2);
  auto critic_sizes = sizes;
  critic_sizes.push_back(1);
  Rng actor_rng = rng.derive("actor-init");
  Rng critic_rng = rng.derive("critic-init");
  actor_ = Mlp(actor_sizes, actor_rng, 0.01);
  critic_ = Mlp(critic_sizes, critic_rng, 1.0);
}

Eigen::Vector2d ActorCritic::actor_forward(const ArmState& state) const {
  const Eigen::MatrixXd p = action_probabilities(actor_, state);
  require(p.allFinite(), ErrorCode::kNumericFailure, "actor produced non-finite probabilities");
  return p.col(0);
}

double ActorCritic::value(const ArmState& state) const {
  const double v = critic_.forward(state)(0, 0);
  require(std::isfinite(v), ErrorCode::kNumericFailure, "critic produced a non-finite value");
  return v;
}

Eigen::MatrixXd stack_states(const std::vector<ArmState>& states) {
  if (states.empty()) return {};
  Eigen::MatrixXd m(states.front().size(), static_cast<Eigen::Index>(states.size()));
  for (std::size_t j = 0; j < states.size(); ++j) m.col(static_cast<Eigen::Index>(j)) = states[j];
  return m;
}

std::vector<int> select_actions(const ActorCritic& policy, const AllocationMask& mask,
                                const std::vector<ArmState>& states, int budget) {
  if (mask.arms.empty()) return {};
  const Eigen::MatrixXd p = action_probabilities(policy.actor(), stack_states(states));
  require(p.allFinite(), ErrorCode::kNumericFailure, "actor produced non-finite probabilities");
  std::vector<double> priority(mask.arms.size());
  for (std::size_t j = 0; j < priority.size(); ++j) priority[j] = p(1, static_cast<Eigen::Index>(j));
  return allocate_by_priority(mask, priority, budget);
}

Eigen::VectorXd compute_advantages(const EpisodeBuffer& buffer, const Mlp& critic,
                                   bool normalize) {
  const Batch b = make_batch(buffer);
  Eigen::VectorXd adv = b.returns - critic.forward(b.states).row(0).transpose();
  if (normalize && adv.size() > 1) {
    const double mean = adv.mean();
    const double sd = std::sqrt((adv.array() - mean).square().mean());
    adv.array() -= mean;
    if (sd > 1e-12) adv /= sd;
  }
  return adv;
}

PpoLearner::PpoLearner(int state_dim, PpoConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  policy_ = ActorCritic(state_dim, cfg_, rng);
}

PpoLearner::PpoLearner(ActorCritic policy, PpoConfig cfg)
    : cfg_(std::move(cfg)), policy_(std::move(policy)) {
  cfg_.validate();
}

EpisodeResult PpoLearner::collect(Instance& instance, EpisodeBuffer& buffer, Rng& rng) const {
  Eigen::MatrixXd probs;  // of the current step, shared by allocator and observer
  const int budget = instance.config().budget;
  auto allocate = [&](const AllocationMask& mask, const std::vector<ArmState>& states) {
    if (mask.arms.empty()) {
      probs.resize(2, 0);
      return std::vector<int>{};
    }
    probs = action_probabilities(policy_.actor(), stack_states(states));
    require(probs.allFinite(), ErrorCode::kNumericFailure,
            "actor produced non-finite probabilities");
    std::vector<double> priority(mask.arms.size());
    for (std::size_t j = 0; j < priority.size(); ++j) {
      const double p1 = probs(1, static_cast<Eigen::Index>(j));
      priority[j] = cfg_.stochastic_ranking ? std::log(rng.uniform()) / std::max(p1, 1e-300) : p1;
    }
    return allocate_by_priority(mask, priority, budget);
  };
  auto observe = [&](const AllocationMask& mask, const std::vector<ArmStep>& steps) {
    for (std::size_t j = 0; j < steps.size(); ++j) {
      const auto& s = steps[j];
      buffer.add({s.arm, mask.step, s.state, s.action, s.reward, instance.state(s.arm),
                  probs(s.action, static_cast<Eigen::Index>(j)), s.slot, 0.0});
    }
  };
  return run_episode(instance, allocate, Enforcement::kAll, false, observe);
}

void PpoLearner::step(Mlp& net, const MlpGrad& grad, double lr, AdamState& state) {
  const Eigen::VectorXd g = Mlp::flatten(grad);
  Eigen::VectorXd theta = net.flatten();
  if (cfg_.optimizer == Optimizer::kSgd) {
    theta -= lr * g;
  } else {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    if (state.m.size() != g.size()) {
      state.m = Eigen::VectorXd::Zero(g.size());
      state.v = Eigen::VectorXd::Zero(g.size());
    }
    ++state.t;
    state.m = kBeta1 * state.m + (1.0 - kBeta1) * g;
    state.v = kBeta2 * state.v + (1.0 - kBeta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.t));
    theta.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + kEps);
  }
  net.assign(theta);
}

UpdateStats PpoLearner::update(EpisodeBuffer& buffer, int epoch, int n_epochs) {
  require(!buffer.empty(), ErrorCode::kInvalidInput, "cannot update from an empty buffer");
  buffer.finalize(cfg_.gamma);
  Batch batch = make_batch(buffer);
  batch.advantages = compute_advantages(buffer, policy_.critic(), cfg_.normalize_advantages);

  UpdateStats stats;
  stats.entropy_coeff = entropy_coefficient(cfg_, epoch, n_epochs);
  for (int k = 0; k < cfg_.trains_per_epoch; ++k) {
    const auto a = actor_loss(policy_.actor(), batch, cfg_.clip, stats.entropy_coeff);
    const auto c = critic_loss(policy_.critic(), batch);
    if (!std::isfinite(a.loss) || !std::isfinite(c.loss)) {
      std::ostringstream diag;
      diag << "epoch " << epoch << " step " << k << ": actor loss " << a.loss << ", critic loss "
           << c.loss << ", buffer size " << buffer.size() << ", return range ["
           << batch.returns.minCoeff() << ", " << batch.returns.maxCoeff() << "]";
      throw Error(ErrorCode::kNumericFailure, diag.str());
    }
    step(policy_.actor(), a.grad, cfg_.actor_lr, actor_opt_);
    step(policy_.critic(), c.grad, cfg_.critic_lr, critic_opt_);
    stats.actor_loss = a.loss;
    stats.critic_loss = c.loss;
    stats.entropy = a.mean_entropy;
  }
  return stats;
}

void write_checkpoint(const ActorCritic& policy, std::ostream& out) {
  out.precision(17);
  out << kCheckpointMagic << " " << kCheckpointVersion << "\n";
  write_network("actor", policy.actor(), out);
  write_network("critic", policy.critic(), out);
}

ActorCritic read_checkpoint(std::istream& in) {
  expect(in, kCheckpointMagic);
  int version = 0;
  in >> version;
  require(static_cast<bool>(in) && version == kCheckpointVersion, ErrorCode::kParse,
          "unsupported checkpoint version");
  Mlp actor = read_network("actor", in);
  Mlp critic = read_network("critic", in);
  require(actor.output_size() == 2 && critic.output_size() == 1 &&
              actor.input_size() == critic.input_size(),
          ErrorCode::kParse, "checkpoint networks have incompatible shapes");
  return ActorCritic(std::move(actor), std::move(critic));
}

}  // namespace vitalloc
