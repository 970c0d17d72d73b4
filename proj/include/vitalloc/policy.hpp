#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "vitalloc/env.hpp"
#include "vitalloc/rng.hpp"

namespace vitalloc {

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

using MlpGrad = std::vector<DenseLayer>;

// Fully connected network with tanh hidden layers and a linear output layer.
// Inputs and outputs are column-major batches (features x samples).
class Mlp {
 public:
  Mlp() = default;
  // Glorot-uniform hidden layers; the output layer is scaled by `output_gain`.
  Mlp(const std::vector<int>& sizes, Rng& rng, double output_gain = 1.0);

  struct Tape {
    std::vector<Eigen::MatrixXd> activations;  // input, hidden..., output
  };

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Tape& tape) const;
  // Gradient of a scalar loss given dLoss/dOutput for the taped batch.
  MlpGrad backward(const Tape& tape, const Eigen::MatrixXd& grad_output) const;

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  int input_size() const;
  int output_size() const;

  Eigen::Index parameter_count() const;
  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& flat);
  static Eigen::VectorXd flatten(const MlpGrad& grad);

 private:
  std::vector<DenseLayer> layers_;
};

enum class Optimizer { kSgd, kAdam };

struct PpoConfig {
  int hidden_layers = 2;
  int hidden_units = 16;
  double clip = 2.0;
  double entropy_start = 0.5;
  double entropy_end = 0.0;
  double actor_lr = 2e-3;
  double critic_lr = 2e-3;
  int trains_per_epoch = 20;
  double gamma = 0.9;
  bool normalize_advantages = true;
  Optimizer optimizer = Optimizer::kSgd;
  // Rank eligible arms by a draw weighted by theta(1|s) during training
  // instead of the deterministic top-k order.
  bool stochastic_ranking = false;

  void validate() const;
};

// Linear from entropy_start at epoch 1 to entropy_end at epoch n_epochs.
double entropy_coefficient(const PpoConfig& cfg, int epoch, int n_epochs);

struct BufferRecord {
  ArmId arm = 0;
  int step = 0;
  ArmState state;
  int action = 0;
  double reward = 0.0;
  ArmState next_state;
  double old_prob = 1.0;  // theta(action | state) at collection time
  Slot slot = Slot::kEligible;
  double return_to_go = 0.0;
};

class EpisodeBuffer {
 public:
  void add(BufferRecord record) { records_.push_back(std::move(record)); }
  // Per arm, in step order: G_t = r_t + gamma * G_{t+1}, zero after the last record.
  void finalize(double gamma);

  const std::vector<BufferRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  void clear() { records_.clear(); }

 private:
  std::vector<BufferRecord> records_;
};

// Dense view of a buffer used by the loss functions.
struct Batch {
  Eigen::MatrixXd states;  // 2d x n
  std::vector<int> actions;
  Eigen::VectorXd old_prob;
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;

  Eigen::Index size() const { return states.cols(); }
};

Batch make_batch(const EpisodeBuffer& buffer);

struct LossAndGrad {
  double loss = 0.0;
  double mean_entropy = 0.0;
  MlpGrad grad;
};

// -mean(min(r A, clip(r, 1 - eps, 1 + eps) A)) - c * mean(entropy)
LossAndGrad actor_loss(const Mlp& actor, const Batch& batch, double clip, double entropy_coeff);
// mean((V(s) - G)^2)
LossAndGrad critic_loss(const Mlp& critic, const Batch& batch);

// Column j holds (theta(0|s_j), theta(1|s_j)).
Eigen::MatrixXd action_probabilities(const Mlp& actor, const Eigen::MatrixXd& states);

class ActorCritic {
 public:
  ActorCritic() = default;
  ActorCritic(int state_dim, const PpoConfig& cfg, Rng& rng);
  ActorCritic(Mlp actor, Mlp critic) : actor_(std::move(actor)), critic_(std::move(critic)) {}

  Mlp& actor() { return actor_; }
  Mlp& critic() { return critic_; }
  const Mlp& actor() const { return actor_; }
  const Mlp& critic() const { return critic_; }
  int state_dim() const { return actor_.input_size(); }

  // (theta(0|s), theta(1|s)); throws kNumericFailure on non-finite output.
  Eigen::Vector2d actor_forward(const ArmState& state) const;
  double value(const ArmState& state) const;

 private:
  Mlp actor_;
  Mlp critic_;
};

Eigen::MatrixXd stack_states(const std::vector<ArmState>& states);

// Top-k by theta(1|s) over eligible arms after the forced ones are served.
std::vector<int> select_actions(const ActorCritic& policy, const AllocationMask& mask,
                                const std::vector<ArmState>& states, int budget);

// Return-to-go minus the critic's value, optionally standardized.
Eigen::VectorXd compute_advantages(const EpisodeBuffer& buffer, const Mlp& critic,
                                   bool normalize);

struct UpdateStats {
  double actor_loss = 0.0;   // at the last gradient step
  double critic_loss = 0.0;
  double entropy = 0.0;
  double entropy_coeff = 0.0;
};

// Owns the networks and optimizer state across epochs.
class PpoLearner {
 public:
  PpoLearner(int state_dim, PpoConfig cfg, std::uint64_t seed);
  PpoLearner(ActorCritic policy, PpoConfig cfg);

  const ActorCritic& policy() const { return policy_; }
  ActorCritic& policy() { return policy_; }
  const PpoConfig& config() const { return cfg_; }

  // Runs one episode on `instance`, filling a buffer with every present arm's
  // transitions.
  EpisodeResult collect(Instance& instance, EpisodeBuffer& buffer, Rng& rng) const;
  // trains_per_epoch full-batch gradient steps on both networks.
  UpdateStats update(EpisodeBuffer& buffer, int epoch, int n_epochs);

 private:
  struct AdamState {
    Eigen::VectorXd m, v;
    long long t = 0;
  };
  void step(Mlp& net, const MlpGrad& grad, double lr, AdamState& state);

  PpoConfig cfg_;
  ActorCritic policy_;
  AdamState actor_opt_, critic_opt_;
};

void write_checkpoint(const ActorCritic& policy, std::ostream& out);
ActorCritic read_checkpoint(std::istream& in);

}  // namespace vitalloc
