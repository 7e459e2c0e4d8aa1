#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <deque>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "damq/fingerprint.hpp"

namespace damq {

class ShapeMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class EmptyBatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Network input: a fingerprint plus the number of steps left in the episode.
// The fingerprint is kept as its on bits; the network input vector is
// [bit_0 .. bit_{n-1}, steps_remaining].
struct Features {
  std::vector<std::uint16_t> bits;  // ascending
  double steps_remaining = 0.0;

  friend bool operator==(const Features&, const Features&) = default;
};

Features make_features(const Fingerprint& fp, int steps_remaining);

struct Layer {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;  // out
};

// Dense ReLU network with one linear output. Also used as the gradient type.
struct ModelParams {
  std::vector<Layer> layers;

  // Layer widths from input to output, e.g. {2049, 1024, 512, 128, 32, 1}.
  static ModelParams zeros(const std::vector<int>& sizes);
  // He-uniform weights, zero biases.
  static ModelParams random(const std::vector<int>& sizes, std::mt19937_64& rng);

  std::vector<int> sizes() const;
  int input_size() const { return layers.empty() ? 0 : static_cast<int>(layers.front().w.cols()); }
  std::size_t parameter_count() const;
  bool same_shape(const ModelParams& other) const;
  bool all_finite() const;

  // Weights of each layer row by row, then its biases.
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);

  ModelParams& operator+=(const ModelParams& other);
  ModelParams& operator*=(double s);
  friend bool operator==(const ModelParams& x, const ModelParams& y);
};

inline const std::vector<int> kDefaultLayerSizes{2049, 1024, 512, 128, 32, 1};

double q_value(const ModelParams& params, const Features& x);
// One Q value per input.
Eigen::VectorXd q_values(const ModelParams& params, std::span<const Features> xs);

struct Transition {
  Features result;  // the chosen successor and the steps left after taking it
  double reward = 0.0;
  std::vector<Features> successors;  // the next state's candidates; unused when terminal
  bool terminal = false;
};

double huber(double residual, double delta = 1.0);

// TD targets: r if terminal, else r + discount * max_s' Q_target(s').
std::vector<double> td_targets(const ModelParams& target, std::span<const Transition* const> batch, double discount);

struct LossAndGradient {
  double loss = 0.0;  // mean Huber loss over the batch
  ModelParams gradient;
};

// Mean Huber loss between Q(params, result) and `targets`, and its gradient
// with respect to params. Throws EmptyBatch or ShapeMismatch.
LossAndGradient loss_and_gradient(const ModelParams& params, std::span<const Transition* const> batch,
                                  std::span<const double> targets, double huber_delta = 1.0);

class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ModelParams& params, const ModelParams& grad, double lr);
  long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  ModelParams m_, v_;
};

// One optimizer step on `batch`; returns the loss before the update.
double train_step(ModelParams& params, const ModelParams& target, Adam& adam, std::span<const Transition* const> batch,
                  double lr = 1e-4, double discount = 1.0);

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 4000) : capacity_(capacity) {}
  void push(Transition t);
  // Uniform without replacement; min(n, size()) transitions.
  std::vector<const Transition*> sample(std::size_t n, std::mt19937_64& rng) const;
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::deque<Transition>& items() const { return items_; }

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

struct EpsilonSchedule {
  double initial = 1.0;
  double decay = 0.999;
  double floor = 0.01;

  // initial * decay^episode, not below floor.
  double at(int episode) const;
};

// Index of the chosen candidate. With probability epsilon a uniform choice;
// otherwise the highest Q, ties going to the lowest index (candidates are
// sorted by canonical SMILES). Consumes one uniform draw, plus one index draw
// when exploring.
std::size_t select_action(const ModelParams& params, std::span<const Features> candidates, double epsilon,
                          std::mt19937_64& rng);

// Keeps at most `cap` candidates, chosen uniformly, in their original order.
std::vector<Features> cap_successors(std::vector<Features> candidates, std::size_t cap, std::mt19937_64& rng);

// Binary checkpoint: "DAMQ1", u32 layer count, u32 layer widths (input
// first), little-endian f64 parameters in flatten() order, then the u64
// FNV-1a checksum of everything before it.
std::string encode_params(const ModelParams& params);
ModelParams decode_params(std::string_view bytes);  // throws CheckpointError
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);
// Checksum field of encode_params(params).
std::uint64_t params_checksum(const ModelParams& params);

struct AgentConfig {
  std::vector<int> layer_sizes = kDefaultLayerSizes;
  double lr = 1e-4;
  double discount = 1.0;
  std::size_t replay_capacity = 4000;
  std::size_t batch_cap = 128;
  std::size_t max_successors = 256;
};

// Online and target networks, optimizer state and replay buffer of one worker.
class Agent {
 public:
  Agent(const AgentConfig& cfg, std::uint64_t seed);
  Agent(const AgentConfig& cfg, ModelParams initial);

  const AgentConfig& config() const { return cfg_; }
  const ModelParams& params() const { return online_; }
  const ModelParams& target() const { return target_; }
  const ReplayBuffer& buffer() const { return buffer_; }

  // Stores a transition, subsampling its successors to max_successors.
  void remember(Transition t, std::mt19937_64& rng);

  std::size_t select(std::span<const Features> candidates, double epsilon, std::mt19937_64& rng) const {
    return select_action(online_, candidates, epsilon, rng);
  }

  // Loss and gradient on min(batch_cap, buffer size) sampled transitions; a
  // zero gradient and loss 0 when the buffer is empty.
  LossAndGradient compute_gradient(std::mt19937_64& rng);
  void apply_gradient(const ModelParams& grad);
  void set_params(ModelParams params);
  void sync_target();

 private:
  double max_target_q(const Transition& t);

  AgentConfig cfg_;
  ModelParams online_, target_;
  Adam adam_;
  ReplayBuffer buffer_;
  // Targets depend only on the target network, so they are memoized per
  // transition until the next sync_target or push.
  std::unordered_map<const Transition*, double> target_memo_;
};

}  // namespace damq
