#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "dynaplatoon/mdp.hpp"
#include "dynaplatoon/random.hpp"

namespace dynaplatoon::qlearn {

struct Transition {
  mdp::StateVec s;
  std::size_t action = 0;
  double reward = 0.0;
  mdp::StateVec next;
  bool done = false;
  std::size_t step = 0;  // control step of s within its episode
};

/// Fully connected network, rectifier on hidden layers and identity on the output layer.
class QNetwork {
public:
  /// Layer widths from input to output; parameters start at zero.
  explicit QNetwork(std::vector<std::size_t> sizes);

  /// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  void init_uniform(Engine& rng);

  const std::vector<std::size_t>& sizes() const { return sizes_; }
  std::size_t input_size() const { return sizes_.front(); }
  std::size_t output_size() const { return sizes_.back(); }
  std::size_t layer_count() const { return weights_.size(); }

  Eigen::MatrixXd& weight(std::size_t layer) { return weights_[layer]; }
  const Eigen::MatrixXd& weight(std::size_t layer) const { return weights_[layer]; }
  Eigen::VectorXd& bias(std::size_t layer) { return biases_[layer]; }
  const Eigen::VectorXd& bias(std::size_t layer) const { return biases_[layer]; }

  /// Columns of `inputs` are samples; returns one column of Q-values per sample.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs) const;
  Eigen::VectorXd forward(const Eigen::VectorXd& input) const;

  bool all_finite() const;
  bool operator==(const QNetwork& o) const;

  void save(const std::filesystem::path& path) const;
  /// Throws InputError on unreadable or malformed files.
  static QNetwork load(const std::filesystem::path& path);

private:
  std::vector<std::size_t> sizes_;
  std::vector<Eigen::MatrixXd> weights_;  // out x in
  std::vector<Eigen::VectorXd> biases_;
};

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

/// Mean over samples of (Q(s_j, a_j) - y_j)^2; fills `grad` with its parameter gradient.
double squared_td_loss(const QNetwork& net, const Eigen::MatrixXd& inputs,
                       std::span<const std::size_t> actions, const Eigen::VectorXd& targets,
                       Gradients* grad = nullptr);

struct AdamParams {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
public:
  Adam(const QNetwork& net, AdamParams params);
  void step(QNetwork& net, const Gradients& grad);
  std::size_t steps() const { return t_; }

private:
  AdamParams params_;
  std::size_t t_ = 0;
  Gradients m_;
  Gradients v_;
};

/// Scales raw physical state entries to order one before they reach the network.
struct Normalizer {
  double position_scale = 800.0;
  double speed_scale = 15.0;
  double density_scale = 0.4;

  void apply(const mdp::StateVec& s, Eigen::Ref<Eigen::VectorXd> out) const;
  Eigen::VectorXd apply(const mdp::StateVec& s) const;
  Eigen::MatrixXd apply_batch(std::span<const mdp::StateVec* const> states) const;
};

struct TdParams {
  double gamma = 0.99;
  double reward_scale = 1.0;
};

/// One Adam step on the mean squared TD error of `batch`. Targets come from `target` and are
/// r * reward_scale for terminal transitions. Throws TrainingError on a non-finite loss.
double td_update(QNetwork& net, const QNetwork& target, std::span<const Transition> batch,
                 const Normalizer& normalizer, const TdParams& params, Adam& optimizer);

/// Hard copy of all parameters.
void sync_target(const QNetwork& net, QNetwork& target);

/// FIFO ring of transitions; the oldest record is overwritten once full.
class ReplayMemory {
public:
  explicit ReplayMemory(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// i-th oldest stored transition.
  const Transition& at(std::size_t i) const;

  /// Uniform sampling with replacement; StateError if fewer than n records are stored.
  std::vector<std::size_t> sample_indices(std::size_t n, Engine& rng) const;
  std::vector<Transition> sample(std::size_t n, Engine& rng) const;

private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // slot of the oldest record once full
  std::vector<Transition> data_;
};

/// Greedy probability rising linearly from 0 to `max_greedy` over `ramp_steps`, then held.
struct EpsSchedule {
  double max_greedy = 0.95;
  std::size_t ramp_steps = 20000;

  double greedy_prob(std::size_t step) const;
};

/// Lowest index among the maximal entries.
std::size_t argmax(std::span<const double> q);

/// With probability greedy_prob the argmax, otherwise a uniformly random index.
std::size_t epsilon_greedy(std::span<const double> q, double greedy_prob, Engine& rng);

}  // namespace dynaplatoon::qlearn
