#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "dynaplatoon/adaptive_model.hpp"
#include "dynaplatoon/config.hpp"
#include "dynaplatoon/mdp.hpp"
#include "dynaplatoon/qlearn.hpp"

namespace dynaplatoon::dyna {

struct EpisodeRecord {
  std::size_t episode = 0;
  std::uint64_t env_seed = 0;
  std::size_t steps = 0;
  std::size_t env_step_end = 0;  // cumulative env steps when the episode closed
  mdp::RewardBreakdown reward;   // sums over the episode
  double fuel_l = 0.0;
  bool finished = false;
  bool timed_out = false;
  bool truncated = false;  // cut by the total step budget
  double greedy_prob = 0.0;
  double mean_loss = 0.0;
  std::optional<double> mean_density_err;  // veh/cell, model-based runs only
  std::optional<double> mean_speed_err;    // m/s
  std::size_t real_updates = 0;
  std::size_t virtual_updates = 0;
};

struct RunMetrics {
  std::vector<EpisodeRecord> episodes;
  std::vector<double> fuel_rate;    // L/s per env step
  std::vector<double> density_err;  // per env step, model-based runs only
  std::vector<double> speed_err;
  std::size_t env_steps = 0;
  std::size_t transitions = 0;
  std::size_t real_updates = 0;
  std::size_t virtual_updates = 0;
  std::size_t target_syncs = 0;
  /// env_step_end of the first episode without a timeout.
  std::optional<std::size_t> first_success_step;
  double wall_seconds = 0.0;
};

struct TrainResult {
  RunMetrics metrics;
  qlearn::QNetwork net;
  adaptive::ModelState model;
};

/// Runs Dyna-Q (train.algorithm = dyna) or the plain DQN loop. With `out_dir` set, writes
/// config.conf, metrics.jsonl, fuel.csv, density.csv, errors.csv (dyna) and the checkpoints
/// qnet.txt / filters.txt at every episode boundary.
TrainResult train(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir = std::nullopt);

TrainResult train_dqn(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir);
TrainResult train_dyna(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir);

/// Seed of the simulator for training episode `episode`.
std::uint64_t training_env_seed(std::uint64_t root, std::size_t episode);

struct EvalEpisode {
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  double fuel_l = 0.0;
  mdp::RewardBreakdown reward;
  bool finished = false;
  bool timed_out = false;
  std::vector<double> fuel_rate;
  std::vector<std::vector<double>> density;  // per step, veh/m per cell
};

/// Greedy rollouts, one episode per seed; `policy == nullptr` selects the Krauss controller.
std::vector<EvalEpisode> evaluate(const RunConfig& cfg, const qlearn::QNetwork* policy,
                                  std::span<const std::uint64_t> seeds,
                                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// eval.csv with one row per seed plus a mean row, and seed_<n>/fuel.csv, seed_<n>/density.csv.
void write_eval(const std::filesystem::path& dir, std::span<const EvalEpisode> episodes);

struct ErrorSeries {
  std::vector<double> density_err;  // veh/cell
  std::vector<double> speed_err;    // m/s
  double mean_density_err = 0.0;
  double mean_speed_err = 0.0;
  double relative_density_pct = 0.0;
  double relative_speed_pct = 0.0;
};

struct ValidationReport {
  ErrorSeries adapted;
  ErrorSeries frozen;
  double mean_observed_density = 0.0;  // veh/cell
  double mean_observed_speed = 0.0;
  std::size_t steps = 0;
};

/// One-step predictions from the true state against the next true state, for filters adapted
/// online and for the initial filters. Each seed drives `steps_per_seed` control steps over as
/// many episodes as needed, with a fresh model per seed.
ValidationReport validate_model(const RunConfig& cfg, std::span<const std::uint64_t> seeds,
                                std::size_t steps_per_seed, const qlearn::QNetwork* policy = nullptr);

/// errors.csv (step, density_err, speed_err, variant) and prediction_errors.csv.
void write_validation(const std::filesystem::path& dir, const ValidationReport& report);

}  // namespace dynaplatoon::dyna
