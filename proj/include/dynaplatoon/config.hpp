#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dynaplatoon/adaptive_model.hpp"
#include "dynaplatoon/micro_env.hpp"
#include "dynaplatoon/qlearn.hpp"

namespace dynaplatoon {

struct FilterConfig {
  double initial_speed = 15.0;
  double wide_density = 0.4;           // veh/m, 20 veh per 50 m cell
  double narrow_fraction = 2.0 / 3.0;  // two-lane segments start at this share of wide_density
  adaptive::FilterBounds bounds;
  bool platoon_speed_cap = true;
  double capacity_factor = 1.0;
};

struct NetworkConfig {
  std::vector<std::size_t> hidden{64, 64};
  double density_scale = 0.4;
};

enum class Algorithm { dyna, dqn };

struct TrainConfig {
  Algorithm algorithm = Algorithm::dyna;
  std::size_t episodes = 1000000;  // M; training also stops at total_steps
  std::size_t total_steps = 200000;
  std::size_t planning_steps = 5;  // N
  std::size_t sync_period = 500;   // C
  double gamma = 0.99;
  qlearn::AdamParams adam;
  std::size_t batch_size = 64;
  std::size_t replay_capacity = 300000;
  qlearn::EpsSchedule schedule;
  double reward_scale = 0.01;
  std::uint64_t seed = 1;
};

struct OutputConfig {
  std::string dir = "runs/default";
  bool density_series = true;
  bool trajectory_log = false;
};

struct RunConfig {
  micro::EnvConfig env;
  FilterConfig filter;
  NetworkConfig network;
  TrainConfig train;
  OutputConfig output;

  /// The road, vehicles, discretisation and learner settings of the reference experiment.
  static RunConfig full_scale();
  /// 400 m controlled corridor with 8 cells for runs that finish in minutes.
  static RunConfig desk_scale();

  /// Cross-field checks; throws ConfigError. Also refreshes derived fields.
  void validate();

  macro::RoadGeometry geometry() const { return env.geometry(); }
  /// Speed box clipped so every filter-implied diagram keeps 2 V dt <= dx.
  adaptive::FilterBounds effective_bounds() const;
  std::vector<double> initial_densities() const;
  adaptive::ModelState initial_model() const;
  adaptive::WorldModelParams world_model() const;
  qlearn::Normalizer normalizer() const;
  mdp::ActionSet actions() const { return {env.accel_min, env.accel_max}; }
  std::vector<std::size_t> layer_sizes() const;

  bool operator==(const RunConfig& o) const;
};

/// Parses the sectioned "key = value" format. Unknown sections or keys, malformed values and
/// failed validation raise ConfigError with the source name and line number.
RunConfig parse_config(std::string_view text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& cfg);

}  // namespace dynaplatoon
