#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "dynaplatoon/macro_model.hpp"
#include "dynaplatoon/mdp.hpp"
#include "dynaplatoon/random.hpp"

namespace dynaplatoon::micro {

/// Krauss car-following constants.
struct KraussParams {
  double tau = 1.0;    // reaction time, s
  double decel = 5.0;  // comfortable deceleration b, m/s^2
  double sigma = 0.5;  // driver imperfection in [0, 1]
  double accel = 3.0;  // maximal acceleration, m/s^2
};

enum class Arrivals { periodic, poisson };

struct EnvConfig {
  double preheat_length = 200.0;
  double wide_length = 500.0;
  double narrow_length = 300.0;
  int wide_lanes = 3;
  int narrow_lanes = 2;
  double dx = 50.0;
  std::size_t cells_per_segment = 2;
  double dt = 1.0;
  double max_speed = 15.0;
  double empty_cell_speed = 15.0;

  double inflow_per_hour = 3600.0;
  Arrivals arrivals = Arrivals::periodic;
  double vehicle_length = 5.0;
  double min_gap = 2.5;
  KraussParams krauss;
  double merge_zone = 100.0;

  double platoon_length = 30.0;
  double platoon_equivalents = 5.0;
  int platoon_lane = 1;
  double platoon_entry_time = 100.0;
  int accel_min = -5;
  int accel_max = 3;
  std::size_t step_limit = 300;
  double max_warmup_time = 3600.0;

  mdp::RewardParams reward;  // n_cells, dx, dt and platoon terms are overwritten by validate()

  double control_length() const { return wide_length + narrow_length; }
  double corridor_length() const { return preheat_length + control_length(); }
  double drop_position() const { return preheat_length + wide_length; }
  std::size_t n_cells() const;
  macro::RoadGeometry geometry() const;
  /// Lane count of each segment of the controlled corridor.
  std::vector<int> segment_lanes() const;

  /// Checks CFL, cell alignment and lane layout; fills the derived reward fields.
  void validate();
};

struct Vehicle {
  std::uint64_t id = 0;
  int lane = 0;
  double x = 0.0;  // front bumper, corridor coordinates
  double v = 0.0;
  double length = 5.0;
  bool platoon = false;

  double rear() const { return x - length; }
};

double krauss_safe_speed(double v_follower, double v_leader, double gap, double tau, double decel);

/// min(v_max, v + a dt, v_safe) reduced by sigma * a * dt * u, floored at zero.
double krauss_speed(double v, double v_safe, double v_max, double accel, double sigma, double dt,
                    double u);

/// One Krauss update against an optional leader in the same lane; draws one uniform from rng.
double krauss_step(const Vehicle& self, const Vehicle* leader, const KraussParams& krauss,
                   double min_gap, double v_max, double dt, Engine& rng);

using Observation = mdp::StateVec;

struct StepResult {
  Observation observation;
  mdp::RewardBreakdown reward;
  double accel = 0.0;      // applied acceleration (realised one under Krauss control)
  double fuel_rate = 0.0;  // L/s summed over all vehicles in the controlled corridor
  bool done = false;
  bool finished = false;
  bool timed_out = false;
};

class MicroEnv {
public:
  explicit MicroEnv(EnvConfig config);

  const EnvConfig& config() const { return config_; }

  /// Empty road at t = 0; simulates until the platoon's front enters the controlled corridor.
  Observation reset(std::uint64_t seed);

  /// Empty road at t = 0 without warm-up, for building scenarios with add_vehicle / place_platoon.
  void reset_empty(std::uint64_t seed);
  /// Inserts a human vehicle; throws DomainError if it would overlap a neighbour.
  void add_vehicle(int lane, double x, double v);
  /// Puts the platoon at control coordinate x_p and hands control to the caller.
  void place_platoon(double x_p, double v);

  /// Restarts the driver-imperfection stream; branches of a copied environment then diverge.
  void reseed_dawdle(std::uint64_t seed);

  /// Applies an integer acceleration from the action set for one step.
  StepResult step(int accel);
  /// Lets the platoon follow the Krauss model for one step (baseline controller).
  StepResult step_krauss();

  Observation observe() const;
  std::vector<double> control_human_speeds() const;

  double time() const { return time_; }
  std::size_t control_steps() const { return control_steps_; }
  bool controlling() const { return phase_ == Phase::control; }
  bool done() const { return phase_ == Phase::done; }

  const std::vector<std::vector<Vehicle>>& lanes() const { return lanes_; }
  const macro::PlatoonState& platoon() const { return platoon_; }
  std::size_t spawned() const { return spawned_; }
  std::size_t exited() const { return exited_; }
  std::size_t queued() const { return queue_; }
  std::size_t humans_on_road() const;
  std::size_t merges() const { return merges_; }

  /// CSV rows "t,id,lane,x,v" after every simulated step; nullptr disables logging.
  void set_trajectory_log(std::ostream* log);

private:
  enum class Phase { idle, warmup, control, done };

  void advance(std::optional<double> platoon_accel);
  void move_vehicles(std::optional<double> platoon_accel);
  void merge_dropped_lanes();
  void remove_exited();
  void spawn();
  bool entry_admissible(int lane, double* insert_speed) const;
  void insert_sorted(Vehicle v);
  void check_invariants() const;
  void log_state();
  StepResult finish_step(const Observation& prev, double accel);
  int lanes_at(double x) const;

  EnvConfig config_;
  macro::RoadGeometry geometry_;
  std::vector<std::vector<Vehicle>> lanes_;  // each lane sorted front-first
  Engine inflow_rng_;
  Engine dawdle_rng_;
  Phase phase_ = Phase::idle;
  double time_ = 0.0;
  double next_arrival_ = 0.0;
  std::size_t queue_ = 0;
  std::size_t spawned_ = 0;
  std::size_t exited_ = 0;
  std::size_t merges_ = 0;
  std::size_t control_steps_ = 0;
  std::uint64_t next_id_ = 1;
  bool platoon_entered_ = false;
  bool platoon_on_road_ = false;
  macro::PlatoonState platoon_;
  std::ostream* log_ = nullptr;
};

}  // namespace dynaplatoon::micro
