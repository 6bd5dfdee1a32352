#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dynaplatoon/macro_model.hpp"

namespace dynaplatoon::mdp {

/// Flat state [x_p, v_p, rho_1..rho_N, vbar_1..vbar_N] in physical units.
class StateVec {
public:
  StateVec() = default;
  StateVec(std::vector<double> values, std::size_t n_cells);

  std::size_t n_cells() const { return n_cells_; }
  std::size_t size() const { return values_.size(); }

  double x_p() const { return values_[0]; }
  double v_p() const { return values_[1]; }
  double rho(std::size_t i) const { return values_[2 + i]; }
  double vbar(std::size_t i) const { return values_[2 + n_cells_ + i]; }

  std::span<const double> densities() const { return {values_.data() + 2, n_cells_}; }
  std::span<const double> speeds() const { return {values_.data() + 2 + n_cells_, n_cells_}; }
  std::span<const double> values() const { return values_; }

  bool operator==(const StateVec&) const = default;

private:
  std::vector<double> values_;
  std::size_t n_cells_ = 0;
};

/// Throws DomainError when the cell vectors disagree in length.
StateVec encode_state(const macro::PlatoonState& platoon, const macro::CellGrid& cells);
macro::CellGrid cells_of(const StateVec& s);

/// Integer accelerations a_min..a_max, indexed from 0.
class ActionSet {
public:
  ActionSet(int min_accel, int max_accel);

  std::size_t size() const { return static_cast<std::size_t>(max_ - min_ + 1); }
  int min() const { return min_; }
  int max() const { return max_; }
  int index_to_action(std::size_t index) const;
  std::size_t action_to_index(int accel) const;

private:
  int min_;
  int max_;
};

struct RewardBreakdown {
  double r_fc = 0.0;
  double r_bonus = 0.0;
  double r_ot = 0.0;
  double r_acc = 0.0;
  double total = 0.0;
};

RewardBreakdown make_breakdown(double r_fc, double r_bonus, double r_ot, double r_acc);

struct RewardParams {
  double bonus_cell = 10.0;
  double bonus_end = 100.0;
  double timeout_penalty = 3000.0;
  double accel_penalty = 1.0;
  double dt = 1.0;
  double dx = 50.0;
  std::size_t n_cells = 16;
  double platoon_equivalents = 5.0;
  double max_speed = 15.0;

  double control_length() const { return static_cast<double>(n_cells) * dx; }
};

/// Fuel consumption rate in L/s for one vehicle at speed v; v must lie in [0, max_speed].
double fuel_rate(double v, double max_speed = 15.0);

/// Bonus for interior cell boundaries crossed in (x_prev, x_next] plus the end bonus.
double crossing_bonus(double x_prev, double x_next, const RewardParams& p);

/// Terminal charge scaled by the distance left; zero if the platoon has finished.
double timeout_charge(double x_next, bool step_limit_reached, const RewardParams& p);

/// Reward observed in the microscopic environment. `human_speeds` lists every human vehicle
/// in the controlled corridor after the step; the platoon is added at next.v_p().
RewardBreakdown reward_env_side(const StateVec& prev, double accel, const StateVec& next,
                                std::span<const double> human_speeds, bool step_limit_reached,
                                const RewardParams& p);

/// Reward predicted from cell aggregates only. Cell counts are rho * dx, with the platoon's
/// vehicle-equivalents removed from the cell holding its front.
RewardBreakdown reward_model_side(const StateVec& s, double accel, const StateVec& next,
                                  bool step_limit_reached, const RewardParams& p);

}  // namespace dynaplatoon::mdp
