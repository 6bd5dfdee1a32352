#include "dynaplatoon/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>

#include "dynaplatoon/errors.hpp"

namespace dynaplatoon::mdp {

StateVec::StateVec(std::vector<double> values, std::size_t n_cells)
    : values_(std::move(values)), n_cells_(n_cells) {
  if (values_.size() != 2 + 2 * n_cells_) {
    std::ostringstream msg;
    msg << "state vector has " << values_.size() << " entries, expected " << 2 + 2 * n_cells_;
    throw DomainError(msg.str());
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw DomainError("state vector entries must be finite");
  }
}

StateVec encode_state(const macro::PlatoonState& platoon, const macro::CellGrid& cells) {
  if (cells.rho.size() != cells.vbar.size()) {
    throw DomainError("density and speed vectors differ in length");
  }
  const std::size_t n = cells.rho.size();
  std::vector<double> values;
  values.reserve(2 + 2 * n);
  values.push_back(platoon.x);
  values.push_back(platoon.v);
  values.insert(values.end(), cells.rho.begin(), cells.rho.end());
  values.insert(values.end(), cells.vbar.begin(), cells.vbar.end());
  return StateVec(std::move(values), n);
}

macro::CellGrid cells_of(const StateVec& s) {
  macro::CellGrid g;
  g.rho.assign(s.densities().begin(), s.densities().end());
  g.vbar.assign(s.speeds().begin(), s.speeds().end());
  return g;
}

ActionSet::ActionSet(int min_accel, int max_accel) : min_(min_accel), max_(max_accel) {
  if (min_accel > max_accel) throw DomainError("action set needs min <= max");
}

int ActionSet::index_to_action(std::size_t index) const {
  if (index >= size()) throw DomainError("action index out of range");
  return min_ + static_cast<int>(index);
}

std::size_t ActionSet::action_to_index(int accel) const {
  if (accel < min_ || accel > max_) {
    std::ostringstream msg;
    msg << "acceleration " << accel << " not in [" << min_ << ", " << max_ << "]";
    throw DomainError(msg.str());
  }
  return static_cast<std::size_t>(accel - min_);
}

RewardBreakdown make_breakdown(double r_fc, double r_bonus, double r_ot, double r_acc) {
  return {r_fc, r_bonus, r_ot, r_acc, r_fc + r_bonus + r_ot + r_acc};
}

double fuel_rate(double v, double max_speed) {
  if (!std::isfinite(v) || v < 0.0 || v > max_speed) {
    std::ostringstream msg;
    msg << "fuel polynomial evaluated at " << v << " m/s, outside [0, " << max_speed << "]";
    throw DomainError(msg.str());
  }
  // Horner form, highest power first.
  static constexpr double c[] = {5.7e-12, -3.6e-9, 7.6e-7, -6.1e-5, 1.9e-3, 1.6e-2, 0.99};
  double k = c[0];
  for (std::size_t i = 1; i < std::size(c); ++i) k = k * v + c[i];
  return k;
}

double crossing_bonus(double x_prev, double x_next, const RewardParams& p) {
  const double L = p.control_length();
  auto boundary = [&](double x) {
    const double cells = std::floor(x / p.dx);
    return static_cast<long>(std::clamp(cells, 0.0, static_cast<double>(p.n_cells - 1)));
  };
  double bonus = 0.0;
  const long crossed = boundary(x_next) - boundary(x_prev);
  if (crossed > 0) bonus += p.bonus_cell * static_cast<double>(crossed);
  if (x_prev < L && x_next >= L) bonus += p.bonus_end;
  return bonus;
}

double timeout_charge(double x_next, bool step_limit_reached, const RewardParams& p) {
  const double L = p.control_length();
  if (!step_limit_reached || x_next >= L) return 0.0;
  const double remaining = std::clamp(L - x_next, 0.0, L);
  return -p.timeout_penalty * remaining / L;
}

RewardBreakdown reward_env_side(const StateVec& prev, double accel, const StateVec& next,
                                std::span<const double> human_speeds, bool step_limit_reached,
                                const RewardParams& p) {
  double fuel = 0.0;
  for (double v : human_speeds) fuel += fuel_rate(v, p.max_speed);
  fuel += p.platoon_equivalents * fuel_rate(next.v_p(), p.max_speed);
  return make_breakdown(-fuel * p.dt, crossing_bonus(prev.x_p(), next.x_p(), p),
                        timeout_charge(next.x_p(), step_limit_reached, p),
                        -p.accel_penalty * std::abs(accel));
}

RewardBreakdown reward_model_side(const StateVec& s, double accel, const StateVec& next,
                                  bool step_limit_reached, const RewardParams& p) {
  if (s.n_cells() != p.n_cells || next.n_cells() != p.n_cells) {
    throw DomainError("state cell count does not match reward parameters");
  }
  const double L = p.control_length();
  std::optional<std::size_t> platoon_cell;
  if (next.x_p() >= 0.0 && next.x_p() < L) {
    platoon_cell = std::min(static_cast<std::size_t>(next.x_p() / p.dx), p.n_cells - 1);
  }
  double fuel = 0.0;
  for (std::size_t i = 0; i < p.n_cells; ++i) {
    double count = next.rho(i) * p.dx;
    if (platoon_cell && *platoon_cell == i) count -= p.platoon_equivalents;
    if (count <= 0.0) continue;
    fuel += count * fuel_rate(std::clamp(next.vbar(i), 0.0, p.max_speed), p.max_speed);
  }
  fuel += p.platoon_equivalents * fuel_rate(next.v_p(), p.max_speed);
  return make_breakdown(-fuel * p.dt, crossing_bonus(s.x_p(), next.x_p(), p),
                        timeout_charge(next.x_p(), step_limit_reached, p),
                        -p.accel_penalty * std::abs(accel));
}

}  // namespace dynaplatoon::mdp
