#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <filesystem>
#include <vector>

#include "dynaplatoon/macro_model.hpp"
#include "dynaplatoon/mdp.hpp"

namespace dynaplatoon::adaptive {

/// Admissible parameter box enforced after every guarded update.
struct FilterBounds {
  double min_speed = 0.5;
  double max_speed = 40.0;
  double min_density = 0.01;
  double max_density = 2.0;
};

/// Kalman state phi = [V, V/R] of one road segment with its covariance.
struct SegmentFilter {
  Eigen::Vector2d phi = Eigen::Vector2d::Zero();
  Eigen::Matrix2d P = Eigen::Matrix2d::Identity();

  /// phi = [V, V/R], P = I.
  static SegmentFilter initial(double max_speed, double max_density);

  double max_speed() const { return phi[0]; }
  double max_density() const { return phi[0] / phi[1]; }
  macro::FundamentalDiagram diagram() const { return {max_speed(), max_density()}; }

  bool operator==(const SegmentFilter& o) const { return phi == o.phi && P == o.P; }
};

/// Measurement update with identity dynamics, no process noise and unit measurement weight:
///   K = P h / (1 + h' P h),  P <- (I - K h') P,  phi <- phi + K (v - h' phi),  h = [1, -rho].
SegmentFilter rls_update_raw(const SegmentFilter& filter, double rho_obs, double v_obs);

/// rls_update_raw followed by the positivity guard: V clamped to the speed bounds, then V/R
/// clamped so the implied R stays within the density bounds.
SegmentFilter rls_update(const SegmentFilter& filter, double rho_obs, double v_obs,
                         const FilterBounds& bounds = {});

/// h' phi clamped to [0, V].
double predict_cell_speed(const SegmentFilter& filter, double rho);

/// Constant-acceleration kinematics over dt with the speed held in [0, v_max]; once the clamp
/// is reached the platoon continues at the clamped speed for the rest of the step.
macro::PlatoonState predict_platoon(const macro::PlatoonState& p, double accel, double dt,
                                    double v_max);

class ModelState {
public:
  ModelState(macro::RoadGeometry geometry, std::vector<SegmentFilter> filters);

  /// One filter per segment, all starting from max_speed and the given per-segment R.
  static ModelState initial(macro::RoadGeometry geometry, double max_speed,
                            const std::vector<double>& max_densities);

  const macro::RoadGeometry& geometry() const { return geometry_; }
  const std::vector<SegmentFilter>& filters() const { return filters_; }
  std::vector<macro::FundamentalDiagram> diagrams() const;

  /// Feeds every non-empty cell of an observed state to its segment's filter, in cell order.
  void observe(const mdp::StateVec& observation, const FilterBounds& bounds);

  void save(const std::filesystem::path& path) const;
  /// Throws InputError on unreadable or malformed files.
  static ModelState load(const std::filesystem::path& path, macro::RoadGeometry geometry);

  bool operator==(const ModelState& o) const { return filters_ == o.filters_; }

private:
  macro::RoadGeometry geometry_;
  std::vector<SegmentFilter> filters_;
};

struct WorldModelParams {
  double dt = 1.0;
  double max_speed = 15.0;
  double inflow_rate = 1.0;  // veh/s entering the first cell
  double platoon_length = 30.0;
  std::size_t step_limit = 300;
  bool platoon_speed_cap = true;
  double capacity_factor = 1.0;
  mdp::RewardParams reward;
};

struct Prediction {
  mdp::StateVec next;
  mdp::RewardBreakdown reward;
  bool done = false;
};

/// W_phi(s, a): platoon kinematics, Godunov density update on the filter-implied diagrams,
/// cell speeds from the filters, and the model-side reward. `step_index` is the control step
/// of `s` (0-based) and decides whether the step limit is reached.
Prediction one_step_predict(const ModelState& model, const mdp::StateVec& s, double accel,
                            std::size_t step_index, const WorldModelParams& params);

}  // namespace dynaplatoon::adaptive
