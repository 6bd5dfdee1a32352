#include "dynaplatoon/adaptive_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "dynaplatoon/errors.hpp"

namespace dynaplatoon::adaptive {

namespace {

constexpr const char* kFilterFormat = "dynaplatoon-filters-1";

}  // namespace

SegmentFilter SegmentFilter::initial(double max_speed, double max_density) {
  const macro::FundamentalDiagram check(max_speed, max_density);
  SegmentFilter f;
  f.phi = {max_speed, max_speed / max_density};
  f.P.setIdentity();
  return f;
}

SegmentFilter rls_update_raw(const SegmentFilter& filter, double rho_obs, double v_obs) {
  if (!std::isfinite(rho_obs) || !std::isfinite(v_obs)) {
    throw DomainError("filter observation must be finite");
  }
  if (rho_obs < 0.0) throw DomainError("observed density must be non-negative");

  const Eigen::Vector2d h(1.0, -rho_obs);
  const Eigen::Vector2d Ph = filter.P * h;
  const Eigen::Vector2d K = Ph / (1.0 + h.dot(Ph));

  SegmentFilter next;
  next.P = (Eigen::Matrix2d::Identity() - K * h.transpose()) * filter.P;
  next.phi = filter.phi + K * (v_obs - h.dot(filter.phi));
  return next;
}

SegmentFilter rls_update(const SegmentFilter& filter, double rho_obs, double v_obs,
                         const FilterBounds& bounds) {
  SegmentFilter next = rls_update_raw(filter, rho_obs, v_obs);
  next.P = (0.5 * (next.P + next.P.transpose())).eval();
  next.phi[0] = std::clamp(next.phi[0], bounds.min_speed, bounds.max_speed);
  next.phi[1] = std::clamp(next.phi[1], next.phi[0] / bounds.max_density,
                           next.phi[0] / bounds.min_density);
  return next;
}

double predict_cell_speed(const SegmentFilter& filter, double rho) {
  if (!std::isfinite(rho)) throw DomainError("density must be finite");
  const double v = filter.phi[0] - filter.phi[1] * rho;
  return std::clamp(v, 0.0, filter.phi[0]);
}

macro::PlatoonState predict_platoon(const macro::PlatoonState& p, double accel, double dt,
                                    double v_max) {
  if (!(dt > 0.0)) throw DomainError("time step must be positive");
  macro::PlatoonState next = p;
  const double v_free = p.v + accel * dt;
  if (v_free > v_max && accel > 0.0) {
    const double t_clamp = std::max(0.0, (v_max - p.v) / accel);
    next.x = p.x + p.v * t_clamp + 0.5 * accel * t_clamp * t_clamp + v_max * (dt - t_clamp);
    next.v = v_max;
  } else if (v_free < 0.0 && accel < 0.0) {
    const double t_stop = std::max(0.0, p.v / -accel);
    next.x = p.x + p.v * t_stop + 0.5 * accel * t_stop * t_stop;
    next.v = 0.0;
  } else {
    next.x = p.x + p.v * dt + 0.5 * accel * dt * dt;
    next.v = std::clamp(v_free, 0.0, v_max);
  }
  return next;
}

ModelState::ModelState(macro::RoadGeometry geometry, std::vector<SegmentFilter> filters)
    : geometry_(std::move(geometry)), filters_(std::move(filters)) {
  if (filters_.size() != geometry_.n_segments) {
    throw DomainError("model needs exactly one filter per segment");
  }
}

ModelState ModelState::initial(macro::RoadGeometry geometry, double max_speed,
                               const std::vector<double>& max_densities) {
  std::vector<SegmentFilter> filters;
  filters.reserve(max_densities.size());
  for (double R : max_densities) filters.push_back(SegmentFilter::initial(max_speed, R));
  return ModelState(std::move(geometry), std::move(filters));
}

std::vector<macro::FundamentalDiagram> ModelState::diagrams() const {
  std::vector<macro::FundamentalDiagram> out;
  out.reserve(filters_.size());
  for (const auto& f : filters_) out.push_back(f.diagram());
  return out;
}

void ModelState::observe(const mdp::StateVec& observation, const FilterBounds& bounds) {
  if (observation.n_cells() != geometry_.n_cells) {
    throw DomainError("observation cell count does not match the model geometry");
  }
  for (std::size_t i = 0; i < geometry_.n_cells; ++i) {
    const double rho = observation.rho(i);
    if (rho <= 0.0) continue;
    auto& f = filters_[geometry_.segment_of_cell[i]];
    f = rls_update(f, rho, observation.vbar(i), bounds);
  }
}

void ModelState::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write filter checkpoint " + path.string());
  out << std::setprecision(17);
  out << "format = " << kFilterFormat << "\n";
  out << "segments = " << filters_.size() << "\n";
  for (std::size_t i = 0; i < filters_.size(); ++i) {
    const auto& f = filters_[i];
    out << "segment." << i << " = " << f.phi[0] << ' ' << f.phi[1] << ' ' << f.P(0, 0) << ' '
        << f.P(0, 1) << ' ' << f.P(1, 0) << ' ' << f.P(1, 1) << "\n";
  }
}

ModelState ModelState::load(const std::filesystem::path& path, macro::RoadGeometry geometry) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read filter checkpoint " + path.string());

  auto fail = [&](const std::string& why) {
    throw InputError("filter checkpoint " + path.string() + ": " + why);
  };
  auto next_value = [&](const std::string& expected_key) {
    std::string line;
    if (!std::getline(in, line)) fail("missing " + expected_key);
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected '" + expected_key + " = ...'");
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(' ') + 1);
    if (key != expected_key) fail("expected key " + expected_key + ", found " + key);
    return line.substr(eq + 1);
  };

  {
    std::istringstream v(next_value("format"));
    std::string fmt;
    v >> fmt;
    if (fmt != kFilterFormat) fail("unknown format " + fmt);
  }
  std::size_t n = 0;
  {
    std::istringstream v(next_value("segments"));
    if (!(v >> n) || n != geometry.n_segments) fail("segment count does not match geometry");
  }
  std::vector<SegmentFilter> filters(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::istringstream v(next_value("segment." + std::to_string(i)));
    auto& f = filters[i];
    if (!(v >> f.phi[0] >> f.phi[1] >> f.P(0, 0) >> f.P(0, 1) >> f.P(1, 0) >> f.P(1, 1))) {
      fail("segment " + std::to_string(i) + " needs six numbers");
    }
  }
  return ModelState(std::move(geometry), std::move(filters));
}

Prediction one_step_predict(const ModelState& model, const mdp::StateVec& s, double accel,
                            std::size_t step_index, const WorldModelParams& params) {
  const auto& geometry = model.geometry();
  if (s.n_cells() != geometry.n_cells) {
    throw DomainError("state cell count does not match the model geometry");
  }
  const auto diagrams = model.diagrams();
  const auto& filters = model.filters();
  const double equivalents = params.reward.platoon_equivalents;

  // Platoon status.
  const macro::PlatoonState now{s.x_p(), s.v_p(), params.platoon_length};
  macro::PlatoonState next_p = predict_platoon(now, accel, params.dt, params.max_speed);
  const auto platoon_cell = geometry.cell_at(s.x_p());
  if (params.platoon_speed_cap && platoon_cell) {
    const auto& fd = diagrams[geometry.segment_of_cell[*platoon_cell]];
    const double rho_ahead =
        std::clamp(s.rho(*platoon_cell) - equivalents / geometry.dx, 0.0, fd.max_density());
    const double capped = macro::platoon_speed_cap(rho_ahead, next_p.v, fd);
    if (capped < next_p.v) {
      next_p.v = capped;
      next_p.x = now.x + 0.5 * (now.v + capped) * params.dt;
    }
  }

  // Cell density. The platoon's equivalents travel with the platoon rather than with the
  // traffic stream: they leave the grid for the update and rejoin at the predicted position.
  macro::CellGrid grid = mdp::cells_of(s);
  const double own = equivalents / geometry.dx;
  if (platoon_cell) grid.rho[*platoon_cell] -= own;
  for (std::size_t i = 0; i < geometry.n_cells; ++i) {
    grid.rho[i] = std::clamp(grid.rho[i], 0.0, diagrams[geometry.segment_of_cell[i]].max_density());
  }
  macro::StepOptions options;
  options.capacity_factor = params.capacity_factor;
  options.platoon_cell = platoon_cell;
  macro::CellGrid next_cells =
      macro::step_density(grid, params.inflow_rate, params.dt, geometry, diagrams, options);

  // Cell speed of the stream; the platoon's cell averages in the platoon like the observation does.
  for (std::size_t i = 0; i < geometry.n_cells; ++i) {
    const auto& f = filters[geometry.segment_of_cell[i]];
    next_cells.vbar[i] = std::min(predict_cell_speed(f, next_cells.rho[i]), params.max_speed);
  }
  if (const auto cell = geometry.cell_at(next_p.x)) {
    const double humans = next_cells.rho[*cell] * geometry.dx;
    next_cells.vbar[*cell] =
        (humans * next_cells.vbar[*cell] + equivalents * next_p.v) / (humans + equivalents);
    next_cells.rho[*cell] += own;
  }

  Prediction out;
  out.next = mdp::encode_state(next_p, next_cells);
  const bool limit = step_index + 1 >= params.step_limit;
  out.reward = mdp::reward_model_side(s, accel, out.next, limit, params.reward);
  out.done = limit || out.next.x_p() >= geometry.control_length;
  return out;
}

}  // namespace dynaplatoon::adaptive
