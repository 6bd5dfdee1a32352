#include "dynaplatoon/macro_model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dynaplatoon/errors.hpp"

namespace dynaplatoon::macro {

namespace {

void require_density(double rho, const FundamentalDiagram& fd) {
  if (!std::isfinite(rho) || rho < 0.0 || rho > fd.max_density()) {
    std::ostringstream msg;
    msg << "density " << rho << " outside [0, " << fd.max_density() << "]";
    throw DomainError(msg.str());
  }
}

}  // namespace

FundamentalDiagram::FundamentalDiagram(double max_speed, double max_density)
    : max_speed_(max_speed), max_density_(max_density) {
  if (!std::isfinite(max_speed) || !std::isfinite(max_density) || max_speed <= 0.0 ||
      max_density <= 0.0) {
    std::ostringstream msg;
    msg << "fundamental diagram needs V > 0 and R > 0, got V=" << max_speed
        << " R=" << max_density;
    throw DomainError(msg.str());
  }
}

RoadGeometry RoadGeometry::uniform(std::size_t n_cells, double dx, std::size_t cells_per_segment) {
  if (n_cells == 0 || cells_per_segment == 0 || n_cells % cells_per_segment != 0) {
    throw ConfigError("cell count must be a positive multiple of cells per segment");
  }
  RoadGeometry g;
  g.dx = dx;
  g.n_cells = n_cells;
  g.control_length = static_cast<double>(n_cells) * dx;
  g.n_segments = n_cells / cells_per_segment;
  g.segment_of_cell.resize(n_cells);
  for (std::size_t i = 0; i < n_cells; ++i) g.segment_of_cell[i] = i / cells_per_segment;
  g.validate();
  return g;
}

void RoadGeometry::validate() const {
  if (!(dx > 0.0) || n_cells == 0) throw ConfigError("geometry needs dx > 0 and at least one cell");
  const double covered = static_cast<double>(n_cells) * dx;
  if (std::abs(covered - control_length) > 1e-9 * std::max(1.0, control_length)) {
    std::ostringstream msg;
    msg << "n_cells * dx = " << covered << " does not equal control length " << control_length;
    throw ConfigError(msg.str());
  }
  if (segment_of_cell.size() != n_cells) throw ConfigError("segment map must cover every cell");
  if (segment_of_cell.front() != 0 || segment_of_cell.back() + 1 != n_segments) {
    throw ConfigError("segment map must start at 0 and end at n_segments - 1");
  }
  for (std::size_t i = 1; i < n_cells; ++i) {
    const auto step = segment_of_cell[i] - segment_of_cell[i - 1];
    if (segment_of_cell[i] < segment_of_cell[i - 1] || step > 1) {
      throw ConfigError("segments must be contiguous runs of cells");
    }
  }
}

std::optional<std::size_t> RoadGeometry::cell_at(double x) const {
  if (!(x >= 0.0) || x >= control_length) return std::nullopt;
  const auto i = static_cast<std::size_t>(x / dx);
  return std::min(i, n_cells - 1);
}

double equilibrium_speed(double rho, const FundamentalDiagram& fd) {
  require_density(rho, fd);
  return fd.max_speed() * (1.0 - rho / fd.max_density());
}

double flux(double rho, const FundamentalDiagram& fd) {
  require_density(rho, fd);
  return fd.max_speed() * rho * (1.0 - rho / fd.max_density());
}

double demand(double rho, const FundamentalDiagram& fd) {
  const double f = flux(rho, fd);
  return rho < fd.critical_density() ? f : fd.max_flux();
}

double supply(double rho, const FundamentalDiagram& fd) {
  const double f = flux(rho, fd);
  return rho < fd.critical_density() ? fd.max_flux() : f;
}

double interface_flux(double rho_up, const FundamentalDiagram& fd_up, double rho_dn,
                      const FundamentalDiagram& fd_dn) {
  return std::min(demand(rho_up, fd_up), supply(rho_dn, fd_dn));
}

bool check_cfl(double max_speed, double dt, double dx) {
  if (!(max_speed > 0.0) || !(dt > 0.0) || !(dx > 0.0)) {
    throw DomainError("CFL check needs positive speed, time step and cell length");
  }
  return 2.0 * max_speed * dt <= dx;
}

void require_cfl(double max_speed, double dt, double dx) {
  if (!check_cfl(max_speed, dt, dx)) {
    std::ostringstream msg;
    msg << "CFL condition violated: 2 * " << max_speed << " * " << dt << " = "
        << 2.0 * max_speed * dt << " > dx = " << dx;
    throw ConfigError(msg.str());
  }
}

double platoon_speed_cap(double rho_ahead, double speed_limit, const FundamentalDiagram& fd) {
  if (!std::isfinite(speed_limit) || speed_limit < 0.0) {
    throw DomainError("platoon speed limit must be non-negative");
  }
  return std::min(speed_limit, equilibrium_speed(rho_ahead, fd));
}

std::vector<double> interface_fluxes(std::span<const double> rho, double inflow_demand,
                                     const RoadGeometry& geometry,
                                     std::span<const FundamentalDiagram> diagrams,
                                     const StepOptions& options) {
  const std::size_t n = geometry.n_cells;
  if (rho.size() != n) throw DomainError("density vector does not match the cell count");
  if (diagrams.size() != geometry.n_segments) {
    throw DomainError("one fundamental diagram per segment is required");
  }
  auto fd = [&](std::size_t cell) -> const FundamentalDiagram& {
    return diagrams[geometry.segment_of_cell[cell]];
  };

  std::vector<double> f(n + 1);
  for (std::size_t i = 1; i < n; ++i) {
    f[i] = interface_flux(rho[i - 1], fd(i - 1), rho[i], fd(i));
  }
  if (options.boundary == Boundary::periodic) {
    f[0] = interface_flux(rho[n - 1], fd(n - 1), rho[0], fd(0));
    f[n] = f[0];
  } else {
    if (!(inflow_demand >= 0.0)) throw DomainError("inflow demand must be non-negative");
    f[0] = std::min(inflow_demand, supply(rho[0], fd(0)));
    f[n] = std::min(demand(rho[n - 1], fd(n - 1)), options.downstream_supply);
  }

  if (options.platoon_cell && options.capacity_factor != 1.0) {
    if (!(options.capacity_factor >= 0.0 && options.capacity_factor <= 1.0)) {
      throw DomainError("capacity factor must lie in [0, 1]");
    }
    const std::size_t c = *options.platoon_cell;
    if (c < n) {
      f[c + 1] *= options.capacity_factor;
      if (options.boundary == Boundary::periodic && c + 1 == n) f[0] = f[n];
    }
  }
  return f;
}

CellGrid step_density(const CellGrid& grid, double inflow_demand, double dt,
                      const RoadGeometry& geometry,
                      std::span<const FundamentalDiagram> diagrams, const StepOptions& options) {
  for (const auto& d : diagrams) require_cfl(d.max_speed(), dt, geometry.dx);

  const auto f = interface_fluxes(grid.rho, inflow_demand, geometry, diagrams, options);
  const std::size_t n = geometry.n_cells;
  const double ratio = dt / geometry.dx;

  CellGrid next;
  next.rho.resize(n);
  next.vbar.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& fd = diagrams[geometry.segment_of_cell[i]];
    double value = grid.rho[i] - ratio * (f[i + 1] - f[i]);
    if (value < -kDensityTolerance || value > fd.max_density() + kDensityTolerance) {
      std::ostringstream msg;
      msg << "cell " << i << " density " << value << " left [0, " << fd.max_density() << "]";
      throw SolverError(msg.str());
    }
    value = std::clamp(value, 0.0, fd.max_density());
    next.rho[i] = value;
    next.vbar[i] = equilibrium_speed(value, fd);
  }
  return next;
}

}  // namespace dynaplatoon::macro
