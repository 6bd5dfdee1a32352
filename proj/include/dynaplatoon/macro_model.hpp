#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace dynaplatoon::macro {

/// Greenshields diagram: linear speed law v(rho) = V (1 - rho / R) and parabolic flux.
class FundamentalDiagram {
public:
  /// Throws DomainError unless both arguments are finite and positive.
  FundamentalDiagram(double max_speed, double max_density);

  double max_speed() const { return max_speed_; }
  double max_density() const { return max_density_; }
  double critical_density() const { return 0.5 * max_density_; }
  double max_flux() const { return 0.25 * max_speed_ * max_density_; }

  bool operator==(const FundamentalDiagram&) const = default;

private:
  double max_speed_;
  double max_density_;
};

/// Uniform cells over the controlled corridor, grouped into contiguous segments.
struct RoadGeometry {
  double control_length = 0.0;
  double dx = 0.0;
  std::size_t n_cells = 0;
  std::vector<std::size_t> segment_of_cell;
  std::size_t n_segments = 0;

  /// n_cells cells of length dx, cells_per_segment consecutive cells per segment.
  static RoadGeometry uniform(std::size_t n_cells, double dx, std::size_t cells_per_segment);

  /// Throws ConfigError when the invariants (length, contiguity, coverage) do not hold.
  void validate() const;

  /// Cell containing position x in [0, control_length); nullopt outside the corridor.
  std::optional<std::size_t> cell_at(double x) const;
};

struct CellGrid {
  std::vector<double> rho;   // veh/m
  std::vector<double> vbar;  // m/s
};

struct PlatoonState {
  double x = 0.0;  // downstream endpoint, m
  double v = 0.0;  // m/s
  double length = 0.0;
};

double equilibrium_speed(double rho, const FundamentalDiagram& fd);
double flux(double rho, const FundamentalDiagram& fd);
double demand(double rho, const FundamentalDiagram& fd);
double supply(double rho, const FundamentalDiagram& fd);
double interface_flux(double rho_up, const FundamentalDiagram& fd_up, double rho_dn,
                      const FundamentalDiagram& fd_dn);

/// True iff 2 V dt <= dx. Non-positive arguments are a DomainError.
bool check_cfl(double max_speed, double dt, double dx);

/// Throws ConfigError naming the offending values when check_cfl fails.
void require_cfl(double max_speed, double dt, double dx);

/// min(V_d, v(rho_ahead)).
double platoon_speed_cap(double rho_ahead, double speed_limit, const FundamentalDiagram& fd);

enum class Boundary {
  open,      // upstream demand supplied externally, free (or supply-limited) outflow
  periodic,  // closed ring: last cell feeds the first
};

struct StepOptions {
  Boundary boundary = Boundary::open;
  /// Receiving capacity beyond the last cell. Infinite means free outflow.
  double downstream_supply = std::numeric_limits<double>::infinity();
  /// Multiplier on the flux leaving platoon_cell; 1.0 disables the moving-bottleneck reduction.
  double capacity_factor = 1.0;
  std::optional<std::size_t> platoon_cell;
};

/// Density values this far outside [0, R] are clamped; anything further is a SolverError.
inline constexpr double kDensityTolerance = 1e-9;

/// One conservative Godunov update of all cells. `diagrams` is indexed by segment.
/// The returned grid carries the equilibrium speeds of the new densities.
CellGrid step_density(const CellGrid& grid, double inflow_demand, double dt,
                      const RoadGeometry& geometry,
                      std::span<const FundamentalDiagram> diagrams,
                      const StepOptions& options = {});

/// Interface fluxes used by step_density: entry i is the flux into cell i (size n_cells + 1).
std::vector<double> interface_fluxes(std::span<const double> rho, double inflow_demand,
                                     const RoadGeometry& geometry,
                                     std::span<const FundamentalDiagram> diagrams,
                                     const StepOptions& options = {});

}  // namespace dynaplatoon::macro
