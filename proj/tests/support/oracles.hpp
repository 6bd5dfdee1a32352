// Independent reference computations shared by the unit and acceptance tests.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "dynaplatoon/macro_model.hpp"
#include "dynaplatoon/qlearn.hpp"

namespace oracle {

// Fuel polynomial coefficients in units of 1e-13, constant term first.
inline constexpr std::int64_t kFuelCoeff1e13[] = {9'900'000'000'000, 160'000'000'000, 19'000'000'000,
                                                  -610'000'000, 7'600'000, -36'000, 57};

/// Exact integer evaluation of the fuel polynomial at an integer speed, in units of 1e-13.
inline std::int64_t fuel_exact_1e13(std::int64_t v) {
  std::int64_t sum = 0;
  std::int64_t power = 1;
  for (auto c : kFuelCoeff1e13) {
    sum += c * power;
    power *= v;
  }
  return sum;
}

/// Minimiser of sum (y - h'phi)^2 + (phi - phi0)' P0^-1 (phi - phi0) with P0 = I, h = [1, -rho],
/// solved from the 2x2 normal equations by Cramer's rule.
inline Eigen::Vector2d batch_least_squares(const Eigen::Vector2d& phi0, const std::vector<double>& rho,
                                           const std::vector<double>& y) {
  double a = 1.0, b = 0.0, d = 1.0;
  double r0 = phi0[0], r1 = phi0[1];
  for (std::size_t k = 0; k < rho.size(); ++k) {
    a += 1.0;
    b -= rho[k];
    d += rho[k] * rho[k];
    r0 += y[k];
    r1 -= rho[k] * y[k];
  }
  const double det = a * d - b * b;
  return {(r0 * d - b * r1) / det, (a * r1 - b * r0) / det};
}

/// Largest relative deviation between analytic and central-difference gradients of the squared
/// TD loss over every parameter. Entries where both are below `floor` count as exact matches.
inline double gradient_check(dynaplatoon::qlearn::QNetwork net, const Eigen::MatrixXd& inputs,
                             const std::vector<std::size_t>& actions, const Eigen::VectorXd& targets,
                             double h = 1e-5, double floor = 1e-7) {
  using dynaplatoon::qlearn::squared_td_loss;
  dynaplatoon::qlearn::Gradients g;
  squared_td_loss(net, inputs, actions, targets, &g);
  double worst = 0.0;
  auto probe = [&](double& param, double analytic) {
    const double keep = param;
    param = keep + h;
    const double up = squared_td_loss(net, inputs, actions, targets);
    param = keep - h;
    const double down = squared_td_loss(net, inputs, actions, targets);
    param = keep;
    const double numeric = (up - down) / (2.0 * h);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (scale < floor) return;
    worst = std::max(worst, std::abs(analytic - numeric) / scale);
  };
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    auto& W = net.weight(l);
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      for (Eigen::Index c = 0; c < W.cols(); ++c) probe(W(r, c), g.weights[l](r, c));
    }
    auto& b = net.bias(l);
    for (Eigen::Index r = 0; r < b.size(); ++r) probe(b(r), g.biases[l](r));
  }
  return worst;
}

/// Position where the discrete profile first crosses `level` going downstream, by linear
/// interpolation between cell centres.
inline double front_position(const std::vector<double>& rho, double dx, double level) {
  for (std::size_t i = 1; i < rho.size(); ++i) {
    const double a = rho[i - 1] - level;
    const double b = rho[i] - level;
    if ((a <= 0.0 && b > 0.0) || (a >= 0.0 && b < 0.0)) {
      const double t = a / (a - b);
      return (static_cast<double>(i) - 0.5 + t) * dx;
    }
  }
  return std::nan("");
}

struct RiemannRun {
  double front_speed = 0.0;  // tracked from the half-level crossing
  double l1_error = 0.0;     // against the exact travelling shock at the final time
};

/// Godunov solution of Riemann data (rho_l, rho_r) on [0, length) with the jump at length/2,
/// boundary fluxes chosen so both constant states persist, run to `t_end`.
inline RiemannRun riemann_shock(double rho_l, double rho_r, double length, double dx, double t_end,
                                const dynaplatoon::macro::FundamentalDiagram& fd) {
  using namespace dynaplatoon::macro;
  const auto n = static_cast<std::size_t>(std::llround(length / dx));
  const auto geometry = RoadGeometry::uniform(n, dx, n);
  const FundamentalDiagram fds[] = {fd};
  CellGrid grid;
  const double x0 = 0.5 * length;
  for (std::size_t i = 0; i < n; ++i) grid.rho.push_back((static_cast<double>(i) + 0.5) * dx < x0 ? rho_l : rho_r);
  StepOptions options;
  options.downstream_supply = flux(rho_r, fd);
  // Largest dt on a power-of-two grid below the CFL limit keeps every run on the same clock.
  const double dt = dx / (2.0 * fd.max_speed()) * (1.0 - 1e-12);
  const auto steps = static_cast<std::size_t>(std::floor(t_end / dt));
  const double level = 0.5 * (rho_l + rho_r);
  const std::size_t warm = steps / 4;
  double x_warm = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    if (k == warm) x_warm = front_position(grid.rho, dx, level);
    grid = step_density(grid, flux(rho_l, fd), dt, geometry, fds, options);
  }
  const double T = static_cast<double>(steps) * dt;
  const double x_end = front_position(grid.rho, dx, level);
  RiemannRun run;
  run.front_speed = (x_end - x_warm) / (T - static_cast<double>(warm) * dt);
  const double s = (flux(rho_r, fd) - flux(rho_l, fd)) / (rho_r - rho_l);
  const double shock = x0 + s * T;
  for (std::size_t i = 0; i < n; ++i) {
    // Exact cell average of the step profile.
    const double lo = static_cast<double>(i) * dx;
    const double hi = lo + dx;
    const double left_part = std::clamp(shock - lo, 0.0, dx) / dx;
    const double exact = left_part * rho_l + (1.0 - left_part) * rho_r;
    run.l1_error += std::abs(grid.rho[i] - exact) * dx;
  }
  return run;
}

}  // namespace oracle
