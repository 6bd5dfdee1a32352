#include <doctest.h>

#include <filesystem>
#include <string>

#include "dynaplatoon/config.hpp"
#include "dynaplatoon/errors.hpp"

using namespace dynaplatoon;

namespace {

std::string config_error(const std::string& text) {
  try {
    parse_config(text, "test.conf");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

const std::filesystem::path kConfigs = std::filesystem::path(DYNAPLATOON_SOURCE_DIR) / "configs";

}  // namespace

TEST_CASE("defaults reproduce the reference parameterisation") {
  const auto c = RunConfig::full_scale();
  CHECK(c.env.dt == 1.0);
  CHECK(c.env.dx == 50.0);
  CHECK(c.env.n_cells() == 16);
  CHECK(c.geometry().n_segments == 8);
  CHECK(c.train.adam.learning_rate == 1e-4);
  CHECK(c.train.replay_capacity == 300000);
  CHECK(c.train.batch_size == 64);
  CHECK(c.train.gamma == 0.99);
  CHECK(c.train.schedule.max_greedy == 0.95);
  CHECK(c.train.schedule.ramp_steps == 20000);
  CHECK(c.env.inflow_per_hour == 3600.0);
  CHECK(c.env.platoon_length == 30.0);
  CHECK(c.env.vehicle_length == 5.0);
  CHECK(c.env.max_speed == 15.0);
  CHECK(c.env.accel_min == -5);
  CHECK(c.env.accel_max == 3);
  CHECK(c.env.platoon_entry_time == 100.0);
  CHECK(c.layer_sizes() == std::vector<std::size_t>{34, 64, 64, 9});
  // 20 veh per cell on three lanes, two thirds of it on two lanes.
  const auto R = c.initial_densities();
  CHECK(R.front() * c.env.dx == doctest::Approx(20.0));
  CHECK(R.back() * c.env.dx == doctest::Approx(20.0 * 2.0 / 3.0));
  CHECK(c.initial_model().filters().front().P == Eigen::Matrix2d::Identity());
}

TEST_CASE("desk preset is a 400 m, 8-cell corridor") {
  const auto c = RunConfig::desk_scale();
  CHECK(c.env.control_length() == 400.0);
  CHECK(c.env.n_cells() == 8);
  CHECK(c.train.total_steps <= 30000);
  CHECK(c.layer_sizes().front() == 18);
}

TEST_CASE("filter speed ceiling respects the CFL limit") {
  const auto c = RunConfig::full_scale();
  CHECK(c.effective_bounds().max_speed == 25.0);
  CHECK(macro::check_cfl(c.effective_bounds().max_speed, c.env.dt, c.env.dx));
}

TEST_CASE("serialisation round-trips exactly") {
  for (auto base : {RunConfig::full_scale(), RunConfig::desk_scale()}) {
    base.train.adam.learning_rate = 0.1 + 0.2;
    base.filter.narrow_fraction = 1.0 / 3.0;
    base.network.hidden = {7, 13, 5};
    base.train.seed = 18446744073709551615ull;
    base.output.dir = "some dir/with spaces";
    const auto text = serialize_config(base);
    const auto back = parse_config(text);
    CHECK(back == base);
    CHECK(serialize_config(back) == text);
    CHECK(back.train.adam.learning_rate == 0.1 + 0.2);
  }
}

TEST_CASE("shipped configuration files match the presets") {
  CHECK(load_config(kConfigs / "default.conf") == RunConfig::full_scale());
  CHECK(load_config(kConfigs / "desk.conf") == RunConfig::desk_scale());
}

TEST_CASE("partial files override only the given keys") {
  const auto c = parse_config("# comment\n[train]\nseed = 7  # trailing\nplanning_steps = 0\n\n[sim]\nstep_limit = 40\n");
  CHECK(c.train.seed == 7);
  CHECK(c.train.planning_steps == 0);
  CHECK(c.env.step_limit == 40);
  CHECK(c.env.dx == 50.0);
}

TEST_CASE("diagnostics name the source and line") {
  CHECK(config_error("[train]\nseed = 1\nlearning_rat = 0.1\n").find("test.conf:3") != std::string::npos);
  CHECK(config_error("[train]\nlearning_rat = 0.1\n").find("learning_rat") != std::string::npos);
  CHECK(config_error("[nope]\n").find("test.conf:1: unknown section") != std::string::npos);
  CHECK(config_error("seed = 1\n").find("outside of any section") != std::string::npos);
  CHECK(config_error("[train]\nseed = -1\n").find("test.conf:2: invalid value") != std::string::npos);
  CHECK(config_error("[train]\ngamma = 0.9x\n").find("invalid value") != std::string::npos);
  CHECK(config_error("[filter]\nplatoon_speed_cap = yes\n").find("invalid value") != std::string::npos);
  CHECK(config_error("[train\n").find("unterminated") != std::string::npos);
  CHECK(config_error("[train]\nseed\n").find("expected 'key = value'") != std::string::npos);
}

TEST_CASE("cross-field validation") {
  CHECK(config_error("[sim]\ndt = 2\n").find("CFL") != std::string::npos);
  CHECK(config_error("[road]\ndx = 20\nmax_speed = 15\n").find("CFL") != std::string::npos);
  CHECK_FALSE(config_error("[road]\nnarrow_length = 310\n").empty());
  CHECK_FALSE(config_error("[train]\ngamma = 1.5\n").empty());
  CHECK_FALSE(config_error("[train]\nbatch_size = 0\n").empty());
  CHECK_FALSE(config_error("[train]\nbatch_size = 400000\n").empty());
  CHECK_FALSE(config_error("[network]\nhidden = 64,0\n").empty());
  CHECK_FALSE(config_error("[platoon]\naccel_min = 1\n").empty());
  CHECK_FALSE(config_error("[filter]\ninitial_speed = 30\n").empty());
  CHECK(config_error("[train]\nplanning_steps = 0\n").empty());
}

TEST_CASE("missing file is a config error naming the path") {
  try {
    load_config("/nonexistent/run.conf");
    FAIL("expected an exception");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("/nonexistent/run.conf") != std::string::npos);
  }
}
