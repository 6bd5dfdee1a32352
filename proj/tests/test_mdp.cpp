#include <doctest.h>

#include <cstdint>
#include <vector>

#include "dynaplatoon/errors.hpp"
#include "dynaplatoon/mdp.hpp"
#include "oracles.hpp"

using namespace dynaplatoon;
using namespace dynaplatoon::mdp;

namespace {

using oracle::fuel_exact_1e13;

StateVec make_state(double x, double v, std::vector<double> rho, std::vector<double> vbar) {
  const std::size_t n = rho.size();
  std::vector<double> values{x, v};
  values.insert(values.end(), rho.begin(), rho.end());
  values.insert(values.end(), vbar.begin(), vbar.end());
  return StateVec(values, n);
}

RewardParams params16() { return RewardParams{}; }

}  // namespace

TEST_CASE("fuel polynomial anchors") {
  CHECK(fuel_rate(0.0) == 0.99);
  CHECK(fuel_exact_1e13(1) == 10'078'397'564'057);
  CHECK(fuel_rate(1.0) == doctest::Approx(1.0078397564057).epsilon(1e-14));
  CHECK(std::abs(fuel_rate(1.0) - static_cast<double>(fuel_exact_1e13(1)) * 1e-13) < 1e-12);
  for (std::int64_t v = 2; v <= 15; ++v) {
    const double exact = static_cast<double>(fuel_exact_1e13(v)) * 1e-13;
    CHECK(fuel_rate(static_cast<double>(v)) == doctest::Approx(exact).epsilon(1e-14));
  }
  // Frozen regression constant at maximal speed.
  CHECK(fuel_exact_1e13(15) == 14'874'311'765'625);
}

TEST_CASE("fuel rate is strictly positive on its domain") {
  for (int i = 0; i <= 1500; ++i) CHECK(fuel_rate(0.01 * i) > 0.0);
  CHECK_THROWS_AS(fuel_rate(-0.01), DomainError);
  CHECK_THROWS_AS(fuel_rate(15.01), DomainError);
}

TEST_CASE("state vector layout") {
  macro::PlatoonState p{120.0, 9.0, 30.0};
  macro::CellGrid cells{std::vector<double>(16, 0.1), std::vector<double>(16, 12.0)};
  cells.rho[3] = 0.25;
  cells.vbar[15] = 1.0;
  const auto s = encode_state(p, cells);
  CHECK(s.size() == 34);
  CHECK(s.x_p() == 120.0);
  CHECK(s.v_p() == 9.0);
  CHECK(s.rho(3) == 0.25);
  CHECK(s.vbar(15) == 1.0);
  const auto back = cells_of(s);
  CHECK(back.rho == cells.rho);
  CHECK(back.vbar == cells.vbar);

  macro::CellGrid ragged{std::vector<double>(16, 0.1), std::vector<double>(15, 12.0)};
  CHECK_THROWS_AS(encode_state(p, ragged), DomainError);
  CHECK_THROWS_AS(StateVec(std::vector<double>(33, 0.0), 16), DomainError);
  std::vector<double> bad(34, 0.0);
  bad[7] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(StateVec(bad, 16), DomainError);
}

TEST_CASE("action indexing is a bijection") {
  const ActionSet a(-5, 3);
  CHECK(a.size() == 9);
  CHECK(a.index_to_action(0) == -5);
  CHECK(a.index_to_action(8) == 3);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.action_to_index(a.index_to_action(i)) == i);
  CHECK_THROWS_AS(a.action_to_index(4), DomainError);
  CHECK_THROWS_AS(a.index_to_action(9), DomainError);
}

TEST_CASE("breakdown total is the exact sum") {
  const auto b = make_breakdown(-1.1, 10.0, -0.3, -2.0);
  CHECK(b.total == -1.1 + 10.0 + -0.3 + -2.0);
}

TEST_CASE("crossing bonus and timeout charge") {
  const auto p = params16();
  CHECK(crossing_bonus(10.0, 40.0, p) == 0.0);
  CHECK(crossing_bonus(40.0, 55.0, p) == 10.0);
  CHECK(crossing_bonus(40.0, 160.0, p) == 30.0);
  CHECK(crossing_bonus(790.0, 805.0, p) == 100.0);
  CHECK(crossing_bonus(740.0, 805.0, p) == 110.0);
  CHECK(timeout_charge(0.0, true, p) == -3000.0);
  CHECK(timeout_charge(400.0, true, p) == -1500.0);
  CHECK(timeout_charge(400.0, false, p) == 0.0);
  CHECK(timeout_charge(800.0, true, p) == 0.0);
}

TEST_CASE("environment-side reward") {
  const auto p = params16();
  const std::vector<double> zeros(16, 0.0), free(16, 15.0);

  SUBCASE("idle platoon on an empty road") {
    const auto s = make_state(10.0, 0.0, zeros, free);
    const auto r = reward_env_side(s, 0.0, s, {}, false, p);
    CHECK(r.total == doctest::Approx(-4.95).epsilon(1e-15));
    CHECK(r.r_bonus == 0.0);
    CHECK(r.r_ot == 0.0);
  }
  SUBCASE("one boundary crossing at maximal speed") {
    const auto s = make_state(40.0, 15.0, zeros, free);
    const auto n = make_state(55.0, 15.0, zeros, free);
    const auto r = reward_env_side(s, 0.0, n, {}, false, p);
    CHECK(r.r_bonus == 10.0);
    CHECK(r.r_fc == doctest::Approx(-5.0 * 1.4874311765625).epsilon(1e-14));
  }
  SUBCASE("timeout at zero progress") {
    const auto s = make_state(0.0, 0.0, zeros, free);
    CHECK(reward_env_side(s, 0.0, s, {}, true, p).r_ot == -3000.0);
  }
  SUBCASE("acceleration penalty and human vehicles") {
    const auto s = make_state(100.0, 10.0, zeros, free);
    const auto n = make_state(108.0, 6.0, zeros, free);
    const std::vector<double> humans{10.0, 12.0};
    const auto r = reward_env_side(s, -4.0, n, humans, false, p);
    CHECK(r.r_acc == -4.0);
    CHECK(r.r_fc == doctest::Approx(-(fuel_rate(10) + fuel_rate(12) + 5 * fuel_rate(6))));
    CHECK(r.total == r.r_fc + r.r_bonus + r.r_ot + r.r_acc);
  }
}

TEST_CASE("model-side reward") {
  const auto p = params16();
  SUBCASE("empty cells leave only the platoon") {
    const auto s = make_state(100.0, 12.0, std::vector<double>(16, 0.0), std::vector<double>(16, 15.0));
    const auto r = reward_model_side(s, 0.0, s, false, p);
    CHECK(r.r_fc == doctest::Approx(-5.0 * fuel_rate(12.0)).epsilon(1e-15));
  }
  SUBCASE("two vehicles per cell at 10 m/s with the platoon outside the cells") {
    const auto s = make_state(790.0, 12.0, std::vector<double>(16, 0.04), std::vector<double>(16, 10.0));
    const auto n = make_state(800.0, 12.0, std::vector<double>(16, 0.04), std::vector<double>(16, 10.0));
    const auto r = reward_model_side(s, 0.0, n, false, p);
    CHECK(r.r_fc == doctest::Approx(-(32.0 * fuel_rate(10.0) + 5.0 * fuel_rate(12.0))).epsilon(1e-13));
    CHECK(r.r_bonus == 100.0);
  }
  SUBCASE("agrees with the environment side when all vehicles of a cell share one speed") {
    std::vector<double> rho(16, 0.0), vbar(16, 15.0);
    std::vector<double> humans;
    const double dx = 50.0;
    const double speeds[] = {9.0, 11.0, 7.5};
    const int counts[] = {3, 2, 4};
    for (int c = 0; c < 3; ++c) {
      rho[c + 4] = counts[c] / dx;
      vbar[c + 4] = speeds[c];
      for (int k = 0; k < counts[c]; ++k) humans.push_back(speeds[c]);
    }
    // Platoon front in cell 5 sharing that cell's speed.
    rho[5] += 5.0 / dx;
    const auto s = make_state(255.0, 11.0, rho, vbar);
    const auto n = make_state(266.0, 11.0, rho, vbar);
    const auto env = reward_env_side(s, 1.0, n, humans, false, p);
    const auto mod = reward_model_side(s, 1.0, n, false, p);
    CHECK(mod.r_fc == doctest::Approx(env.r_fc).epsilon(1e-13));
    CHECK(mod.r_bonus == env.r_bonus);
    CHECK(mod.r_acc == env.r_acc);
  }
}
