#include "dynaplatoon/micro_env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "dynaplatoon/adaptive_model.hpp"
#include "dynaplatoon/errors.hpp"

namespace dynaplatoon::micro {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kGapTolerance = 1e-9;

bool is_multiple(double length, double unit) {
  const double q = length / unit;
  return std::abs(q - std::round(q)) < 1e-9;
}

}  // namespace

std::size_t EnvConfig::n_cells() const {
  return static_cast<std::size_t>(std::llround(control_length() / dx));
}

macro::RoadGeometry EnvConfig::geometry() const {
  return macro::RoadGeometry::uniform(n_cells(), dx, cells_per_segment);
}

std::vector<int> EnvConfig::segment_lanes() const {
  const auto g = geometry();
  std::vector<int> lanes(g.n_segments);
  const double seg_len = dx * static_cast<double>(cells_per_segment);
  for (std::size_t s = 0; s < g.n_segments; ++s) {
    lanes[s] = static_cast<double>(s) * seg_len < wide_length - 1e-9 ? wide_lanes : narrow_lanes;
  }
  return lanes;
}

void EnvConfig::validate() {
  if (!(dt > 0.0) || !(dx > 0.0) || !(max_speed > 0.0)) {
    throw ConfigError("dt, dx and max_speed must be positive");
  }
  macro::require_cfl(max_speed, dt, dx);
  if (!(preheat_length > 0.0) || !(wide_length > 0.0) || !(narrow_length >= 0.0)) {
    throw ConfigError("road section lengths must be positive");
  }
  if (!is_multiple(control_length(), dx)) {
    std::ostringstream msg;
    msg << "controlled length " << control_length() << " m is not a whole number of " << dx
        << " m cells";
    throw ConfigError(msg.str());
  }
  if (cells_per_segment == 0 || n_cells() % cells_per_segment != 0) {
    throw ConfigError("cell count must be a multiple of cells_per_segment");
  }
  if (!is_multiple(wide_length, dx * static_cast<double>(cells_per_segment))) {
    throw ConfigError("lane drop must fall on a segment boundary");
  }
  if (wide_lanes < 1 || narrow_lanes < 1 || narrow_lanes > wide_lanes) {
    throw ConfigError("lane counts must satisfy 1 <= narrow_lanes <= wide_lanes");
  }
  if (platoon_lane < 0 || platoon_lane >= narrow_lanes) {
    throw ConfigError("platoon lane must continue through the lane drop");
  }
  if (accel_min > 0 || accel_max < 0 || accel_min >= accel_max) {
    throw ConfigError("acceleration bounds must bracket zero");
  }
  if (step_limit == 0) throw ConfigError("step limit must be positive");
  if (!(inflow_per_hour >= 0.0)) throw ConfigError("inflow must be non-negative");
  if (!(krauss.sigma >= 0.0 && krauss.sigma <= 1.0)) throw ConfigError("sigma must lie in [0, 1]");
  if (!(krauss.tau > 0.0) || !(krauss.decel > 0.0) || !(krauss.accel > 0.0)) {
    throw ConfigError("Krauss tau, decel and accel must be positive");
  }
  if (!(vehicle_length > 0.0) || !(platoon_length > 0.0) || !(min_gap >= 0.0)) {
    throw ConfigError("vehicle lengths must be positive and min_gap non-negative");
  }
  if (!(empty_cell_speed > 0.0 && empty_cell_speed <= max_speed)) {
    throw ConfigError("empty-cell speed must lie in (0, max_speed]");
  }
  reward.dt = dt;
  reward.dx = dx;
  reward.n_cells = n_cells();
  reward.platoon_equivalents = platoon_equivalents;
  reward.max_speed = max_speed;
}

double krauss_safe_speed(double v_follower, double v_leader, double gap, double tau,
                         double decel) {
  return v_leader + (gap - v_leader * tau) / (tau + (v_follower + v_leader) / (2.0 * decel));
}

double krauss_speed(double v, double v_safe, double v_max, double accel, double sigma, double dt,
                    double u) {
  const double desired = std::min({v_max, v + accel * dt, v_safe});
  return std::max(0.0, desired - sigma * accel * dt * u);
}

double krauss_step(const Vehicle& self, const Vehicle* leader, const KraussParams& krauss,
                   double min_gap, double v_max, double dt, Engine& rng) {
  double v_safe = kInf;
  if (leader != nullptr) {
    const double gap = std::max(0.0, leader->rear() - min_gap - self.x);
    v_safe = krauss_safe_speed(self.v, leader->v, gap, krauss.tau, krauss.decel);
  }
  return krauss_speed(self.v, v_safe, v_max, krauss.accel, krauss.sigma, dt, uniform01(rng));
}

MicroEnv::MicroEnv(EnvConfig config) : config_(std::move(config)) {
  config_.validate();
  geometry_ = config_.geometry();
}

int MicroEnv::lanes_at(double x) const {
  return x < config_.drop_position() ? config_.wide_lanes : config_.narrow_lanes;
}

void MicroEnv::reseed_dawdle(std::uint64_t seed) { dawdle_rng_ = make_engine(seed, Stream::dawdle); }

void MicroEnv::reset_empty(std::uint64_t seed) {
  lanes_.assign(static_cast<std::size_t>(config_.wide_lanes), {});
  inflow_rng_ = make_engine(seed, Stream::inflow);
  dawdle_rng_ = make_engine(seed, Stream::dawdle);
  phase_ = Phase::warmup;
  time_ = 0.0;
  next_arrival_ = 0.0;
  queue_ = spawned_ = exited_ = merges_ = control_steps_ = 0;
  next_id_ = 1;
  platoon_entered_ = platoon_on_road_ = false;
  platoon_ = {-config_.preheat_length, 0.0, config_.platoon_length};
}

Observation MicroEnv::reset(std::uint64_t seed) {
  reset_empty(seed);
  while (phase_ == Phase::warmup) {
    if (time_ > config_.max_warmup_time) {
      throw StateError("platoon did not reach the controlled corridor during warm-up");
    }
    advance(std::nullopt);
  }
  return observe();
}

void MicroEnv::insert_sorted(Vehicle v) {
  auto& lane = lanes_.at(static_cast<std::size_t>(v.lane));
  auto it = std::find_if(lane.begin(), lane.end(), [&](const Vehicle& o) { return o.x < v.x; });
  lane.insert(it, v);
}

void MicroEnv::add_vehicle(int lane, double x, double v) {
  if (phase_ == Phase::idle) throw StateError("call reset_empty before building a scenario");
  if (lane < 0 || lane >= lanes_at(x)) throw DomainError("lane does not exist at that position");
  if (v < 0.0 || v > config_.max_speed) throw DomainError("speed outside [0, max_speed]");
  Vehicle veh{next_id_++, lane, x, v, config_.vehicle_length, false};
  for (const auto& o : lanes_[static_cast<std::size_t>(lane)]) {
    const bool ahead = o.x >= x;
    const double gap = ahead ? o.rear() - config_.min_gap - x : veh.rear() - config_.min_gap - o.x;
    if (gap < -kGapTolerance) throw DomainError("vehicle would overlap a neighbour");
  }
  insert_sorted(veh);
  ++spawned_;
}

void MicroEnv::place_platoon(double x_p, double v) {
  if (phase_ == Phase::idle) throw StateError("call reset_empty before building a scenario");
  if (platoon_on_road_) throw StateError("platoon already on the road");
  const double x = config_.preheat_length + x_p;
  Vehicle p{0, config_.platoon_lane, x, v, config_.platoon_length, true};
  for (const auto& o : lanes_[static_cast<std::size_t>(p.lane)]) {
    const bool ahead = o.x >= x;
    const double gap = ahead ? o.rear() - config_.min_gap - x : p.rear() - config_.min_gap - o.x;
    if (gap < -kGapTolerance) throw DomainError("platoon would overlap a neighbour");
  }
  insert_sorted(p);
  platoon_entered_ = platoon_on_road_ = true;
  platoon_ = {x_p, v, config_.platoon_length};
  phase_ = Phase::control;
  control_steps_ = 0;
}

std::size_t MicroEnv::humans_on_road() const {
  std::size_t n = 0;
  for (const auto& lane : lanes_) {
    for (const auto& v : lane) n += v.platoon ? 0 : 1;
  }
  return n;
}

void MicroEnv::set_trajectory_log(std::ostream* log) {
  log_ = log;
  if (log_ != nullptr) *log_ << "t,id,lane,x,v\n";
}

void MicroEnv::move_vehicles(std::optional<double> platoon_accel) {
  const auto& k = config_.krauss;
  const double dt = config_.dt;
  const double drop = config_.drop_position();

  for (std::size_t l = 0; l < lanes_.size(); ++l) {
    auto& lane = lanes_[l];
    const bool ends = static_cast<int>(l) >= config_.narrow_lanes;
    // Desired speeds from the state at the start of the step.
    std::vector<double> new_v(lane.size());
    std::vector<double> new_x(lane.size());
    for (std::size_t i = 0; i < lane.size(); ++i) {
      const Vehicle& self = lane[i];
      const double u = uniform01(dawdle_rng_);
      double v_safe = kInf;
      if (i > 0) {
        const Vehicle& leader = lane[i - 1];
        const double gap = std::max(0.0, leader.rear() - config_.min_gap - self.x);
        v_safe = krauss_safe_speed(self.v, leader.v, gap, k.tau, k.decel);
      }
      if (ends) {
        const double gap = std::max(0.0, drop - self.x);
        v_safe = std::min(v_safe, krauss_safe_speed(self.v, 0.0, gap, k.tau, k.decel));
      }
      if (self.platoon && platoon_accel) {
        const double a = *platoon_accel;
        const double commanded = std::clamp(self.v + a * dt, 0.0, config_.max_speed);
        if (commanded <= v_safe) {
          const auto kin = adaptive::predict_platoon({self.x, self.v, self.length}, a, dt,
                                                     config_.max_speed);
          new_v[i] = kin.v;
          new_x[i] = kin.x;
        } else {
          new_v[i] = std::max(0.0, v_safe);
          new_x[i] = self.x + 0.5 * (self.v + new_v[i]) * dt;
        }
      } else {
        const double a_max = self.platoon ? static_cast<double>(config_.accel_max) : k.accel;
        new_v[i] = krauss_speed(self.v, v_safe, config_.max_speed, a_max, k.sigma, dt, u);
        new_x[i] = self.x + new_v[i] * dt;
      }
    }
    // Front-to-back guard against overlap with the leader's new position.
    for (std::size_t i = 0; i < lane.size(); ++i) {
      Vehicle& self = lane[i];
      double bound = ends ? drop : kInf;
      if (i > 0) bound = std::min(bound, lane[i - 1].rear() - config_.min_gap);
      if (new_x[i] > bound) {
        new_v[i] = std::min(new_v[i], std::max(0.0, (bound - self.x) / dt));
        new_x[i] = std::max(self.x, bound);
      }
      self.x = new_x[i];
      self.v = std::clamp(new_v[i], 0.0, config_.max_speed);
    }
  }
}

void MicroEnv::merge_dropped_lanes() {
  const double drop = config_.drop_position();
  const double tau = config_.krauss.tau;
  for (int from = config_.wide_lanes - 1; from >= config_.narrow_lanes; --from) {
    const int to = from - 1;
    auto& src = lanes_[static_cast<std::size_t>(from)];
    for (std::size_t i = 0; i < src.size();) {
      Vehicle& veh = src[i];
      if (veh.x < drop - config_.merge_zone) {
        ++i;
        continue;
      }
      const auto& dst = lanes_[static_cast<std::size_t>(to)];
      const Vehicle* leader = nullptr;
      const Vehicle* follower = nullptr;
      for (const auto& o : dst) {
        if (o.x >= veh.x) {
          leader = &o;
        } else {
          follower = &o;
          break;
        }
      }
      const double front_gap = leader ? leader->rear() - config_.min_gap - veh.x : kInf;
      const double rear_gap = follower ? veh.rear() - config_.min_gap - follower->x : kInf;
      const bool ok = front_gap >= 0.0 && rear_gap >= 0.0 && front_gap >= veh.v * tau &&
                      rear_gap >= (follower ? follower->v * tau : 0.0);
      if (!ok) {
        ++i;
        continue;
      }
      Vehicle moved = veh;
      moved.lane = to;
      src.erase(src.begin() + static_cast<std::ptrdiff_t>(i));
      insert_sorted(moved);
      ++merges_;
    }
  }
}

void MicroEnv::remove_exited() {
  const double end = config_.corridor_length();
  for (auto& lane : lanes_) {
    while (!lane.empty() && lane.front().x >= end) {
      if (lane.front().platoon) {
        platoon_on_road_ = false;
      } else {
        ++exited_;
      }
      lane.erase(lane.begin());
    }
  }
}

bool MicroEnv::entry_admissible(int lane, double* insert_speed) const {
  const auto& l = lanes_[static_cast<std::size_t>(lane)];
  double v_ins = config_.max_speed;
  double gap = kInf;
  if (!l.empty()) {
    const Vehicle& last = l.back();
    v_ins = std::min(v_ins, last.v);
    gap = last.rear() - config_.min_gap;
  }
  *insert_speed = v_ins;
  return gap >= 0.0 && gap >= v_ins * config_.krauss.tau;
}

void MicroEnv::spawn() {
  const double rate = config_.inflow_per_hour / 3600.0;
  if (rate > 0.0) {
    if (config_.arrivals == Arrivals::periodic) {
      while (next_arrival_ <= time_ + 1e-9) {
        ++queue_;
        next_arrival_ += 1.0 / rate;
      }
    } else {
      std::poisson_distribution<std::size_t> poisson(rate * config_.dt);
      queue_ += poisson(inflow_rng_);
    }
  }

  std::vector<bool> used(lanes_.size(), false);
  if (!platoon_entered_ && time_ >= config_.platoon_entry_time - 1e-9) {
    double v_ins = 0.0;
    if (entry_admissible(config_.platoon_lane, &v_ins)) {
      insert_sorted({0, config_.platoon_lane, 0.0, v_ins, config_.platoon_length, true});
      platoon_entered_ = platoon_on_road_ = true;
      used[static_cast<std::size_t>(config_.platoon_lane)] = true;
    }
  }

  while (queue_ > 0) {
    std::vector<int> open;
    std::vector<double> speeds;
    for (int l = 0; l < config_.wide_lanes; ++l) {
      double v_ins = 0.0;
      if (!used[static_cast<std::size_t>(l)] && entry_admissible(l, &v_ins)) {
        open.push_back(l);
        speeds.push_back(v_ins);
      }
    }
    if (open.empty()) break;
    const std::size_t pick = uniform_index(inflow_rng_, open.size());
    insert_sorted({next_id_++, open[pick], 0.0, speeds[pick], config_.vehicle_length, false});
    used[static_cast<std::size_t>(open[pick])] = true;
    --queue_;
    ++spawned_;
  }
}

void MicroEnv::check_invariants() const {
  for (std::size_t l = 0; l < lanes_.size(); ++l) {
    const auto& lane = lanes_[l];
    for (std::size_t i = 0; i < lane.size(); ++i) {
      const auto& v = lane[i];
      if (!(v.v >= 0.0 && v.v <= config_.max_speed)) {
        throw SolverError("vehicle speed left [0, max_speed]");
      }
      if (i > 0 && lane[i - 1].rear() - config_.min_gap - v.x < -kGapTolerance) {
        std::ostringstream msg;
        msg << "overlap in lane " << l << " at t=" << time_ << " between vehicles "
            << lane[i - 1].id << " and " << v.id;
        throw SolverError(msg.str());
      }
      if (static_cast<int>(l) >= config_.narrow_lanes && v.x > config_.drop_position() + kGapTolerance) {
        throw SolverError("vehicle passed the end of a dropped lane");
      }
    }
  }
}

void MicroEnv::log_state() {
  if (log_ == nullptr) return;
  for (const auto& lane : lanes_) {
    for (const auto& v : lane) {
      *log_ << time_ << ',' << v.id << ',' << v.lane << ',' << v.x << ',' << v.v << '\n';
    }
  }
}

void MicroEnv::advance(std::optional<double> platoon_accel) {
  move_vehicles(platoon_accel);
  merge_dropped_lanes();

  for (const auto& lane : lanes_) {
    for (const auto& v : lane) {
      if (v.platoon) platoon_ = {v.x - config_.preheat_length, v.v, v.length};
    }
  }
  remove_exited();
  time_ += config_.dt;
  spawn();
  check_invariants();
  log_state();

  if (phase_ == Phase::warmup && platoon_on_road_) {
    for (const auto& v : lanes_[static_cast<std::size_t>(config_.platoon_lane)]) {
      if (v.platoon) platoon_ = {v.x - config_.preheat_length, v.v, v.length};
    }
    if (platoon_.x >= 0.0) phase_ = Phase::control;
  }
}

Observation MicroEnv::observe() const {
  const std::size_t n = geometry_.n_cells;
  std::vector<double> count(n, 0.0);
  std::vector<double> speed_sum(n, 0.0);
  for (const auto& lane : lanes_) {
    for (const auto& v : lane) {
      const auto cell = geometry_.cell_at(v.x - config_.preheat_length);
      if (!cell) continue;
      const double w = v.platoon ? config_.platoon_equivalents : 1.0;
      count[*cell] += w;
      speed_sum[*cell] += w * v.v;
    }
  }
  macro::CellGrid cells;
  cells.rho.resize(n);
  cells.vbar.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    cells.rho[i] = count[i] / geometry_.dx;
    cells.vbar[i] = count[i] > 0.0 ? speed_sum[i] / count[i] : config_.empty_cell_speed;
  }
  return mdp::encode_state(platoon_, cells);
}

std::vector<double> MicroEnv::control_human_speeds() const {
  std::vector<double> speeds;
  for (const auto& lane : lanes_) {
    for (const auto& v : lane) {
      if (!v.platoon && geometry_.cell_at(v.x - config_.preheat_length)) speeds.push_back(v.v);
    }
  }
  return speeds;
}

StepResult MicroEnv::finish_step(const Observation& prev, double accel) {
  ++control_steps_;
  StepResult r;
  r.observation = observe();
  r.accel = accel;
  r.finished = !platoon_on_road_ || platoon_.x >= config_.control_length();
  const bool limit = control_steps_ >= config_.step_limit;
  r.timed_out = limit && !r.finished;
  r.reward = mdp::reward_env_side(prev, accel, r.observation, control_human_speeds(), limit,
                                  config_.reward);
  r.fuel_rate = -r.reward.r_fc / config_.dt;
  r.done = r.finished || limit;
  if (r.done) {
    // The platoon leaves the simulation once it has crossed the end of the controlled corridor.
    for (auto& lane : lanes_) {
      std::erase_if(lane, [](const Vehicle& v) { return v.platoon; });
    }
    platoon_on_road_ = false;
    phase_ = Phase::done;
  }
  return r;
}

StepResult MicroEnv::step(int accel) {
  if (phase_ == Phase::done) throw StateError("episode already finished");
  if (phase_ != Phase::control) throw StateError("platoon is not under external control");
  if (accel < config_.accel_min || accel > config_.accel_max) {
    std::ostringstream msg;
    msg << "acceleration " << accel << " outside [" << config_.accel_min << ", "
        << config_.accel_max << "]";
    throw DomainError(msg.str());
  }
  const Observation prev = observe();
  advance(static_cast<double>(accel));
  return finish_step(prev, static_cast<double>(accel));
}

StepResult MicroEnv::step_krauss() {
  if (phase_ == Phase::done) throw StateError("episode already finished");
  if (phase_ != Phase::control) throw StateError("platoon is not under external control");
  const Observation prev = observe();
  advance(std::nullopt);
  return finish_step(prev, (platoon_.v - prev.v_p()) / config_.dt);
}

}  // namespace dynaplatoon::micro
