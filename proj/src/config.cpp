#include "dynaplatoon/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "dynaplatoon/errors.hpp"
#include "dynaplatoon/text_io.hpp"

namespace dynaplatoon {

namespace {

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<bool(RunConfig&, std::string_view)> set;  // false on malformed value
};

template <typename Member>
Field real(std::string section, std::string key, Member member) {
  return {std::move(section), std::move(key),
          [member](const RunConfig& c) { return format_double(member(const_cast<RunConfig&>(c))); },
          [member](RunConfig& c, std::string_view v) {
            const auto d = parse_double(v);
            if (!d) return false;
            member(c) = *d;
            return true;
          }};
}

template <typename Int, typename Member>
bool parse_int(std::string_view v, Member member, RunConfig& c) {
  Int value{};
  const auto res = std::from_chars(v.data(), v.data() + v.size(), value);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) return false;
  member(c) = value;
  return true;
}

template <typename Int, typename Member>
Field integer(std::string section, std::string key, Member member) {
  return {std::move(section), std::move(key),
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
          [member](RunConfig& c, std::string_view v) { return parse_int<Int>(v, member, c); }};
}

template <typename Member>
Field boolean(std::string section, std::string key, Member member) {
  return {std::move(section), std::move(key),
          [member](const RunConfig& c) {
            return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false");
          },
          [member](RunConfig& c, std::string_view v) {
            if (v == "true") member(c) = true;
            else if (v == "false") member(c) = false;
            else return false;
            return true;
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    // [road]
    f.push_back(real("road", "preheat_length", [](RunConfig& c) -> double& { return c.env.preheat_length; }));
    f.push_back(real("road", "wide_length", [](RunConfig& c) -> double& { return c.env.wide_length; }));
    f.push_back(real("road", "narrow_length", [](RunConfig& c) -> double& { return c.env.narrow_length; }));
    f.push_back(integer<int>("road", "wide_lanes", [](RunConfig& c) -> int& { return c.env.wide_lanes; }));
    f.push_back(integer<int>("road", "narrow_lanes", [](RunConfig& c) -> int& { return c.env.narrow_lanes; }));
    f.push_back(real("road", "dx", [](RunConfig& c) -> double& { return c.env.dx; }));
    f.push_back(integer<std::size_t>("road", "cells_per_segment", [](RunConfig& c) -> std::size_t& { return c.env.cells_per_segment; }));
    f.push_back(real("road", "max_speed", [](RunConfig& c) -> double& { return c.env.max_speed; }));
    f.push_back(real("road", "empty_cell_speed", [](RunConfig& c) -> double& { return c.env.empty_cell_speed; }));
    // [traffic]
    f.push_back(real("traffic", "inflow_per_hour", [](RunConfig& c) -> double& { return c.env.inflow_per_hour; }));
    f.push_back({"traffic", "arrivals",
                 [](const RunConfig& c) {
                   return std::string(c.env.arrivals == micro::Arrivals::periodic ? "periodic" : "poisson");
                 },
                 [](RunConfig& c, std::string_view v) {
                   if (v == "periodic") c.env.arrivals = micro::Arrivals::periodic;
                   else if (v == "poisson") c.env.arrivals = micro::Arrivals::poisson;
                   else return false;
                   return true;
                 }});
    f.push_back(real("traffic", "vehicle_length", [](RunConfig& c) -> double& { return c.env.vehicle_length; }));
    f.push_back(real("traffic", "min_gap", [](RunConfig& c) -> double& { return c.env.min_gap; }));
    f.push_back(real("traffic", "krauss_tau", [](RunConfig& c) -> double& { return c.env.krauss.tau; }));
    f.push_back(real("traffic", "krauss_decel", [](RunConfig& c) -> double& { return c.env.krauss.decel; }));
    f.push_back(real("traffic", "krauss_sigma", [](RunConfig& c) -> double& { return c.env.krauss.sigma; }));
    f.push_back(real("traffic", "krauss_accel", [](RunConfig& c) -> double& { return c.env.krauss.accel; }));
    f.push_back(real("traffic", "merge_zone", [](RunConfig& c) -> double& { return c.env.merge_zone; }));
    // [platoon]
    f.push_back(real("platoon", "length", [](RunConfig& c) -> double& { return c.env.platoon_length; }));
    f.push_back(real("platoon", "equivalents", [](RunConfig& c) -> double& { return c.env.platoon_equivalents; }));
    f.push_back(integer<int>("platoon", "lane", [](RunConfig& c) -> int& { return c.env.platoon_lane; }));
    f.push_back(real("platoon", "entry_time", [](RunConfig& c) -> double& { return c.env.platoon_entry_time; }));
    f.push_back(integer<int>("platoon", "accel_min", [](RunConfig& c) -> int& { return c.env.accel_min; }));
    f.push_back(integer<int>("platoon", "accel_max", [](RunConfig& c) -> int& { return c.env.accel_max; }));
    // [sim]
    f.push_back(real("sim", "dt", [](RunConfig& c) -> double& { return c.env.dt; }));
    f.push_back(integer<std::size_t>("sim", "step_limit", [](RunConfig& c) -> std::size_t& { return c.env.step_limit; }));
    f.push_back(real("sim", "max_warmup_time", [](RunConfig& c) -> double& { return c.env.max_warmup_time; }));
    // [reward]
    f.push_back(real("reward", "bonus_cell", [](RunConfig& c) -> double& { return c.env.reward.bonus_cell; }));
    f.push_back(real("reward", "bonus_end", [](RunConfig& c) -> double& { return c.env.reward.bonus_end; }));
    f.push_back(real("reward", "timeout_penalty", [](RunConfig& c) -> double& { return c.env.reward.timeout_penalty; }));
    f.push_back(real("reward", "accel_penalty", [](RunConfig& c) -> double& { return c.env.reward.accel_penalty; }));
    // [filter]
    f.push_back(real("filter", "initial_speed", [](RunConfig& c) -> double& { return c.filter.initial_speed; }));
    f.push_back(real("filter", "wide_density", [](RunConfig& c) -> double& { return c.filter.wide_density; }));
    f.push_back(real("filter", "narrow_fraction", [](RunConfig& c) -> double& { return c.filter.narrow_fraction; }));
    f.push_back(real("filter", "min_speed", [](RunConfig& c) -> double& { return c.filter.bounds.min_speed; }));
    f.push_back(real("filter", "max_speed", [](RunConfig& c) -> double& { return c.filter.bounds.max_speed; }));
    f.push_back(real("filter", "min_density", [](RunConfig& c) -> double& { return c.filter.bounds.min_density; }));
    f.push_back(real("filter", "max_density", [](RunConfig& c) -> double& { return c.filter.bounds.max_density; }));
    f.push_back(boolean("filter", "platoon_speed_cap", [](RunConfig& c) -> bool& { return c.filter.platoon_speed_cap; }));
    f.push_back(real("filter", "capacity_factor", [](RunConfig& c) -> double& { return c.filter.capacity_factor; }));
    // [network]
    f.push_back({"network", "hidden",
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.network.hidden.size(); ++i) {
                     s += (i ? "," : "") + std::to_string(c.network.hidden[i]);
                   }
                   return s;
                 },
                 [](RunConfig& c, std::string_view v) {
                   std::vector<std::size_t> widths;
                   for (auto field : split(v, ", ")) {
                     std::size_t w = 0;
                     const auto res = std::from_chars(field.data(), field.data() + field.size(), w);
                     if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) return false;
                     widths.push_back(w);
                   }
                   c.network.hidden = std::move(widths);
                   return true;
                 }});
    f.push_back(real("network", "density_scale", [](RunConfig& c) -> double& { return c.network.density_scale; }));
    // [train]
    f.push_back({"train", "algorithm",
                 [](const RunConfig& c) {
                   return std::string(c.train.algorithm == Algorithm::dyna ? "dyna" : "dqn");
                 },
                 [](RunConfig& c, std::string_view v) {
                   if (v == "dyna") c.train.algorithm = Algorithm::dyna;
                   else if (v == "dqn") c.train.algorithm = Algorithm::dqn;
                   else return false;
                   return true;
                 }});
    f.push_back(integer<std::size_t>("train", "episodes", [](RunConfig& c) -> std::size_t& { return c.train.episodes; }));
    f.push_back(integer<std::size_t>("train", "total_steps", [](RunConfig& c) -> std::size_t& { return c.train.total_steps; }));
    f.push_back(integer<std::size_t>("train", "planning_steps", [](RunConfig& c) -> std::size_t& { return c.train.planning_steps; }));
    f.push_back(integer<std::size_t>("train", "sync_period", [](RunConfig& c) -> std::size_t& { return c.train.sync_period; }));
    f.push_back(real("train", "gamma", [](RunConfig& c) -> double& { return c.train.gamma; }));
    f.push_back(real("train", "learning_rate", [](RunConfig& c) -> double& { return c.train.adam.learning_rate; }));
    f.push_back(real("train", "adam_beta1", [](RunConfig& c) -> double& { return c.train.adam.beta1; }));
    f.push_back(real("train", "adam_beta2", [](RunConfig& c) -> double& { return c.train.adam.beta2; }));
    f.push_back(real("train", "adam_epsilon", [](RunConfig& c) -> double& { return c.train.adam.epsilon; }));
    f.push_back(integer<std::size_t>("train", "batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; }));
    f.push_back(integer<std::size_t>("train", "replay_capacity", [](RunConfig& c) -> std::size_t& { return c.train.replay_capacity; }));
    f.push_back(real("train", "greedy_max", [](RunConfig& c) -> double& { return c.train.schedule.max_greedy; }));
    f.push_back(integer<std::size_t>("train", "greedy_ramp_steps", [](RunConfig& c) -> std::size_t& { return c.train.schedule.ramp_steps; }));
    f.push_back(real("train", "reward_scale", [](RunConfig& c) -> double& { return c.train.reward_scale; }));
    f.push_back(integer<std::uint64_t>("train", "seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }));
    // [output]
    f.push_back({"output", "dir", [](const RunConfig& c) { return c.output.dir; },
                 [](RunConfig& c, std::string_view v) {
                   if (v.empty()) return false;
                   c.output.dir = std::string(v);
                   return true;
                 }});
    f.push_back(boolean("output", "density_series", [](RunConfig& c) -> bool& { return c.output.density_series; }));
    f.push_back(boolean("output", "trajectory_log", [](RunConfig& c) -> bool& { return c.output.trajectory_log; }));
    return f;
  }();
  return table;
}

}  // namespace

RunConfig RunConfig::full_scale() {
  RunConfig c;
  c.validate();
  return c;
}

RunConfig RunConfig::desk_scale() {
  RunConfig c;
  c.env.wide_length = 200.0;
  c.env.narrow_length = 200.0;
  c.env.step_limit = 80;
  c.train.total_steps = 30000;
  c.train.schedule.ramp_steps = 5000;
  c.output.dir = "runs/desk";
  c.validate();
  return c;
}

adaptive::FilterBounds RunConfig::effective_bounds() const {
  adaptive::FilterBounds b = filter.bounds;
  b.max_speed = std::min(b.max_speed, env.dx / (2.0 * env.dt));
  return b;
}

std::vector<double> RunConfig::initial_densities() const {
  std::vector<double> out;
  for (int lanes : env.segment_lanes()) {
    out.push_back(lanes == env.wide_lanes ? filter.wide_density
                                          : filter.wide_density * filter.narrow_fraction);
  }
  return out;
}

adaptive::ModelState RunConfig::initial_model() const {
  return adaptive::ModelState::initial(geometry(), filter.initial_speed, initial_densities());
}

adaptive::WorldModelParams RunConfig::world_model() const {
  adaptive::WorldModelParams p;
  p.dt = env.dt;
  p.max_speed = env.max_speed;
  p.inflow_rate = env.inflow_per_hour / 3600.0;
  p.platoon_length = env.platoon_length;
  p.step_limit = env.step_limit;
  p.platoon_speed_cap = filter.platoon_speed_cap;
  p.capacity_factor = filter.capacity_factor;
  p.reward = env.reward;
  return p;
}

qlearn::Normalizer RunConfig::normalizer() const {
  return {env.control_length(), env.max_speed, network.density_scale};
}

std::vector<std::size_t> RunConfig::layer_sizes() const {
  std::vector<std::size_t> sizes{2 + 2 * env.n_cells()};
  sizes.insert(sizes.end(), network.hidden.begin(), network.hidden.end());
  sizes.push_back(actions().size());
  return sizes;
}

void RunConfig::validate() {
  env.validate();
  macro::require_cfl(filter.initial_speed, env.dt, env.dx);
  const auto& b = filter.bounds;
  if (!(b.min_speed > 0.0 && b.min_speed <= b.max_speed)) {
    throw ConfigError("filter speed bounds must satisfy 0 < min_speed <= max_speed");
  }
  if (!(b.min_density > 0.0 && b.min_density <= b.max_density)) {
    throw ConfigError("filter density bounds must satisfy 0 < min_density <= max_density");
  }
  if (!(filter.wide_density > 0.0) || !(filter.narrow_fraction > 0.0)) {
    throw ConfigError("initial filter densities must be positive");
  }
  if (!(filter.capacity_factor >= 0.0 && filter.capacity_factor <= 1.0)) {
    throw ConfigError("capacity_factor must lie in [0, 1]");
  }
  if (network.hidden.empty() ||
      std::any_of(network.hidden.begin(), network.hidden.end(), [](auto w) { return w == 0; })) {
    throw ConfigError("hidden layer widths must be positive");
  }
  if (!(network.density_scale > 0.0)) throw ConfigError("density_scale must be positive");
  const auto& t = train;
  if (!(t.gamma >= 0.0 && t.gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (t.episodes == 0 || t.sync_period == 0 || t.batch_size == 0 || t.replay_capacity == 0) {
    throw ConfigError("episodes, sync_period, batch_size and replay_capacity must be positive");
  }
  if (t.batch_size > t.replay_capacity) throw ConfigError("batch_size exceeds replay capacity");
  if (!(t.adam.learning_rate > 0.0) || !(t.adam.epsilon > 0.0) ||
      !(t.adam.beta1 >= 0.0 && t.adam.beta1 < 1.0) || !(t.adam.beta2 >= 0.0 && t.adam.beta2 < 1.0)) {
    throw ConfigError("Adam settings out of range");
  }
  if (!(t.schedule.max_greedy >= 0.0 && t.schedule.max_greedy <= 1.0)) {
    throw ConfigError("greedy_max must lie in [0, 1]");
  }
  if (!(t.reward_scale > 0.0)) throw ConfigError("reward_scale must be positive");
}

bool RunConfig::operator==(const RunConfig& o) const {
  for (const auto& f : fields()) {
    if (f.get(*this) != f.get(o)) return false;
  }
  return true;
}

RunConfig parse_config(std::string_view text, const std::string& source) {
  std::map<std::pair<std::string, std::string>, const Field*> index;
  for (const auto& f : fields()) index[{f.section, f.key}] = &f;

  RunConfig cfg;
  std::string section;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    std::ostringstream msg;
    msg << source << ":" << line_no << ": " << why;
    throw ConfigError(msg.str());
  };

  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    std::string_view raw = text.substr(pos, end == std::string_view::npos ? text.size() - pos : end - pos);
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;

    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const auto line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      const bool known = std::any_of(fields().begin(), fields().end(),
                                     [&](const Field& f) { return f.section == section; });
      if (!known) fail("unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail("expected 'key = value'");
    if (section.empty()) fail("key outside of any section");
    const std::string key(trim(line.substr(0, eq)));
    const auto value = trim(line.substr(eq + 1));
    const auto it = index.find({section, key});
    if (it == index.end()) fail("unknown key '" + key + "' in [" + section + "]");
    if (!it->second->set(cfg, value)) {
      fail("invalid value '" + std::string(value) + "' for " + section + "." + key);
    }
  }

  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.string());
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      out << (section.empty() ? "" : "\n") << '[' << f.section << "]\n";
      section = f.section;
    }
    out << f.key << " = " << f.get(cfg) << '\n';
  }
  return out.str();
}

}  // namespace dynaplatoon
