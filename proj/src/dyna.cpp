#include "dynaplatoon/dyna.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <string>

#include "dynaplatoon/errors.hpp"
#include "dynaplatoon/micro_env.hpp"
#include "dynaplatoon/text_io.hpp"

namespace dynaplatoon::dyna {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

double mean_of(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Mean absolute per-cell error of a predicted state against the observed one.
std::pair<double, double> state_errors(const mdp::StateVec& pred, const mdp::StateVec& obs,
                                       double dx) {
  double d = 0.0;
  double v = 0.0;
  const std::size_t n = obs.n_cells();
  for (std::size_t i = 0; i < n; ++i) {
    d += std::abs(pred.rho(i) - obs.rho(i)) * dx;
    v += std::abs(pred.vbar(i) - obs.vbar(i));
  }
  return {d / static_cast<double>(n), v / static_cast<double>(n)};
}

std::size_t greedy_action(const qlearn::QNetwork& net, const qlearn::Normalizer& norm,
                          const mdp::StateVec& s) {
  const Eigen::VectorXd q = net.forward(norm.apply(s));
  return qlearn::argmax(std::span<const double>(q.data(), static_cast<std::size_t>(q.size())));
}

nlohmann::json episode_json(const EpisodeRecord& e) {
  nlohmann::json j;
  j["episode"] = e.episode;
  j["env_seed"] = e.env_seed;
  j["steps"] = e.steps;
  j["env_step_end"] = e.env_step_end;
  j["total_reward"] = e.reward.total;
  j["r_fc"] = e.reward.r_fc;
  j["r_bonus"] = e.reward.r_bonus;
  j["r_ot"] = e.reward.r_ot;
  j["r_acc"] = e.reward.r_acc;
  j["fuel_l"] = e.fuel_l;
  j["finished"] = e.finished;
  j["timed_out"] = e.timed_out;
  j["truncated"] = e.truncated;
  j["greedy_prob"] = e.greedy_prob;
  j["mean_loss"] = e.mean_loss;
  if (e.mean_density_err) j["mean_density_err"] = *e.mean_density_err;
  if (e.mean_speed_err) j["mean_speed_err"] = *e.mean_speed_err;
  j["real_updates"] = e.real_updates;
  j["virtual_updates"] = e.virtual_updates;
  return j;
}

/// Output streams of a training run; all members stay closed when no directory is given.
struct TrainWriter {
  std::optional<fs::path> dir;
  bool density = false;
  std::ofstream metrics, fuel, dens, errors;

  TrainWriter(const RunConfig& cfg, const std::optional<fs::path>& out, bool model_errors)
      : dir(out), density(cfg.output.density_series) {
    if (!dir) return;
    fs::create_directories(*dir);
    open_out(*dir / "config.conf") << serialize_config(cfg);
    metrics = open_out(*dir / "metrics.jsonl");
    fuel = open_out(*dir / "fuel.csv");
    fuel << "step,rate\n";
    dens = open_out(*dir / "density.csv");
    dens << "step,cell,value\n";
    if (model_errors) {
      errors = open_out(*dir / "errors.csv");
      errors << "step,density_err,speed_err,variant\n";
    }
  }

  void step(std::size_t env_step, const micro::StepResult& r) {
    if (!dir) return;
    fuel << env_step << ',' << format_double(r.fuel_rate) << '\n';
    if (density) {
      const auto rho = r.observation.densities();
      for (std::size_t i = 0; i < rho.size(); ++i) {
        dens << env_step << ',' << i << ',' << format_double(rho[i]) << '\n';
      }
    }
  }

  void model_error(std::size_t env_step, double d, double v) {
    if (!dir) return;
    errors << env_step << ',' << format_double(d) << ',' << format_double(v) << ",adapted\n";
  }

  void episode(const EpisodeRecord& e, const qlearn::QNetwork& net,
               const adaptive::ModelState* model) {
    if (!dir) return;
    metrics << episode_json(e).dump() << '\n';
    metrics.flush();
    fuel.flush();
    dens.flush();
    if (errors.is_open()) errors.flush();
    net.save(*dir / "qnet.txt");
    if (model) model->save(*dir / "filters.txt");
  }
};

/// Learner state shared by the DQN and Dyna-Q loops.
struct Learner {
  const RunConfig& cfg;
  mdp::ActionSet actions;
  qlearn::Normalizer norm;
  qlearn::TdParams td;
  qlearn::QNetwork net;
  qlearn::QNetwork target;
  qlearn::Adam adam;
  qlearn::ReplayMemory memory;
  Engine explore_rng;
  Engine batch_rng;
  std::size_t env_steps = 0;
  RunMetrics metrics;

  static qlearn::QNetwork initial_net(const RunConfig& cfg) {
    qlearn::QNetwork n(cfg.layer_sizes());
    Engine rng = make_engine(cfg.train.seed, Stream::weight_init);
    n.init_uniform(rng);
    return n;
  }

  explicit Learner(const RunConfig& c)
      : cfg(c),
        actions(c.actions()),
        norm(c.normalizer()),
        td{c.train.gamma, c.train.reward_scale},
        net(initial_net(c)),
        target(net),
        adam(net, c.train.adam),
        memory(c.train.replay_capacity),
        explore_rng(make_engine(c.train.seed, Stream::exploration)),
        batch_rng(make_engine(c.train.seed, Stream::batch_sampling)) {}

  bool warm() const { return memory.size() >= cfg.train.batch_size; }
  bool budget_left() const { return env_steps < cfg.train.total_steps; }

  std::size_t act(const mdp::StateVec& s, double greedy_prob) {
    const Eigen::VectorXd q = net.forward(norm.apply(s));
    return qlearn::epsilon_greedy(
        std::span<const double>(q.data(), static_cast<std::size_t>(q.size())), greedy_prob,
        explore_rng);
  }

  double learn_real() {
    const auto batch = memory.sample(cfg.train.batch_size, batch_rng);
    ++metrics.real_updates;
    return qlearn::td_update(net, target, batch, norm, td, adam);
  }

  void after_step() {
    ++env_steps;
    if (env_steps % cfg.train.sync_period == 0) {
      qlearn::sync_target(net, target);
      ++metrics.target_syncs;
    }
  }
};

struct EpisodeState {
  EpisodeRecord rec;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  double derr_sum = 0.0;
  double verr_sum = 0.0;
};

void record_step(EpisodeState& ep, const micro::StepResult& r, RunMetrics& m) {
  auto& rw = ep.rec.reward;
  rw.r_fc += r.reward.r_fc;
  rw.r_bonus += r.reward.r_bonus;
  rw.r_ot += r.reward.r_ot;
  rw.r_acc += r.reward.r_acc;
  rw.total += r.reward.total;
  ep.rec.fuel_l -= r.reward.r_fc;
  ++ep.rec.steps;
  ++m.transitions;
  m.fuel_rate.push_back(r.fuel_rate);
  ep.rec.finished = r.finished;
  ep.rec.timed_out = r.timed_out;
}

void close_episode(EpisodeState& ep, Learner& L, bool model_based) {
  ep.rec.env_step_end = L.env_steps;
  ep.rec.truncated = !ep.rec.finished && !ep.rec.timed_out;
  ep.rec.mean_loss = ep.loss_count ? ep.loss_sum / static_cast<double>(ep.loss_count) : 0.0;
  if (model_based && ep.rec.steps > 0) {
    ep.rec.mean_density_err = ep.derr_sum / static_cast<double>(ep.rec.steps);
    ep.rec.mean_speed_err = ep.verr_sum / static_cast<double>(ep.rec.steps);
  }
  if (!L.metrics.first_success_step && ep.rec.finished) {
    L.metrics.first_success_step = L.env_steps;
  }
  L.metrics.episodes.push_back(ep.rec);
}

template <typename Body>
void guarded(std::size_t episode, std::size_t step, Body&& body) {
  try {
    body();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw TrainingError("episode " + std::to_string(episode) + " step " + std::to_string(step) +
                        ": " + e.what());
  }
}

}  // namespace

std::uint64_t training_env_seed(std::uint64_t root, std::size_t episode) {
  return derive_seed(root, Stream::episode, episode);
}

TrainResult train_dqn(const RunConfig& cfg, const std::optional<fs::path>& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  Learner L(cfg);
  TrainWriter out(cfg, out_dir, false);
  micro::MicroEnv env(cfg.env);

  for (std::size_t e = 0; e < cfg.train.episodes && L.budget_left(); ++e) {
    EpisodeState ep;
    ep.rec.episode = e;
    ep.rec.env_seed = training_env_seed(cfg.train.seed, e);
    ep.rec.greedy_prob = cfg.train.schedule.greedy_prob(L.env_steps);
    guarded(e, 0, [&] {
      mdp::StateVec s = env.reset(ep.rec.env_seed);
      for (std::size_t t = 0; !env.done() && L.budget_left(); ++t) {
        const double g = cfg.train.schedule.greedy_prob(L.env_steps);
        const std::size_t a = L.act(s, g);
        const auto r = env.step(L.actions.index_to_action(a));
        L.memory.push({s, a, r.reward.total, r.observation, r.done, t});
        record_step(ep, r, L.metrics);
        out.step(L.env_steps, r);
        if (L.warm()) {
          ep.loss_sum += L.learn_real();
          ++ep.loss_count;
          ++ep.rec.real_updates;
        }
        L.after_step();
        s = r.observation;
      }
    });
    close_episode(ep, L, false);
    out.episode(ep.rec, L.net, nullptr);
  }

  L.metrics.env_steps = L.env_steps;
  L.metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(L.metrics), std::move(L.net), cfg.initial_model()};
}

TrainResult train_dyna(const RunConfig& cfg, const std::optional<fs::path>& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  Learner L(cfg);
  TrainWriter out(cfg, out_dir, true);
  micro::MicroEnv env(cfg.env);
  adaptive::ModelState model = cfg.initial_model();
  const auto bounds = cfg.effective_bounds();
  const auto wm = cfg.world_model();
  Engine plan_rng = make_engine(cfg.train.seed, Stream::planning_sampling);
  std::vector<qlearn::Transition> virtual_batch(cfg.train.batch_size);

  for (std::size_t e = 0; e < cfg.train.episodes && L.budget_left(); ++e) {
    EpisodeState ep;
    ep.rec.episode = e;
    ep.rec.env_seed = training_env_seed(cfg.train.seed, e);
    ep.rec.greedy_prob = cfg.train.schedule.greedy_prob(L.env_steps);
    std::size_t t = 0;
    guarded(e, t, [&] {
      mdp::StateVec s = env.reset(ep.rec.env_seed);
      for (; !env.done() && L.budget_left(); ++t) {
        const double g = cfg.train.schedule.greedy_prob(L.env_steps);
        const std::size_t a = L.act(s, g);
        const int accel = L.actions.index_to_action(a);
        const auto r = env.step(accel);
        L.memory.push({s, a, r.reward.total, r.observation, r.done, t});
        record_step(ep, r, L.metrics);
        out.step(L.env_steps, r);
        if (L.warm()) {
          ep.loss_sum += L.learn_real();
          ++ep.loss_count;
          ++ep.rec.real_updates;
        }

        // Prediction error of the model as it stood before seeing s'.
        const auto pred = adaptive::one_step_predict(model, s, accel, t, wm);
        const auto [derr, verr] = state_errors(pred.next, r.observation, cfg.env.dx);
        ep.derr_sum += derr;
        ep.verr_sum += verr;
        L.metrics.density_err.push_back(derr);
        L.metrics.speed_err.push_back(verr);
        out.model_error(L.env_steps, derr, verr);
        model.observe(r.observation, bounds);

        for (std::size_t k = 0; k < cfg.train.planning_steps && L.warm(); ++k) {
          const auto idx = L.memory.sample_indices(cfg.train.batch_size, plan_rng);
          for (std::size_t j = 0; j < idx.size(); ++j) {
            const auto& real = L.memory.at(idx[j]);
            const auto p = adaptive::one_step_predict(
                model, real.s, L.actions.index_to_action(real.action), real.step, wm);
            virtual_batch[j] = {real.s, real.action, p.reward.total, p.next, p.done, real.step};
          }
          ep.loss_sum += qlearn::td_update(L.net, L.target, virtual_batch, L.norm, L.td, L.adam);
          ++ep.loss_count;
          ++ep.rec.virtual_updates;
          ++L.metrics.virtual_updates;
        }
        L.after_step();
        s = r.observation;
      }
    });
    close_episode(ep, L, true);
    out.episode(ep.rec, L.net, &model);
  }

  L.metrics.env_steps = L.env_steps;
  L.metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(L.metrics), std::move(L.net), std::move(model)};
}

TrainResult train(const RunConfig& cfg, const std::optional<fs::path>& out_dir) {
  return cfg.train.algorithm == Algorithm::dyna ? train_dyna(cfg, out_dir)
                                                : train_dqn(cfg, out_dir);
}

std::vector<EvalEpisode> evaluate(const RunConfig& cfg, const qlearn::QNetwork* policy,
                                  std::span<const std::uint64_t> seeds,
                                  const std::optional<fs::path>& out_dir) {
  if (policy && policy->sizes() != cfg.layer_sizes()) {
    throw InputError("checkpoint layer sizes do not match the configured network");
  }
  const auto actions = cfg.actions();
  const auto norm = cfg.normalizer();
  std::vector<EvalEpisode> result;
  for (const auto seed : seeds) {
    micro::MicroEnv env(cfg.env);
    std::ofstream traj;
    if (out_dir && cfg.output.trajectory_log) {
      const auto dir = *out_dir / ("seed_" + std::to_string(seed));
      fs::create_directories(dir);
      traj = open_out(dir / "trajectories.csv");
      env.set_trajectory_log(&traj);
    }
    EvalEpisode ep;
    ep.seed = seed;
    mdp::StateVec s = env.reset(seed);
    while (!env.done()) {
      const auto r = policy
                         ? env.step(actions.index_to_action(greedy_action(*policy, norm, s)))
                         : env.step_krauss();
      ep.reward.r_fc += r.reward.r_fc;
      ep.reward.r_bonus += r.reward.r_bonus;
      ep.reward.r_ot += r.reward.r_ot;
      ep.reward.r_acc += r.reward.r_acc;
      ep.reward.total += r.reward.total;
      ep.fuel_l -= r.reward.r_fc;
      ep.fuel_rate.push_back(r.fuel_rate);
      const auto rho = r.observation.densities();
      ep.density.emplace_back(rho.begin(), rho.end());
      ep.finished = r.finished;
      ep.timed_out = r.timed_out;
      ++ep.steps;
      s = r.observation;
    }
    env.set_trajectory_log(nullptr);
    result.push_back(std::move(ep));
  }
  if (out_dir) write_eval(*out_dir, result);
  return result;
}

void write_eval(const fs::path& dir, std::span<const EvalEpisode> episodes) {
  fs::create_directories(dir);
  auto table = open_out(dir / "eval.csv");
  table << "seed,steps,fuel_l,total_reward,r_fc,r_bonus,r_ot,r_acc,finished,timed_out\n";
  double steps = 0.0, fuel = 0.0, reward = 0.0, fc = 0.0, bonus = 0.0, ot = 0.0, acc = 0.0;
  double finished = 0.0, timed_out = 0.0;
  for (const auto& e : episodes) {
    table << e.seed << ',' << e.steps << ',' << format_double(e.fuel_l) << ','
          << format_double(e.reward.total) << ',' << format_double(e.reward.r_fc) << ','
          << format_double(e.reward.r_bonus) << ',' << format_double(e.reward.r_ot) << ','
          << format_double(e.reward.r_acc) << ',' << int(e.finished) << ',' << int(e.timed_out)
          << '\n';
    steps += static_cast<double>(e.steps);
    fuel += e.fuel_l;
    reward += e.reward.total;
    fc += e.reward.r_fc;
    bonus += e.reward.r_bonus;
    ot += e.reward.r_ot;
    acc += e.reward.r_acc;
    finished += e.finished;
    timed_out += e.timed_out;

    const auto sub = dir / ("seed_" + std::to_string(e.seed));
    fs::create_directories(sub);
    auto f = open_out(sub / "fuel.csv");
    f << "step,rate\n";
    for (std::size_t k = 0; k < e.fuel_rate.size(); ++k) {
      f << k << ',' << format_double(e.fuel_rate[k]) << '\n';
    }
    auto d = open_out(sub / "density.csv");
    d << "step,cell,value\n";
    for (std::size_t k = 0; k < e.density.size(); ++k) {
      for (std::size_t i = 0; i < e.density[k].size(); ++i) {
        d << k << ',' << i << ',' << format_double(e.density[k][i]) << '\n';
      }
    }
  }
  if (!episodes.empty()) {
    const double n = static_cast<double>(episodes.size());
    table << "mean," << format_double(steps / n) << ',' << format_double(fuel / n) << ','
          << format_double(reward / n) << ',' << format_double(fc / n) << ','
          << format_double(bonus / n) << ',' << format_double(ot / n) << ','
          << format_double(acc / n) << ',' << format_double(finished / n) << ','
          << format_double(timed_out / n) << '\n';
  }
}

ValidationReport validate_model(const RunConfig& cfg, std::span<const std::uint64_t> seeds,
                                std::size_t steps_per_seed, const qlearn::QNetwork* policy) {
  const auto actions = cfg.actions();
  const auto norm = cfg.normalizer();
  const auto wm = cfg.world_model();
  const auto bounds = cfg.effective_bounds();
  const adaptive::ModelState frozen = cfg.initial_model();
  ValidationReport rep;
  double obs_density = 0.0;
  double obs_speed = 0.0;

  for (const auto seed : seeds) {
    adaptive::ModelState adapted = frozen;
    micro::MicroEnv env(cfg.env);
    std::size_t done_steps = 0;
    for (std::size_t k = 0; done_steps < steps_per_seed; ++k) {
      mdp::StateVec s = env.reset(derive_seed(seed, Stream::episode, k));
      for (std::size_t t = 0; !env.done() && done_steps < steps_per_seed; ++t, ++done_steps) {
        const auto r = policy
                           ? env.step(actions.index_to_action(greedy_action(*policy, norm, s)))
                           : env.step_krauss();
        const auto pa = adaptive::one_step_predict(adapted, s, r.accel, t, wm);
        const auto pf = adaptive::one_step_predict(frozen, s, r.accel, t, wm);
        const auto [da, va] = state_errors(pa.next, r.observation, cfg.env.dx);
        const auto [df, vf] = state_errors(pf.next, r.observation, cfg.env.dx);
        rep.adapted.density_err.push_back(da);
        rep.adapted.speed_err.push_back(va);
        rep.frozen.density_err.push_back(df);
        rep.frozen.speed_err.push_back(vf);
        const std::size_t n = r.observation.n_cells();
        double od = 0.0, ov = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          od += r.observation.rho(i) * cfg.env.dx;
          ov += r.observation.vbar(i);
        }
        obs_density += od / static_cast<double>(n);
        obs_speed += ov / static_cast<double>(n);
        adapted.observe(r.observation, bounds);
        s = r.observation;
      }
    }
  }

  rep.steps = rep.adapted.density_err.size();
  if (rep.steps > 0) {
    rep.mean_observed_density = obs_density / static_cast<double>(rep.steps);
    rep.mean_observed_speed = obs_speed / static_cast<double>(rep.steps);
  }
  for (ErrorSeries* es : {&rep.adapted, &rep.frozen}) {
    es->mean_density_err = mean_of(es->density_err);
    es->mean_speed_err = mean_of(es->speed_err);
    es->relative_density_pct = rep.mean_observed_density > 0.0
                                   ? 100.0 * es->mean_density_err / rep.mean_observed_density
                                   : 0.0;
    es->relative_speed_pct = rep.mean_observed_speed > 0.0
                                 ? 100.0 * es->mean_speed_err / rep.mean_observed_speed
                                 : 0.0;
  }
  return rep;
}

void write_validation(const fs::path& dir, const ValidationReport& report) {
  fs::create_directories(dir);
  auto errors = open_out(dir / "errors.csv");
  errors << "step,density_err,speed_err,variant\n";
  for (const auto& [series, name] :
       {std::pair{&report.adapted, "adapted"}, std::pair{&report.frozen, "frozen"}}) {
    for (std::size_t k = 0; k < series->density_err.size(); ++k) {
      errors << k << ',' << format_double(series->density_err[k]) << ','
             << format_double(series->speed_err[k]) << ',' << name << '\n';
    }
  }
  auto table = open_out(dir / "prediction_errors.csv");
  table << "quantity,unit,adapted_absolute,adapted_relative_pct,frozen_absolute,frozen_relative_pct\n";
  table << "Density,veh/cell," << format_double(report.adapted.mean_density_err) << ','
        << format_double(report.adapted.relative_density_pct) << ','
        << format_double(report.frozen.mean_density_err) << ','
        << format_double(report.frozen.relative_density_pct) << '\n';
  table << "Speed,m/s," << format_double(report.adapted.mean_speed_err) << ','
        << format_double(report.adapted.relative_speed_pct) << ','
        << format_double(report.frozen.mean_speed_err) << ','
        << format_double(report.frozen.relative_speed_pct) << '\n';
}

}  // namespace dynaplatoon::dyna
