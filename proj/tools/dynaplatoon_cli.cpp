// Command-line front end: train, eval, validate-model, sweep and config.

#include <CLI11.hpp>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <future>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dynaplatoon/config.hpp"
#include "dynaplatoon/dyna.hpp"
#include "dynaplatoon/errors.hpp"

namespace fs = std::filesystem;
using namespace dynaplatoon;

namespace {

enum Exit { ok = 0, usage = 1, config_error = 2, runtime_error = 3, input_error = 4 };

struct Common {
  std::string config_path;
  std::string preset = "full";
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "Configuration file");
  cmd->add_option("--preset", c.preset, "Built-in configuration when --config is absent")
      ->check(CLI::IsMember({"full", "desk"}));
  cmd->add_option("--out", c.out, "Output directory (default: output.dir of the config)");
}

RunConfig load(const Common& c) {
  if (!c.config_path.empty()) return load_config(c.config_path);
  return c.preset == "desk" ? RunConfig::desk_scale() : RunConfig::full_scale();
}

/// Relative output paths are placed under $DYNAPLATOON_OUTPUT_ROOT when it is set.
fs::path output_dir(const Common& c, const RunConfig& cfg) {
  fs::path dir = c.out.empty() ? fs::path(cfg.output.dir) : fs::path(c.out);
  if (const char* root = std::getenv("DYNAPLATOON_OUTPUT_ROOT"); root && *root && dir.is_relative()) {
    dir = fs::path(root) / dir;
  }
  return dir;
}

qlearn::QNetwork load_checkpoint(const fs::path& path) {
  return qlearn::QNetwork::load(fs::is_directory(path) ? path / "qnet.txt" : path);
}

void print_eval(const std::vector<dyna::EvalEpisode>& eps) {
  std::cout << std::left << std::setw(12) << "seed" << std::setw(8) << "steps" << std::setw(14)
            << "fuel_l" << std::setw(14) << "reward" << "timeout\n";
  double fuel = 0.0, reward = 0.0;
  for (const auto& e : eps) {
    std::cout << std::setw(12) << e.seed << std::setw(8) << e.steps << std::setw(14)
              << std::fixed << std::setprecision(3) << e.fuel_l << std::setw(14) << e.reward.total
              << (e.timed_out ? "yes" : "no") << '\n';
    fuel += e.fuel_l;
    reward += e.reward.total;
  }
  if (!eps.empty()) {
    const double n = static_cast<double>(eps.size());
    std::cout << std::setw(12) << "mean" << std::setw(8) << "" << std::setw(14) << fuel / n
              << std::setw(14) << reward / n << '\n';
  }
}

void print_validation(const dyna::ValidationReport& r) {
  std::cout << std::left << std::setw(10) << "" << std::setw(12) << "unit" << std::setw(14)
            << "adapted_abs" << std::setw(14) << "adapted_rel%" << std::setw(14) << "frozen_abs"
            << "frozen_rel%\n"
            << std::fixed << std::setprecision(4);
  std::cout << std::setw(10) << "Density" << std::setw(12) << "veh/cell" << std::setw(14)
            << r.adapted.mean_density_err << std::setw(14) << r.adapted.relative_density_pct
            << std::setw(14) << r.frozen.mean_density_err << r.frozen.relative_density_pct << '\n';
  std::cout << std::setw(10) << "Speed" << std::setw(12) << "m/s" << std::setw(14)
            << r.adapted.mean_speed_err << std::setw(14) << r.adapted.relative_speed_pct
            << std::setw(14) << r.frozen.mean_speed_err << r.frozen.relative_speed_pct << '\n';
}

void apply_train_overrides(RunConfig& cfg, std::optional<std::uint64_t> seed,
                           std::optional<std::size_t> steps, std::optional<std::size_t> planning) {
  if (seed) cfg.train.seed = *seed;
  if (steps) cfg.train.total_steps = *steps;
  if (planning) {
    cfg.train.planning_steps = *planning;
    cfg.train.algorithm = *planning == 0 ? Algorithm::dqn : Algorithm::dyna;
  }
  cfg.validate();
}

void report_train(const dyna::RunMetrics& m, const fs::path& dir) {
  std::cout << "episodes " << m.episodes.size() << ", env steps " << m.env_steps
            << ", real updates " << m.real_updates << ", virtual updates " << m.virtual_updates;
  if (m.first_success_step) std::cout << ", first no-timeout episode at step " << *m.first_success_step;
  std::cout << "\nwrote " << dir.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Platoon control on a lane-drop corridor with Dyna-Q and an adaptive traffic model"};
  app.require_subcommand(1);

  Common train_c;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::size_t> train_steps, train_planning;
  auto* train = app.add_subcommand("train", "Train a Q-network (Dyna-Q, or DQN with --planning 0)");
  add_common(train, train_c);
  train->add_option("--seed", train_seed, "Root seed");
  train->add_option("--steps", train_steps, "Total environment steps");
  train->add_option("--planning", train_planning, "Planning updates per real step");

  Common eval_c;
  std::string checkpoint;
  bool krauss = false;
  std::vector<std::uint64_t> eval_seeds{1001, 1002, 1003};
  auto* eval = app.add_subcommand("eval", "Greedy evaluation of a checkpoint or of the Krauss platoon");
  add_common(eval, eval_c);
  auto* ck = eval->add_option("--checkpoint", checkpoint, "qnet.txt or a training output directory");
  auto* kr = eval->add_flag("--krauss", krauss, "Drive the platoon with the Krauss model");
  ck->excludes(kr);
  kr->excludes(ck);
  eval->add_option("--seeds", eval_seeds, "Evaluation seeds")->delimiter(',');

  Common val_c;
  std::string val_checkpoint;
  std::vector<std::uint64_t> val_seeds{1001};
  std::size_t val_steps = 200;
  auto* val = app.add_subcommand("validate-model", "One-step prediction errors of the adaptive model");
  add_common(val, val_c);
  val->add_option("--seeds", val_seeds, "Rollout seeds")->delimiter(',');
  val->add_option("--steps", val_steps, "Control steps per seed");
  val->add_option("--checkpoint", val_checkpoint, "Drive with a trained policy instead of Krauss");

  Common sweep_c;
  std::vector<std::uint64_t> sweep_seeds{1, 2, 3};
  std::vector<std::size_t> sweep_planning{5, 0};
  std::optional<std::size_t> sweep_steps;
  unsigned jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "Independent training runs over seeds and planning counts");
  add_common(sweep, sweep_c);
  sweep->add_option("--seeds", sweep_seeds, "Root seeds")->delimiter(',');
  sweep->add_option("--planning", sweep_planning, "Planning counts")->delimiter(',');
  sweep->add_option("--steps", sweep_steps, "Total environment steps per run");
  sweep->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  Common cfg_c;
  auto* show = app.add_subcommand("config", "Print the validated configuration");
  show->add_option("--config", cfg_c.config_path, "Configuration file");
  show->add_option("--preset", cfg_c.preset, "Built-in configuration")->check(CLI::IsMember({"full", "desk"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? Exit::ok : Exit::usage;
  }

  try {
    if (*train) {
      RunConfig cfg = load(train_c);
      apply_train_overrides(cfg, train_seed, train_steps, train_planning);
      const auto dir = output_dir(train_c, cfg);
      const auto result = dyna::train(cfg, dir);
      report_train(result.metrics, dir);
    } else if (*eval) {
      if (checkpoint.empty() && !krauss) {
        std::cerr << "eval: one of --checkpoint or --krauss is required\n";
        return Exit::usage;
      }
      const RunConfig cfg = load(eval_c);
      const auto dir = output_dir(eval_c, cfg);
      std::optional<qlearn::QNetwork> net;
      if (!checkpoint.empty()) net = load_checkpoint(checkpoint);
      const auto eps = dyna::evaluate(cfg, net ? &*net : nullptr, eval_seeds, dir);
      print_eval(eps);
      std::cout << "wrote " << dir.string() << '\n';
    } else if (*val) {
      const RunConfig cfg = load(val_c);
      const auto dir = output_dir(val_c, cfg);
      std::optional<qlearn::QNetwork> net;
      if (!val_checkpoint.empty()) net = load_checkpoint(val_checkpoint);
      const auto report = dyna::validate_model(cfg, val_seeds, val_steps, net ? &*net : nullptr);
      dyna::write_validation(dir, report);
      print_validation(report);
      std::cout << "wrote " << dir.string() << '\n';
    } else if (*sweep) {
      const RunConfig base = load(sweep_c);
      const auto root = output_dir(sweep_c, base);
      struct Run {
        RunConfig cfg;
        fs::path dir;
      };
      std::vector<Run> runs;
      for (const auto n : sweep_planning) {
        for (const auto seed : sweep_seeds) {
          RunConfig cfg = base;
          apply_train_overrides(cfg, seed, sweep_steps, n);
          runs.push_back({cfg, root / ("n" + std::to_string(n) + "_seed" + std::to_string(seed))});
        }
      }
      for (std::size_t i = 0; i < runs.size(); i += jobs) {
        std::vector<std::future<dyna::RunMetrics>> batch;
        for (std::size_t j = i; j < std::min(runs.size(), i + jobs); ++j) {
          batch.push_back(std::async(std::launch::async, [&run = runs[j]] {
            return dyna::train(run.cfg, run.dir).metrics;
          }));
        }
        for (std::size_t j = 0; j < batch.size(); ++j) report_train(batch[j].get(), runs[i + j].dir);
      }
    } else if (*show) {
      std::cout << serialize_config(load(cfg_c));
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return Exit::config_error;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return Exit::input_error;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return Exit::runtime_error;
  }
  return Exit::ok;
}
