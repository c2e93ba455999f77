// busctl: train, evaluate and compare bus corridor controllers.
//
// Exit codes: 0 ok, 2 config/domain, 3 io, 4 numerical, 5 invariant, 1 other.
// Failures print one line "error[<category>]: <message>" on stderr.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "busctl/experiment.hpp"

namespace fs = std::filesystem;
using namespace busctl;

namespace {

struct Common {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--scenario", c.scenario, "scenario file")->required();
  cmd->add_option("--seed", c.seed, "override the scenario seed");
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
}

Scenario load(const Common& c) {
  Scenario sc = load_scenario(c.scenario);
  if (c.seed) {
    sc.seed = *c.seed;
    sc.trainer.seed = *c.seed;
  }
  return sc;
}

fs::path prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
  return fs::path(dir);
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  auto out = open_out(p);
  out << std::setw(2) << j << '\n';
}

std::string trajectory_name(std::size_t r) {
  std::ostringstream s;
  s << "trajectory_" << std::setw(3) << std::setfill('0') << r + 1 << ".csv";
  return s.str();
}

/// Trajectories, metrics and plot series for one evaluation.
void write_evaluation(const fs::path& dir, const Scenario& sc, ControllerKind kind, const EvaluationResult& ev) {
  for (std::size_t r = 0; r < ev.rows.size(); ++r) {
    auto out = open_out(dir / trajectory_name(r));
    write_trajectory_csv(out, ev.rows[r]);
  }
  nlohmann::json metrics;
  metrics["scenario"] = sc.name;
  metrics["seed"] = sc.seed;
  metrics["controller"] = std::string(to_string(kind));
  metrics["replications"] = ev.rows.size();
  metrics["report"] = to_json(ev.report);
  write_json(dir / "metrics.json", metrics);

  const auto corridor = sc.corridor(false);
  {
    auto out = open_out(dir / "deviation_curves.csv");
    write_deviation_curves_csv(out, ev.rows.front(), corridor);
  }
  {
    auto out = open_out(dir / "control_forces.csv");
    write_control_force_csv(out, ev.rows.front());
  }
  {
    auto out = open_out(dir / "volume_cost.csv");
    write_volume_cost_csv(out, sc.volume_costs());
  }
  write_json(dir / "scenario.json", scenario_to_json(sc));
}

void print_summary(ControllerKind kind, const DeviationReport& rep) {
  std::cout << std::left << std::setw(16) << to_string(kind) << std::fixed << std::setprecision(2)
            << " max|e| " << rep.pooled.max_abs_e << "  max|d| " << rep.pooled.max_abs_d << "  mean|e| "
            << rep.pooled.mean_abs_e << "  mean|d| " << rep.pooled.mean_abs_d << '\n';
}

struct TrainArgs {
  Common common;
  std::optional<int> workers, episodes;
  std::string strategies;
  std::string checkpoint;
  std::string resume;
  bool wall_time = false;
};

/// Applies CLI overrides to the scenario's trainer settings.
void apply_training_overrides(Scenario& sc, const TrainArgs& a) {
  if (a.workers) sc.trainer.workers = *a.workers;
  if (a.episodes) sc.trainer.episodes = *a.episodes;
  if (!a.strategies.empty()) sc.mask = parse_strategy_list(a.strategies);
  sc.trainer.validate();
}

TrainHooks progress_hooks(const std::string& checkpoint_path) {
  TrainHooks hooks;
  hooks.on_checkpoint = [checkpoint_path](const ActorCritic& p, const TrainingState& st) {
    save_checkpoint(checkpoint_path, p, &st);
  };
  hooks.on_episode = [](const EpisodeRecord& r) {
    if ((r.episode + 1) % 100 == 0)
      std::cerr << "episode " << r.episode + 1 << "  mean reward " << std::setprecision(4) << r.mean_reward << '\n';
  };
  return hooks;
}

int run_train(const TrainArgs& a) {
  Scenario sc = load(a.common);
  apply_training_overrides(sc, a);
  const auto dir = prepare_out(a.common.out);
  const std::string ckpt = a.checkpoint.empty() ? (dir / "policy.ckpt").string() : a.checkpoint;
  std::optional<LoadedCheckpoint> start;
  if (!a.resume.empty()) start = load_checkpoint(a.resume);

  const auto result = train(sc.engine(true), sc.trainer, sc.architecture, sc.scaling, start, progress_hooks(ckpt));
  save_checkpoint(ckpt, result.policy, &result.state);
  // On resume the log continues the existing file.
  const auto log_path = dir / "training_log.csv";
  if (start && fs::exists(log_path)) {
    std::ostringstream body;
    write_training_log_csv(body, result.log, a.wall_time);
    std::string text = body.str();
    text.erase(0, text.find('\n') + 1);
    std::ofstream out(log_path, std::ios::app);
    if (!out) throw IoError("cannot append to " + log_path.string());
    out << text;
  } else {
    auto out = open_out(log_path);
    write_training_log_csv(out, result.log, a.wall_time);
  }
  std::cout << "trained " << result.state.episodes_done << " episodes; checkpoint " << ckpt << '\n';
  return 0;
}

struct EvalArgs {
  Common common;
  std::string checkpoint;
  std::string controller;
  std::optional<int> replications;
  int threads = 1;
};

int run_evaluate(const EvalArgs& a) {
  const Scenario sc = load(a.common);
  ControllerKind kind = sc.controller;
  if (!a.controller.empty()) kind = parse_controller_kind(a.controller);
  else if (!a.checkpoint.empty()) kind = ControllerKind::kLearnedPolicy;
  std::optional<LoadedCheckpoint> ck;
  if (!a.checkpoint.empty()) ck = load_checkpoint(a.checkpoint);
  if ((kind == ControllerKind::kLearnedPolicy) != ck.has_value())
    throw ConfigError("--checkpoint is required exactly when the controller is learned_policy");
  Scenario run = sc;
  if (ck) run.scaling = ck->policy.scaling();
  const auto ev = evaluate(run, kind, ck ? &ck->policy : nullptr, a.replications.value_or(sc.replications), a.threads);
  write_evaluation(prepare_out(a.common.out), run, kind, ev);
  print_summary(kind, ev.report);
  return 0;
}

int run_baseline(const EvalArgs& a) {
  const Scenario sc = load(a.common);
  std::vector<ControllerKind> kinds;
  if (a.controller.empty() || a.controller == "all")
    kinds = {ControllerKind::kNoControl, ControllerKind::kScheduleBased, ControllerKind::kHeadwayBased};
  else
    kinds = {parse_controller_kind(a.controller)};
  const auto root = prepare_out(a.common.out);
  nlohmann::json summary;
  for (auto kind : kinds) {
    if (kind == ControllerKind::kLearnedPolicy) throw ConfigError("baseline: learned_policy is not a baseline");
    const auto ev = evaluate(sc, kind, nullptr, a.replications.value_or(sc.replications), a.threads);
    const auto dir = prepare_out((root / std::string(to_string(kind))).string());
    write_evaluation(dir, sc, kind, ev);
    summary[std::string(to_string(kind))] = to_json(ev.report.pooled);
    print_summary(kind, ev.report);
  }
  write_json(root / "baseline_summary.json", summary);
  return 0;
}

struct AblateArgs {
  TrainArgs train;
  std::optional<int> replications;
};

int run_ablate(const AblateArgs& a) {
  Scenario sc = load(a.train.common);
  apply_training_overrides(sc, a.train);
  if (a.replications) sc.replications = *a.replications;
  const auto dir = prepare_out(a.train.common.out);
  std::optional<LoadedCheckpoint> pre;
  if (!a.train.checkpoint.empty()) {
    pre = load_checkpoint(a.train.checkpoint);
    sc.scaling = pre->policy.scaling();
  }
  const auto result = ablate(sc, sc.mask, pre ? &pre->policy : nullptr, progress_hooks((dir / "policy.ckpt").string()));
  if (!pre) {
    save_checkpoint((dir / "policy.ckpt").string(), result.policy);
    auto out = open_out(dir / "training_log.csv");
    write_training_log_csv(out, result.training_log, a.train.wall_time);
  }
  write_evaluation(dir, sc, ControllerKind::kLearnedPolicy, result.evaluation);
  print_summary(ControllerKind::kLearnedPolicy, result.evaluation.report);
  return 0;
}

struct ReportArgs {
  Common common;
  std::vector<std::string> trajectories;
  std::optional<double> warmup;
};

int run_report(const ReportArgs& a) {
  const Scenario sc = load(a.common);
  std::vector<std::vector<TrajectoryRow>> reps;
  for (const auto& path : a.trajectories) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read trajectory " + path);
    try {
      reps.push_back(read_trajectory_csv(in));
    } catch (const ConfigError& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
  const auto rep = report_metrics(reps, sc.corridor(false).loop_length(), a.warmup.value_or(sc.warmup_loops));
  const auto dir = prepare_out(a.common.out);
  nlohmann::json metrics;
  metrics["scenario"] = sc.name;
  metrics["replications"] = reps.size();
  metrics["report"] = to_json(rep);
  write_json(dir / "metrics.json", metrics);
  std::cout << std::setw(2) << metrics["report"]["pooled"] << '\n';
  return 0;
}

int fail(const char* category, int code, const std::string& what) {
  std::cerr << "error[" << category << "]: " << what << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bus corridor control: simulation, training and evaluation"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train the shared actor-critic policy");
  add_common(train_cmd, train_args.common);
  train_cmd->add_option("--workers", train_args.workers, "parallel rollout workers");
  train_cmd->add_option("--episodes", train_args.episodes, "training episodes");
  train_cmd->add_option("--strategies", train_args.strategies, "comma list of holding,signal,speed");
  train_cmd->add_option("--checkpoint", train_args.checkpoint, "checkpoint path (default <out>/policy.ckpt)");
  train_cmd->add_option("--resume", train_args.resume, "resume from a checkpoint with training state");
  train_cmd->add_flag("--log-wall-time", train_args.wall_time, "add wall-clock seconds to the training log");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a controller over seeded replications");
  add_common(eval_cmd, eval_args.common);
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "trained policy");
  eval_cmd->add_option("--controller", eval_args.controller, "no_control|schedule_based|headway_based|learned_policy");
  eval_cmd->add_option("--replications", eval_args.replications, "seeded replications");
  eval_cmd->add_option("--threads", eval_args.threads, "replications run in parallel")->capture_default_str();

  EvalArgs base_args;
  auto* base_cmd = app.add_subcommand("baseline", "evaluate the classical holding rules");
  add_common(base_cmd, base_args.common);
  base_cmd->add_option("--controller", base_args.controller, "one baseline or 'all'")->capture_default_str();
  base_cmd->add_option("--replications", base_args.replications, "seeded replications");
  base_cmd->add_option("--threads", base_args.threads, "replications run in parallel")->capture_default_str();

  AblateArgs abl_args;
  auto* abl_cmd = app.add_subcommand("ablate", "retrain and evaluate under a strategy mask");
  add_common(abl_cmd, abl_args.train.common);
  abl_cmd->add_option("--strategies", abl_args.train.strategies, "comma list of holding,signal,speed")->required();
  abl_cmd->add_option("--workers", abl_args.train.workers, "parallel rollout workers");
  abl_cmd->add_option("--episodes", abl_args.train.episodes, "training episodes");
  abl_cmd->add_option("--checkpoint", abl_args.train.checkpoint, "evaluate this policy instead of retraining");
  abl_cmd->add_option("--replications", abl_args.replications, "seeded replications");
  abl_cmd->add_flag("--log-wall-time", abl_args.train.wall_time, "add wall-clock seconds to the training log");

  ReportArgs rep_args;
  auto* rep_cmd = app.add_subcommand("report", "recompute deviation metrics from trajectory CSVs");
  add_common(rep_cmd, rep_args.common);
  rep_cmd->add_option("--trajectories", rep_args.trajectories, "trajectory CSV files")->required();
  rep_cmd->add_option("--warmup-loops", rep_args.warmup, "override the warm-up exclusion");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("config", 2, e.what());
  }

  try {
    if (*train_cmd) return run_train(train_args);
    if (*eval_cmd) return run_evaluate(eval_args);
    if (*base_cmd) return run_baseline(base_args);
    if (*abl_cmd) return run_ablate(abl_args);
    if (*rep_cmd) return run_report(rep_args);
  } catch (const ConfigError& e) {
    return fail("config", 2, e.what());
  } catch (const DomainError& e) {
    return fail("domain", 2, e.what());
  } catch (const IoError& e) {
    return fail("io", 3, e.what());
  } catch (const NumericalFault& e) {
    return fail("numerical", 4, e.what());
  } catch (const InvariantViolation& e) {
    return fail("invariant", 5, e.what());
  } catch (const std::exception& e) {
    return fail("internal", 1, e.what());
  }
  return 1;
}
