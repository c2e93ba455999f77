#pragma once

// Replicated evaluation of a controller on a scenario, strategy ablations and
// plot-ready series.

#include <cstdint>
#include <exception>
#include <optional>
#include <ostream>
#include <thread>
#include <vector>

#include "busctl/engine.hpp"
#include "busctl/policy.hpp"
#include "busctl/ppo.hpp"
#include "busctl/report.hpp"
#include "busctl/scenario.hpp"

namespace busctl {

/// Evaluation draws live on their own worker id so they never coincide with
/// training episodes.
inline constexpr std::uint32_t kEvaluationWorker = 0xE0A1;

struct EvaluationResult {
  std::vector<std::vector<StepOutcome>> logs;  // one per replication
  std::vector<std::vector<TrajectoryRow>> rows;
  DeviationReport report;
};

/// Runs `replications` seeded evaluation runs. Replication r always uses the
/// same disturbance streams, whatever the controller.
inline EvaluationResult evaluate(const Scenario& sc, ControllerKind kind, const ActorCritic* policy,
                                 int replications, int threads = 1) {
  if ((kind == ControllerKind::kLearnedPolicy) != (policy != nullptr))
    throw ConfigError("evaluate: a checkpoint is required exactly for the learned policy");
  if (replications < 1) throw ConfigError("evaluate: replications must be >= 1");
  if (policy) {
    const ActorCritic reference(sc.architecture, sc.scaling);
    if (!policy->same_architecture(reference)) throw ConfigError("evaluate: checkpoint architecture mismatch");
  }
  const Engine engine = sc.engine(false);
  EvaluationResult out;
  out.logs.resize(static_cast<std::size_t>(replications));
  std::vector<std::exception_ptr> errors(out.logs.size());
  auto run_one = [&](std::size_t r) {
    try {
      const StreamBase streams{sc.seed, kEvaluationWorker, static_cast<std::uint32_t>(r)};
      if (policy)
        out.logs[r] = engine.run(GreedyPolicyController{policy}, streams);
      else
        out.logs[r] = engine.run(BaselineController{kind, sc.baseline}, streams);
    } catch (...) {
      errors[r] = std::current_exception();
    }
  };
  const std::size_t n_threads = static_cast<std::size_t>(std::max(1, threads));
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t r = t; r < out.logs.size(); r += n_threads) run_one(r);
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  const auto L = engine.config().loop_length();
  for (const auto& log : out.logs) out.rows.push_back(to_rows(log, L));
  out.report = report_metrics(out.rows, L, sc.warmup_loops);
  return out;
}

inline Scenario with_mask(Scenario sc, const StrategyMask& mask) {
  if (!mask.any()) throw ConfigError("ablate: strategy mask is empty");
  sc.mask = mask;
  return sc;
}

struct AblationResult {
  ActorCritic policy;
  std::vector<EpisodeRecord> training_log;
  EvaluationResult evaluation;
};

/// Retrains under the mask (unless a policy is supplied) and evaluates it.
inline AblationResult ablate(const Scenario& base, const StrategyMask& mask,
                             const ActorCritic* pretrained = nullptr, const TrainHooks& hooks = {}) {
  const Scenario sc = with_mask(base, mask);
  AblationResult out;
  if (pretrained) {
    out.policy = *pretrained;
  } else {
    auto trained = train(sc.engine(true), sc.trainer, sc.architecture, sc.scaling, std::nullopt, hooks);
    out.policy = std::move(trained.policy);
    out.training_log = std::move(trained.log);
  }
  out.evaluation = evaluate(sc, ControllerKind::kLearnedPolicy, &out.policy, sc.replications);
  return out;
}

// --- plot-ready series ------------------------------------------------------

inline void write_training_log_csv(std::ostream& out, const std::vector<EpisodeRecord>& log, bool wall_time) {
  out << "episode,mean_reward,actor_surrogate,critic_loss" << (wall_time ? ",wall_time" : "") << '\n';
  std::ostringstream line;
  line.precision(17);
  for (const auto& r : log) {
    line.str("");
    line << r.episode + 1 << ',' << r.mean_reward << ',' << r.actor_surrogate << ',' << r.critic_loss;
    if (wall_time) line << ',' << r.wall_time;
    out << line.str() << '\n';
  }
}

/// Long-format control-force series: one row per (bus, loop, station block, force).
inline void write_control_force_csv(std::ostream& out, const std::vector<TrajectoryRow>& rows) {
  out << "bus,loop,position,kind,force\n";
  out.precision(17);
  for (const auto& r : rows) {
    const double f = r.kind == PositionKind::kStation ? r.holding
                     : r.kind == PositionKind::kRoadSegment ? r.speed
                                                            : r.signal;
    out << r.bus << ',' << r.loop << ',' << r.position << ',' << to_string(r.kind) << ',' << f << '\n';
  }
}

/// Volume cost per station (bar-chart data).
inline void write_volume_cost_csv(std::ostream& out, const std::vector<double>& q) {
  out << "station,volume_cost\n";
  out.precision(17);
  for (std::size_t j = 0; j < q.size(); ++j) out << j + 1 << ',' << q[j] << '\n';
}

/// Station-only deviation curves, with the station index running on across
/// loops (1..N per loop, then N+1.. for the next).
inline void write_deviation_curves_csv(std::ostream& out, const std::vector<TrajectoryRow>& rows,
                                       const CorridorConfig& corridor) {
  out << "bus,station_index,e,d\n";
  out.precision(17);
  for (const auto& r : rows) {
    if (r.kind != PositionKind::kStation) continue;
    const int block = corridor.positions.at(r.position - 1).block;
    out << r.bus << ',' << block + 1 + (r.loop - 1) * corridor.n_stations << ',' << r.e << ',' << r.d << '\n';
  }
}

}  // namespace busctl
