#pragma once

// Actual bus motion over a looped corridor. Buses are dispatched H apart and
// advanced position by position; every decision point asks a controller for
// a ControlAction and logs a StepOutcome.

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "busctl/control.hpp"
#include "busctl/corridor.hpp"
#include "busctl/disturbance.hpp"
#include "busctl/errors.hpp"
#include "busctl/observation.hpp"

namespace busctl {

enum class ControllerKind { kNoControl, kScheduleBased, kHeadwayBased, kLearnedPolicy };

inline constexpr std::string_view to_string(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::kNoControl:
      return "no_control";
    case ControllerKind::kScheduleBased:
      return "schedule_based";
    case ControllerKind::kHeadwayBased:
      return "headway_based";
    case ControllerKind::kLearnedPolicy:
      return "learned_policy";
  }
  return "?";
}

inline ControllerKind parse_controller_kind(std::string_view name) {
  for (auto k : {ControllerKind::kNoControl, ControllerKind::kScheduleBased, ControllerKind::kHeadwayBased,
                 ControllerKind::kLearnedPolicy})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown controller kind '" + std::string(name) + "'");
}

struct BusState {
  int bus = 0;                // 0-based fleet index
  std::size_t position = 0;   // global position index (loop * L + j)
  double arrival = 0.0;       // a_j^i
  double schedule_offset = 0.0;  // shift added to the timetable after re-anchoring
  int loop = 0;
  bool active = true;

  double scheduled(const ScheduleTable& table) const {
    return table.at(static_cast<std::size_t>(bus), position) + schedule_offset;
  }
};

/// Shift the bus's remaining timetable so it is exactly on schedule at the
/// terminal. Arrivals are untouched, so headways are preserved.
inline BusState terminal_reanchor(const BusState& bus, const ScheduleTable& table) {
  BusState out = bus;
  out.schedule_offset = bus.arrival - table.at(static_cast<std::size_t>(bus.bus), bus.position);
  return out;
}

/// Everything a controller may look at when choosing an action.
struct DecisionContext {
  int bus = 0;
  std::size_t position = 0;
  PositionKind kind = PositionKind::kStation;
  FusedObservation obs;
  double headway = 0.0;  // h to the nearest downstream bus (or dummy)
  double planned_headway = 0.0;
  double volume_cost = 0.0;
  ActionBounds bounds;
};

template <class C>
concept Controller = requires(C c, const DecisionContext& ctx) {
  { c(ctx) } -> std::convertible_to<ControlAction>;
};

/// Transition record for one bus at one position.
struct StepOutcome {
  int bus = 0;
  int loop = 0;
  std::size_t position = 0;  // global index
  PositionKind kind = PositionKind::kStation;
  double scheduled = 0.0;
  double arrival = 0.0;
  double headway_dev = 0.0;  // plain d = h - H
  FusedObservation obs;
  double volume_cost = 0.0;
  ControlAction action;
  double delay = 0.0;          // w
  double demand_offset = 0.0;  // delta beta
  double dwell = 0.0;          // beta~ h
  double travel = 0.0;         // r
  double separation_push = 0.0;  // added by the no-overtaking rule
  double next_arrival = 0.0;
  double cost = 0.0;
  double reward = 0.0;
};

struct MotionIncrement {
  double dwell = 0.0;
  double travel = 0.0;
};

/// a_{j+1} - a_j before control and disturbance: dwell beta~ h at stations,
/// nominal travel time elsewhere.
inline MotionIncrement motion_increment(const Position& pos, double headway, double effective_demand) {
  MotionIncrement inc;
  if (pos.kind == PositionKind::kStation) inc.dwell = effective_demand * headway;
  inc.travel = pos.profile.avg_travel_time;
  return inc;
}

/// a_{j+1} = a_j + beta~ h + r + u + w.
inline double step_arrival(const Position& pos, double arrival, double headway, const ControlAction& action,
                           double delay, double effective_demand) {
  const auto inc = motion_increment(pos, headway, effective_demand);
  return arrival + inc.dwell + inc.travel + total_control_force(action) + delay;
}

struct BaselineSettings {
  double headway_gain = 0.5;  // kappa
};

/// Classical station-holding rules. Off-station they return zero.
inline ControlAction baseline_action(ControllerKind kind, const DecisionContext& ctx,
                                     const BaselineSettings& settings = {}) {
  if (kind == ControllerKind::kLearnedPolicy) throw DomainError("baseline_action: learned policy is not a baseline");
  if (ctx.kind != PositionKind::kStation) return {};
  double hold = 0.0;
  if (kind == ControllerKind::kScheduleBased) hold = std::max(0.0, -ctx.obs.schedule_dev);
  if (kind == ControllerKind::kHeadwayBased)
    hold = std::max(0.0, settings.headway_gain * (ctx.planned_headway - ctx.headway));
  return {ctx.bounds.clamp(hold), 0.0, 0.0};
}

struct BaselineController {
  ControllerKind kind = ControllerKind::kNoControl;
  BaselineSettings settings;
  ControlAction operator()(const DecisionContext& ctx) const { return baseline_action(kind, ctx, settings); }
};

struct SimSettings {
  int loops = 2;
  int downstream = 5;  // k
  double min_separation = 1.0;  // seconds between consecutive buses at a position
  CostCoefficients coeffs;
  ControlCaps caps;
  StrategyMask mask;
  TruncatedNormalSpec delay;
  UniformSpec demand;
};

struct StreamBase {
  std::uint64_t seed = 0;
  std::uint32_t worker = 0;
  std::uint32_t episode = 0;
};

class Engine {
 public:
  Engine(CorridorConfig config, SimSettings settings)
      : config_(std::move(config)), settings_(std::move(settings)) {
    config_.validate();
    settings_.coeffs.validate();
    settings_.delay.validate();
    settings_.demand.validate();
    if (settings_.downstream < 1) throw ConfigError("downstream bus count must be >= 1");
    if (settings_.loops < 1) throw ConfigError("loops must be >= 1");
    schedule_ = build_schedule(config_, settings_.loops);
    bounds_.reserve(config_.loop_length());
    for (const auto& pos : config_.positions) bounds_.push_back(bounds_at(pos, settings_.caps));
  }

  const CorridorConfig& config() const { return config_; }
  const SimSettings& settings() const { return settings_; }
  const ScheduleTable& schedule() const { return schedule_; }
  std::size_t horizon() const { return static_cast<std::size_t>(settings_.loops) * config_.loop_length(); }

  /// Runs every bus through the full horizon. Bus i only depends on buses
  /// ahead of it at the same positions, so buses are simulated in order.
  /// Outcomes are grouped per bus, in position order.
  template <Controller C>
  std::vector<StepOutcome> run(C&& controller, const StreamBase& streams) const {
    const std::size_t n = horizon();
    const std::size_t fleet = static_cast<std::size_t>(config_.n_buses);
    const double H = config_.planned_headway;
    std::vector<double> arrivals(fleet * (n + 1), 0.0);
    auto arrival_at = [&](std::size_t bus, std::size_t p) -> double& { return arrivals[bus * (n + 1) + p]; };

    std::vector<StepOutcome> log;
    log.reserve(fleet * n);
    std::vector<double> downstream;
    for (std::size_t i = 0; i < fleet; ++i) {
      BusState bus;
      bus.bus = static_cast<int>(i);
      bus.arrival = schedule_.at(i, 0);
      arrival_at(i, 0) = bus.arrival;
      for (std::size_t p = 0; p < n; ++p) {
        bus.position = p;
        bus.loop = static_cast<int>(p / config_.loop_length());
        if (p > 0 && p % config_.loop_length() == 0) bus = terminal_reanchor(bus, schedule_);

        const Position& pos = config_.position(p);
        const double scheduled = bus.scheduled(schedule_);
        const std::size_t real = std::min<std::size_t>(i, static_cast<std::size_t>(settings_.downstream));
        downstream.clear();
        for (std::size_t m = 1; m <= real; ++m) downstream.push_back(arrival_at(i - m, p));

        StepOutcome out;
        out.bus = bus.bus;
        out.loop = bus.loop;
        out.position = p;
        out.kind = pos.kind;
        out.scheduled = scheduled;
        out.arrival = bus.arrival;
        out.volume_cost = config_.volume_cost_at(p);

        double beta = 0.0;
        if (pos.kind == PositionKind::kStation) {
          out.demand_offset = sample_demand_perturbation(settings_.demand, stream(streams, i, p, NoiseChannel::kDemand));
          beta = effective_demand_rate(pos.profile.demand_rate, out.demand_offset);
        }
        const double leader = downstream.empty() ? scheduled - H : downstream.front();
        const double headway = bus.arrival - leader;
        out.headway_dev = headway - H;
        out.obs = fuse_state(bus.arrival, scheduled, downstream, settings_.downstream, H, beta);

        DecisionContext ctx{bus.bus, p, pos.kind, out.obs, headway, H, out.volume_cost,
                            bounds_[p % config_.loop_length()]};
        const ControlAction raw = controller(ctx);
        out.action = clamp_action(apply_mask(raw, settings_.mask), pos.kind, ctx.bounds);

        if (pos.kind == PositionKind::kRoadSegment)
          out.delay = sample_travel_delay(settings_.delay, stream(streams, i, p, NoiseChannel::kTravelDelay));
        const auto inc = motion_increment(pos, headway, beta);
        out.dwell = inc.dwell;
        out.travel = inc.travel;
        double next = bus.arrival + inc.dwell + inc.travel + total_control_force(out.action) + out.delay;
        if (i > 0) {
          const double ahead = arrival_at(i - 1, p + 1);
          if (next <= ahead) {
            out.separation_push = ahead + settings_.min_separation - next;
            next = ahead + settings_.min_separation;
          }
          if (!(next - ahead > 0.0))
            throw InvariantViolation("non-positive headway for bus " + std::to_string(i + 1) + " at position " +
                                     std::to_string(p + 1));
        }
        out.next_arrival = next;
        out.cost = running_cost(out.obs, out.action, out.volume_cost, settings_.coeffs);
        out.reward = reward(out.cost);
        log.push_back(out);

        bus.arrival = next;
        arrival_at(i, p + 1) = next;
      }
    }
    return log;
  }

 private:
  static NoiseStream stream(const StreamBase& base, std::size_t bus, std::size_t position, NoiseChannel channel) {
    return {base.seed, base.worker, base.episode, static_cast<std::uint32_t>(bus),
            static_cast<std::uint32_t>(position), channel};
  }

  CorridorConfig config_;
  SimSettings settings_;
  ScheduleTable schedule_;
  std::vector<ActionBounds> bounds_;
};

template <Controller C>
std::vector<StepOutcome> run_episode(const CorridorConfig& config, const SimSettings& settings, C&& controller,
                                     const StreamBase& streams) {
  return Engine(config, settings).run(std::forward<C>(controller), streams);
}

}  // namespace busctl
