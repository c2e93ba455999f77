#pragma once

// The three control forces (station holding, signal priority, cruise speed),
// their per-position feasible ranges and the intersection volume cost that
// prices signal priority.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "busctl/corridor.hpp"
#include "busctl/errors.hpp"

namespace busctl {

/// Time adjustments in seconds. Only the component matching the position
/// kind may be nonzero.
struct ControlAction {
  double holding = 0.0;  // u_b >= 0, stations
  double signal = 0.0;   // u_k, intersections
  double speed = 0.0;    // u_c, road segments

  friend bool operator==(const ControlAction&, const ControlAction&) = default;
};

struct ActionBounds {
  double lo = 0.0;
  double hi = 0.0;

  double clamp(double x) const { return std::clamp(x, lo, hi); }
  bool contains(double x) const { return x >= lo && x <= hi; }
  double half_range() const { return std::max(std::abs(lo), std::abs(hi)); }
};

struct SpeedEnvelope {
  double v_min = 0.0;
  double v_max = 0.0;
  double nominal_travel_time = 0.0;  // r_j
  double distance = 0.0;             // M_{j,j+1}

  double nominal_speed() const { return distance / nominal_travel_time; }

  void validate() const {
    if (!(v_min > 0.0 && nominal_travel_time > 0.0 && distance > 0.0))
      throw ConfigError("speed envelope: v_min, travel time and distance must be positive");
    const double v_nom = nominal_speed();
    if (!(v_min <= v_nom && v_nom <= v_max))
      throw ConfigError("speed envelope: need v_min <= distance/travel_time <= v_max");
  }
};

struct ControlCaps {
  double holding_max = 20.0;  // t_{j(b),max}
  double signal_max = 20.0;   // t_{j(k),max}
};

/// Which forces a controller may use. Masked forces are hard-zeroed.
struct StrategyMask {
  bool holding = true;
  bool signal = true;
  bool speed = true;

  bool any() const { return holding || signal || speed; }
  bool allows(PositionKind kind) const {
    switch (kind) {
      case PositionKind::kStation:
        return holding;
      case PositionKind::kSignalizedIntersection:
        return signal;
      case PositionKind::kRoadSegment:
        return speed;
    }
    return false;
  }
  friend bool operator==(const StrategyMask&, const StrategyMask&) = default;
};

/// Station [0, t_b], intersection [-t_k, t_k], road [-(r - M/v_max), M/v_min - r].
inline ActionBounds bounds_for_position(PositionKind kind, const std::optional<SpeedEnvelope>& envelope,
                                        const ControlCaps& caps) {
  if ((kind == PositionKind::kRoadSegment) != envelope.has_value())
    throw ConfigError("bounds_for_position: speed envelope required exactly at road segments");
  switch (kind) {
    case PositionKind::kStation:
      return {0.0, caps.holding_max};
    case PositionKind::kSignalizedIntersection:
      return {-caps.signal_max, caps.signal_max};
    case PositionKind::kRoadSegment: {
      const SpeedEnvelope env = envelope.value();
      env.validate();
      const double save = env.nominal_travel_time - env.distance / env.v_max;
      const double relax = env.distance / env.v_min - env.nominal_travel_time;
      return {-save, relax};
    }
  }
  return {};
}

inline ActionBounds bounds_at(const Position& pos, const ControlCaps& caps) {
  std::optional<SpeedEnvelope> envelope;
  if (pos.kind == PositionKind::kRoadSegment)
    envelope = SpeedEnvelope{pos.v_min, pos.v_max, pos.profile.avg_travel_time, pos.profile.distance_to_next};
  return bounds_for_position(pos.kind, envelope, caps);
}

inline double component(const ControlAction& action, PositionKind kind) {
  switch (kind) {
    case PositionKind::kStation:
      return action.holding;
    case PositionKind::kSignalizedIntersection:
      return action.signal;
    case PositionKind::kRoadSegment:
      return action.speed;
  }
  return 0.0;
}

inline ControlAction make_action(PositionKind kind, double value) {
  ControlAction a;
  switch (kind) {
    case PositionKind::kStation:
      a.holding = value;
      break;
    case PositionKind::kSignalizedIntersection:
      a.signal = value;
      break;
    case PositionKind::kRoadSegment:
      a.speed = value;
      break;
  }
  return a;
}

/// Keeps only the component owned by `kind`, clipped into `bounds`.
inline ControlAction clamp_action(const ControlAction& raw, PositionKind kind, const ActionBounds& bounds) {
  const double v = component(raw, kind);
  return make_action(kind, std::isnan(v) ? 0.0 : bounds.clamp(v));
}

inline ControlAction apply_mask(const ControlAction& action, const StrategyMask& mask) {
  return {mask.holding ? action.holding : 0.0, mask.signal ? action.signal : 0.0,
          mask.speed ? action.speed : 0.0};
}

constexpr double total_control_force(const ControlAction& a) { return a.holding + a.signal + a.speed; }

struct IntersectionVolumeProfile {
  std::vector<double> vc_ratios;  // V/C per phase
  std::size_t major_phase = 0;    // index of the major-street movement

  void validate() const {
    if (vc_ratios.empty()) throw ConfigError("volume profile: no phases");
    if (major_phase >= vc_ratios.size()) throw ConfigError("volume profile: major phase out of range");
    for (double r : vc_ratios)
      if (!(r > 0.0)) throw ConfigError("volume profile: V/C ratios must be positive");
  }
};

/// c_{j,k}: summed V/C over all phases relative to the major movement.
inline double intersection_volume_cost(const IntersectionVolumeProfile& profile) {
  profile.validate();
  const double major = profile.vc_ratios[profile.major_phase];
  if (major == 0.0) throw ConfigError("volume profile: major V/C ratio is zero");
  return std::accumulate(profile.vc_ratios.begin(), profile.vc_ratios.end(), 0.0) / major;
}

/// q_j = sum of c_{j,k} over the block's intersections; 0 without intersections.
inline double volume_cost(std::span<const IntersectionVolumeProfile> profiles) {
  double q = 0.0;
  for (const auto& p : profiles) q += intersection_volume_cost(p);
  return q;
}

}  // namespace busctl
