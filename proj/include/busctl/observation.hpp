#pragma once

// Fused agent state over downstream buses and the exponential-quadratic reward.

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "busctl/control.hpp"
#include "busctl/corridor.hpp"
#include "busctl/errors.hpp"

namespace busctl {

struct FusedObservation {
  double schedule_dev = 0.0;           // e
  double weighted_headway_dev = 0.0;   // d~
  double dwell_load = 0.0;             // beta~ * h
};

struct CostCoefficients {
  double schedule = 0.01;  // alpha_1
  double headway = 0.01;   // alpha_2
  double holding = 0.01;   // alpha_3b
  double signal = 0.01;    // alpha_3k, multiplied by the volume cost q
  double speed = 0.01;     // alpha_3c

  void validate() const {
    for (double a : {schedule, headway, holding, signal, speed})
      if (!(a > 0.0) || !std::isfinite(a)) throw ConfigError("cost coefficients must be positive and finite");
  }
};

/// w_m = 2^-m for m < k and w_k = 2^-(k-1); sums to exactly one.
inline std::vector<double> downstream_weights(int k) {
  if (k < 1) throw DomainError("downstream_weights: k must be >= 1");
  std::vector<double> w(static_cast<std::size_t>(k));
  for (int m = 1; m < k; ++m) w[static_cast<std::size_t>(m - 1)] = std::ldexp(1.0, -m);
  w.back() = std::ldexp(1.0, -(k - 1));
  return w;
}

/// Builds the fused state for a bus at one position.
///
/// `downstream` holds arrival times of the real downstream buses at this
/// same position, nearest first. Missing buses up to `k` are dummies running
/// exactly on the subject's schedule grid, i.e. arriving at scheduled - m*H.
/// `demand_rate` is the effective rate at this position (0 off-station).
inline FusedObservation fuse_state(double arrival, double scheduled, std::span<const double> downstream, int k,
                                   double planned_headway, double demand_rate) {
  const auto weights = downstream_weights(k);
  auto downstream_arrival = [&](int m) {
    const auto idx = static_cast<std::size_t>(m - 1);
    return idx < downstream.size() ? downstream[idx] : scheduled - m * planned_headway;
  };

  FusedObservation obs;
  obs.schedule_dev = schedule_deviation(arrival, scheduled);
  for (int m = 1; m <= k; ++m)
    obs.weighted_headway_dev += weights[static_cast<std::size_t>(m - 1)] *
                                headway_deviation(arrival, downstream_arrival(m), m, planned_headway);
  obs.dwell_load = demand_rate * (arrival - downstream_arrival(1));
  return obs;
}

/// c = a1 e^2 + a2 d~^2 + a3b u_b^2 + (a3k q) u_k^2 + a3c u_c^2.
inline double running_cost(const FusedObservation& obs, const ControlAction& action, double volume_cost,
                           const CostCoefficients& coeffs) {
  coeffs.validate();
  if (!(volume_cost >= 0.0)) throw ConfigError("running_cost: volume cost must be >= 0");
  const double e = obs.schedule_dev;
  const double d = obs.weighted_headway_dev;
  return coeffs.schedule * e * e + coeffs.headway * d * d + coeffs.holding * action.holding * action.holding +
         coeffs.signal * volume_cost * action.signal * action.signal + coeffs.speed * action.speed * action.speed;
}

inline double reward(double cost) { return std::exp(-cost); }

/// Scales applied before the network sees an observation.
struct ObservationScaling {
  double deviation_scale = 300.0;  // divides e and d~
  double dwell_scale = 300.0;      // divides beta~ h
  double volume_scale = 100.0;     // divides q
};

inline constexpr std::size_t kFeatureCount = 7;
using Features = std::array<double, kFeatureCount>;

/// [e, d~, dwell, one-hot(kind) x3, q], each scaled.
inline Features make_features(const FusedObservation& obs, PositionKind kind, double volume_cost,
                              const ObservationScaling& scaling) {
  Features f{};
  f[0] = obs.schedule_dev / scaling.deviation_scale;
  f[1] = obs.weighted_headway_dev / scaling.deviation_scale;
  f[2] = obs.dwell_load / scaling.dwell_scale;
  f[3 + static_cast<std::size_t>(kind)] = 1.0;
  f[6] = volume_cost / scaling.volume_scale;
  return f;
}

}  // namespace busctl
