#pragma once

// Static corridor description, timetable construction and the two error
// measures (schedule deviation, multi-bus headway deviation).

#include <cmath>
#include <cstddef>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "busctl/errors.hpp"

namespace busctl {

enum class PositionKind { kStation = 0, kRoadSegment = 1, kSignalizedIntersection = 2 };

inline constexpr std::string_view to_string(PositionKind kind) {
  switch (kind) {
    case PositionKind::kStation:
      return "station";
    case PositionKind::kRoadSegment:
      return "road";
    case PositionKind::kSignalizedIntersection:
      return "intersection";
  }
  return "?";
}

/// Per-position timing and demand data. Demand rate and slack are only
/// meaningful at stations; travel time and distance at road segments.
struct StationProfile {
  int index = 0;
  double avg_travel_time = 0.0;   // r_j, seconds to the next position
  double demand_rate = 0.0;       // beta_j, dwell seconds per headway second
  double slack = 0.0;             // s_j, seconds
  double distance_to_next = 0.0;  // M_{j,j+1}, meters
};

struct Position {
  PositionKind kind = PositionKind::kStation;
  StationProfile profile;
  int block = 0;  // station ordinal (0-based) owning this position

  // Road segments: admissible average speed range, m/s.
  double v_min = 0.0;
  double v_max = 0.0;
};

/// One loop worth of positions; the position after the last is the first.
struct CorridorConfig {
  std::vector<Position> positions;
  double planned_headway = 0.0;  // H, seconds
  int n_buses = 1;
  int n_stations = 0;
  /// Volume cost q_j per station block.
  std::vector<double> block_volume_cost;

  std::size_t loop_length() const { return positions.size(); }

  const Position& position(std::size_t global_index) const {
    return positions[global_index % positions.size()];
  }

  double volume_cost_at(std::size_t global_index) const {
    const auto block = static_cast<std::size_t>(position(global_index).block);
    return block < block_volume_cost.size() ? block_volume_cost[block] : 0.0;
  }

  void validate() const {
    if (positions.empty()) throw ConfigError("corridor: no positions");
    if (!(planned_headway > 0.0) || !std::isfinite(planned_headway))
      throw ConfigError("corridor.planned_headway: must be positive");
    if (n_buses < 1) throw ConfigError("corridor.n_buses: must be >= 1");
    if (n_stations < 1) throw ConfigError("corridor.n_stations: must be >= 1");
    if (block_volume_cost.size() != static_cast<std::size_t>(n_stations))
      throw ConfigError("corridor.block_volume_cost: one entry per station required");
    for (double q : block_volume_cost)
      if (!(q >= 0.0)) throw ConfigError("corridor.block_volume_cost: must be >= 0");

    int stations_seen = 0;
    for (std::size_t p = 0; p < positions.size(); ++p) {
      const auto& pos = positions[p];
      const auto& pr = pos.profile;
      const std::string where = "corridor.positions[" + std::to_string(p) + "]";
      if (pos.block < 0 || pos.block >= n_stations) throw ConfigError(where + ".block: out of range");
      if (pos.kind == PositionKind::kStation) {
        ++stations_seen;
        if (!(pr.demand_rate >= 0.0 && pr.demand_rate < 1.0))
          throw ConfigError(where + ".demand_rate: must lie in [0, 1)");
        if (!(pr.slack >= 0.0)) throw ConfigError(where + ".slack: must be >= 0");
      } else if (pr.demand_rate != 0.0 || pr.slack != 0.0) {
        throw ConfigError(where + ": demand rate and slack are station-only");
      }
      if (pos.kind == PositionKind::kRoadSegment) {
        if (!(pr.avg_travel_time > 0.0)) throw ConfigError(where + ".travel_time: must be positive");
        if (!(pr.distance_to_next > 0.0)) throw ConfigError(where + ".distance: must be positive");
      } else if (pr.avg_travel_time < 0.0) {
        throw ConfigError(where + ".travel_time: must be >= 0");
      }
    }
    if (stations_seen != n_stations) throw ConfigError("corridor: station count mismatch");
  }
};

/// Inputs for one inter-station block: Station -> RoadSegment -> intersections.
struct BlockSpec {
  double travel_time = 0.0;  // r_j for the whole block, seconds
  double demand_rate = 0.0;
  double slack = 0.0;
  double distance = 0.0;  // meters, road segment
  double v_min = 0.0;
  double v_max = 0.0;
  int n_intersections = 1;
  double volume_cost = 0.0;  // q_j
};

/// Lays out Station -> RoadSegment -> N_j intersections per block. Each
/// intersection carries `signal_delay` seconds of nominal time, taken out of
/// the block's travel time so the block total stays r_j.
inline CorridorConfig make_block_corridor(const std::vector<BlockSpec>& blocks, double planned_headway,
                                          int n_buses, double signal_delay) {
  CorridorConfig cfg;
  cfg.planned_headway = planned_headway;
  cfg.n_buses = n_buses;
  cfg.n_stations = static_cast<int>(blocks.size());
  int index = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& spec = blocks[b];
    const int block = static_cast<int>(b);
    const double signal_total = signal_delay * spec.n_intersections;
    if (spec.travel_time - signal_total <= 0.0)
      throw ConfigError("block " + std::to_string(b) + ": travel time must exceed nominal signal delay");

    Position station;
    station.kind = PositionKind::kStation;
    station.block = block;
    station.profile = {index++, 0.0, spec.demand_rate, spec.slack, 0.0};
    cfg.positions.push_back(station);

    Position road;
    road.kind = PositionKind::kRoadSegment;
    road.block = block;
    road.profile = {index++, spec.travel_time - signal_total, 0.0, 0.0, spec.distance};
    road.v_min = spec.v_min;
    road.v_max = spec.v_max;
    cfg.positions.push_back(road);

    for (int k = 0; k < spec.n_intersections; ++k) {
      Position signal;
      signal.kind = PositionKind::kSignalizedIntersection;
      signal.block = block;
      signal.profile = {index++, signal_delay, 0.0, 0.0, 0.0};
      cfg.positions.push_back(signal);
    }
    cfg.block_volume_cost.push_back(spec.volume_cost);
  }
  cfg.validate();
  return cfg;
}

/// Scheduled arrival times t[i][p] for every bus over a fixed number of
/// loops. Column `loops * loop_length` is the arrival back at the terminal.
class ScheduleTable {
 public:
  ScheduleTable() = default;
  ScheduleTable(std::size_t n_buses, std::size_t n_columns)
      : n_buses_(n_buses), n_columns_(n_columns), times_(n_buses * n_columns, 0.0) {}

  std::size_t n_buses() const { return n_buses_; }
  std::size_t n_columns() const { return n_columns_; }

  double at(std::size_t bus, std::size_t column) const { return times_[bus * n_columns_ + column]; }
  double& at(std::size_t bus, std::size_t column) { return times_[bus * n_columns_ + column]; }

 private:
  std::size_t n_buses_ = 0;
  std::size_t n_columns_ = 0;
  std::vector<double> times_;
};

/// Nominal increment from position p to p+1: beta*H + r + s.
inline double schedule_increment(const CorridorConfig& config, std::size_t global_index) {
  const auto& pr = config.position(global_index).profile;
  return pr.demand_rate * config.planned_headway + pr.avg_travel_time + pr.slack;
}

inline ScheduleTable build_schedule(const CorridorConfig& config, int horizon_loops) {
  config.validate();
  if (horizon_loops < 1) throw ConfigError("build_schedule: horizon_loops must be >= 1");
  const std::size_t columns = static_cast<std::size_t>(horizon_loops) * config.loop_length() + 1;
  ScheduleTable table(static_cast<std::size_t>(config.n_buses), columns);
  // Bus 0's row is accumulated once; later buses are exact H-shifts of it.
  std::vector<double> lead(columns, 0.0);
  for (std::size_t p = 0; p + 1 < columns; ++p) lead[p + 1] = lead[p] + schedule_increment(config, p);
  for (std::size_t i = 0; i < table.n_buses(); ++i) {
    const double start = static_cast<double>(i) * config.planned_headway;
    for (std::size_t p = 0; p < columns; ++p) table.at(i, p) = start + lead[p];
  }
  return table;
}

/// e = a - t; positive means late.
constexpr double schedule_deviation(double actual, double scheduled) { return actual - scheduled; }

/// d^{i,i-k} = (a^i - a^{i-k}) - k H. k = 1 is the plain headway deviation.
inline double headway_deviation(double arrival, double downstream_arrival, int k, double planned_headway) {
  if (k < 1) throw DomainError("headway_deviation: k must be >= 1");
  return (arrival - downstream_arrival) - static_cast<double>(k) * planned_headway;
}

inline void write_schedule_csv(std::ostream& out, const ScheduleTable& table) {
  out << "bus,position,scheduled_time\n";
  const auto old_precision = out.precision(17);
  for (std::size_t i = 0; i < table.n_buses(); ++i)
    for (std::size_t p = 0; p < table.n_columns(); ++p) out << i + 1 << ',' << p << ',' << table.at(i, p) << '\n';
  out.precision(old_precision);
}

}  // namespace busctl
