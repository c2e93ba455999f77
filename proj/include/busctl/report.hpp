#pragma once

// Trajectory logs (CSV) and the deviation statistics computed from them.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "busctl/corridor.hpp"
#include "busctl/engine.hpp"
#include "busctl/errors.hpp"

namespace busctl {

/// One row of the exported trajectory CSV.
struct TrajectoryRow {
  int bus = 0;  // 1-based
  int loop = 0;  // 1-based
  std::size_t position = 0;  // 1-based, within the loop
  PositionKind kind = PositionKind::kStation;
  double scheduled = 0.0;
  double actual = 0.0;
  double e = 0.0;
  double d = 0.0;
  double holding = 0.0;
  double signal = 0.0;
  double speed = 0.0;
  double delay = 0.0;
  double reward = 0.0;
};

inline constexpr std::string_view kTrajectoryHeader = "bus,loop,position,kind,scheduled_t,actual_t,e,d,u_b,u_k,u_c,w,reward";

inline std::vector<TrajectoryRow> to_rows(const std::vector<StepOutcome>& log, std::size_t loop_length) {
  std::vector<TrajectoryRow> rows;
  rows.reserve(log.size());
  for (const auto& o : log)
    rows.push_back({o.bus + 1, o.loop + 1, o.position % loop_length + 1, o.kind, o.scheduled, o.arrival,
                    o.obs.schedule_dev, o.headway_dev, o.action.holding, o.action.signal, o.action.speed, o.delay,
                    o.reward});
  return rows;
}

inline void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryRow>& rows) {
  out << kTrajectoryHeader << '\n';
  std::ostringstream line;
  line.precision(17);
  for (const auto& r : rows) {
    line.str("");
    line << r.bus << ',' << r.loop << ',' << r.position << ',' << to_string(r.kind) << ',' << r.scheduled << ','
         << r.actual << ',' << r.e << ',' << r.d << ',' << r.holding << ',' << r.signal << ',' << r.speed << ','
         << r.delay << ',' << r.reward << '\n';
    out << line.str();
  }
}

inline PositionKind parse_position_kind(const std::string& s) {
  for (auto k : {PositionKind::kStation, PositionKind::kRoadSegment, PositionKind::kSignalizedIntersection})
    if (to_string(k) == s) return k;
  throw ConfigError("trajectory: unknown position kind '" + s + "'");
}

namespace detail {

/// strtod-based so subnormal values (which std::stod rejects) round-trip.
inline double parse_field(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
  return v;
}

}  // namespace detail

inline std::vector<TrajectoryRow> read_trajectory_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kTrajectoryHeader) throw ConfigError("trajectory: unexpected header");
  std::vector<TrajectoryRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 13) throw ConfigError("trajectory: line " + std::to_string(line_no) + ": expected 13 fields");
    try {
      TrajectoryRow r;
      r.bus = std::stoi(f[0]);
      r.loop = std::stoi(f[1]);
      r.position = std::stoul(f[2]);
      r.kind = parse_position_kind(f[3]);
      r.scheduled = detail::parse_field(f[4]);
      r.actual = detail::parse_field(f[5]);
      r.e = detail::parse_field(f[6]);
      r.d = detail::parse_field(f[7]);
      r.holding = detail::parse_field(f[8]);
      r.signal = detail::parse_field(f[9]);
      r.speed = detail::parse_field(f[10]);
      r.delay = detail::parse_field(f[11]);
      r.reward = detail::parse_field(f[12]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw ConfigError("trajectory: line " + std::to_string(line_no) + ": malformed number");
    }
  }
  return rows;
}

struct DeviationStats {
  std::size_t samples = 0;
  double max_abs_e = 0.0;
  double max_abs_d = 0.0;
  double mean_abs_e = 0.0;
  double mean_abs_d = 0.0;
  double p95_abs_e = 0.0;
  double p95_abs_d = 0.0;

  double max_deviation() const { return std::max(max_abs_e, max_abs_d); }
};

struct DeviationReport {
  std::vector<DeviationStats> replications;
  DeviationStats pooled;
  double warmup_loops = 0.0;
};

namespace detail {

/// Nearest-rank percentile of a sorted sample.
inline double percentile_sorted(const std::vector<double>& sorted, double pct) {
  if (sorted.empty()) return 0.0;
  const auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

inline DeviationStats stats_from(std::vector<double> abs_e, std::vector<double> abs_d) {
  DeviationStats s;
  s.samples = abs_e.size();
  if (abs_e.empty()) return s;
  std::sort(abs_e.begin(), abs_e.end());
  std::sort(abs_d.begin(), abs_d.end());
  s.max_abs_e = abs_e.back();
  s.max_abs_d = abs_d.back();
  // Summed in sorted order so every route to the same sample agrees bit-for-bit.
  double se = 0.0, sd = 0.0;
  for (double v : abs_e) se += v;
  for (double v : abs_d) sd += v;
  s.mean_abs_e = se / static_cast<double>(abs_e.size());
  s.mean_abs_d = sd / static_cast<double>(abs_d.size());
  s.p95_abs_e = percentile_sorted(abs_e, 95.0);
  s.p95_abs_d = percentile_sorted(abs_d, 95.0);
  return s;
}

}  // namespace detail

/// Rows before `warmup_loops` loops (in position terms) are excluded.
inline DeviationReport report_metrics(const std::vector<std::vector<TrajectoryRow>>& replications,
                                      std::size_t loop_length, double warmup_loops) {
  if (replications.empty()) throw DomainError("report_metrics: no trajectory logs");
  const double cutoff = warmup_loops * static_cast<double>(loop_length);
  DeviationReport report;
  report.warmup_loops = warmup_loops;
  std::vector<double> all_e, all_d;
  for (const auto& rows : replications) {
    if (rows.empty()) throw DomainError("report_metrics: empty trajectory log");
    std::vector<double> e, d;
    for (const auto& r : rows) {
      const double global = static_cast<double>((r.loop - 1)) * static_cast<double>(loop_length) +
                            static_cast<double>(r.position - 1);
      if (global < cutoff) continue;
      e.push_back(std::abs(r.e));
      d.push_back(std::abs(r.d));
    }
    if (e.empty()) throw DomainError("report_metrics: warm-up exclusion removed every row");
    all_e.insert(all_e.end(), e.begin(), e.end());
    all_d.insert(all_d.end(), d.begin(), d.end());
    report.replications.push_back(detail::stats_from(std::move(e), std::move(d)));
  }
  report.pooled = detail::stats_from(std::move(all_e), std::move(all_d));
  return report;
}

inline nlohmann::json to_json(const DeviationStats& s) {
  return {{"samples", s.samples},       {"max_abs_e", s.max_abs_e},   {"max_abs_d", s.max_abs_d},
          {"mean_abs_e", s.mean_abs_e}, {"mean_abs_d", s.mean_abs_d}, {"p95_abs_e", s.p95_abs_e},
          {"p95_abs_d", s.p95_abs_d},   {"max_deviation", s.max_deviation()}};
}

inline nlohmann::json to_json(const DeviationReport& r) {
  nlohmann::json j;
  j["warmup_loops"] = r.warmup_loops;
  j["pooled"] = to_json(r.pooled);
  j["replications"] = nlohmann::json::array();
  for (const auto& s : r.replications) j["replications"].push_back(to_json(s));
  return j;
}

}  // namespace busctl
