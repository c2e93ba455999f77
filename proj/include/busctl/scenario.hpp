#pragma once

// Scenario files: a JSON document that fully determines a run (corridor,
// disturbances, reward weights, controller, fleet, training and evaluation
// settings). Unknown keys are rejected with their path.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "busctl/control.hpp"
#include "busctl/corridor.hpp"
#include "busctl/disturbance.hpp"
#include "busctl/engine.hpp"
#include "busctl/errors.hpp"
#include "busctl/observation.hpp"
#include "busctl/policy.hpp"
#include "busctl/ppo.hpp"

namespace busctl {

inline constexpr int kScenarioSchemaVersion = 1;

struct StationSpec {
  double travel_time = 0.0;
  double demand_rate = 0.0;
  double slack = 0.0;
  double distance = 0.0;
  double v_min = 0.0;
  double v_max = 0.0;
  std::vector<IntersectionVolumeProfile> intersections;
};

struct Scenario {
  int schema_version = kScenarioSchemaVersion;
  std::string name;
  std::uint64_t seed = 1;

  double planned_headway = 300.0;
  double signal_delay = 20.0;
  std::vector<StationSpec> stations;
  std::optional<std::vector<double>> volume_cost_override;

  TruncatedNormalSpec delay;
  UniformSpec demand;
  CostCoefficients coeffs;
  ControlCaps caps;
  StrategyMask mask;
  BaselineSettings baseline;
  int downstream = 5;
  ObservationScaling scaling;
  PolicyArchitecture architecture;

  ControllerKind controller = ControllerKind::kNoControl;
  int eval_buses = 19;
  int eval_loops = 2;
  int replications = 20;
  double warmup_loops = 0.5;

  int train_buses = 6;
  int train_loops = 1;
  TrainerConfig trainer;

  /// q_j per station, from the override table or from the V/C profiles.
  std::vector<double> volume_costs() const {
    if (volume_cost_override) return *volume_cost_override;
    std::vector<double> q;
    for (const auto& s : stations) q.push_back(volume_cost(s.intersections));
    return q;
  }

  CorridorConfig corridor(bool training) const {
    const auto q = volume_costs();
    std::vector<BlockSpec> blocks;
    for (std::size_t j = 0; j < stations.size(); ++j) {
      const auto& s = stations[j];
      blocks.push_back({s.travel_time, s.demand_rate, s.slack, s.distance, s.v_min, s.v_max,
                        static_cast<int>(s.intersections.size()), q[j]});
    }
    return make_block_corridor(blocks, planned_headway, training ? train_buses : eval_buses, signal_delay);
  }

  SimSettings sim_settings(bool training) const {
    SimSettings s;
    s.loops = training ? train_loops : eval_loops;
    s.downstream = downstream;
    s.coeffs = coeffs;
    s.caps = caps;
    s.mask = mask;
    s.delay = delay;
    s.demand = demand;
    return s;
  }

  Engine engine(bool training) const { return Engine(corridor(training), sim_settings(training)); }
};

namespace detail {

using nlohmann::json;

/// Walks a JSON object, remembering which keys were consumed.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  ~ObjectReader() = default;

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(field(key) + ": missing required field");
    return j_.at(key);
  }

  double number(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_number()) throw ConfigError(field(key) + ": expected a number");
    return v.get<double>();
  }
  double number(const std::string& key, double fallback) { return has(key) ? number(key) : fallback; }

  int integer(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_number_integer()) throw ConfigError(field(key) + ": expected an integer");
    return v.get<int>();
  }
  int integer(const std::string& key, int fallback) { return has(key) ? integer(key) : fallback; }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(field(key) + ": expected true/false");
    return v.get<bool>();
  }

  std::string string(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_string()) throw ConfigError(field(key) + ": expected a string");
    return v.get<std::string>();
  }
  std::string string(const std::string& key, const std::string& fallback) { return has(key) ? string(key) : fallback; }

  std::vector<double> numbers(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_array()) throw ConfigError(field(key) + ": expected an array");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(field(key) + "[" + std::to_string(i) + "]: expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  std::optional<ObjectReader> object(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return ObjectReader(raw(key), field(key));
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  const std::string& path() const { return path_; }

  /// Throws on any key that was never read.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()) + ": unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline StrategyMask parse_mask(const json& arr, const std::string& path) {
  if (!arr.is_array()) throw ConfigError(path + ": expected an array of strategy names");
  StrategyMask m{false, false, false};
  for (const auto& v : arr) {
    const auto name = v.is_string() ? v.get<std::string>() : std::string();
    if (name == "holding")
      m.holding = true;
    else if (name == "signal")
      m.signal = true;
    else if (name == "speed")
      m.speed = true;
    else
      throw ConfigError(path + ": unknown strategy '" + name + "'");
  }
  if (!m.any()) throw ConfigError(path + ": at least one strategy must be enabled");
  return m;
}

}  // namespace detail

inline StrategyMask parse_strategy_list(const std::string& csv) {
  nlohmann::json arr = nlohmann::json::array();
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) arr.push_back(item);
  return detail::parse_mask(arr, "strategies");
}

inline Scenario parse_scenario(const nlohmann::json& doc) {
  using detail::ObjectReader;
  Scenario sc;
  ObjectReader root(doc, "");
  sc.schema_version = root.integer("schema_version");
  if (sc.schema_version != kScenarioSchemaVersion)
    throw ConfigError("schema_version: unsupported version " + std::to_string(sc.schema_version));
  sc.name = root.string("name");
  {
    const auto& s = root.raw("seed");
    if (!s.is_number_unsigned() && !s.is_number_integer()) throw ConfigError("seed: expected an integer");
    sc.seed = s.get<std::uint64_t>();
  }

  {
    auto c = root.object("corridor");
    if (!c) throw ConfigError("corridor: missing required field");
    sc.planned_headway = c->number("planned_headway");
    sc.signal_delay = c->number("signal_delay", sc.signal_delay);
    const auto& arr = c->raw("stations");
    if (!arr.is_array() || arr.empty()) throw ConfigError("corridor.stations: expected a non-empty array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      ObjectReader st(arr[i], "corridor.stations[" + std::to_string(i) + "]");
      StationSpec spec;
      spec.travel_time = st.number("travel_time");
      spec.demand_rate = st.number("demand_rate");
      spec.slack = st.number("slack");
      spec.distance = st.number("distance");
      spec.v_min = st.number("v_min");
      spec.v_max = st.number("v_max");
      if (st.has("intersections")) {
        const auto& ints = st.raw("intersections");
        if (!ints.is_array()) throw ConfigError(st.field("intersections") + ": expected an array");
        for (std::size_t k = 0; k < ints.size(); ++k) {
          ObjectReader ir(ints[k], st.field("intersections") + "[" + std::to_string(k) + "]");
          IntersectionVolumeProfile prof;
          prof.vc_ratios = ir.numbers("vc_ratios");
          const int major = ir.integer("major_phase", 0);
          if (major < 0) throw ConfigError(ir.field("major_phase") + ": must be >= 0");
          prof.major_phase = static_cast<std::size_t>(major);
          try {
            prof.validate();
          } catch (const ConfigError& e) {
            throw ConfigError(ir.path() + ": " + e.what());
          }
          ir.finish();
          spec.intersections.push_back(std::move(prof));
        }
      }
      st.finish();
      sc.stations.push_back(std::move(spec));
    }
    if (c->has("volume_cost")) {
      auto q = c->numbers("volume_cost");
      if (q.size() != sc.stations.size())
        throw ConfigError("corridor.volume_cost: expected one entry per station (" +
                          std::to_string(sc.stations.size()) + ")");
      for (double v : q)
        if (!(v >= 0.0)) throw ConfigError("corridor.volume_cost: entries must be >= 0");
      sc.volume_cost_override = std::move(q);
    }
    c->finish();
  }

  if (auto d = root.object("disturbance")) {
    if (auto w = d->object("delay")) {
      sc.delay.mean = w->number("mean");
      sc.delay.stddev = w->number("stddev");
      sc.delay.lower = w->number("lower");
      sc.delay.upper = w->number("upper");
      w->finish();
    }
    if (auto b = d->object("demand")) {
      sc.demand.lower = b->number("lower");
      sc.demand.upper = b->number("upper");
      b->finish();
    }
    d->finish();
  }

  if (auto r = root.object("reward")) {
    sc.coeffs.schedule = r->number("schedule", sc.coeffs.schedule);
    sc.coeffs.headway = r->number("headway", sc.coeffs.headway);
    sc.coeffs.holding = r->number("holding", sc.coeffs.holding);
    sc.coeffs.signal = r->number("signal", sc.coeffs.signal);
    sc.coeffs.speed = r->number("speed", sc.coeffs.speed);
    r->finish();
  }

  if (auto c = root.object("control")) {
    sc.caps.holding_max = c->number("holding_max", sc.caps.holding_max);
    sc.caps.signal_max = c->number("signal_max", sc.caps.signal_max);
    sc.baseline.headway_gain = c->number("headway_gain", sc.baseline.headway_gain);
    if (c->has("strategies")) sc.mask = detail::parse_mask(c->raw("strategies"), c->field("strategies"));
    c->finish();
  }

  if (auto o = root.object("observation")) {
    sc.downstream = o->integer("downstream", sc.downstream);
    sc.scaling.deviation_scale = o->number("deviation_scale", sc.scaling.deviation_scale);
    sc.scaling.dwell_scale = o->number("dwell_scale", sc.scaling.dwell_scale);
    sc.scaling.volume_scale = o->number("volume_scale", sc.scaling.volume_scale);
    o->finish();
  }

  if (auto p = root.object("policy")) {
    if (p->has("hidden")) {
      sc.architecture.hidden.clear();
      for (double h : p->numbers("hidden")) sc.architecture.hidden.push_back(static_cast<int>(h));
    }
    sc.architecture.initial_log_std = p->number("initial_log_std", sc.architecture.initial_log_std);
    sc.architecture.actor_output_gain = p->number("actor_output_gain", sc.architecture.actor_output_gain);
    sc.architecture.critic_output_gain = p->number("critic_output_gain", sc.architecture.critic_output_gain);
    p->finish();
  }

  if (auto e = root.object("evaluation")) {
    sc.controller = parse_controller_kind(e->string("controller", std::string(to_string(sc.controller))));
    sc.eval_buses = e->integer("buses", sc.eval_buses);
    sc.eval_loops = e->integer("loops", sc.eval_loops);
    sc.replications = e->integer("replications", sc.replications);
    sc.warmup_loops = e->number("warmup_loops", sc.warmup_loops);
    e->finish();
  }

  if (auto t = root.object("training")) {
    sc.train_buses = t->integer("buses", sc.train_buses);
    sc.train_loops = t->integer("loops", sc.train_loops);
    auto& tc = sc.trainer;
    tc.episodes = t->integer("episodes", tc.episodes);
    tc.workers = t->integer("workers", tc.workers);
    tc.clip = t->number("clip", tc.clip);
    tc.gamma = t->number("gamma", tc.gamma);
    tc.minibatch = t->integer("minibatch", tc.minibatch);
    tc.epochs = t->integer("epochs", tc.epochs);
    tc.actor_learning_rate = t->number("actor_learning_rate", tc.actor_learning_rate);
    tc.critic_learning_rate = t->number("critic_learning_rate", tc.critic_learning_rate);
    tc.normalize_advantages = t->boolean("normalize_advantages", tc.normalize_advantages);
    tc.checkpoint_every = t->integer("checkpoint_every", tc.checkpoint_every);
    t->finish();
  }
  root.finish();
  sc.trainer.seed = sc.seed;

  if (sc.eval_buses < 1 || sc.train_buses < 1) throw ConfigError("fleet size must be >= 1");
  if (sc.eval_loops < 1 || sc.train_loops < 1) throw ConfigError("loops must be >= 1");
  if (sc.replications < 1) throw ConfigError("evaluation.replications: must be >= 1");
  if (sc.warmup_loops < 0.0) throw ConfigError("evaluation.warmup_loops: must be >= 0");
  if (sc.downstream < 1) throw ConfigError("observation.downstream: must be >= 1");
  sc.delay.validate();
  sc.demand.validate();
  sc.coeffs.validate();
  sc.trainer.validate();
  for (std::size_t j = 0; j < sc.stations.size(); ++j) {
    const auto& s = sc.stations[j];
    const double road_time = s.travel_time - sc.signal_delay * static_cast<double>(s.intersections.size());
    try {
      SpeedEnvelope{s.v_min, s.v_max, road_time, s.distance}.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("corridor.stations[" + std::to_string(j) + "]: " + e.what());
    }
  }
  sc.corridor(false).validate();
  return sc;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": parse error: " + e.what());
  }
  return parse_scenario(doc);
}

/// The scenario with defaults filled in, as JSON.
inline nlohmann::json scenario_to_json(const Scenario& sc) {
  nlohmann::json j;
  j["schema_version"] = sc.schema_version;
  j["name"] = sc.name;
  j["seed"] = sc.seed;
  auto& c = j["corridor"];
  c["planned_headway"] = sc.planned_headway;
  c["signal_delay"] = sc.signal_delay;
  c["stations"] = nlohmann::json::array();
  for (const auto& s : sc.stations) {
    nlohmann::json st{{"travel_time", s.travel_time}, {"demand_rate", s.demand_rate}, {"slack", s.slack},
                      {"distance", s.distance},       {"v_min", s.v_min},             {"v_max", s.v_max}};
    st["intersections"] = nlohmann::json::array();
    for (const auto& p : s.intersections)
      st["intersections"].push_back({{"vc_ratios", p.vc_ratios}, {"major_phase", p.major_phase}});
    c["stations"].push_back(st);
  }
  if (sc.volume_cost_override) c["volume_cost"] = *sc.volume_cost_override;
  j["disturbance"] = {
      {"delay", {{"mean", sc.delay.mean}, {"stddev", sc.delay.stddev}, {"lower", sc.delay.lower}, {"upper", sc.delay.upper}}},
      {"demand", {{"lower", sc.demand.lower}, {"upper", sc.demand.upper}}}};
  j["reward"] = {{"schedule", sc.coeffs.schedule}, {"headway", sc.coeffs.headway}, {"holding", sc.coeffs.holding},
                 {"signal", sc.coeffs.signal},     {"speed", sc.coeffs.speed}};
  auto strategies = nlohmann::json::array();
  if (sc.mask.holding) strategies.push_back("holding");
  if (sc.mask.signal) strategies.push_back("signal");
  if (sc.mask.speed) strategies.push_back("speed");
  j["control"] = {{"holding_max", sc.caps.holding_max},
                  {"signal_max", sc.caps.signal_max},
                  {"headway_gain", sc.baseline.headway_gain},
                  {"strategies", strategies}};
  j["observation"] = {{"downstream", sc.downstream},
                      {"deviation_scale", sc.scaling.deviation_scale},
                      {"dwell_scale", sc.scaling.dwell_scale},
                      {"volume_scale", sc.scaling.volume_scale}};
  j["policy"] = {{"hidden", sc.architecture.hidden},
                 {"initial_log_std", sc.architecture.initial_log_std},
                 {"actor_output_gain", sc.architecture.actor_output_gain},
                 {"critic_output_gain", sc.architecture.critic_output_gain}};
  j["evaluation"] = {{"controller", std::string(to_string(sc.controller))},
                     {"buses", sc.eval_buses},
                     {"loops", sc.eval_loops},
                     {"replications", sc.replications},
                     {"warmup_loops", sc.warmup_loops}};
  const auto& t = sc.trainer;
  j["training"] = {{"buses", sc.train_buses},
                   {"loops", sc.train_loops},
                   {"episodes", t.episodes},
                   {"workers", t.workers},
                   {"clip", t.clip},
                   {"gamma", t.gamma},
                   {"minibatch", t.minibatch},
                   {"epochs", t.epochs},
                   {"actor_learning_rate", t.actor_learning_rate},
                   {"critic_learning_rate", t.critic_learning_rate},
                   {"normalize_advantages", t.normalize_advantages},
                   {"checkpoint_every", t.checkpoint_every}};
  return j;
}

}  // namespace busctl
