#pragma once

// Actor-critic pair shared by every bus and position. The actor emits one
// Gaussian per control force; only the force owned by the current position
// kind is sampled and scored.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "busctl/control.hpp"
#include "busctl/engine.hpp"
#include "busctl/errors.hpp"
#include "busctl/mlp.hpp"
#include "busctl/observation.hpp"

namespace busctl {

inline constexpr int kActionDims = 3;  // indexed by PositionKind

struct PolicyArchitecture {
  std::vector<int> hidden{64, 64};
  double initial_log_std = -0.5;
  double actor_output_gain = 0.01;
  double critic_output_gain = 1.0;
};

/// Per-dimension Gaussian in the network's (-1, 1) action space.
struct GaussianPolicyHead {
  std::array<double, kActionDims> mean{};
  std::array<double, kActionDims> log_std{};
};

inline double gaussian_log_density(double x, double mean, double log_std) {
  const double z = (x - mean) * std::exp(-log_std);
  return -0.5 * z * z - log_std - 0.5 * std::log(2.0 * std::numbers::pi);
}

/// Unit-space value to seconds: scale by the larger bound magnitude, then clip.
/// Zero maps to zero for every position kind.
inline double unit_to_force(double x, const ActionBounds& bounds) { return bounds.clamp(x * bounds.half_range()); }

struct SampledAction {
  ControlAction action;
  double raw = 0.0;       // pre-scale, pre-clamp sample
  double log_prob = 0.0;  // density of `raw` in the active dimension only
};

/// Draws the active dimension's raw sample, scores it, and maps it into bounds.
/// Inactive dimensions stay zero and contribute nothing to the log-probability.
template <class Rng>
SampledAction sample_and_log_prob(const GaussianPolicyHead& head, PositionKind kind, const ActionBounds& bounds,
                                  Rng& rng) {
  const auto d = static_cast<std::size_t>(kind);
  std::normal_distribution<double> normal(0.0, 1.0);
  SampledAction s;
  s.raw = head.mean[d] + std::exp(head.log_std[d]) * normal(rng);
  s.log_prob = gaussian_log_density(s.raw, head.mean[d], head.log_std[d]);
  s.action = make_action(kind, unit_to_force(s.raw, bounds));
  return s;
}

inline ControlAction deterministic_action(const GaussianPolicyHead& head, PositionKind kind,
                                          const ActionBounds& bounds) {
  return make_action(kind, unit_to_force(head.mean[static_cast<std::size_t>(kind)], bounds));
}

class ActorCritic {
 public:
  ActorCritic() : ActorCritic(PolicyArchitecture{}) {}

  explicit ActorCritic(const PolicyArchitecture& arch, ObservationScaling scaling = {})
      : scaling_(scaling),
        actor_(layers(arch.hidden, kActionDims)),
        critic_(layers(arch.hidden, 1)),
        log_std_(Vector::Constant(kActionDims, arch.initial_log_std)) {}

  void initialize(std::uint64_t seed, const PolicyArchitecture& arch) {
    actor_.initialize(seed * 2 + 1, arch.actor_output_gain);
    critic_.initialize(seed * 2 + 2, arch.critic_output_gain);
    log_std_.setConstant(arch.initial_log_std);
  }

  const ObservationScaling& scaling() const { return scaling_; }
  Mlp& actor() { return actor_; }
  const Mlp& actor() const { return actor_; }
  Mlp& critic() { return critic_; }
  const Mlp& critic() const { return critic_; }
  Vector& log_std() { return log_std_; }
  const Vector& log_std() const { return log_std_; }

  Features features(const DecisionContext& ctx) const {
    return make_features(ctx.obs, ctx.kind, ctx.volume_cost, scaling_);
  }

  static Vector to_vector(const Features& f) {
    return Eigen::Map<const Vector>(f.data(), static_cast<Eigen::Index>(f.size()));
  }

  GaussianPolicyHead forward_actor(const Features& f) const { return head_from(actor_.forward(to_vector(f))); }

  GaussianPolicyHead forward_actor(const Features& f, Mlp::Cache& cache) const {
    return head_from(actor_.forward(to_vector(f), cache));
  }

  double forward_critic(const Features& f) const {
    const double v = critic_.forward(to_vector(f))(0);
    if (!std::isfinite(v)) throw NumericalFault("critic produced a non-finite value");
    return v;
  }

  /// Actor parameters followed by the log-stddevs, for the optimizer.
  Vector actor_flat() const {
    Vector v(actor_.parameter_count() + kActionDims);
    v << actor_.parameters(), log_std_;
    return v;
  }

  void set_actor_flat(const Vector& v) {
    const auto n = actor_.parameter_count();
    if (v.size() != n + kActionDims) throw std::logic_error("set_actor_flat: size mismatch");
    actor_.parameters() = v.head(n);
    log_std_ = v.tail(kActionDims);
  }

  bool same_architecture(const ActorCritic& other) const {
    return actor_.layer_sizes() == other.actor_.layer_sizes() && critic_.layer_sizes() == other.critic_.layer_sizes();
  }

 private:
  static std::vector<int> layers(const std::vector<int>& hidden, int out) {
    std::vector<int> sizes{static_cast<int>(kFeatureCount)};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(out);
    return sizes;
  }

  GaussianPolicyHead head_from(const Vector& out) const {
    GaussianPolicyHead h;
    for (int d = 0; d < kActionDims; ++d) {
      h.mean[static_cast<std::size_t>(d)] = std::tanh(out(d));
      h.log_std[static_cast<std::size_t>(d)] = log_std_(d);
      if (!std::isfinite(h.mean[static_cast<std::size_t>(d)]) || !std::isfinite(log_std_(d)))
        throw NumericalFault("actor produced a non-finite output");
    }
    return h;
  }

  ObservationScaling scaling_;
  Mlp actor_;
  Mlp critic_;
  Vector log_std_;
};

/// Evaluation controller: acts with the mean of the policy.
struct GreedyPolicyController {
  const ActorCritic* policy = nullptr;
  ControlAction operator()(const DecisionContext& ctx) const {
    return deterministic_action(policy->forward_actor(policy->features(ctx)), ctx.kind, ctx.bounds);
  }
};

// --- checkpoint I/O ---------------------------------------------------------
//
// Plain text: a header, the architecture, then every parameter as a C99
// hex-float so the round trip is bit-exact.

inline constexpr std::string_view kCheckpointMagic = "busctl-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline double parse_double(const std::string& token, std::string_view name) {
  char* end = nullptr;
  const double x = std::strtod(token.c_str(), &end);
  if (token.empty() || end != token.c_str() + token.size() || !std::isfinite(x))
    throw ConfigError("checkpoint: malformed number '" + token + "' in '" + std::string(name) + "'");
  return x;
}

inline void write_vector(std::ostream& out, std::string_view name, const Vector& v) {
  out << name << ' ' << v.size() << '\n';
  out << std::hexfloat;
  for (Eigen::Index i = 0; i < v.size(); ++i) out << v(i) << '\n';
  out << std::defaultfloat;
}

inline Vector read_vector(std::istream& in, std::string_view name) {
  std::string tag;
  Eigen::Index n = 0;
  if (!(in >> tag >> n) || tag != name) throw ConfigError("checkpoint: expected section '" + std::string(name) + "'");
  Vector v(n);
  std::string token;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(in >> token)) throw ConfigError("checkpoint: truncated section '" + std::string(name) + "'");
    v(i) = parse_double(token, name);
  }
  return v;
}

inline void write_sizes(std::ostream& out, std::string_view name, const std::vector<int>& sizes) {
  out << name << ' ' << sizes.size();
  for (int s : sizes) out << ' ' << s;
  out << '\n';
}

inline std::vector<int> read_sizes(std::istream& in, std::string_view name) {
  std::string tag;
  std::size_t n = 0;
  if (!(in >> tag >> n) || tag != name) throw ConfigError("checkpoint: expected '" + std::string(name) + "'");
  std::vector<int> sizes(n);
  for (auto& s : sizes)
    if (!(in >> s)) throw ConfigError("checkpoint: truncated layer sizes");
  return sizes;
}

inline void write_scalar(std::ostream& out, std::string_view name, double x) {
  out << name << ' ' << std::hexfloat << x << std::defaultfloat << '\n';
}

inline double read_scalar(std::istream& in, std::string_view name) {
  std::string tag, token;
  if (!(in >> tag >> token) || tag != name) throw ConfigError("checkpoint: expected '" + std::string(name) + "'");
  return parse_double(token, name);
}

}  // namespace detail

/// Optimizer and progress state carried alongside the policy for resuming.
struct TrainingState {
  AdamState actor_opt;
  AdamState critic_opt;
  std::int64_t episodes_done = 0;
  std::int64_t policy_version = 0;
};

inline void write_checkpoint(std::ostream& out, const ActorCritic& policy, const TrainingState* state = nullptr) {
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  detail::write_sizes(out, "actor_layers", policy.actor().layer_sizes());
  detail::write_sizes(out, "critic_layers", policy.critic().layer_sizes());
  detail::write_scalar(out, "deviation_scale", policy.scaling().deviation_scale);
  detail::write_scalar(out, "dwell_scale", policy.scaling().dwell_scale);
  detail::write_scalar(out, "volume_scale", policy.scaling().volume_scale);
  detail::write_vector(out, "actor", policy.actor().parameters());
  detail::write_vector(out, "log_std", policy.log_std());
  detail::write_vector(out, "critic", policy.critic().parameters());
  out << "training " << (state ? 1 : 0) << '\n';
  if (state) {
    out << "progress " << state->episodes_done << ' ' << state->policy_version << '\n';
    for (const AdamState* opt : {&state->actor_opt, &state->critic_opt}) {
      out << "adam " << opt->step << '\n';
      detail::write_scalar(out, "lr", opt->learning_rate);
      detail::write_vector(out, "m", opt->first_moment);
      detail::write_vector(out, "v", opt->second_moment);
    }
  }
}

struct LoadedCheckpoint {
  ActorCritic policy;
  std::optional<TrainingState> state;
};

inline LoadedCheckpoint read_checkpoint(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kCheckpointMagic) throw ConfigError("checkpoint: bad header");
  if (version != kCheckpointVersion) throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
  const auto actor_layers = detail::read_sizes(in, "actor_layers");
  const auto critic_layers = detail::read_sizes(in, "critic_layers");
  if (actor_layers.size() < 2 || critic_layers.size() < 2 || actor_layers.front() != int(kFeatureCount) ||
      actor_layers.back() != kActionDims || critic_layers.back() != 1 ||
      std::vector<int>(actor_layers.begin() + 1, actor_layers.end() - 1) !=
          std::vector<int>(critic_layers.begin() + 1, critic_layers.end() - 1))
    throw ConfigError("checkpoint: architecture mismatch");
  ObservationScaling scaling;
  scaling.deviation_scale = detail::read_scalar(in, "deviation_scale");
  scaling.dwell_scale = detail::read_scalar(in, "dwell_scale");
  scaling.volume_scale = detail::read_scalar(in, "volume_scale");

  PolicyArchitecture arch;
  arch.hidden.assign(actor_layers.begin() + 1, actor_layers.end() - 1);
  LoadedCheckpoint out{ActorCritic(arch, scaling), std::nullopt};
  auto read_into = [&](Vector& dst, std::string_view name) {
    Vector v = detail::read_vector(in, name);
    if (v.size() != dst.size()) throw ConfigError("checkpoint: size mismatch in '" + std::string(name) + "'");
    dst = std::move(v);
  };
  read_into(out.policy.actor().parameters(), "actor");
  read_into(out.policy.log_std(), "log_std");
  read_into(out.policy.critic().parameters(), "critic");

  std::string tag;
  int has_state = 0;
  if (!(in >> tag >> has_state) || tag != "training") throw ConfigError("checkpoint: missing training section");
  if (has_state) {
    TrainingState st;
    if (!(in >> tag >> st.episodes_done >> st.policy_version) || tag != "progress")
      throw ConfigError("checkpoint: bad progress line");
    for (AdamState* opt : {&st.actor_opt, &st.critic_opt}) {
      if (!(in >> tag >> opt->step) || tag != "adam") throw ConfigError("checkpoint: bad optimizer section");
      opt->learning_rate = detail::read_scalar(in, "lr");
      opt->first_moment = detail::read_vector(in, "m");
      opt->second_moment = detail::read_vector(in, "v");
    }
    if (st.actor_opt.first_moment.size() != out.policy.actor_flat().size() ||
        st.critic_opt.first_moment.size() != out.policy.critic().parameter_count())
      throw ConfigError("checkpoint: optimizer state does not match architecture");
    out.state = std::move(st);
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const ActorCritic& policy, const TrainingState* state = nullptr) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path);
  write_checkpoint(out, policy, state);
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint " + path);
  return read_checkpoint(in);
}

}  // namespace busctl
