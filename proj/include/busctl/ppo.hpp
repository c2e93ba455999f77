#pragma once

// Synchronous distributed PPO. Each round, every worker runs one episode on
// its own engine against a read-only policy snapshot; the coordinator then
// computes returns and advantages and applies clipped-surrogate actor updates
// and squared-error critic updates.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "busctl/engine.hpp"
#include "busctl/errors.hpp"
#include "busctl/mlp.hpp"
#include "busctl/observation.hpp"
#include "busctl/policy.hpp"

namespace busctl {

struct TrainerConfig {
  double clip = 0.2;     // epsilon
  double gamma = 0.99;
  int episodes = 2000;
  int workers = 4;
  int epochs = 4;
  int minibatch = 256;  // T
  double actor_learning_rate = 1e-5;
  double critic_learning_rate = 1e-5;
  bool normalize_advantages = true;
  int checkpoint_every = 0;  // episodes; 0 disables periodic checkpoints
  std::uint64_t seed = 1;

  void validate() const {
    if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("training.clip: must lie in (0, 1)");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("training.gamma: must lie in (0, 1)");
    if (episodes < 1) throw ConfigError("training.episodes: must be >= 1");
    if (workers < 1) throw ConfigError("training.workers: must be >= 1");
    if (epochs < 1) throw ConfigError("training.epochs: must be >= 1");
    if (minibatch < 1) throw ConfigError("training.minibatch: must be >= 1");
    if (!(actor_learning_rate > 0.0) || !(critic_learning_rate > 0.0))
      throw ConfigError("training.learning_rate: must be positive");
  }
};

struct Transition {
  Features features{};
  PositionKind kind = PositionKind::kStation;
  ControlAction action;
  double raw = 0.0;
  double log_prob = 0.0;
  double reward = 0.0;
  double value = 0.0;
  bool done = false;
  bool controllable = true;  // false where the strategy mask zeroes this force
  double ret = 0.0;
  double advantage = 0.0;
};

struct RolloutBatch {
  std::vector<Transition> transitions;
  int worker = 0;
  std::int64_t policy_version = 0;
  double mean_reward = 0.0;
};

/// R_t = sum_{m<T} gamma^m r_{t+m} + gamma^T V(s_{t+T}), evaluated backwards.
/// Pass bootstrap = 0 for a terminal episode.
inline std::vector<double> compute_returns(std::span<const double> rewards, double bootstrap, double gamma) {
  std::vector<double> out(rewards.size());
  double running = bootstrap;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    running = rewards[t] + gamma * running;
    out[t] = running;
  }
  return out;
}

inline std::vector<double> compute_advantages(std::span<const double> returns, std::span<const double> values) {
  if (returns.size() != values.size()) throw DomainError("compute_advantages: misaligned inputs");
  std::vector<double> adv(returns.size());
  for (std::size_t t = 0; t < adv.size(); ++t) adv[t] = returns[t] - values[t];
  return adv;
}

/// Shifts and scales to zero mean, unit (population) stddev.
inline void normalize_advantages(std::span<double> adv) {
  if (adv.size() < 2) return;
  const double n = static_cast<double>(adv.size());
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  for (double& a : adv) a = (a - mean) / (sd + 1e-8);
}

/// min(p A, clip(p, 1-eps, 1+eps) A).
inline double clipped_surrogate(double ratio, double advantage, double clip) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - clip, 1.0 + clip) * advantage);
}

/// True when the gradient of the clipped surrogate flows through p A.
inline bool surrogate_unclipped(double ratio, double advantage, double clip) {
  return advantage >= 0.0 ? ratio <= 1.0 + clip : ratio >= 1.0 - clip;
}

struct ActorGradient {
  Vector grad;        // d(-L_clip)/d(actor_flat), averaged
  double surrogate = 0.0;
};

/// Gradient of the negated mean clipped surrogate over `indices`.
inline ActorGradient actor_gradient(const ActorCritic& policy, std::span<const Transition> batch,
                                    std::span<const std::size_t> indices, double clip) {
  const auto n_actor = policy.actor().parameter_count();
  ActorGradient out;
  out.grad = Vector::Zero(n_actor + kActionDims);
  Vector net_grad = Vector::Zero(n_actor);
  Mlp::Cache cache;
  for (std::size_t idx : indices) {
    const auto& tr = batch[idx];
    if (!tr.controllable) continue;
    const auto d = static_cast<std::size_t>(tr.kind);
    const auto head = policy.forward_actor(tr.features, cache);
    const double mu = head.mean[d];
    const double log_std = head.log_std[d];
    const double lp = gaussian_log_density(tr.raw, mu, log_std);
    const double ratio = std::exp(lp - tr.log_prob);
    out.surrogate += clipped_surrogate(ratio, tr.advantage, clip);
    if (!surrogate_unclipped(ratio, tr.advantage, clip)) continue;
    // d(-p A)/d(lp) = -p A
    const double g_lp = -ratio * tr.advantage;
    const double inv_var = std::exp(-2.0 * log_std);
    const double z2 = (tr.raw - mu) * (tr.raw - mu) * inv_var;
    Vector out_grad = Vector::Zero(kActionDims);
    out_grad(static_cast<Eigen::Index>(d)) = g_lp * (tr.raw - mu) * inv_var * (1.0 - mu * mu);
    policy.actor().backward(cache, out_grad, net_grad);
    out.grad(n_actor + static_cast<Eigen::Index>(d)) += g_lp * (z2 - 1.0);
  }
  out.grad.head(n_actor) = net_grad;
  const double n = static_cast<double>(std::max<std::size_t>(indices.size(), 1));
  out.grad /= n;
  out.surrogate /= n;
  if (!std::isfinite(out.surrogate) || !out.grad.allFinite()) throw NumericalFault("actor surrogate is not finite");
  return out;
}

struct CriticGradient {
  Vector grad;
  double loss = 0.0;
};

/// Gradient of mean (R - V)^2 over `indices`.
inline CriticGradient critic_gradient(const ActorCritic& policy, std::span<const Transition> batch,
                                      std::span<const std::size_t> indices) {
  CriticGradient out;
  out.grad = Vector::Zero(policy.critic().parameter_count());
  Mlp::Cache cache;
  Vector g(1);
  for (std::size_t idx : indices) {
    const auto& tr = batch[idx];
    const double v = policy.critic().forward(ActorCritic::to_vector(tr.features), cache)(0);
    const double err = tr.ret - v;
    out.loss += err * err;
    g(0) = -2.0 * err;
    policy.critic().backward(cache, g, out.grad);
  }
  const double n = static_cast<double>(std::max<std::size_t>(indices.size(), 1));
  out.grad /= n;
  out.loss /= n;
  if (!std::isfinite(out.loss) || !out.grad.allFinite()) throw NumericalFault("critic loss is not finite");
  return out;
}

inline double critic_loss(const ActorCritic& policy, std::span<const Transition> batch) {
  double loss = 0.0;
  for (const auto& tr : batch) {
    const double err = tr.ret - policy.forward_critic(tr.features);
    loss += err * err;
  }
  return batch.empty() ? 0.0 : loss / static_cast<double>(batch.size());
}

inline std::vector<std::vector<std::size_t>> make_minibatches(std::size_t n, int minibatch, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(minibatch))
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + std::size_t(minibatch))));
  return out;
}

/// Ascends the clipped surrogate for `epochs` passes. Returns the mean
/// surrogate of the first pass (i.e. measured against the old policy).
inline double ppo_actor_update(ActorCritic& policy, const RolloutBatch& batch, std::int64_t current_version,
                               const TrainerConfig& cfg, AdamState& opt, std::mt19937_64& rng) {
  if (batch.policy_version != current_version)
    throw DomainError("ppo_actor_update: batch was collected under policy version " +
                      std::to_string(batch.policy_version) + ", current is " + std::to_string(current_version));
  double first_pass = 0.0;
  std::size_t first_count = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& mb : make_minibatches(batch.transitions.size(), cfg.minibatch, rng)) {
      const auto g = actor_gradient(policy, batch.transitions, mb, cfg.clip);
      if (epoch == 0) {
        first_pass += g.surrogate * static_cast<double>(mb.size());
        first_count += mb.size();
      }
      Vector flat = policy.actor_flat();
      optimizer_step(flat, g.grad, opt);
      policy.set_actor_flat(flat);
    }
  }
  return first_count ? first_pass / static_cast<double>(first_count) : 0.0;
}

/// Descends the critic loss for `epochs` passes. Returns the loss before the update.
inline double critic_update(ActorCritic& policy, const RolloutBatch& batch, const TrainerConfig& cfg, AdamState& opt,
                            std::mt19937_64& rng) {
  const double before = critic_loss(policy, batch.transitions);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& mb : make_minibatches(batch.transitions.size(), cfg.minibatch, rng)) {
      const auto g = critic_gradient(policy, batch.transitions, mb);
      optimizer_step(policy.critic().parameters(), g.grad, opt);
    }
  }
  return before;
}

/// Training-episode controller: samples from the policy and records what the
/// update needs, in decision order.
struct SamplingController {
  const ActorCritic* policy = nullptr;
  std::mt19937_64* rng = nullptr;
  std::vector<Transition>* record = nullptr;

  ControlAction operator()(const DecisionContext& ctx) const {
    Transition tr;
    tr.features = policy->features(ctx);
    tr.kind = ctx.kind;
    const auto head = policy->forward_actor(tr.features);
    const auto s = sample_and_log_prob(head, ctx.kind, ctx.bounds, *rng);
    tr.raw = s.raw;
    tr.log_prob = s.log_prob;
    tr.action = s.action;
    tr.value = policy->forward_critic(tr.features);
    record->push_back(tr);
    return s.action;
  }
};

/// Runs one training episode and returns its transitions with per-bus
/// discounted returns. Each bus trajectory is one agent's sequence; the final
/// step is a time-limit cut, bootstrapped with the critic.
inline RolloutBatch collect_rollout(const Engine& engine, const ActorCritic& policy, const TrainerConfig& cfg,
                                    std::uint32_t worker, std::uint32_t episode, std::int64_t version) {
  std::mt19937_64 rng(stream_key({cfg.seed, worker, episode, 0, 0, NoiseChannel::kPolicy}));
  RolloutBatch batch;
  batch.worker = static_cast<int>(worker);
  batch.policy_version = version;
  SamplingController ctl{&policy, &rng, &batch.transitions};
  const auto log = engine.run(ctl, StreamBase{cfg.seed, worker, episode});
  if (log.size() != batch.transitions.size()) throw InvariantViolation("collect_rollout: decision/log mismatch");

  double total = 0.0;
  for (std::size_t t = 0; t < log.size(); ++t) {
    batch.transitions[t].action = log[t].action;
    batch.transitions[t].reward = log[t].reward;
    batch.transitions[t].controllable = engine.settings().mask.allows(log[t].kind);
    total += log[t].reward;
  }
  batch.mean_reward = log.empty() ? 0.0 : total / static_cast<double>(log.size());

  // Split by bus (log is grouped per bus, in position order).
  std::size_t start = 0;
  std::vector<double> rewards;
  while (start < log.size()) {
    std::size_t end = start;
    while (end < log.size() && log[end].bus == log[start].bus) ++end;
    rewards.clear();
    for (std::size_t t = start; t < end; ++t) rewards.push_back(batch.transitions[t].reward);
    batch.transitions[end - 1].done = true;
    const double bootstrap = batch.transitions[end - 1].value;
    const auto returns = compute_returns(rewards, bootstrap, cfg.gamma);
    for (std::size_t t = start; t < end; ++t) batch.transitions[t].ret = returns[t - start];
    start = end;
  }
  return batch;
}

struct EpisodeRecord {
  std::int64_t episode = 0;
  double mean_reward = 0.0;
  double actor_surrogate = 0.0;
  double critic_loss = 0.0;
  double wall_time = 0.0;
};

struct TrainResult {
  ActorCritic policy;
  TrainingState state;
  std::vector<EpisodeRecord> log;
};

struct TrainHooks {
  /// Called after each update round with the episodes finished so far.
  std::function<void(const ActorCritic&, const TrainingState&)> on_checkpoint;
  std::function<void(const EpisodeRecord&)> on_episode;
};

/// Runs synchronous collect-then-update rounds until `cfg.episodes` episodes
/// have been collected. `start` resumes from a saved checkpoint.
inline TrainResult train(const Engine& engine, const TrainerConfig& cfg, const PolicyArchitecture& arch,
                         const ObservationScaling& scaling, std::optional<LoadedCheckpoint> start = std::nullopt,
                         const TrainHooks& hooks = {}) {
  cfg.validate();
  TrainResult result{ActorCritic(arch, scaling), {}, {}};
  if (start) {
    if (!result.policy.same_architecture(start->policy)) throw ConfigError("resume: architecture mismatch");
    result.policy = start->policy;
    if (start->state) result.state = *start->state;
  } else {
    result.policy.initialize(cfg.seed, arch);
  }
  if (result.state.actor_opt.first_moment.size() == 0) {
    result.state.actor_opt = AdamState(result.policy.actor_flat().size(), cfg.actor_learning_rate);
    result.state.critic_opt = AdamState(result.policy.critic().parameter_count(), cfg.critic_learning_rate);
  }

  const auto t0 = std::chrono::steady_clock::now();
  ActorCritic last_good = result.policy;
  std::int64_t last_checkpoint = result.state.episodes_done;
  while (result.state.episodes_done < cfg.episodes) {
    const auto first_episode = result.state.episodes_done;
    const int workers = static_cast<int>(std::min<std::int64_t>(cfg.workers, cfg.episodes - first_episode));
    std::vector<RolloutBatch> batches(static_cast<std::size_t>(workers));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    {
      const ActorCritic& snapshot = result.policy;
      const auto version = result.state.policy_version;
      std::vector<std::jthread> pool;
      for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          try {
            batches[static_cast<std::size_t>(w)] =
                collect_rollout(engine, snapshot, cfg, static_cast<std::uint32_t>(w),
                                static_cast<std::uint32_t>(first_episode + w), version);
          } catch (...) {
            errors[static_cast<std::size_t>(w)] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);

    RolloutBatch merged;
    merged.policy_version = result.state.policy_version;
    for (auto& b : batches)
      merged.transitions.insert(merged.transitions.end(), b.transitions.begin(), b.transitions.end());
    std::vector<double> returns, values;
    for (const auto& tr : merged.transitions) {
      returns.push_back(tr.ret);
      values.push_back(tr.value);
    }
    auto adv = compute_advantages(returns, values);
    if (cfg.normalize_advantages) normalize_advantages(adv);
    for (std::size_t t = 0; t < adv.size(); ++t) merged.transitions[t].advantage = adv[t];

    std::mt19937_64 shuffle(stream_key({cfg.seed, 0, static_cast<std::uint32_t>(result.state.policy_version), 0, 0,
                                        NoiseChannel::kShuffle}));
    double surrogate = 0.0, closs = 0.0;
    try {
      surrogate = ppo_actor_update(result.policy, merged, result.state.policy_version, cfg, result.state.actor_opt,
                                   shuffle);
      closs = critic_update(result.policy, merged, cfg, result.state.critic_opt, shuffle);
      if (!result.policy.actor().parameters().allFinite() || !result.policy.critic().parameters().allFinite())
        throw NumericalFault("parameters became non-finite");
    } catch (const NumericalFault&) {
      result.policy = last_good;
      if (hooks.on_checkpoint) hooks.on_checkpoint(result.policy, result.state);
      throw;
    }
    ++result.state.policy_version;
    last_good = result.policy;

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (int w = 0; w < workers; ++w) {
      EpisodeRecord rec{first_episode + w, batches[static_cast<std::size_t>(w)].mean_reward, surrogate, closs, wall};
      result.log.push_back(rec);
      if (hooks.on_episode) hooks.on_episode(rec);
    }
    result.state.episodes_done += workers;
    if (hooks.on_checkpoint && cfg.checkpoint_every > 0 &&
        result.state.episodes_done - last_checkpoint >= cfg.checkpoint_every) {
      hooks.on_checkpoint(result.policy, result.state);
      last_checkpoint = result.state.episodes_done;
    }
  }
  return result;
}

}  // namespace busctl
