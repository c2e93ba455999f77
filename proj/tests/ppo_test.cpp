#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "busctl/experiment.hpp"
#include "busctl/ppo.hpp"
#include "test_util.hpp"

using namespace busctl;

namespace {

ActorCritic small_policy(std::uint64_t seed) {
  PolicyArchitecture arch;
  arch.hidden = {8, 8};
  arch.actor_output_gain = 1.0;
  ActorCritic p(arch, {60, 60, 100});
  p.initialize(seed, arch);
  return p;
}

/// Negated mean clipped surrogate, straight from the definition.
double surrogate_loss(const ActorCritic& p, const std::vector<Transition>& batch, double clip) {
  double total = 0;
  std::size_t n = 0;
  for (const auto& tr : batch) {
    ++n;
    if (!tr.controllable) continue;
    const auto d = static_cast<std::size_t>(tr.kind);
    const auto head = p.forward_actor(tr.features);
    const double ratio = std::exp(gaussian_log_density(tr.raw, head.mean[d], head.log_std[d]) - tr.log_prob);
    total += std::min(ratio * tr.advantage, std::clamp(ratio, 1 - clip, 1 + clip) * tr.advantage);
  }
  return -total / static_cast<double>(n);
}

double value_loss(const ActorCritic& p, const std::vector<Transition>& batch) {
  double total = 0;
  for (const auto& tr : batch) total += std::pow(tr.ret - p.forward_critic(tr.features), 2);
  return total / static_cast<double>(batch.size());
}

/// Random batch whose old log-probs put each ratio safely away from the
/// clip kinks, so central differences are smooth.
std::vector<Transition> random_batch(const ActorCritic& p, std::mt19937_64& rng, double clip) {
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Transition> batch(6);
  for (auto& tr : batch) {
    tr.features[0] = n01(rng);
    tr.features[1] = n01(rng);
    tr.features[2] = std::abs(n01(rng));
    tr.kind = static_cast<PositionKind>(rng() % 3);
    tr.features[3 + static_cast<std::size_t>(tr.kind)] = 1.0;
    tr.features[6] = u(rng);
    const auto d = static_cast<std::size_t>(tr.kind);
    const auto head = p.forward_actor(tr.features);
    tr.raw = head.mean[d] + std::exp(head.log_std[d]) * n01(rng);
    const double lp = gaussian_log_density(tr.raw, head.mean[d], head.log_std[d]);
    double log_ratio = 0.0;
    const double pick = u(rng);
    if (pick < 0.6) log_ratio = 0.1 * (u(rng) - 0.5);                  // well inside the trust region
    else if (pick < 0.8) log_ratio = std::log(1 + clip) + 0.1 + u(rng) * 0.3;  // far above
    else log_ratio = std::log(1 - clip) - 0.1 - u(rng) * 0.3;           // far below
    tr.log_prob = lp - log_ratio;
    tr.advantage = n01(rng);
    tr.ret = 2.0 * n01(rng);
    tr.controllable = u(rng) > 0.15;
  }
  return batch;
}

double rel_err(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

}  // namespace

TEST(Ppo, ClippedObjectiveHandValues) {
  EXPECT_DOUBLE_EQ(clipped_surrogate(1.5, 2.0, 0.2), 2.4);
  EXPECT_DOUBLE_EQ(clipped_surrogate(0.5, -1.0, 0.2), -0.8);
  EXPECT_DOUBLE_EQ(clipped_surrogate(1.1, 2.0, 0.2), 2.2);
  EXPECT_DOUBLE_EQ(clipped_surrogate(1.5, -1.0, 0.2), -1.5);
  EXPECT_FALSE(surrogate_unclipped(1.5, 2.0, 0.2));
  EXPECT_TRUE(surrogate_unclipped(1.5, -1.0, 0.2));
  EXPECT_FALSE(surrogate_unclipped(0.5, -1.0, 0.2));
}

TEST(Ppo, ReturnsAndAdvantagesHandValues) {
  const std::vector<double> r{1, 1};
  const auto R = compute_returns(r, 0.0, 0.99);
  EXPECT_DOUBLE_EQ(R[0], 1.99);
  EXPECT_DOUBLE_EQ(R[1], 1.0);
  const std::vector<double> v{0.5, 0.5};
  EXPECT_DOUBLE_EQ(compute_advantages(R, v)[0], 1.49);
  const auto boot = compute_returns(r, 10.0, 0.5);
  EXPECT_DOUBLE_EQ(boot[1], 1 + 0.5 * 10);
  EXPECT_DOUBLE_EQ(boot[0], 1 + 0.5 * 6);
  EXPECT_THROW(compute_advantages(R, std::vector<double>{1}), DomainError);
}

TEST(Ppo, ReturnRecursionMatchesDirectSum) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = 1 + rng() % 80;
    std::vector<double> r(T);
    for (auto& x : r) x = u(rng);
    const double boot = 5 * u(rng), gamma = 0.9 + 0.099 * u(rng);
    const auto R = compute_returns(r, boot, gamma);
    for (std::size_t t = 0; t < T; ++t) {
      double direct = 0;
      for (std::size_t m = 0; t + m < T; ++m) direct += std::pow(gamma, double(m)) * r[t + m];
      direct += std::pow(gamma, double(T - t)) * boot;
      ASSERT_NEAR(R[t], direct, 1e-12);
    }
  }
}

TEST(Ppo, AdvantageNormalization) {
  std::vector<double> a{1, 2, 3, 4, 10};
  normalize_advantages(a);
  double mean = 0, var = 0;
  for (double x : a) mean += x;
  mean /= 5;
  for (double x : a) var += (x - mean) * (x - mean);
  EXPECT_NEAR(mean, 0, 1e-12);
  EXPECT_NEAR(var / 5, 1, 1e-6);
  std::vector<double> one{3.0};
  normalize_advantages(one);
  EXPECT_EQ(one[0], 3.0);
}

TEST(Ppo, ActorGradientMatchesCentralDifferences) {
  std::mt19937_64 rng(21);
  const double clip = 0.2, h = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    auto p = small_policy(static_cast<std::uint64_t>(trial) + 1);
    p.log_std() = Vector::Constant(3, -0.5 + 0.1 * (trial % 5));
    const auto batch = random_batch(p, rng, clip);
    std::vector<std::size_t> idx(batch.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto g = actor_gradient(p, batch, idx, clip);
    EXPECT_NEAR(-g.surrogate, surrogate_loss(p, batch, clip), 1e-12);

    Vector flat = p.actor_flat(), fd(flat.size());
    for (Eigen::Index i = 0; i < flat.size(); ++i) {
      Vector up = flat, down = flat;
      up(i) += h;
      down(i) -= h;
      p.set_actor_flat(up);
      const double lu = surrogate_loss(p, batch, clip);
      p.set_actor_flat(down);
      const double ld = surrogate_loss(p, batch, clip);
      fd(i) = (lu - ld) / (2 * h);
    }
    p.set_actor_flat(flat);
    if (g.grad.norm() == 0.0 && fd.norm() == 0.0) continue;
    EXPECT_LT(rel_err(g.grad, fd), 1e-4) << "trial " << trial;
    ++checked;
  }
  EXPECT_GE(checked, 50);
}

TEST(Ppo, CriticGradientMatchesCentralDifferences) {
  std::mt19937_64 rng(22);
  const double h = 1e-6;
  for (int trial = 0; trial < 60; ++trial) {
    auto p = small_policy(static_cast<std::uint64_t>(trial) + 500);
    const auto batch = random_batch(p, rng, 0.2);
    std::vector<std::size_t> idx(batch.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto g = critic_gradient(p, batch, idx);
    EXPECT_NEAR(g.loss, value_loss(p, batch), 1e-12);
    Vector& theta = p.critic().parameters();
    Vector fd(theta.size());
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      const double saved = theta(i);
      theta(i) = saved + h;
      const double lu = value_loss(p, batch);
      theta(i) = saved - h;
      const double ld = value_loss(p, batch);
      theta(i) = saved;
      fd(i) = (lu - ld) / (2 * h);
    }
    EXPECT_LT(rel_err(g.grad, fd), 1e-4) << "trial " << trial;
  }
}

TEST(Ppo, ClippedSamplesContributeNoGradient) {
  auto p = small_policy(4);
  std::mt19937_64 rng(4);
  auto batch = random_batch(p, rng, 0.2);
  for (auto& tr : batch) {
    tr.controllable = true;
    tr.advantage = 1.0;
    tr.log_prob -= 5.0;  // ratio e^5, far above 1 + clip
  }
  std::vector<std::size_t> idx(batch.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  EXPECT_TRUE(actor_gradient(p, batch, idx, 0.2).grad.isZero());
}

TEST(Ppo, MinibatchesPartitionTheBatch) {
  std::mt19937_64 rng(1);
  const auto mbs = make_minibatches(1000, 256, rng);
  ASSERT_EQ(mbs.size(), 4u);
  EXPECT_EQ(mbs.back().size(), 1000u - 3 * 256);
  std::vector<int> seen(1000, 0);
  for (const auto& mb : mbs)
    for (auto i : mb) ++seen[i];
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(Ppo, StaleBatchIsRejected) {
  auto p = small_policy(5);
  RolloutBatch batch;
  batch.policy_version = 3;
  TrainerConfig cfg;
  AdamState opt(p.actor_flat().size(), 1e-3);
  std::mt19937_64 rng(0);
  EXPECT_THROW(ppo_actor_update(p, batch, 4, cfg, opt, rng), DomainError);
}

TEST(Ppo, UpdateIncreasesSurrogateOnFixedBatch) {
  auto p = small_policy(6);
  std::mt19937_64 rng(6);
  RolloutBatch batch;
  batch.transitions = random_batch(p, rng, 0.2);
  for (auto& tr : batch.transitions) {
    const auto d = static_cast<std::size_t>(tr.kind);
    tr.log_prob = gaussian_log_density(tr.raw, p.forward_actor(tr.features).mean[d], p.log_std()(d));
    tr.controllable = true;
  }
  std::vector<std::size_t> idx(batch.transitions.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const double before = actor_gradient(p, batch.transitions, idx, 0.2).surrogate;
  TrainerConfig cfg;
  cfg.epochs = 10;
  AdamState opt(p.actor_flat().size(), 1e-3);
  ppo_actor_update(p, batch, 0, cfg, opt, rng);
  EXPECT_GT(actor_gradient(p, batch.transitions, idx, 0.2).surrogate, before);
}

TEST(Ppo, TrainerConfigValidation) {
  TrainerConfig c;
  c.clip = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainerConfig{};
  c.gamma = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainerConfig{};
  c.workers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainerConfig{};
  c.actor_learning_rate = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

namespace {

Engine training_engine(StrategyMask mask = {}) {
  SimSettings s;
  s.loops = 1;
  s.mask = mask;
  return Engine(busctl::testing::table_corridor(3), s);
}

}  // namespace

TEST(Rollout, RecordsOneTransitionPerDecisionWithPerBusReturns) {
  const auto engine = training_engine();
  auto p = small_policy(9);
  TrainerConfig cfg;
  const auto batch = collect_rollout(engine, p, cfg, 1, 7, 0);
  ASSERT_EQ(batch.transitions.size(), 3u * 60u);
  for (std::size_t b = 0; b < 3; ++b) {
    const std::size_t last = b * 60 + 59;
    EXPECT_TRUE(batch.transitions[last].done);
    EXPECT_NEAR(batch.transitions[last].ret,
                batch.transitions[last].reward + cfg.gamma * batch.transitions[last].value, 1e-12);
    for (std::size_t t = b * 60; t < last; ++t) {
      EXPECT_FALSE(batch.transitions[t].done);
      EXPECT_NEAR(batch.transitions[t].ret,
                  batch.transitions[t].reward + cfg.gamma * batch.transitions[t + 1].ret, 1e-12);
    }
  }
  const auto again = collect_rollout(engine, p, cfg, 1, 7, 0);
  for (std::size_t t = 0; t < batch.transitions.size(); ++t) EXPECT_EQ(batch.transitions[t].raw, again.transitions[t].raw);
}

TEST(Rollout, MaskedKindsAreNotControllable) {
  const auto engine = training_engine({false, true, false});
  auto p = small_policy(9);
  const auto batch = collect_rollout(engine, p, TrainerConfig{}, 0, 0, 0);
  for (const auto& tr : batch.transitions) {
    EXPECT_EQ(tr.controllable, tr.kind == PositionKind::kSignalizedIntersection);
    if (!tr.controllable) {
      EXPECT_EQ(total_control_force(tr.action), 0.0);
    }
  }
}

TEST(Train, SameSeedSameLogAndWeights) {
  const auto engine = training_engine();
  TrainerConfig cfg;
  cfg.episodes = 6;
  cfg.workers = 3;
  cfg.actor_learning_rate = 1e-3;
  cfg.critic_learning_rate = 1e-3;
  PolicyArchitecture arch;
  arch.hidden = {8, 8};
  const auto a = train(engine, cfg, arch, {60, 60, 100});
  const auto b = train(engine, cfg, arch, {60, 60, 100});
  ASSERT_EQ(a.log.size(), 6u);
  std::ostringstream la, lb;
  write_training_log_csv(la, a.log, false);
  write_training_log_csv(lb, b.log, false);
  EXPECT_EQ(la.str(), lb.str());
  EXPECT_EQ(a.policy.actor_flat(), b.policy.actor_flat());
  EXPECT_EQ(a.state.policy_version, 2);
  EXPECT_EQ(a.state.episodes_done, 6);
}

TEST(Train, ResumeEqualsUninterruptedRun) {
  const auto engine = training_engine();
  TrainerConfig cfg;
  cfg.episodes = 8;
  cfg.workers = 2;
  cfg.actor_learning_rate = 1e-3;
  PolicyArchitecture arch;
  arch.hidden = {8, 8};
  const auto full = train(engine, cfg, arch, {60, 60, 100});

  TrainerConfig half = cfg;
  half.episodes = 4;
  const auto first = train(engine, half, arch, {60, 60, 100});
  std::stringstream ck;
  write_checkpoint(ck, first.policy, &first.state);
  const auto resumed = train(engine, cfg, arch, {60, 60, 100}, read_checkpoint(ck));
  EXPECT_EQ(resumed.policy.actor_flat(), full.policy.actor_flat());
  EXPECT_EQ(resumed.policy.critic().parameters(), full.policy.critic().parameters());
  ASSERT_EQ(resumed.log.size(), 4u);
  EXPECT_EQ(resumed.log.front().episode, 4);
  EXPECT_EQ(resumed.log.back().mean_reward, full.log.back().mean_reward);
}

TEST(Train, CheckpointHookFiresOnSchedule) {
  const auto engine = training_engine();
  TrainerConfig cfg;
  cfg.episodes = 8;
  cfg.workers = 2;
  cfg.checkpoint_every = 4;
  PolicyArchitecture arch;
  arch.hidden = {4};
  std::vector<std::int64_t> at;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](const ActorCritic&, const TrainingState& st) { at.push_back(st.episodes_done); };
  train(engine, cfg, arch, {}, std::nullopt, hooks);
  EXPECT_EQ(at, (std::vector<std::int64_t>{4, 8}));
}

TEST(Train, ResumeRejectsOtherArchitecture) {
  const auto engine = training_engine();
  TrainerConfig cfg;
  cfg.episodes = 2;
  PolicyArchitecture arch;
  arch.hidden = {4};
  LoadedCheckpoint other{small_policy(1), std::nullopt};
  EXPECT_THROW(train(engine, cfg, arch, {}, other), ConfigError);
}
