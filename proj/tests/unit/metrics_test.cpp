#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dpepo/metrics/metrics.hpp"
#include "support/oracles.hpp"

using namespace dpepo;
using namespace dpepo::metrics;

namespace {

Trajectory with_actions(const std::vector<std::vector<Intent>>& steps) {
  Trajectory traj;
  traj.k_parallel = 4;
  int t = 0;
  for (const auto& intents : steps) {
    ParallelStep s;
    s.t = ++t;
    s.intents = intents;
    traj.steps.push_back(s);
  }
  return traj;
}

env::WorldSpec three_containers() {
  env::WorldSpec w;
  w.container_count = 3;
  w.item_location = 2;
  w.target_location = 3;
  return w;
}

}  // namespace

TEST(Diversity, Examples) {
  EXPECT_DOUBLE_EQ(exploration_diversity(with_actions({{{1, "look"}, {2, "look"}}, {{1, "open container 1"}}})),
                   2.0 / 3.0);
  EXPECT_DOUBLE_EQ(exploration_diversity(with_actions({{{1, "look"}}, {{1, "look"}}, {{1, "look"}}, {{1, "look"}}})),
                   0.25);
  EXPECT_DOUBLE_EQ(exploration_diversity(with_actions({{{1, "a"}, {2, "b"}, {3, "c"}}})), 1.0);
  EXPECT_THROW(exploration_diversity(with_actions({})), Error);
  EXPECT_EQ(exploration_stats(with_actions({}), std::nullopt, false).diversity, 0.0);
}

TEST(Diversity, BoundedAndInverseOfActionCount) {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 500; ++trial) {
    const auto traj = test_support::random_short_trajectory(rng, 8, 4);
    std::size_t actions = 0;
    for (const auto& s : traj.steps) actions += s.intents.size();
    if (actions == 0) continue;
    const double d = exploration_diversity(traj);
    EXPECT_GT(d, 0.0);
    EXPECT_LE(d, 1.0);
    EXPECT_GE(d * static_cast<double>(actions), 1.0 - 1e-12);
  }
}

TEST(Repeats, SingleEnvLookingThreeTimes) {
  // Looking from the middle of the room re-renders the same text, so both
  // counts run 0, 1, 2 over the three steps.
  auto set = env::spawn_parallel(env::create_world(three_containers()), 1);
  Trajectory traj;
  traj.k_parallel = 1;
  traj.task_description = set.task_description;
  traj.initial_observation = set.initial_observation;
  for (int t = 1; t <= 3; ++t) {
    ParallelStep s;
    s.t = t;
    s.intents = {{1, "look"}};
    traj.steps.push_back(env::parallel_step(set, s));
  }
  const auto rc = repeat_counts(traj);
  EXPECT_DOUBLE_EQ(rc.mean_action_repeats, 1.0);
  EXPECT_DOUBLE_EQ(rc.mean_transition_repeats, 1.0);
}

TEST(Repeats, ZeroForDistinctActions) {
  auto set = env::spawn_parallel(env::create_world(three_containers()), 2);
  Trajectory traj;
  traj.k_parallel = 2;
  traj.initial_observation = set.initial_observation;
  ParallelStep s;
  s.t = 1;
  s.intents = {{1, "open container 1"}, {2, "open container 2"}};
  traj.steps.push_back(env::parallel_step(set, s));
  const auto rc = repeat_counts(traj);
  EXPECT_EQ(rc.mean_action_repeats, 0.0);
  EXPECT_EQ(rc.mean_transition_repeats, 0.0);
}

TEST(Repeats, ExpRewardsAreConsistentWithCounts) {
  // A step with no repeats and no invalid action scores exactly 2.
  std::mt19937_64 rng(103);
  for (int trial = 0; trial < 300; ++trial) {
    const auto traj = test_support::random_short_trajectory(rng, 6, 3);
    const auto counters = reward::trajectory_counters(traj);
    const auto rewards = test_support::brute_force_rewards(traj, reward::RewardConfig{});
    for (std::size_t i = 0; i < counters.size(); ++i) {
      if (action_repeats(counters[i]) == 0 && transition_repeats(counters[i]) == 0 && !traj.steps[i].any_invalid()) {
        EXPECT_DOUBLE_EQ(rewards[i].r_step, 2.0);
      }
      if (action_repeats(counters[i]) > 0) {
        EXPECT_LT(rewards[i].r_action, 2.0);
      }
    }
  }
}

TEST(Wilson, ReferenceValues) {
  const auto half = wilson_interval(5, 10);
  EXPECT_NEAR(half.low, 0.236593, 1e-6);
  EXPECT_NEAR(half.high, 0.763407, 1e-6);
  const auto none = wilson_interval(0, 10);
  EXPECT_EQ(none.low, 0.0);
  EXPECT_NEAR(none.high, 0.277533, 1e-6);
  const auto all = wilson_interval(20, 20);
  EXPECT_NEAR(all.low, 0.838875, 1e-6);
  EXPECT_EQ(all.high, 1.0);
}

TEST(Wilson, WidthShrinksAsInverseSqrtN) {
  auto width = [](std::size_t n) {
    const auto iv = wilson_interval(n * 3 / 10, n);
    return iv.high - iv.low;
  };
  const double w25 = width(25), w100 = width(100), w400 = width(400);
  EXPECT_NEAR(w100 / w25, 0.5, 0.05);
  EXPECT_NEAR(w400 / w100, 0.5, 0.02);
  for (std::size_t n = 1; n <= 200; ++n) {
    for (std::size_t k = 0; k <= n; k += 7) {
      const auto iv = wilson_interval(k, n);
      const double p = static_cast<double>(k) / static_cast<double>(n);
      EXPECT_LE(iv.low, p + 1e-12);
      EXPECT_GE(iv.high, p - 1e-12);
    }
  }
}

TEST(Evaluate, RandomPolicyMatchesExactSuccessProbability) {
  const auto world = three_containers();
  const double exact = test_support::random_walk_success_probability(world, 10);
  ASSERT_GT(exact, 0.05);
  ASSERT_LT(exact, 0.95);

  const rollout::TabularAgent agent(std::make_shared<policy::TabularPolicyParams>());
  EvalConfig cfg;
  cfg.rollout.k_parallel = 1;
  cfg.rollout.max_steps = 10;
  cfg.rollout.workers = 1;
  cfg.episodes_per_task = 4000;
  cfg.seed = 5;
  cfg.token_proxy = false;
  const std::vector<env::WorldSpec> tasks = {world};
  const auto rep = evaluate(agent, tasks, cfg);
  const double se = std::sqrt(exact * (1 - exact) / static_cast<double>(rep.episodes));
  EXPECT_NEAR(rep.success_rate, exact, 4 * se) << "exact " << exact;
  EXPECT_LE(rep.ci95.low, exact);
  EXPECT_GE(rep.ci95.high, exact);
}

TEST(Evaluate, RandomPolicyOnTwelveContainers) {
  env::WorldSpec world;
  const double exact = test_support::random_walk_success_probability(world, 10);
  const rollout::TabularAgent agent(std::make_shared<policy::TabularPolicyParams>());
  EvalConfig cfg;
  cfg.rollout.k_parallel = 1;
  cfg.rollout.max_steps = 10;
  cfg.episodes_per_task = 20000;
  cfg.seed = 6;
  cfg.token_proxy = false;
  const std::vector<env::WorldSpec> tasks = {world};
  const auto rep = evaluate(agent, tasks, cfg);
  const double se = std::sqrt(exact * (1 - exact) / static_cast<double>(rep.episodes));
  EXPECT_GT(exact, 0.0);
  EXPECT_NEAR(rep.success_rate, exact, 4 * se) << "exact " << exact;
}

TEST(Evaluate, ParallelRandomPolicyBeatsSingle) {
  const rollout::TabularAgent agent(std::make_shared<policy::TabularPolicyParams>());
  EvalConfig cfg;
  cfg.rollout.max_steps = 8;
  cfg.episodes_per_task = 400;
  cfg.token_proxy = false;
  const std::vector<env::WorldSpec> tasks = {three_containers()};
  cfg.rollout.k_parallel = 1;
  const auto one = evaluate(agent, tasks, cfg);
  cfg.rollout.k_parallel = 4;
  const auto four = evaluate(agent, tasks, cfg);
  EXPECT_GT(four.ci95.low, one.ci95.high) << four.success_rate << " vs " << one.success_rate;
}

TEST(Evaluate, SeriesAndMeansAreConsistent) {
  const rollout::TabularAgent agent(std::make_shared<policy::TabularPolicyParams>());
  EvalConfig cfg;
  cfg.rollout.k_parallel = 2;
  cfg.rollout.max_steps = 6;
  cfg.episodes_per_task = 5;
  std::vector<env::WorldSpec> tasks = {three_containers(), three_containers()};
  tasks[1].item_location = 1;
  const auto rep = evaluate(agent, tasks, cfg);
  ASSERT_EQ(rep.series.size(), 10u);
  std::size_t wins = 0;
  double div = 0;
  std::size_t tokens = 0;
  for (const auto& ep : rep.series) {
    wins += ep.success;
    div += ep.stats.diversity;
    tokens += ep.stats.token_proxy;
    EXPECT_GT(ep.stats.token_proxy, 0u);
  }
  EXPECT_EQ(rep.successes, wins);
  EXPECT_NEAR(rep.mean.diversity, div / 10, 1e-12);
  EXPECT_EQ(rep.mean.token_proxy, tokens);
  cfg.episodes_per_task = 0;
  EXPECT_THROW(evaluate(agent, tasks, cfg), Error);
}
