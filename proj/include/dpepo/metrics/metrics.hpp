#pragma once

// Exploration diagnostics and policy evaluation.

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpepo/env/world.hpp"
#include "dpepo/error.hpp"
#include "dpepo/protocol/prompts.hpp"
#include "dpepo/reward/reward.hpp"
#include "dpepo/rollout/agent.hpp"
#include "dpepo/rollout/rollout.hpp"
#include "dpepo/trajectory.hpp"

namespace dpepo::metrics {

/// Distinct action strings over all steps and environments, divided by the
/// number of actions taken.
inline double exploration_diversity(const Trajectory& traj) {
  std::set<std::string> distinct;
  std::size_t total = 0;
  for (const auto& step : traj.steps) {
    for (const auto& in : step.intents) {
      distinct.insert(in.action);
      ++total;
    }
  }
  if (total == 0) throw Error(ErrorKind::usage, "exploration diversity of a trajectory without actions");
  return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

struct RepeatCounts {
  double mean_action_repeats = 0.0;      // sum(C_depth) + C_width, per step
  double mean_transition_repeats = 0.0;  // sum(M_depth) + sum(M_width), per step
};

inline double action_repeats(const reward::RepetitionCounters& c) {
  double n = c.c_width;
  for (int v : c.c_depth) n += v;
  return n;
}

inline double transition_repeats(const reward::RepetitionCounters& c) {
  double n = 0;
  for (int v : c.m_depth) n += v;
  for (int v : c.m_width) n += v;
  return n;
}

/// Per-step means of the reward module's repetition counters.
inline RepeatCounts repeat_counts(const Trajectory& traj) {
  RepeatCounts r;
  if (traj.steps.empty()) return r;
  for (const auto& c : reward::trajectory_counters(traj)) {
    r.mean_action_repeats += action_repeats(c);
    r.mean_transition_repeats += transition_repeats(c);
  }
  r.mean_action_repeats /= static_cast<double>(traj.steps.size());
  r.mean_transition_repeats /= static_cast<double>(traj.steps.size());
  return r;
}

/// Whitespace tokens of every prompt the agent would have been shown plus
/// every raw output, over the whole trajectory.
inline std::size_t token_proxy(const Trajectory& traj, std::optional<int> env_limit = std::nullopt) {
  const auto system_tokens = protocol::whitespace_tokens(protocol::render_system_prompt());
  Trajectory prefix = traj;
  prefix.steps.clear();
  std::size_t total = 0;
  for (const auto& step : traj.steps) {
    total += system_tokens + protocol::whitespace_tokens(protocol::render_step_prompt(prefix, env_limit));
    total += protocol::whitespace_tokens(step.raw_output);
    prefix.steps.push_back(step);
  }
  return total;
}

struct ExplorationStats {
  double diversity = 0.0;
  double mean_action_repeats = 0.0;
  double mean_transition_repeats = 0.0;
  int trajectory_length = 0;
  double mean_parallel_actions = 0.0;
  std::size_t token_proxy = 0;
};

inline ExplorationStats exploration_stats(const Trajectory& traj, std::optional<int> env_limit = std::nullopt,
                                          bool with_token_proxy = true) {
  ExplorationStats s;
  std::size_t actions = 0;
  for (const auto& step : traj.steps) actions += step.intents.size();
  s.diversity = actions > 0 ? exploration_diversity(traj) : 0.0;
  const auto rc = repeat_counts(traj);
  s.mean_action_repeats = rc.mean_action_repeats;
  s.mean_transition_repeats = rc.mean_transition_repeats;
  s.trajectory_length = static_cast<int>(traj.steps.size());
  s.mean_parallel_actions = traj.steps.empty() ? 0.0 : static_cast<double>(actions) / static_cast<double>(traj.steps.size());
  if (with_token_proxy) s.token_proxy = token_proxy(traj, env_limit);
  return s;
}

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

inline constexpr double kZ95 = 1.959963984540054;

/// Wilson score interval for a binomial proportion.
inline Interval wilson_interval(std::size_t successes, std::size_t n, double z = kZ95) {
  if (n == 0) return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double centre = (p + z2 / (2 * nn)) / (1 + z2 / nn);
  const double half = z * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn)) / (1 + z2 / nn);
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

struct EvalConfig {
  rollout::RolloutConfig rollout;
  int episodes_per_task = 1;
  std::uint64_t seed = 0;
  bool token_proxy = true;
};

struct EpisodeResult {
  std::size_t task_index = 0;
  std::uint64_t seed = 0;
  bool success = false;
  std::optional<FailureReason> failure_reason;
  ExplorationStats stats;
};

struct EvalReport {
  int k_parallel = 0;
  int max_steps = 0;
  std::optional<int> env_limit;
  std::size_t episodes = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;
  Interval ci95;
  ExplorationStats mean;  // episode means; token_proxy is the total
  double mean_trajectory_length = 0.0;
  std::vector<EpisodeResult> series;
};

/// Runs episodes_per_task episodes of every task. Episodes are independent
/// and run concurrently; results do not depend on scheduling.
inline EvalReport evaluate(const rollout::Agent& agent, std::span<const env::WorldSpec> tasks, const EvalConfig& cfg) {
  if (cfg.episodes_per_task < 1) throw Error(ErrorKind::usage, "episodes per task must be >= 1");
  if (tasks.empty()) throw Error(ErrorKind::usage, "evaluate needs at least one task");
  cfg.rollout.validate();
  EvalReport rep;
  rep.k_parallel = cfg.rollout.k_parallel;
  rep.max_steps = cfg.rollout.max_steps;
  rep.env_limit = cfg.rollout.env_limit;
  rep.episodes = tasks.size() * static_cast<std::size_t>(cfg.episodes_per_task);
  rep.series.resize(rep.episodes);

  std::vector<std::shared_ptr<const env::WorldLayout>> layouts;
  for (const auto& t : tasks) layouts.push_back(std::make_shared<const env::WorldLayout>(t));
  rollout::parallel_for(rep.episodes, rollout::resolve_workers(cfg.rollout.workers), [&](std::size_t e) {
    auto& ep = rep.series[e];
    ep.task_index = e % tasks.size();
    ep.seed = derive_seed(cfg.seed, e);
    auto envs = env::spawn_parallel(env::EnvInstance(layouts[ep.task_index], 1), cfg.rollout.k_parallel);
    const auto traj = rollout::rollout_trajectory(agent, std::move(envs), cfg.rollout, ep.seed);
    ep.success = traj.success;
    ep.failure_reason = traj.failure_reason;
    ep.stats = exploration_stats(traj, cfg.rollout.env_limit, cfg.token_proxy);
  });

  for (const auto& ep : rep.series) {
    rep.successes += ep.success ? 1 : 0;
    rep.mean.diversity += ep.stats.diversity;
    rep.mean.mean_action_repeats += ep.stats.mean_action_repeats;
    rep.mean.mean_transition_repeats += ep.stats.mean_transition_repeats;
    rep.mean.mean_parallel_actions += ep.stats.mean_parallel_actions;
    rep.mean_trajectory_length += ep.stats.trajectory_length;
    rep.mean.token_proxy += ep.stats.token_proxy;
  }
  const double n = static_cast<double>(rep.episodes);
  rep.success_rate = static_cast<double>(rep.successes) / n;
  rep.ci95 = wilson_interval(rep.successes, rep.episodes);
  rep.mean.diversity /= n;
  rep.mean.mean_action_repeats /= n;
  rep.mean.mean_transition_repeats /= n;
  rep.mean.mean_parallel_actions /= n;
  rep.mean_trajectory_length /= n;
  rep.mean.trajectory_length = static_cast<int>(std::lround(rep.mean_trajectory_length));
  return rep;
}

}  // namespace dpepo::metrics
