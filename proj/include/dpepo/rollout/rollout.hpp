#pragma once

// Multi-turn parallel rollout and group collection.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <future>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <spdlog/spdlog.h>

#include "dpepo/advantage/advantage.hpp"
#include "dpepo/env/parallel.hpp"
#include "dpepo/env/world.hpp"
#include "dpepo/error.hpp"
#include "dpepo/hash.hpp"
#include "dpepo/reward/reward.hpp"
#include "dpepo/rollout/agent.hpp"
#include "dpepo/trajectory.hpp"

namespace dpepo::rollout {

using advantage::AdvantageConfig;
using advantage::AdvantageRecord;
using advantage::TrajectoryGroup;
using reward::RewardConfig;

enum class EnvLimitMode { cumulative, per_turn };

struct RolloutConfig {
  int k_parallel = 4;
  int max_steps = 25;
  int group_size = 8;
  int groups_per_iteration = 4;
  std::optional<int> env_limit;
  EnvLimitMode env_limit_mode = EnvLimitMode::cumulative;
  std::uint64_t seed = 0;
  int workers = 0;  // 0: one per hardware thread

  void validate() const {
    auto fail = [](const std::string& key, const std::string& why) {
      throw Error(ErrorKind::configuration, "rollout." + key + ": " + why);
    };
    if (k_parallel < 1) fail("k_parallel", "must be >= 1");
    if (max_steps < 1) fail("max_steps", "must be >= 1");
    if (group_size < 2) fail("group_size", "must be >= 2");
    if (groups_per_iteration < 1) fail("groups_per_iteration", "must be >= 1");
    if (env_limit && *env_limit < 1) fail("env_limit", "must be >= 1 when set");
    if (workers < 0) fail("workers", "must be >= 0");
  }
};

/// What the agent saw and said at one step; collected on request for
/// transcripts.
struct TranscriptEntry {
  int t = 0;
  std::vector<policy::ChatMessage> prompt;
  std::string raw_output;
  std::optional<protocol::AgentTurn> parsed;
  std::vector<std::string> warnings;
  std::string error;
};

namespace detail {

inline void finish(Trajectory& traj, std::optional<FailureReason> reason) {
  traj.finished = true;
  traj.failure_reason = reason;
  traj.success = !reason.has_value();
  traj.terminal_step = static_cast<int>(traj.steps.size());
  traj.r_traj = reward::trajectory_success_reward(traj);
}

}  // namespace detail

/// Runs one trajectory on a freshly spawned set. Never throws for agent or
/// environment misbehaviour: those end the trajectory as `aborted`.
inline Trajectory rollout_trajectory(const Agent& agent, env::ParallelEnvSet envs, const RolloutConfig& cfg,
                                     std::uint64_t seed, std::vector<TranscriptEntry>* transcript = nullptr) {
  for (const auto& inst : envs.instances) {
    if (inst.step_count() != 0) throw Error(ErrorKind::usage, "rollout needs a freshly spawned environment set");
  }
  Trajectory traj;
  traj.task_description = envs.task_description;
  traj.initial_observation = envs.initial_observation;
  traj.k_parallel = envs.k();
  traj.seed = seed;

  std::set<int> touched;
  for (int t = 1; t <= cfg.max_steps; ++t) {
    TranscriptEntry entry;
    entry.t = t;
    ParallelStep step;
    step.t = t;
    try {
      auto decision = agent.act(RolloutView{envs, traj, t, cfg.env_limit}, derive_seed(seed, static_cast<std::uint64_t>(t)));
      step.raw_output = decision.raw_output;
      entry.prompt = std::move(decision.prompt);
      entry.raw_output = decision.raw_output;
      std::optional<protocol::AgentTurn> turn = std::move(decision.turn);
      if (!turn) {
        try {
          turn = protocol::parse_agent_output(decision.raw_output, &entry.warnings);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::parse) throw;
          entry.error = e.what();
        }
      }
      if (turn) {
        step.intents = turn->intents;
        std::sort(step.intents.begin(), step.intents.end());
        step.logprob_old = decision.logprob_old;
        entry.parsed = std::move(turn);
      } else {
        step.parse_failure = true;
      }
      step = env::parallel_step(envs, std::move(step));
    } catch (const Error& e) {
      entry.error = e.what();
      traj.abort_message = e.what();
      if (transcript) transcript->push_back(std::move(entry));
      detail::finish(traj, FailureReason::aborted);
      return traj;
    }
    if (transcript) transcript->push_back(std::move(entry));

    bool over_limit = false;
    if (cfg.env_limit) {
      for (const auto& in : step.intents) touched.insert(in.env_id);
      const auto used = cfg.env_limit_mode == EnvLimitMode::cumulative ? touched.size() : step.intents.size();
      over_limit = used > static_cast<std::size_t>(*cfg.env_limit);
    }
    const bool goal = step.any_goal();
    traj.steps.push_back(std::move(step));
    if (over_limit) {
      detail::finish(traj, FailureReason::env_limit_exceeded);
      return traj;
    }
    if (goal) {
      detail::finish(traj, std::nullopt);
      return traj;
    }
  }
  detail::finish(traj, FailureReason::exhausted);
  return traj;
}

inline Trajectory rollout_trajectory(const Agent& agent, const env::WorldSpec& world, const RolloutConfig& cfg,
                                     std::uint64_t seed, std::vector<TranscriptEntry>* transcript = nullptr) {
  return rollout_trajectory(agent, env::spawn_parallel(env::create_world(world), cfg.k_parallel), cfg, seed,
                            transcript);
}

/// Fills the step rewards of `traj` in place.
inline void score_steps(Trajectory& traj, const RewardConfig& cfg) {
  const auto rewards = reward::trajectory_step_rewards(traj, cfg);
  for (std::size_t i = 0; i < rewards.size(); ++i) traj.steps[i].reward = rewards[i];
}

inline int resolve_workers(int requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const auto w = static_cast<std::size_t>(std::max(1, workers));
  if (w == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::future<void>> jobs;
  for (std::size_t j = 0; j < std::min(w, n); ++j) {
    jobs.push_back(std::async(std::launch::async, [&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    }));
  }
  for (auto& f : jobs) f.get();
}

inline std::uint64_t member_seed(std::uint64_t group_seed, int member) {
  return derive_seed(group_seed, static_cast<std::uint64_t>(member));
}

/// N independent rollouts of one task; r_traj filled, step rewards not.
inline TrajectoryGroup collect_group(const Agent& agent, const env::WorldSpec& task, const RolloutConfig& cfg,
                                     std::uint64_t group_seed, std::string task_id = {}) {
  cfg.validate();
  const auto layout = std::make_shared<const env::WorldLayout>(task);
  TrajectoryGroup group;
  group.task_id = std::move(task_id);
  group.members.resize(static_cast<std::size_t>(cfg.group_size));
  parallel_for(group.members.size(), resolve_workers(cfg.workers), [&](std::size_t m) {
    auto envs = env::spawn_parallel(env::EnvInstance(layout, 1), cfg.k_parallel);
    group.members[m] = rollout_trajectory(agent, std::move(envs), cfg, member_seed(group_seed, static_cast<int>(m)));
  });
  for (std::size_t m = 0; m < group.members.size(); ++m) {
    if (group.members[m].failure_reason == FailureReason::aborted) {
      spdlog::warn("group {} member {} aborted: {}", group.task_id, m, group.members[m].abort_message);
    }
  }
  return group;
}

}  // namespace dpepo::rollout
