#pragma once

// One training iteration: collect groups with the frozen policy, score them,
// then take clipped-surrogate gradient steps over shuffled minibatches.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "dpepo/advantage/advantage.hpp"
#include "dpepo/env/world.hpp"
#include "dpepo/error.hpp"
#include "dpepo/policy/tabular.hpp"
#include "dpepo/reward/reward.hpp"
#include "dpepo/rollout/agent.hpp"
#include "dpepo/rollout/rollout.hpp"

namespace dpepo::rollout {

using advantage::AdvantageConfig;
using advantage::AdvantageRecord;
using advantage::TrajectoryGroup;
using reward::RewardConfig;

inline constexpr double kDefaultLearningRate = 1.0;
inline constexpr int kDefaultUpdateBatch = 32;

struct TrainConfig {
  RolloutConfig rollout;
  RewardConfig reward;
  AdvantageConfig advantage;
  double learning_rate = kDefaultLearningRate;
  int update_batch = kDefaultUpdateBatch;

  void validate() const {
    rollout.validate();
    reward.validate();
    advantage.validate();
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw Error(ErrorKind::configuration, "advantage.learning_rate must be a finite value > 0");
    }
    if (update_batch < 1) throw Error(ErrorKind::configuration, "advantage.update_batch must be >= 1");
  }
};

struct IterationStats {
  int iteration = 0;
  double success_rate = 0.0;
  double mean_r_traj = 0.0;
  double mean_r_step = 0.0;
  double mean_parallel_actions = 0.0;
  int trajectories = 0;
  int update_records = 0;
  int degenerate_groups = 0;
  bool updated = false;
};

struct ScoredGroup {
  std::size_t task_index = 0;
  std::uint64_t group_seed = 0;
  TrajectoryGroup group;
  std::vector<AdvantageRecord> advantages;  // one per member
};

struct IterationResult {
  IterationStats stats;
  std::vector<ScoredGroup> groups;
};

inline std::uint64_t iteration_seed(std::uint64_t base, int iteration) {
  return derive_seed(base, 0x1000000ULL + static_cast<std::uint64_t>(iteration));
}

/// Step rewards, trajectory advantages and combined advantages for a group.
inline std::vector<AdvantageRecord> score_group(TrajectoryGroup& group, const RewardConfig& reward,
                                                const AdvantageConfig& adv) {
  for (auto& m : group.members) score_steps(m, reward);
  const auto phi = advantage::trajectory_advantages(group, adv.eps);
  std::vector<AdvantageRecord> out;
  out.reserve(group.members.size());
  for (std::size_t m = 0; m < group.members.size(); ++m) out.push_back(advantage::advantage_record(group.members[m], phi[m]));
  return out;
}

/// Gradient records for every parsed step of every member.
inline std::vector<policy::GradientRecord> gradient_records(const ScoredGroup& sg, int iteration,
                                                            std::optional<int> env_limit) {
  std::vector<policy::GradientRecord> out;
  for (std::size_t m = 0; m < sg.group.members.size(); ++m) {
    const auto& traj = sg.group.members[m];
    const auto& adv = sg.advantages[m];
    for (std::size_t s = 0; s < traj.steps.size(); ++s) {
      const auto& step = traj.steps[s];
      if (step.parse_failure || step.intents.empty()) continue;
      policy::GradientRecord rec;
      rec.ctx = decision_context_at(traj, s, env_limit);
      rec.turn.intents = step.intents;
      rec.phi = adv.per_step[s].phi;
      rec.logprob_old = step.logprob_old;
      rec.id = "iter " + std::to_string(iteration) + " task " + sg.group.task_id + " member " + std::to_string(m) +
               " step " + std::to_string(step.t);
      out.push_back(std::move(rec));
    }
  }
  return out;
}

/// Runs one iteration and updates `params` in place. Deterministic in
/// (params, tasks, cfg, iteration).
inline IterationResult train_iteration(policy::TabularPolicyParams& params, std::span<const env::WorldSpec> tasks,
                                       const TrainConfig& cfg, int iteration) {
  if (tasks.empty()) throw Error(ErrorKind::usage, "train_iteration needs at least one task");
  cfg.validate();
  const auto seed = iteration_seed(cfg.rollout.seed, iteration);
  std::mt19937_64 rng(seed);

  const auto snapshot = std::make_shared<const policy::TabularPolicyParams>(params);
  const TabularAgent agent(snapshot, policy::DecisionMode::sample);

  IterationResult result;
  result.groups.resize(static_cast<std::size_t>(cfg.rollout.groups_per_iteration));
  for (std::size_t g = 0; g < result.groups.size(); ++g) {
    result.groups[g].task_index = std::uniform_int_distribution<std::size_t>(0, tasks.size() - 1)(rng);
    result.groups[g].group_seed = derive_seed(seed, g);
  }

  // Flatten groups x members so every rollout can run on its own worker.
  const auto n = static_cast<std::size_t>(cfg.rollout.group_size);
  std::vector<std::shared_ptr<const env::WorldLayout>> layouts;
  for (const auto& sg : result.groups) layouts.push_back(std::make_shared<const env::WorldLayout>(tasks[sg.task_index]));
  for (auto& sg : result.groups) {
    sg.group.task_id = std::to_string(sg.task_index);
    sg.group.members.resize(n);
  }
  parallel_for(result.groups.size() * n, resolve_workers(cfg.rollout.workers), [&](std::size_t i) {
    auto& sg = result.groups[i / n];
    const auto m = i % n;
    auto envs = env::spawn_parallel(env::EnvInstance(layouts[i / n], 1), cfg.rollout.k_parallel);
    sg.group.members[m] = rollout_trajectory(agent, std::move(envs), cfg.rollout,
                                             member_seed(sg.group_seed, static_cast<int>(m)));
  });

  auto& st = result.stats;
  st.iteration = iteration;
  std::vector<policy::GradientRecord> records;
  double step_sum = 0.0;
  double width_sum = 0.0;
  int step_count = 0;
  for (auto& sg : result.groups) {
    sg.advantages = score_group(sg.group, cfg.reward, cfg.advantage);
    const auto stats = advantage::group_statistics(sg.group.rewards());
    if (stats.std == 0.0) ++st.degenerate_groups;
    for (const auto& traj : sg.group.members) {
      ++st.trajectories;
      st.mean_r_traj += traj.r_traj;
      st.success_rate += traj.success ? 1.0 : 0.0;
      for (const auto& step : traj.steps) {
        step_sum += step.reward.r_step;
        width_sum += static_cast<double>(step.intents.size());
        ++step_count;
      }
    }
    if (stats.std == 0.0) continue;
    auto recs = gradient_records(sg, iteration, cfg.rollout.env_limit);
    for (auto& r : recs) {
      if (r.phi != 0.0) records.push_back(std::move(r));
    }
  }
  st.mean_r_traj /= st.trajectories;
  st.success_rate /= st.trajectories;
  st.mean_r_step = step_count > 0 ? step_sum / step_count : 0.0;
  st.mean_parallel_actions = step_count > 0 ? width_sum / step_count : 0.0;
  st.update_records = static_cast<int>(records.size());

  if (records.empty()) {
    spdlog::warn("iteration {}: every group has zero reward variance, policy left unchanged", iteration);
    return result;
  }
  std::shuffle(records.begin(), records.end(), rng);
  const auto batch = static_cast<std::size_t>(cfg.update_batch);
  for (std::size_t from = 0; from < records.size(); from += batch) {
    const auto len = std::min(batch, records.size() - from);
    policy::apply_gradient_inplace(params, std::span<const policy::GradientRecord>(records.data() + from, len),
                                   cfg.learning_rate, cfg.advantage.clip);
  }
  st.updated = true;
  return result;
}

}  // namespace dpepo::rollout
