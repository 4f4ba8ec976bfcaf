#pragma once

#include <set>
#include <string>
#include <vector>

#include "dpepo/env/world.hpp"
#include "dpepo/error.hpp"
#include "dpepo/trajectory.hpp"

namespace dpepo::env {

/// K clones of one world, addressed by env_id 1..K.
struct ParallelEnvSet {
  std::vector<EnvInstance> instances;
  std::string task_description;
  Observation initial_observation;

  int k() const noexcept { return static_cast<int>(instances.size()); }
  bool contains(int env_id) const noexcept { return env_id >= 1 && env_id <= k(); }

  EnvInstance& at(int env_id) {
    if (!contains(env_id)) {
      throw Error(ErrorKind::protocol, "unknown environment id " + std::to_string(env_id));
    }
    return instances[static_cast<std::size_t>(env_id - 1)];
  }
  const EnvInstance& at(int env_id) const {
    return const_cast<ParallelEnvSet*>(this)->at(env_id);
  }
};

inline ParallelEnvSet spawn_parallel(const EnvInstance& instance, int k) {
  if (k < 1) throw Error(ErrorKind::configuration, "k_parallel must be >= 1, got " + std::to_string(k));
  if (instance.step_count() != 0) {
    throw Error(ErrorKind::usage, "spawn_parallel needs a fresh instance (step_count 0)");
  }
  ParallelEnvSet set;
  set.task_description = instance.task_description();
  set.initial_observation = instance.observation();
  set.instances.reserve(static_cast<std::size_t>(k));
  for (int i = 1; i <= k; ++i) {
    set.instances.push_back(instance);
    set.instances.back().set_env_id(i);
  }
  return set;
}

/// Executes every intent of `step` against its own instance and fills the
/// observations and invalid flags. All ids are checked before any instance
/// moves, so a rejected step leaves the whole set untouched.
inline ParallelStep parallel_step(ParallelEnvSet& set, ParallelStep step) {
  std::set<int> seen;
  for (const auto& intent : step.intents) {
    if (!set.contains(intent.env_id)) {
      throw Error(ErrorKind::protocol, "unknown environment id " + std::to_string(intent.env_id));
    }
    if (!seen.insert(intent.env_id).second) {
      throw Error(ErrorKind::protocol,
                  "environment " + std::to_string(intent.env_id) + " addressed twice in one step");
    }
    if (set.at(intent.env_id).terminal()) {
      throw Error(ErrorKind::usage,
                  "environment " + std::to_string(intent.env_id) + " is terminal");
    }
  }
  step.observations.clear();
  step.invalid_flags.clear();
  for (const auto& intent : step.intents) {
    auto outcome = set.at(intent.env_id).step(intent.action);
    step.observations.push_back(EnvObservation{intent.env_id, std::move(outcome.observation)});
    step.invalid_flags.push_back(outcome.invalid);
  }
  return step;
}

}  // namespace dpepo::env
