#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dpepo/env/world.hpp"
#include "dpepo/intent.hpp"

namespace dpepo {

struct EnvObservation {
  int env_id = 0;
  env::Observation observation;

  friend bool operator==(const EnvObservation&, const EnvObservation&) = default;
};

struct StepReward {
  double r_action = 0.0;
  double r_transition = 0.0;
  double r_step = 0.0;
  bool invalid_applied = false;

  friend bool operator==(const StepReward&, const StepReward&) = default;
};

/// One timestep: the selected environments, their actions and the resulting
/// observations. A step whose agent output could not be parsed carries no
/// intents and has `parse_failure` set.
struct ParallelStep {
  int t = 0;
  std::vector<Intent> intents;
  std::vector<EnvObservation> observations;
  std::vector<bool> invalid_flags;
  bool parse_failure = false;
  double logprob_old = 0.0;
  StepReward reward;
  std::string raw_output;

  bool any_invalid() const {
    if (parse_failure) return true;
    for (bool f : invalid_flags) {
      if (f) return true;
    }
    return false;
  }
  bool any_goal() const {
    for (const auto& o : observations) {
      if (o.observation.is_goal) return true;
    }
    return false;
  }
};

enum class FailureReason { exhausted, env_limit_exceeded, aborted };

inline std::string_view to_string(FailureReason r) {
  switch (r) {
    case FailureReason::exhausted: return "exhausted";
    case FailureReason::env_limit_exceeded: return "env_limit_exceeded";
    case FailureReason::aborted: return "aborted";
  }
  return "aborted";
}

inline std::optional<FailureReason> failure_reason_from_string(std::string_view s) {
  if (s == "exhausted") return FailureReason::exhausted;
  if (s == "env_limit_exceeded") return FailureReason::env_limit_exceeded;
  if (s == "aborted") return FailureReason::aborted;
  return std::nullopt;
}

struct Trajectory {
  std::string task_description;
  env::Observation initial_observation;
  int k_parallel = 1;
  std::uint64_t seed = 0;
  std::vector<ParallelStep> steps;
  bool finished = false;
  bool success = false;
  double r_traj = 0.0;
  int terminal_step = 0;
  std::optional<FailureReason> failure_reason;
  std::string abort_message;
};

}  // namespace dpepo
