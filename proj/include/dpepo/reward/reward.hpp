#pragma once

// Trajectory success reward and the two diversity-driven step rewards.
//
//   R_action     = mean_i alpha^Cdepth(E_i, a) + omega^Cwidth(A_t)
//   R_transition = mean_i gamma^Mdepth(E_i, p) + mean_i beta^Mwidth(E_i, p)
//   R_step       = (R_action + R_transition) / 2,  times invalid_penalty when
//                  any action of the step was inadmissible or unparseable.
//
// All counts exclude the current occurrence, so novel behaviour scores 1 per
// term and every reward lies in (0, 2].

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dpepo/error.hpp"
#include "dpepo/hash.hpp"
#include "dpepo/trajectory.hpp"

namespace dpepo::reward {

struct RewardConfig {
  double alpha = 0.8;   // depth-wise action discount
  double omega = 0.95;  // width-wise action discount
  double gamma = 0.95;  // depth-wise transition discount
  double beta = 0.95;   // width-wise transition discount
  double invalid_penalty = 0.5;
  // Ablations: a disabled reward is pinned to its no-repetition value 2.
  bool disable_action_reward = false;
  bool disable_transition_reward = false;
  // false: one global width exponent |A_t| - distinct(A_t), not averaged.
  // true: per-action exponents (other envs issuing the same string), averaged
  // like the transition width term.
  bool average_width_action_term = false;

  void validate() const {
    const std::pair<const char*, double> factors[] = {{"alpha", alpha},
                                                      {"omega", omega},
                                                      {"gamma", gamma},
                                                      {"beta", beta},
                                                      {"invalid_penalty", invalid_penalty}};
    for (const auto& [name, v] : factors) {
      if (!(v > 0.0 && v <= 1.0)) {
        throw Error(ErrorKind::configuration,
                    std::string("reward.") + name + " must lie in (0, 1], got " + std::to_string(v));
      }
    }
  }

  friend bool operator==(const RewardConfig&, const RewardConfig&) = default;
};

inline std::uint64_t state_digest(std::string_view observation_text) { return fnv1a(observation_text); }

/// A state-action transition p = s -> a. Identity is (state_digest, action);
/// env_id only records where it happened.
struct TransitionKey {
  int env_id = 0;
  std::uint64_t state_digest = 0;
  std::string action;

  std::pair<std::uint64_t, std::string> identity() const { return {state_digest, action}; }
};

/// Per-environment action and transition logs for the steps before t.
class RepetitionHistory {
 public:
  explicit RepetitionHistory(std::string_view initial_observation_text)
      : initial_digest_(state_digest(initial_observation_text)) {}

  std::uint64_t pre_action_digest(int env_id) const {
    const auto it = logs_.find(env_id);
    return it == logs_.end() ? initial_digest_ : it->second.last_digest;
  }

  int action_count(int env_id, const std::string& action) const {
    const auto it = logs_.find(env_id);
    if (it == logs_.end()) return 0;
    const auto a = it->second.actions.find(action);
    return a == it->second.actions.end() ? 0 : a->second;
  }

  int transition_count(int env_id, const TransitionKey& key) const {
    const auto it = logs_.find(env_id);
    if (it == logs_.end()) return 0;
    const auto t = it->second.transitions.find(key.identity());
    return t == it->second.transitions.end() ? 0 : t->second;
  }

  std::set<int> env_ids() const {
    std::set<int> ids;
    for (const auto& [id, log] : logs_) ids.insert(id);
    return ids;
  }

  TransitionKey transition_for(const Intent& intent) const {
    return TransitionKey{intent.env_id, pre_action_digest(intent.env_id), intent.action};
  }

  /// Appends an executed step. Parse-failure steps carry no intents and leave
  /// the logs untouched.
  void record(const ParallelStep& step) {
    for (std::size_t i = 0; i < step.intents.size(); ++i) {
      const auto& intent = step.intents[i];
      const auto key = transition_for(intent);
      auto& log = logs_.try_emplace(intent.env_id, EnvLog{{}, {}, initial_digest_}).first->second;
      ++log.actions[intent.action];
      ++log.transitions[key.identity()];
      if (i < step.observations.size()) {
        log.last_digest = state_digest(step.observations[i].observation.text);
      }
    }
  }

 private:
  struct EnvLog {
    std::map<std::string, int> actions;
    std::map<std::pair<std::uint64_t, std::string>, int> transitions;
    std::uint64_t last_digest = 0;
  };

  std::uint64_t initial_digest_;
  std::map<int, EnvLog> logs_;
};

/// Exponents for one step, aligned with `step.intents`.
struct RepetitionCounters {
  std::vector<int> c_depth;
  int c_width = 0;
  std::vector<int> c_width_per_action;
  std::vector<int> m_depth;
  std::vector<int> m_width;

  friend bool operator==(const RepetitionCounters&, const RepetitionCounters&) = default;
};

inline RepetitionCounters count_repetitions(const RepetitionHistory& history, const ParallelStep& step) {
  RepetitionCounters c;
  const auto n = step.intents.size();
  std::vector<TransitionKey> keys;
  keys.reserve(n);
  for (const auto& intent : step.intents) keys.push_back(history.transition_for(intent));

  std::set<std::string> distinct;
  for (const auto& intent : step.intents) distinct.insert(intent.action);
  c.c_width = static_cast<int>(n - distinct.size());

  auto envs = history.env_ids();
  for (const auto& intent : step.intents) envs.insert(intent.env_id);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& intent = step.intents[i];
    c.c_depth.push_back(history.action_count(intent.env_id, intent.action));
    c.m_depth.push_back(history.transition_count(intent.env_id, keys[i]));

    int same_action = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && step.intents[j].action == intent.action) ++same_action;
    }
    c.c_width_per_action.push_back(same_action);

    int width = 0;
    for (int other : envs) {
      if (other == intent.env_id) continue;
      bool seen = history.transition_count(other, keys[i]) > 0;
      for (std::size_t j = 0; j < n && !seen; ++j) {
        seen = step.intents[j].env_id == other && keys[j].identity() == keys[i].identity();
      }
      if (seen) ++width;
    }
    c.m_width.push_back(width);
  }
  return c;
}

inline double diverse_action_reward(const RepetitionCounters& c, const ParallelStep& step,
                                    const RewardConfig& cfg) {
  if (step.intents.empty()) throw Error(ErrorKind::usage, "action reward of an empty step");
  if (cfg.disable_action_reward) return 2.0;
  const double n = static_cast<double>(step.intents.size());
  double depth = 0.0;
  for (int e : c.c_depth) depth += std::pow(cfg.alpha, e);
  depth /= n;
  if (!cfg.average_width_action_term) return depth + std::pow(cfg.omega, c.c_width);
  double width = 0.0;
  for (int e : c.c_width_per_action) width += std::pow(cfg.omega, e);
  return depth + width / n;
}

inline double diverse_transition_reward(const RepetitionCounters& c, const ParallelStep& step,
                                        const RewardConfig& cfg) {
  if (step.intents.empty()) throw Error(ErrorKind::usage, "transition reward of an empty step");
  if (cfg.disable_transition_reward) return 2.0;
  const double n = static_cast<double>(step.intents.size());
  double depth = 0.0;
  double width = 0.0;
  for (int e : c.m_depth) depth += std::pow(cfg.gamma, e);
  for (int e : c.m_width) width += std::pow(cfg.beta, e);
  return depth / n + width / n;
}

/// Composite step reward. A parse-failure step has no actions to compare, so
/// both sub-rewards take their no-repetition value before the penalty.
inline StepReward step_reward(const ParallelStep& step, const RepetitionHistory& history,
                              const RewardConfig& cfg) {
  StepReward r;
  if (step.parse_failure || step.intents.empty()) {
    r.r_action = 2.0;
    r.r_transition = 2.0;
  } else {
    const auto counters = count_repetitions(history, step);
    r.r_action = diverse_action_reward(counters, step, cfg);
    r.r_transition = diverse_transition_reward(counters, step, cfg);
  }
  r.r_step = (r.r_action + r.r_transition) / 2.0;
  if (step.any_invalid()) {
    r.r_step *= cfg.invalid_penalty;
    r.invalid_applied = true;
  }
  return r;
}

/// Step rewards for every step of `traj`, replaying its history in order.
inline std::vector<StepReward> trajectory_step_rewards(const Trajectory& traj, const RewardConfig& cfg) {
  RepetitionHistory history(traj.initial_observation.text);
  std::vector<StepReward> out;
  out.reserve(traj.steps.size());
  for (const auto& step : traj.steps) {
    out.push_back(step_reward(step, history, cfg));
    history.record(step);
  }
  return out;
}

/// Counters for every step of `traj` (empty counters for parse failures).
inline std::vector<RepetitionCounters> trajectory_counters(const Trajectory& traj) {
  RepetitionHistory history(traj.initial_observation.text);
  std::vector<RepetitionCounters> out;
  out.reserve(traj.steps.size());
  for (const auto& step : traj.steps) {
    out.push_back(count_repetitions(history, step));
    history.record(step);
  }
  return out;
}

/// 1 when any environment reached the goal, else 0. A trajectory that broke
/// the environment limit or was aborted counts as a failure.
inline double trajectory_success_reward(const Trajectory& traj) {
  if (!traj.finished) throw Error(ErrorKind::usage, "success reward of an unfinished trajectory");
  if (traj.failure_reason == FailureReason::env_limit_exceeded ||
      traj.failure_reason == FailureReason::aborted) {
    return 0.0;
  }
  for (const auto& step : traj.steps) {
    if (step.any_goal()) return 1.0;
  }
  return 0.0;
}

}  // namespace dpepo::reward
