#pragma once

// Decision makers that can drive a rollout. An agent sees the environment
// set and the trajectory so far and returns raw output text, optionally with
// the already-structured turn it encodes.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dpepo/env/parallel.hpp"
#include "dpepo/policy/llm_client.hpp"
#include "dpepo/policy/tabular.hpp"
#include "dpepo/protocol/agent_turn.hpp"
#include "dpepo/protocol/prompts.hpp"
#include "dpepo/trajectory.hpp"

namespace dpepo::rollout {

struct RolloutView {
  const env::ParallelEnvSet& envs;
  const Trajectory& trajectory;
  int t = 1;
  std::optional<int> env_limit;
};

struct AgentDecision {
  std::string raw_output;
  std::optional<protocol::AgentTurn> turn;  // set when the agent produced structure directly
  double logprob_old = 0.0;
  std::vector<policy::ChatMessage> prompt;  // only filled by agents that render prompts
};

class Agent {
 public:
  virtual ~Agent() = default;
  /// Must be safe to call concurrently from several rollouts.
  virtual AgentDecision act(const RolloutView& view, std::uint64_t seed) const = 0;
};

/// Rebuilds the policy input for step `t` from the trajectory alone: the
/// latest observation of every environment that has not reached its goal.
inline policy::DecisionContext decision_context_at(const Trajectory& traj, std::size_t steps_done,
                                                   std::optional<int> env_limit = std::nullopt) {
  std::vector<const env::Observation*> current(static_cast<std::size_t>(traj.k_parallel), &traj.initial_observation);
  for (std::size_t s = 0; s < steps_done && s < traj.steps.size(); ++s) {
    const auto& step = traj.steps[s];
    for (const auto& o : step.observations) {
      if (o.env_id >= 1 && o.env_id <= traj.k_parallel) current[static_cast<std::size_t>(o.env_id - 1)] = &o.observation;
    }
  }
  policy::DecisionContext ctx;
  ctx.t = static_cast<int>(steps_done) + 1;
  ctx.env_limit = env_limit;
  for (int id = 1; id <= traj.k_parallel; ++id) {
    const auto* obs = current[static_cast<std::size_t>(id - 1)];
    if (obs->is_goal) continue;
    ctx.envs.push_back(policy::EnvDecisionInput{id, policy::observation_key(traj.task_description, obs->text),
                                                obs->admissible_actions});
  }
  return ctx;
}

class TabularAgent final : public Agent {
 public:
  TabularAgent(std::shared_ptr<const policy::TabularPolicyParams> params,
               policy::DecisionMode mode = policy::DecisionMode::sample, bool render_prompts = false)
      : params_(std::move(params)), mode_(mode), render_prompts_(render_prompts) {}

  AgentDecision act(const RolloutView& view, std::uint64_t seed) const override {
    const auto ctx = policy::make_decision_context(view.envs, view.t, view.env_limit);
    auto outcome = policy::decide(*params_, ctx, seed, mode_);
    AgentDecision d;
    d.raw_output = protocol::serialize_turn(outcome.turn);
    d.turn = std::move(outcome.turn);
    d.logprob_old = outcome.logprob_old;
    if (render_prompts_) {
      d.prompt = {{"system", protocol::render_system_prompt()},
                  {"user", protocol::render_step_prompt(view.trajectory, view.env_limit)}};
    }
    return d;
  }

  const policy::TabularPolicyParams& params() const noexcept { return *params_; }

 private:
  std::shared_ptr<const policy::TabularPolicyParams> params_;
  policy::DecisionMode mode_;
  bool render_prompts_;
};

/// Replays fixed raw outputs, one per step; the last one repeats.
class ScriptedAgent final : public Agent {
 public:
  explicit ScriptedAgent(std::vector<std::string> outputs) : outputs_(std::move(outputs)) {
    if (outputs_.empty()) throw Error(ErrorKind::configuration, "scripted agent needs at least one output");
  }

  AgentDecision act(const RolloutView& view, std::uint64_t) const override {
    const auto i = std::min<std::size_t>(static_cast<std::size_t>(view.t - 1), outputs_.size() - 1);
    AgentDecision d;
    d.raw_output = outputs_[i];
    return d;
  }

 private:
  std::vector<std::string> outputs_;
};

class LlmAgent final : public Agent {
 public:
  explicit LlmAgent(policy::EndpointConfig cfg, std::string env_name = std::string(protocol::kDefaultEnvName),
                    policy::ChatClient::Sleeper sleeper = nullptr)
      : client_(std::move(cfg), std::move(sleeper)), env_name_(std::move(env_name)) {}

  AgentDecision act(const RolloutView& view, std::uint64_t) const override {
    AgentDecision d;
    d.prompt = {{"system", protocol::render_system_prompt(env_name_)},
                {"user", protocol::render_step_prompt(view.trajectory, view.env_limit, env_name_)}};
    d.raw_output = client_.complete(d.prompt).text;
    return d;
  }

 private:
  policy::ChatClient client_;
  std::string env_name_;
};

}  // namespace dpepo::rollout
