#pragma once

// JSONL trajectory records. Each line holds the raw step log (intents,
// observations, flags), the derived quantities computed at training time and
// everything needed to recompute them: the reward and advantage settings and
// the rewards of the whole group.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpepo/advantage/advantage.hpp"
#include "dpepo/error.hpp"
#include "dpepo/reward/reward.hpp"
#include "dpepo/trajectory.hpp"

namespace dpepo::cli {

inline constexpr int kRecordSchemaVersion = 1;
inline constexpr double kValidationTolerance = 1e-9;

struct RecordMeta {
  std::string run_id;
  int iteration = 0;
  std::string task_id;
  int group_index = 0;
  int member_index = 0;
};

/// A parsed record: the raw trajectory plus the values stored next to it.
struct TrajectoryRecord {
  RecordMeta meta;
  Trajectory trajectory;
  reward::RewardConfig reward;
  advantage::AdvantageConfig advantage;
  std::vector<double> group_rewards;
  double phi_traj = 0.0;
  std::vector<double> phi_step;
  std::vector<double> phi;
};

namespace detail {

inline nlohmann::json observation_json(const env::Observation& o) {
  return {{"text", o.text}, {"admissible_actions", o.admissible_actions}, {"is_goal", o.is_goal}};
}

inline env::Observation observation_from(const nlohmann::json& j) {
  return env::Observation{j.at("text").get<std::string>(), j.at("admissible_actions").get<std::vector<std::string>>(),
                          j.at("is_goal").get<bool>()};
}

inline nlohmann::json reward_json(const reward::RewardConfig& r) {
  return {{"alpha", r.alpha},
          {"omega", r.omega},
          {"gamma", r.gamma},
          {"beta", r.beta},
          {"invalid_penalty", r.invalid_penalty},
          {"disable_DAR", r.disable_action_reward},
          {"disable_DTR", r.disable_transition_reward},
          {"average_width_action_term", r.average_width_action_term}};
}

}  // namespace detail

inline nlohmann::json record_to_json(const TrajectoryRecord& rec) {
  using nlohmann::json;
  const auto& traj = rec.trajectory;
  json steps = json::array();
  for (std::size_t s = 0; s < traj.steps.size(); ++s) {
    const auto& st = traj.steps[s];
    json intents = json::array();
    for (const auto& in : st.intents) intents.push_back({{"env_id", in.env_id}, {"action", in.action}});
    json obs = json::array();
    for (const auto& o : st.observations) {
      auto j = detail::observation_json(o.observation);
      j["env_id"] = o.env_id;
      obs.push_back(std::move(j));
    }
    json flags = json::array();
    for (bool f : st.invalid_flags) flags.push_back(f);
    steps.push_back({{"t", st.t},
                     {"intents", std::move(intents)},
                     {"observations", std::move(obs)},
                     {"invalid_flags", std::move(flags)},
                     {"parse_failure", st.parse_failure},
                     {"raw_output", st.raw_output},
                     {"logprob_old", st.logprob_old},
                     {"r_action", st.reward.r_action},
                     {"r_transition", st.reward.r_transition},
                     {"r_step", st.reward.r_step},
                     {"invalid_applied", st.reward.invalid_applied},
                     {"phi_step", s < rec.phi_step.size() ? rec.phi_step[s] : 0.0},
                     {"phi", s < rec.phi.size() ? rec.phi[s] : 0.0}});
  }
  return {{"schema_version", kRecordSchemaVersion},
          {"run_id", rec.meta.run_id},
          {"iteration", rec.meta.iteration},
          {"task_id", rec.meta.task_id},
          {"group_index", rec.meta.group_index},
          {"member_index", rec.meta.member_index},
          {"seed", traj.seed},
          {"k_parallel", traj.k_parallel},
          {"task_description", traj.task_description},
          {"initial_observation", detail::observation_json(traj.initial_observation)},
          {"reward_config", detail::reward_json(rec.reward)},
          {"advantage_config", {{"eps", rec.advantage.eps}, {"clip", rec.advantage.clip}}},
          {"steps", std::move(steps)},
          {"success", traj.success},
          {"failure_reason", traj.failure_reason ? json(std::string(to_string(*traj.failure_reason))) : json(nullptr)},
          {"abort_message", traj.abort_message},
          {"terminal_step", traj.terminal_step},
          {"r_traj", traj.r_traj},
          {"group_rewards", rec.group_rewards},
          {"phi_traj", rec.phi_traj}};
}

/// Throws a format error on any missing or mistyped field.
inline TrajectoryRecord record_from_json(const nlohmann::json& j) {
  TrajectoryRecord rec;
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kRecordSchemaVersion) {
      throw Error(ErrorKind::format, "unsupported record schema_version " + std::to_string(version));
    }
    rec.meta.run_id = j.at("run_id").get<std::string>();
    rec.meta.iteration = j.at("iteration").get<int>();
    rec.meta.task_id = j.at("task_id").get<std::string>();
    rec.meta.group_index = j.at("group_index").get<int>();
    rec.meta.member_index = j.at("member_index").get<int>();

    auto& traj = rec.trajectory;
    traj.seed = j.at("seed").get<std::uint64_t>();
    traj.k_parallel = j.at("k_parallel").get<int>();
    traj.task_description = j.at("task_description").get<std::string>();
    traj.initial_observation = detail::observation_from(j.at("initial_observation"));

    const auto& rc = j.at("reward_config");
    rec.reward.alpha = rc.at("alpha").get<double>();
    rec.reward.omega = rc.at("omega").get<double>();
    rec.reward.gamma = rc.at("gamma").get<double>();
    rec.reward.beta = rc.at("beta").get<double>();
    rec.reward.invalid_penalty = rc.at("invalid_penalty").get<double>();
    rec.reward.disable_action_reward = rc.at("disable_DAR").get<bool>();
    rec.reward.disable_transition_reward = rc.at("disable_DTR").get<bool>();
    rec.reward.average_width_action_term = rc.at("average_width_action_term").get<bool>();
    rec.advantage.eps = j.at("advantage_config").at("eps").get<double>();
    rec.advantage.clip = j.at("advantage_config").at("clip").get<double>();

    for (const auto& sj : j.at("steps")) {
      ParallelStep st;
      st.t = sj.at("t").get<int>();
      for (const auto& in : sj.at("intents")) {
        st.intents.push_back(Intent{in.at("env_id").get<int>(), in.at("action").get<std::string>()});
      }
      for (const auto& o : sj.at("observations")) {
        st.observations.push_back(EnvObservation{o.at("env_id").get<int>(), detail::observation_from(o)});
      }
      for (const auto& f : sj.at("invalid_flags")) st.invalid_flags.push_back(f.get<bool>());
      st.parse_failure = sj.at("parse_failure").get<bool>();
      st.raw_output = sj.at("raw_output").get<std::string>();
      st.logprob_old = sj.at("logprob_old").get<double>();
      st.reward.r_action = sj.at("r_action").get<double>();
      st.reward.r_transition = sj.at("r_transition").get<double>();
      st.reward.r_step = sj.at("r_step").get<double>();
      st.reward.invalid_applied = sj.at("invalid_applied").get<bool>();
      rec.phi_step.push_back(sj.at("phi_step").get<double>());
      rec.phi.push_back(sj.at("phi").get<double>());
      traj.steps.push_back(std::move(st));
    }
    traj.success = j.at("success").get<bool>();
    const auto& fr = j.at("failure_reason");
    if (!fr.is_null()) {
      traj.failure_reason = failure_reason_from_string(fr.get<std::string>());
      if (!traj.failure_reason) throw Error(ErrorKind::format, "unknown failure_reason '" + fr.get<std::string>() + "'");
    }
    traj.abort_message = j.at("abort_message").get<std::string>();
    traj.terminal_step = j.at("terminal_step").get<int>();
    traj.r_traj = j.at("r_traj").get<double>();
    traj.finished = true;
    rec.group_rewards = j.at("group_rewards").get<std::vector<double>>();
    rec.phi_traj = j.at("phi_traj").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, std::string("malformed trajectory record: ") + e.what());
  }
  return rec;
}

/// Recomputes every derived value from the raw fields. Returns one message
/// per discrepancy beyond `tol`; empty means the record is self-consistent.
inline std::vector<std::string> validate_record(const TrajectoryRecord& rec, double tol = kValidationTolerance) {
  std::vector<std::string> issues;
  auto check = [&](const std::string& what, double stored, double derived) {
    if (!(std::abs(stored - derived) <= tol)) {
      issues.push_back(what + ": stored " + nlohmann::json(stored).dump() + ", recomputed " +
                       nlohmann::json(derived).dump());
    }
  };
  const auto& traj = rec.trajectory;
  for (std::size_t s = 0; s < traj.steps.size(); ++s) {
    const auto& st = traj.steps[s];
    if (st.observations.size() != st.intents.size() || st.invalid_flags.size() != st.intents.size()) {
      issues.push_back("step " + std::to_string(st.t) + ": intents, observations and invalid_flags differ in length");
      return issues;
    }
  }

  const auto rewards = reward::trajectory_step_rewards(traj, rec.reward);
  check("r_traj", traj.r_traj, reward::trajectory_success_reward(traj));
  const auto m = static_cast<std::size_t>(rec.meta.member_index);
  if (m >= rec.group_rewards.size()) {
    issues.push_back("member_index outside group_rewards");
    return issues;
  }
  check("group_rewards[member_index]", rec.group_rewards[m], traj.r_traj);
  double phi_traj = 0.0;
  if (rec.group_rewards.size() >= 2) {
    phi_traj = advantage::trajectory_advantages(std::span<const double>(rec.group_rewards), rec.advantage.eps)[m];
  } else {
    issues.push_back("group_rewards needs at least 2 members");
  }
  check("phi_traj", rec.phi_traj, phi_traj);
  for (std::size_t s = 0; s < traj.steps.size(); ++s) {
    const auto& st = traj.steps[s];
    const auto tag = "step " + std::to_string(st.t) + " ";
    check(tag + "r_action", st.reward.r_action, rewards[s].r_action);
    check(tag + "r_transition", st.reward.r_transition, rewards[s].r_transition);
    check(tag + "r_step", st.reward.r_step, rewards[s].r_step);
    if (st.reward.invalid_applied != rewards[s].invalid_applied) issues.push_back(tag + "invalid_applied differs");
    const double ps = advantage::step_advantage(rewards[s].r_step, phi_traj);
    check(tag + "phi_step", rec.phi_step[s], ps);
    check(tag + "phi", rec.phi[s], advantage::combined_advantage(ps, phi_traj));
  }
  return issues;
}

}  // namespace dpepo::cli
