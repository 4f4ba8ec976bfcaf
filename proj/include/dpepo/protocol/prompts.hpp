#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dpepo/env/world.hpp"
#include "dpepo/error.hpp"
#include "dpepo/trajectory.hpp"

namespace dpepo::protocol {

inline constexpr std::string_view kTemplateVersion = "v1";
inline constexpr std::string_view kDefaultEnvName = "KeyDoorWorld";

// Copies of templates/v1/*.txt without the final newline; a unit test keeps
// the two in sync.
namespace templates {

inline constexpr std::string_view kSystem =
    R"(You are an expert agent operating in the {env_name} embodied environment.
Given a task, you need to reason first in your mind.
Your reasoning process must be enclosed within <think> </think> tags,
for example: <think> reasoning process here </think>.
After thinking, you may take actions. You can either explore multiple parallel environments with multiple actions or take an action in a specific environment.
At the very beginning, every environment have the same status, but each environment is independent, they do not share state changes after actions are taken.
So, parallel actions are executed simultaneously across different environments. The parallel actions are not carried out sequentially.
You must wrap each action in specific environment tags like
<env_i> ... </env_i>
to indicate which environment you are acting in.
To take multiple actions at the same time in different environments,
use the <parallel> ... </parallel> tags and wrap
each action within its corresponding <env_i> ... </env_i> tag, where i refers to the i-th environment:
<parallel>
<env_1> possible action 1 </env_1>
...
<env_i> possible action 2 </env_i>
</parallel>
Your output must follow the rules above.)";

inline constexpr std::string_view kFirstStep =
    R"(You are an expert agent operating in the {env_name} Embodied Environment.
Your task is to: {task_description}
Your current observation is: {current_observation}
Your admissible actions in the current situation are: {admissible_actions}.
Your output must follow the rules above.)";

inline constexpr std::string_view kIntermediateStep =
    R"(You are an expert agent operating in the {env_name} Embodied Environment.
Your task is to: {task_description}.
Your initial observation is: {initial_observation}.
{history_info}.
In your last step, your actions, corresponding observations, and admissible actions are:
{last_history})";

inline constexpr std::string_view kHistoryInfo =
    R"(You have already taken multiple actions in multiple parallel environments. Below are the most recent observations and the corresponding actions you took:)";

inline constexpr std::string_view kEnvLimit =
    R"(You can explore up to {env_num} different environments, ranging from 1 to {env_num}. If you explore more than {env_num} parallel environments, the task seens failed.)";

struct Entry {
  std::string_view file;
  std::string_view text;
};

inline constexpr Entry kAll[] = {
    {"system.txt", kSystem},
    {"first_step.txt", kFirstStep},
    {"intermediate_step.txt", kIntermediateStep},
    {"history_info.txt", kHistoryInfo},
    {"env_limit.txt", kEnvLimit},
};

}  // namespace templates

/// Replaces every `{key}` in `tmpl`. When a placeholder is directly followed
/// by '.' in the template and its value already ends with '.', the template's
/// period is dropped so sentences do not end in "..".
inline std::string fill_template(std::string_view tmpl,
                                 const std::map<std::string, std::string, std::less<>>& values) {
  std::string out;
  out.reserve(tmpl.size() + 256);
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    const auto close = tmpl.find('}', open);
    if (close == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    out.append(tmpl.substr(pos, open - pos));
    const auto key = tmpl.substr(open + 1, close - open - 1);
    const auto it = values.find(key);
    if (it == values.end()) throw Error(ErrorKind::contract, "no value for template key {" + std::string(key) + "}");
    out += it->second;
    pos = close + 1;
    if (pos < tmpl.size() && tmpl[pos] == '.' && !it->second.empty() && it->second.back() == '.') ++pos;
  }
  return out;
}

/// ['a', 'b', 'c']
inline std::string format_action_list(const std::vector<std::string>& actions) {
  std::string out = "[";
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (i > 0) out += ", ";
    out += "'" + actions[i] + "'";
  }
  return out + "]";
}

/// Whitespace-delimited word count; the token-budget proxy.
inline std::size_t whitespace_tokens(std::string_view text) {
  std::size_t count = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\f' || c == '\v';
    if (!space && !in_word) ++count;
    in_word = !space;
  }
  return count;
}

inline std::string render_system_prompt(std::string_view env_name = kDefaultEnvName) {
  return fill_template(templates::kSystem, {{"env_name", std::string(env_name)}});
}

inline std::string render_limit_prompt(int env_num) {
  if (env_num < 1) {
    throw Error(ErrorKind::configuration, "env_num must be >= 1, got " + std::to_string(env_num));
  }
  return fill_template(templates::kEnvLimit, {{"env_num", std::to_string(env_num)}});
}

inline std::string render_first_step_prompt(std::string_view task, const env::Observation& obs,
                                             std::string_view env_name = kDefaultEnvName) {
  if (obs.admissible_actions.empty() && !obs.is_goal) {
    throw Error(ErrorKind::contract, "first-step prompt needs a non-empty admissible action list");
  }
  return fill_template(templates::kFirstStep,
                       {{"env_name", std::string(env_name)},
                        {"task_description", std::string(task)},
                        {"current_observation", obs.text},
                        {"admissible_actions", format_action_list(obs.admissible_actions)}});
}

struct ActionObservation {
  std::string action;
  std::string observation;
};

struct EnvHistory {
  int env_id = 0;
  std::vector<ActionObservation> entries;
};

struct LastStepEntry {
  int env_id = 0;
  int ordinal = 1;  // per-environment action number
  std::string action;
  std::string observation;
  std::vector<std::string> admissible_actions;
};

/// Everything the intermediate prompt shows. Older steps are compressed to
/// action/observation pairs; only the previous step keeps admissible lists.
struct PromptContext {
  std::string task_description;
  std::string initial_observation;
  std::vector<EnvHistory> history_summary;
  std::vector<LastStepEntry> last_step_detail;
  std::optional<int> env_limit;
  bool has_last_step = false;
};

/// Builds the prompt context after the steps recorded in `traj`.
inline PromptContext build_prompt_context(const Trajectory& traj, std::optional<int> env_limit = std::nullopt) {
  PromptContext ctx;
  ctx.task_description = traj.task_description;
  ctx.initial_observation = traj.initial_observation.text;
  ctx.env_limit = env_limit;
  if (traj.steps.empty()) return ctx;
  ctx.has_last_step = true;

  std::map<int, EnvHistory> summary;
  std::map<int, int> ordinals;
  for (std::size_t s = 0; s + 1 < traj.steps.size(); ++s) {
    const auto& step = traj.steps[s];
    for (std::size_t i = 0; i < step.intents.size() && i < step.observations.size(); ++i) {
      const int id = step.intents[i].env_id;
      auto& h = summary[id];
      h.env_id = id;
      h.entries.push_back({step.intents[i].action, step.observations[i].observation.text});
      ++ordinals[id];
    }
  }
  for (auto& [id, h] : summary) ctx.history_summary.push_back(std::move(h));

  const auto& last = traj.steps.back();
  for (std::size_t i = 0; i < last.intents.size() && i < last.observations.size(); ++i) {
    const int id = last.intents[i].env_id;
    ctx.last_step_detail.push_back(LastStepEntry{id, ordinals[id] + 1, last.intents[i].action,
                                                 last.observations[i].observation.text,
                                                 last.observations[i].observation.admissible_actions});
  }
  std::sort(ctx.last_step_detail.begin(), ctx.last_step_detail.end(),
            [](const LastStepEntry& a, const LastStepEntry& b) { return a.env_id < b.env_id; });
  return ctx;
}

inline std::string render_history_info(const std::vector<EnvHistory>& history) {
  std::string out(templates::kHistoryInfo);
  for (const auto& env : history) {
    out += "\nIn Environment " + std::to_string(env.env_id);
    for (std::size_t j = 0; j < env.entries.size(); ++j) {
      const auto n = std::to_string(j + 1);
      out += "\nAction " + n + ": " + env.entries[j].action;
      out += "\nObservation " + n + ": " + env.entries[j].observation;
    }
  }
  return out;
}

inline std::string render_last_history(const std::vector<LastStepEntry>& last) {
  if (last.empty()) return "No environment was acted on; the previous output could not be parsed.";
  std::string out;
  for (const auto& e : last) {
    if (!out.empty()) out += "\n";
    const auto n = std::to_string(e.ordinal);
    out += "In Environment " + std::to_string(e.env_id);
    out += "\nAction " + n + ": " + e.action;
    out += "\nObservation " + n + ": " + e.observation;
    out += "\nNext Possible Actions: " + format_action_list(e.admissible_actions);
  }
  return out;
}

/// Intermediate-step prompt. The history line is omitted when there is no
/// step older than the previous one.
inline std::string render_intermediate_prompt(const PromptContext& ctx,
                                              std::string_view env_name = kDefaultEnvName) {
  if (!ctx.has_last_step) {
    throw Error(ErrorKind::contract, "intermediate prompt needs at least one completed step");
  }
  std::string body = fill_template(
      templates::kIntermediateStep,
      {{"env_name", std::string(env_name)},
       {"task_description", ctx.task_description},
       {"initial_observation", ctx.initial_observation},
       {"history_info", ctx.history_summary.empty() ? std::string() : render_history_info(ctx.history_summary)},
       {"last_history", render_last_history(ctx.last_step_detail)}});
  if (ctx.history_summary.empty()) {
    const auto line = body.find("\n.\n");
    if (line != std::string::npos) body.erase(line, 2);
  }
  return body;
}

/// User prompt for the next decision after `traj`: the first-step form when
/// nothing has happened yet, otherwise the compressed intermediate form.
inline std::string render_step_prompt(const Trajectory& traj, std::optional<int> env_limit = std::nullopt,
                                      std::string_view env_name = kDefaultEnvName) {
  std::string prompt = traj.steps.empty()
                           ? render_first_step_prompt(traj.task_description, traj.initial_observation, env_name)
                           : render_intermediate_prompt(build_prompt_context(traj, env_limit), env_name);
  if (env_limit) prompt += "\n" + render_limit_prompt(*env_limit);
  return prompt;
}

/// Uncompressed rendering that keeps every admissible-action list; only used
/// to measure what the compression saves.
inline std::string render_full_history_prompt(const Trajectory& traj,
                                              std::string_view env_name = kDefaultEnvName) {
  if (traj.steps.empty()) {
    return render_first_step_prompt(traj.task_description, traj.initial_observation, env_name);
  }
  std::map<int, std::vector<LastStepEntry>> per_env;
  for (std::size_t s = 0; s + 1 < traj.steps.size(); ++s) {
    const auto& step = traj.steps[s];
    for (std::size_t i = 0; i < step.intents.size() && i < step.observations.size(); ++i) {
      const int id = step.intents[i].env_id;
      auto& list = per_env[id];
      list.push_back(LastStepEntry{id, static_cast<int>(list.size()) + 1, step.intents[i].action,
                                   step.observations[i].observation.text,
                                   step.observations[i].observation.admissible_actions});
    }
  }
  std::string history;
  for (const auto& [id, entries] : per_env) {
    history += "\nIn Environment " + std::to_string(id);
    for (const auto& e : entries) {
      const auto n = std::to_string(e.ordinal);
      history += "\nAction " + n + ": " + e.action;
      history += "\nObservation " + n + ": " + e.observation;
      history += "\nNext Possible Actions: " + format_action_list(e.admissible_actions);
    }
  }
  const auto ctx = build_prompt_context(traj);
  return fill_template(templates::kIntermediateStep,
                       {{"env_name", std::string(env_name)},
                        {"task_description", traj.task_description},
                        {"initial_observation", traj.initial_observation.text},
                        {"history_info", std::string(templates::kHistoryInfo) + history},
                        {"last_history", render_last_history(ctx.last_step_detail)}});
}

}  // namespace dpepo::protocol
