#pragma once

// Factorised tabular softmax policy.
//
// Every live environment independently picks one option from its admissible
// actions plus SKIP, with probabilities softmax(logit / temperature). Logits
// are keyed by (observation digest, action); unseen pairs read as 0. The
// environments that did not draw SKIP form the selected subset of the step.
// If every environment draws SKIP, the environment whose best action is most
// probable is forced in with an action drawn from its non-SKIP options.
//
// The score of a turn is the sum of the chosen options' log-probabilities
// over all live environments, SKIPs included.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dpepo/advantage/advantage.hpp"
#include "dpepo/env/parallel.hpp"
#include "dpepo/error.hpp"
#include "dpepo/hash.hpp"
#include "dpepo/protocol/agent_turn.hpp"

namespace dpepo::policy {

inline constexpr std::string_view kSkipOption = "<skip>";
inline constexpr double kDefaultTemperature = 0.4;

/// Digest of what an environment slot shows the agent: task plus observation text.
inline std::uint64_t observation_key(std::string_view task, std::string_view observation_text) {
  return fnv1a(observation_text, fnv1a("\n", fnv1a(task)));
}

struct EnvDecisionInput {
  int env_id = 0;
  std::uint64_t observation = 0;  // observation_key of the current observation
  std::vector<std::string> admissible_actions;
};

/// One entry per live environment, ascending env_id.
struct DecisionContext {
  std::vector<EnvDecisionInput> envs;
  int t = 1;
  std::optional<int> env_limit;
};

inline DecisionContext make_decision_context(const env::ParallelEnvSet& set, int t,
                                             std::optional<int> env_limit = std::nullopt) {
  DecisionContext ctx;
  ctx.t = t;
  ctx.env_limit = env_limit;
  for (const auto& inst : set.instances) {
    if (inst.terminal()) continue;
    ctx.envs.push_back(EnvDecisionInput{inst.env_id(),
                                        observation_key(set.task_description, inst.observation().text),
                                        inst.observation().admissible_actions});
  }
  return ctx;
}

struct LogitKey {
  std::uint64_t state = 0;
  std::uint64_t action = 0;  // fnv1a of the action string

  friend bool operator==(const LogitKey&, const LogitKey&) = default;
  friend auto operator<=>(const LogitKey&, const LogitKey&) = default;
};

struct LogitKeyHash {
  std::size_t operator()(const LogitKey& k) const noexcept {
    return static_cast<std::size_t>(splitmix64(k.state ^ (k.action * 0x9e3779b97f4a7c15ULL)));
  }
};

struct LogitEntry {
  std::string action;
  double logit = 0.0;
};

struct TabularPolicyParams {
  std::unordered_map<LogitKey, LogitEntry, LogitKeyHash> logits;
  double skip_logit_bias = 0.0;
  double temperature = kDefaultTemperature;
  // When set, the table row also depends on the environment slot, so
  // sibling environments showing the same text may act differently.
  bool env_keyed = true;

  std::uint64_t state_for(const EnvDecisionInput& env) const {
    return env_keyed ? derive_seed(env.observation, static_cast<std::uint64_t>(env.env_id)) : env.observation;
  }

  double logit(std::uint64_t state, std::string_view action) const {
    const auto it = logits.find(LogitKey{state, fnv1a(action)});
    return it == logits.end() ? 0.0 : it->second.logit;
  }

  double option_logit(std::uint64_t state, std::string_view option) const {
    const double z = logit(state, option);
    return option == kSkipOption ? z + skip_logit_bias : z;
  }

  void add(std::uint64_t state, std::string_view action, double delta) {
    auto& e = logits[LogitKey{state, fnv1a(action)}];
    if (e.action.empty()) e.action = std::string(action);
    e.logit += delta;
  }

  void validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
      throw Error(ErrorKind::configuration, "policy.temperature must be a finite value > 0");
    }
    if (!std::isfinite(skip_logit_bias)) {
      throw Error(ErrorKind::configuration, "policy.skip_logit_bias must be finite");
    }
  }
};

/// Option probabilities for one environment: admissible actions in order,
/// SKIP last.
inline std::vector<double> option_probabilities(const TabularPolicyParams& params,
                                                const EnvDecisionInput& env) {
  if (env.admissible_actions.empty()) {
    throw Error(ErrorKind::contract,
                "environment " + std::to_string(env.env_id) + " is live but has no admissible actions");
  }
  const auto state = params.state_for(env);
  std::vector<double> z;
  z.reserve(env.admissible_actions.size() + 1);
  for (const auto& a : env.admissible_actions) z.push_back(params.option_logit(state, a) / params.temperature);
  z.push_back(params.option_logit(state, kSkipOption) / params.temperature);
  const double zmax = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (auto& v : z) {
    v = std::exp(v - zmax);
    total += v;
  }
  for (auto& v : z) v /= total;
  return z;
}

enum class DecisionMode { sample, greedy };

struct DecisionOutcome {
  protocol::AgentTurn turn;
  double logprob_old = 0.0;
};

namespace detail {

inline std::size_t sample_index(std::span<const double> probs, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  for (std::size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return i;
  }
  return 0;
}

inline std::size_t argmax(std::span<const double> probs) {
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

}  // namespace detail

inline DecisionOutcome decide(const TabularPolicyParams& params, const DecisionContext& ctx,
                              std::uint64_t seed, DecisionMode mode = DecisionMode::sample) {
  if (ctx.envs.empty()) throw Error(ErrorKind::contract, "decision context has no live environments");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> probs;
  std::vector<std::size_t> choice;
  probs.reserve(ctx.envs.size());
  bool any_action = false;
  for (const auto& env : ctx.envs) {
    probs.push_back(option_probabilities(params, env));
    const auto& p = probs.back();
    choice.push_back(mode == DecisionMode::greedy ? detail::argmax(p) : detail::sample_index(p, rng));
    any_action = any_action || choice.back() + 1 < p.size();
  }

  if (!any_action) {
    std::size_t forced = 0;
    double best = -1.0;
    for (std::size_t e = 0; e < probs.size(); ++e) {
      const auto& p = probs[e];
      const double top = *std::max_element(p.begin(), p.end() - 1);
      if (top > best) {
        best = top;
        forced = e;
      }
    }
    const auto& p = probs[forced];
    const std::span<const double> actions(p.data(), p.size() - 1);
    const double mass = 1.0 - p.back();
    if (mode == DecisionMode::greedy || !(mass > 0.0)) {
      choice[forced] = detail::argmax(actions);
    } else {
      std::vector<double> conditional(actions.begin(), actions.end());
      for (auto& v : conditional) v /= mass;
      choice[forced] = detail::sample_index(conditional, rng);
    }
  }

  DecisionOutcome out;
  for (std::size_t e = 0; e < ctx.envs.size(); ++e) {
    const auto& p = probs[e];
    out.logprob_old += std::log(p[choice[e]]);
    if (choice[e] + 1 < p.size()) {
      out.turn.intents.push_back(Intent{ctx.envs[e].env_id, ctx.envs[e].admissible_actions[choice[e]]});
    }
  }
  return out;
}

namespace detail {

/// Chosen option index per live environment (SKIP = last index).
inline std::vector<std::size_t> chosen_options(const DecisionContext& ctx, const protocol::AgentTurn& turn) {
  if (turn.intents.empty()) throw Error(ErrorKind::scoring, "turn has no intents");
  std::map<int, const std::string*> by_env;
  for (const auto& in : turn.intents) {
    if (!by_env.emplace(in.env_id, &in.action).second) {
      throw Error(ErrorKind::scoring, "environment " + std::to_string(in.env_id) + " appears twice");
    }
  }
  std::vector<std::size_t> chosen;
  chosen.reserve(ctx.envs.size());
  std::size_t matched = 0;
  for (const auto& env : ctx.envs) {
    const auto it = by_env.find(env.env_id);
    if (it == by_env.end()) {
      chosen.push_back(env.admissible_actions.size());
      continue;
    }
    const auto pos = std::find(env.admissible_actions.begin(), env.admissible_actions.end(), *it->second);
    if (pos == env.admissible_actions.end()) {
      throw Error(ErrorKind::scoring, "action '" + *it->second + "' is not admissible in environment " +
                                          std::to_string(env.env_id));
    }
    chosen.push_back(static_cast<std::size_t>(pos - env.admissible_actions.begin()));
    ++matched;
  }
  if (matched != by_env.size()) throw Error(ErrorKind::scoring, "turn addresses an environment that is not live");
  return chosen;
}

}  // namespace detail

inline double logprob(const TabularPolicyParams& params, const DecisionContext& ctx,
                      const protocol::AgentTurn& turn) {
  const auto chosen = detail::chosen_options(ctx, turn);
  double lp = 0.0;
  for (std::size_t e = 0; e < ctx.envs.size(); ++e) {
    lp += std::log(option_probabilities(params, ctx.envs[e])[chosen[e]]);
  }
  return lp;
}

/// One step of the update batch: the decision that was taken, its combined
/// advantage and the log-probability recorded at rollout time.
struct GradientRecord {
  DecisionContext ctx;
  protocol::AgentTurn turn;
  double phi = 0.0;
  double logprob_old = 0.0;
  std::string id;
};

/// Mean clipped surrogate loss over the batch.
inline double surrogate_objective(const TabularPolicyParams& params, std::span<const GradientRecord> batch,
                                  double clip) {
  if (batch.empty()) return 0.0;
  double total = 0.0;
  for (const auto& rec : batch) {
    total += advantage::surrogate_loss(logprob(params, rec.ctx, rec.turn), rec.logprob_old, rec.phi, clip);
  }
  return total / static_cast<double>(batch.size());
}

/// Gradient entry: d loss / d logit for one table cell.
struct GradientEntry {
  std::string action;
  double value = 0.0;
};

using Gradient = std::map<LogitKey, GradientEntry>;

/// Analytic gradient of surrogate_objective with respect to every logit it
/// touches: d logp / d z_o = (1[o chosen] - p_o) / temperature.
inline Gradient surrogate_gradient(const TabularPolicyParams& params, std::span<const GradientRecord> batch,
                                   double clip) {
  Gradient grad;
  const double scale = batch.empty() ? 0.0 : 1.0 / static_cast<double>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& rec = batch[b];
    if (!std::isfinite(rec.phi) || !std::isfinite(rec.logprob_old)) {
      throw Error(ErrorKind::numeric, "non-finite advantage or old logprob in record " +
                                          (rec.id.empty() ? std::to_string(b) : rec.id));
    }
    if (rec.phi == 0.0) continue;
    const auto chosen = detail::chosen_options(rec.ctx, rec.turn);
    std::vector<std::vector<double>> probs;
    double lp_new = 0.0;
    for (std::size_t e = 0; e < rec.ctx.envs.size(); ++e) {
      probs.push_back(option_probabilities(params, rec.ctx.envs[e]));
      lp_new += std::log(probs.back()[chosen[e]]);
    }
    const double g = advantage::surrogate_loss_grad(lp_new, rec.logprob_old, rec.phi, clip) * scale;
    if (!std::isfinite(g) || !std::isfinite(lp_new)) {
      throw Error(ErrorKind::numeric, "non-finite gradient in record " + (rec.id.empty() ? std::to_string(b) : rec.id));
    }
    if (g == 0.0) continue;
    for (std::size_t e = 0; e < rec.ctx.envs.size(); ++e) {
      const auto& env = rec.ctx.envs[e];
      const auto state = params.state_for(env);
      const auto& p = probs[e];
      for (std::size_t o = 0; o < p.size(); ++o) {
        const std::string_view option =
            o + 1 < p.size() ? std::string_view(env.admissible_actions[o]) : kSkipOption;
        const double dlp = ((o == chosen[e] ? 1.0 : 0.0) - p[o]) / params.temperature;
        auto& cell = grad[LogitKey{state, fnv1a(option)}];
        if (cell.action.empty()) cell.action = std::string(option);
        cell.value += g * dlp;
      }
    }
  }
  return grad;
}

inline void apply_gradient_inplace(TabularPolicyParams& params, std::span<const GradientRecord> batch,
                                   double learning_rate, double clip) {
  if (!std::isfinite(learning_rate)) throw Error(ErrorKind::numeric, "learning rate is not finite");
  const auto grad = surrogate_gradient(params, batch, clip);
  for (const auto& [key, cell] : grad) {
    if (cell.value == 0.0) continue;
    auto& e = params.logits[key];
    if (e.action.empty()) e.action = cell.action;
    e.logit -= learning_rate * cell.value;
  }
}

/// One gradient-descent step on the mean clipped surrogate.
inline TabularPolicyParams apply_gradient(TabularPolicyParams params, std::span<const GradientRecord> batch,
                                          double learning_rate, double clip) {
  apply_gradient_inplace(params, batch, learning_rate, clip);
  return params;
}

}  // namespace dpepo::policy
