#pragma once

// Run configuration: one JSON document, every key optional on input and
// every key present on output.
//
// Unknown keys and wrong types are configuration errors that name the
// offending key path, e.g. "rollout.k_parallel: expected integer".

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpepo/advantage/advantage.hpp"
#include "dpepo/env/world.hpp"
#include "dpepo/error.hpp"
#include "dpepo/policy/llm_client.hpp"
#include "dpepo/policy/tabular.hpp"
#include "dpepo/reward/reward.hpp"
#include "dpepo/rollout/rollout.hpp"
#include "dpepo/rollout/trainer.hpp"

namespace dpepo::cli {

inline constexpr int kConfigSchemaVersion = 1;

enum class PolicyKind { tabular, external_llm };

struct PolicyConfig {
  PolicyKind kind = PolicyKind::tabular;
  double temperature = policy::kDefaultTemperature;
  double skip_logit_bias = 0.0;
  bool env_keyed = true;
  policy::EndpointConfig endpoint;
};

struct RunConfig {
  std::string run_id = "dpepo";
  env::WorldSpec world;
  bool vary_item_location = true;  // train and evaluate on every item location except the target
  rollout::RolloutConfig rollout;
  reward::RewardConfig reward;
  advantage::AdvantageConfig advantage;
  double learning_rate = rollout::kDefaultLearningRate;
  int update_batch = rollout::kDefaultUpdateBatch;
  PolicyConfig policy;
  int iterations = 125;
  int eval_episodes_per_task = 20;
  bool eval_greedy = true;
  std::uint64_t eval_seed = 1;
  std::string output_dir = "runs/dpepo";

  rollout::TrainConfig train_config() const {
    rollout::TrainConfig t;
    t.rollout = rollout;
    t.reward = reward;
    t.advantage = advantage;
    t.learning_rate = learning_rate;
    t.update_batch = update_batch;
    return t;
  }

  policy::TabularPolicyParams initial_params() const {
    policy::TabularPolicyParams p;
    p.temperature = policy.temperature;
    p.skip_logit_bias = policy.skip_logit_bias;
    p.env_keyed = policy.env_keyed;
    return p;
  }

  /// The task set: one world per item location, or just the configured one.
  std::vector<env::WorldSpec> tasks() const {
    if (!vary_item_location) return {world};
    std::vector<env::WorldSpec> out;
    for (int i = 1; i <= world.container_count; ++i) {
      if (i == world.target_location) continue;
      auto w = world;
      w.item_location = i;
      out.push_back(std::move(w));
    }
    return out;
  }

  /// Identifies the world a checkpoint was trained on.
  std::string world_fingerprint() const {
    std::ostringstream os;
    os << "containers=" << world.container_count << ";target=" << world.target_location
       << ";item=" << (vary_item_location ? std::string("*") : std::to_string(world.item_location))
       << ";seed=" << world.seed << ";item_name=" << world.item_name << ";distractors=";
    for (const auto& d : world.distractor_items) os << d << ',';
    return os.str();
  }

  void validate() const {
    if (!vary_item_location) {
      world.validate();
    } else {
      const auto all = tasks();
      if (all.empty()) throw Error(ErrorKind::configuration, "world.container_count: needs at least 2 containers");
      for (const auto& w : all) w.validate();
    }
    train_config().validate();
    initial_params().validate();
    if (policy.kind == PolicyKind::external_llm) policy.endpoint.validate();
    if (iterations < 0) throw Error(ErrorKind::configuration, "training.iterations: must be >= 0");
    if (eval_episodes_per_task < 1) throw Error(ErrorKind::configuration, "eval.episodes_per_task: must be >= 1");
    if (output_dir.empty()) throw Error(ErrorKind::configuration, "output_dir: must be non-empty");
    if (run_id.empty()) throw Error(ErrorKind::configuration, "run_id: must be non-empty");
  }
};

namespace detail {

using nlohmann::json;

/// Reads typed fields from one JSON object, rejecting keys it never asked for.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw Error(ErrorKind::configuration, label() + "expected an object");
  }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw Error(ErrorKind::configuration, key(it.key()) + ": unknown key");
    }
  }

  template <typename T>
  void get(const std::string& name, T& out) {
    seen_.insert(name);
    const auto it = obj_.find(name);
    if (it == obj_.end()) return;
    out = convert<T>(*it, key(name));
  }

  template <typename T>
  void get_optional(const std::string& name, std::optional<T>& out) {
    seen_.insert(name);
    const auto it = obj_.find(name);
    if (it == obj_.end()) return;
    if (it->is_null()) {
      out.reset();
    } else {
      out = convert<T>(*it, key(name));
    }
  }

  Section child(const std::string& name) {
    seen_.insert(name);
    const auto it = obj_.find(name);
    return Section(it == obj_.end() ? empty() : *it, key(name));
  }

 private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }

  std::string key(const std::string& name) const { return path_.empty() ? name : path_ + "." + name; }
  std::string label() const { return path_.empty() ? "config: " : path_ + ": "; }

  template <typename T>
  static T convert(const json& v, const std::string& where) {
    auto fail = [&](const char* what) -> T {
      throw Error(ErrorKind::configuration, where + ": expected " + what);
    };
    if constexpr (std::is_same_v<T, bool>) {
      return v.is_boolean() ? v.get<bool>() : fail("boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      return v.is_string() ? v.get<std::string>() : fail("string");
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      return v.is_number_unsigned() ? v.get<std::uint64_t>() : fail("non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
      return v.is_number_integer() ? v.get<T>() : fail("integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      return v.is_number() ? v.get<T>() : fail("number");
    } else {
      if (!v.is_array()) return fail("array of strings");
      T out;
      for (const auto& e : v) {
        if (!e.is_string()) return fail("array of strings");
        out.push_back(e.get<std::string>());
      }
      return out;
    }
  }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& doc) {
  RunConfig c;
  {
    detail::Section root(doc, "");
    int version = kConfigSchemaVersion;
    root.get("schema_version", version);
    if (version != kConfigSchemaVersion) {
      throw Error(ErrorKind::configuration, "schema_version: unsupported value " + std::to_string(version));
    }
    root.get("run_id", c.run_id);
    root.get("output_dir", c.output_dir);
    {
      auto w = root.child("world");
      w.get("container_count", c.world.container_count);
      w.get("item_location", c.world.item_location);
      w.get("target_location", c.world.target_location);
      w.get("seed", c.world.seed);
      w.get("distractor_items", c.world.distractor_items);
      w.get("item_name", c.world.item_name);
      w.get("vary_item_location", c.vary_item_location);
    }
    {
      auto r = root.child("rollout");
      r.get("k_parallel", c.rollout.k_parallel);
      r.get("max_steps", c.rollout.max_steps);
      r.get("group_size", c.rollout.group_size);
      r.get("groups_per_iteration", c.rollout.groups_per_iteration);
      r.get_optional("env_limit", c.rollout.env_limit);
      std::string mode = c.rollout.env_limit_mode == rollout::EnvLimitMode::cumulative ? "cumulative" : "per_turn";
      r.get("env_limit_mode", mode);
      if (mode == "cumulative") {
        c.rollout.env_limit_mode = rollout::EnvLimitMode::cumulative;
      } else if (mode == "per_turn") {
        c.rollout.env_limit_mode = rollout::EnvLimitMode::per_turn;
      } else {
        throw Error(ErrorKind::configuration, "rollout.env_limit_mode: expected \"cumulative\" or \"per_turn\"");
      }
      r.get("seed", c.rollout.seed);
      r.get("workers", c.rollout.workers);
    }
    {
      auto r = root.child("reward");
      r.get("alpha", c.reward.alpha);
      r.get("omega", c.reward.omega);
      r.get("gamma", c.reward.gamma);
      r.get("beta", c.reward.beta);
      r.get("invalid_penalty", c.reward.invalid_penalty);
    }
    {
      auto a = root.child("advantage");
      a.get("eps", c.advantage.eps);
      a.get("clip", c.advantage.clip);
      a.get("learning_rate", c.learning_rate);
      a.get("update_batch", c.update_batch);
    }
    {
      auto a = root.child("ablation");
      a.get("disable_DAR", c.reward.disable_action_reward);
      a.get("disable_DTR", c.reward.disable_transition_reward);
      a.get("average_width_action_term", c.reward.average_width_action_term);
    }
    {
      auto p = root.child("policy");
      std::string kind = c.policy.kind == PolicyKind::tabular ? "tabular" : "external-llm";
      p.get("kind", kind);
      if (kind == "tabular") {
        c.policy.kind = PolicyKind::tabular;
      } else if (kind == "external-llm") {
        c.policy.kind = PolicyKind::external_llm;
      } else {
        throw Error(ErrorKind::configuration, "policy.kind: expected \"tabular\" or \"external-llm\"");
      }
      p.get("temperature", c.policy.temperature);
      p.get("skip_logit_bias", c.policy.skip_logit_bias);
      p.get("env_keyed", c.policy.env_keyed);
      auto e = p.child("endpoint");
      e.get("base_url", c.policy.endpoint.base_url);
      e.get("model", c.policy.endpoint.model);
      e.get("api_key_env", c.policy.endpoint.api_key_env);
      e.get("timeout_seconds", c.policy.endpoint.timeout_seconds);
      e.get("max_retries", c.policy.endpoint.max_retries);
      e.get("backoff_initial_ms", c.policy.endpoint.backoff_initial_ms);
      e.get("backoff_max_ms", c.policy.endpoint.backoff_max_ms);
      e.get("temperature", c.policy.endpoint.temperature);
      e.get("max_tokens", c.policy.endpoint.max_tokens);
    }
    {
      auto t = root.child("training");
      t.get("iterations", c.iterations);
    }
    {
      auto e = root.child("eval");
      e.get("episodes_per_task", c.eval_episodes_per_task);
      e.get("greedy", c.eval_greedy);
      e.get("seed", c.eval_seed);
    }
  }
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  using nlohmann::json;
  json doc;
  doc["schema_version"] = kConfigSchemaVersion;
  doc["run_id"] = c.run_id;
  doc["output_dir"] = c.output_dir;
  doc["world"] = {{"container_count", c.world.container_count},
                  {"item_location", c.world.item_location},
                  {"target_location", c.world.target_location},
                  {"seed", c.world.seed},
                  {"distractor_items", c.world.distractor_items},
                  {"item_name", c.world.item_name},
                  {"vary_item_location", c.vary_item_location}};
  doc["rollout"] = {{"k_parallel", c.rollout.k_parallel},
                    {"max_steps", c.rollout.max_steps},
                    {"group_size", c.rollout.group_size},
                    {"groups_per_iteration", c.rollout.groups_per_iteration},
                    {"env_limit", c.rollout.env_limit ? json(*c.rollout.env_limit) : json(nullptr)},
                    {"env_limit_mode",
                     c.rollout.env_limit_mode == rollout::EnvLimitMode::cumulative ? "cumulative" : "per_turn"},
                    {"seed", c.rollout.seed},
                    {"workers", c.rollout.workers}};
  doc["reward"] = {{"alpha", c.reward.alpha},
                   {"omega", c.reward.omega},
                   {"gamma", c.reward.gamma},
                   {"beta", c.reward.beta},
                   {"invalid_penalty", c.reward.invalid_penalty}};
  doc["advantage"] = {{"eps", c.advantage.eps},
                      {"clip", c.advantage.clip},
                      {"learning_rate", c.learning_rate},
                      {"update_batch", c.update_batch}};
  doc["ablation"] = {{"disable_DAR", c.reward.disable_action_reward},
                     {"disable_DTR", c.reward.disable_transition_reward},
                     {"average_width_action_term", c.reward.average_width_action_term}};
  const auto& e = c.policy.endpoint;
  doc["policy"] = {{"kind", c.policy.kind == PolicyKind::tabular ? "tabular" : "external-llm"},
                   {"temperature", c.policy.temperature},
                   {"skip_logit_bias", c.policy.skip_logit_bias},
                   {"env_keyed", c.policy.env_keyed},
                   {"endpoint",
                    {{"base_url", e.base_url},
                     {"model", e.model},
                     {"api_key_env", e.api_key_env},
                     {"timeout_seconds", e.timeout_seconds},
                     {"max_retries", e.max_retries},
                     {"backoff_initial_ms", e.backoff_initial_ms},
                     {"backoff_max_ms", e.backoff_max_ms},
                     {"temperature", e.temperature},
                     {"max_tokens", e.max_tokens}}}};
  doc["training"] = {{"iterations", c.iterations}};
  doc["eval"] = {{"episodes_per_task", c.eval_episodes_per_task}, {"greedy", c.eval_greedy}, {"seed", c.eval_seed}};
  return doc;
}

inline RunConfig parse_config(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::configuration, std::string("config is not valid JSON: ") + e.what(), e.byte);
  }
  return config_from_json(doc);
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::configuration, "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace dpepo::cli
