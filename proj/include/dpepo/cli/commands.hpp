#pragma once

// Subcommand implementations behind tools/dpepo.cpp. Each returns a process
// exit status: 0 success, 1 runtime failure, 2 configuration or usage error.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "dpepo/cli/config.hpp"
#include "dpepo/cli/records.hpp"
#include "dpepo/metrics/metrics.hpp"
#include "dpepo/policy/checkpoint.hpp"
#include "dpepo/rollout/agent.hpp"
#include "dpepo/rollout/rollout.hpp"
#include "dpepo/rollout/trainer.hpp"

namespace dpepo::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

inline int exit_code_for(const Error& e) {
  return (e.kind() == ErrorKind::configuration || e.kind() == ErrorKind::usage) ? kExitConfig : kExitFailure;
}

struct RunPaths {
  fs::path dir;
  fs::path config() const { return dir / "config.json"; }
  fs::path checkpoint() const { return dir / "checkpoint.txt"; }
  fs::path log() const { return dir / "trajectories.jsonl"; }
  fs::path stats() const { return dir / "stats.csv"; }
};

inline RunPaths prepare_output_dir(const RunConfig& cfg) {
  RunPaths p{cfg.output_dir};
  std::error_code ec;
  fs::create_directories(p.dir, ec);
  if (ec || !fs::is_directory(p.dir)) {
    throw Error(ErrorKind::configuration, "output_dir: cannot create '" + cfg.output_dir + "'");
  }
  return p;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::usage, "cannot write " + path.string());
  out << text;
}

/// Keeps the lines of `path` accepted by `keep`, dropping everything after
/// the first rejected line.
template <typename Keep>
inline void truncate_lines(const fs::path& path, Keep keep) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return;
  std::string kept;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    if (!keep(line, ++lineno)) break;
    kept += line + "\n";
  }
  in.close();
  write_text(path, kept);
}

inline policy::Checkpoint make_checkpoint(const RunConfig& cfg, const policy::TabularPolicyParams& params,
                                          int iterations_completed) {
  policy::Checkpoint ckpt;
  ckpt.params = params;
  ckpt.meta["iterations_completed"] = std::to_string(iterations_completed);
  ckpt.meta["run_id"] = cfg.run_id;
  ckpt.meta["world"] = cfg.world_fingerprint();
  return ckpt;
}

/// Loads a checkpoint and rejects one trained on a different world.
inline policy::Checkpoint load_matching_checkpoint(const RunConfig& cfg, const fs::path& path) {
  auto ckpt = policy::load_checkpoint(path.string());
  const auto it = ckpt.meta.find("world");
  if (it == ckpt.meta.end() || it->second != cfg.world_fingerprint()) {
    throw Error(ErrorKind::format, "checkpoint " + path.string() + " was trained on world '" +
                                       (it == ckpt.meta.end() ? std::string("?") : it->second) +
                                       "' but the config describes '" + cfg.world_fingerprint() + "'");
  }
  return ckpt;
}

inline std::string stats_csv_header() {
  return "iteration,success_rate,mean_r_traj,mean_r_step,mean_parallel_actions,update_records,degenerate_groups\n";
}

inline std::string stats_csv_row(const rollout::IterationStats& s) {
  std::ostringstream os;
  os << std::setprecision(17) << s.iteration << ',' << s.success_rate << ',' << s.mean_r_traj << ',' << s.mean_r_step
     << ',' << s.mean_parallel_actions << ',' << s.update_records << ',' << s.degenerate_groups << '\n';
  return os.str();
}

/// Appends one record per trajectory of the iteration.
inline void append_records(std::ostream& out, const RunConfig& cfg, const rollout::IterationResult& result) {
  for (std::size_t g = 0; g < result.groups.size(); ++g) {
    const auto& sg = result.groups[g];
    const auto rewards = sg.group.rewards();
    for (std::size_t m = 0; m < sg.group.members.size(); ++m) {
      TrajectoryRecord rec;
      rec.meta = RecordMeta{cfg.run_id, result.stats.iteration, sg.group.task_id, static_cast<int>(g),
                            static_cast<int>(m)};
      rec.trajectory = sg.group.members[m];
      rec.reward = cfg.reward;
      rec.advantage = cfg.advantage;
      rec.group_rewards = rewards;
      rec.phi_traj = sg.advantages[m].phi_traj;
      for (const auto& s : sg.advantages[m].per_step) {
        rec.phi_step.push_back(s.phi_step);
        rec.phi.push_back(s.phi);
      }
      out << record_to_json(rec).dump() << '\n';
    }
  }
}

struct TrainOptions {
  bool resume = false;
  std::optional<int> iterations;  // overrides training.iterations
  bool quiet = false;
};

inline int cmd_train(const RunConfig& cfg, const TrainOptions& opt, std::ostream& out) {
  if (cfg.policy.kind != PolicyKind::tabular) {
    throw Error(ErrorKind::configuration, "policy.kind: training needs the tabular policy");
  }
  const auto paths = prepare_output_dir(cfg);
  const int total = opt.iterations.value_or(cfg.iterations);
  if (total < 0) throw Error(ErrorKind::usage, "--iterations must be >= 0");

  auto params = cfg.initial_params();
  int start = 0;
  if (opt.resume && fs::exists(paths.checkpoint())) {
    auto ckpt = load_matching_checkpoint(cfg, paths.checkpoint());
    params = std::move(ckpt.params);
    start = std::stoi(ckpt.meta.at("iterations_completed"));
    truncate_lines(paths.log(), [&](const std::string& line, int lineno) {
      try {
        return nlohmann::json::parse(line).at("iteration").get<int>() < start;
      } catch (const nlohmann::json::exception&) {
        throw Error(ErrorKind::format, paths.log().string() + ":" + std::to_string(lineno) + ": unreadable record");
      }
    });
    truncate_lines(paths.stats(), [&](const std::string& line, int lineno) {
      return lineno == 1 || std::stoi(line.substr(0, line.find(','))) < start;
    });
    spdlog::info("resuming {} at iteration {}", cfg.run_id, start);
  } else {
    if (opt.resume) spdlog::warn("no checkpoint in {}, starting from scratch", paths.dir.string());
    write_text(paths.log(), "");
    write_text(paths.stats(), stats_csv_header());
  }
  write_text(paths.config(), config_to_json(cfg).dump(2) + "\n");

  const auto tasks = cfg.tasks();
  const auto train_cfg = cfg.train_config();
  std::ofstream log(paths.log(), std::ios::binary | std::ios::app);
  std::ofstream stats(paths.stats(), std::ios::binary | std::ios::app);
  for (int it = start; it < total; ++it) {
    const auto result = rollout::train_iteration(params, tasks, train_cfg, it);
    append_records(log, cfg, result);
    log.flush();
    stats << stats_csv_row(result.stats);
    stats.flush();
    policy::save_checkpoint(paths.checkpoint().string(), make_checkpoint(cfg, params, it + 1));
    if (!opt.quiet) {
      const auto& s = result.stats;
      out << "iter " << std::setw(4) << it << "  success " << std::fixed << std::setprecision(3) << s.success_rate
          << "  r_traj " << s.mean_r_traj << "  r_step " << s.mean_r_step << "  |E'_t| " << s.mean_parallel_actions
          << (s.updated ? "" : "  (no update)") << std::defaultfloat << '\n';
    }
  }
  if (start >= total) policy::save_checkpoint(paths.checkpoint().string(), make_checkpoint(cfg, params, start));
  return kExitOk;
}

inline nlohmann::json stats_json(const metrics::ExplorationStats& s) {
  return {{"diversity", s.diversity},
          {"mean_action_repeats", s.mean_action_repeats},
          {"mean_transition_repeats", s.mean_transition_repeats},
          {"trajectory_length", s.trajectory_length},
          {"mean_parallel_actions", s.mean_parallel_actions},
          {"token_proxy", s.token_proxy}};
}

inline nlohmann::json report_json(const metrics::EvalReport& r, bool greedy) {
  return {{"k_parallel", r.k_parallel},
          {"max_steps", r.max_steps},
          {"env_limit", r.env_limit ? nlohmann::json(*r.env_limit) : nlohmann::json(nullptr)},
          {"mode", greedy ? "greedy" : "sample"},
          {"episodes", r.episodes},
          {"successes", r.successes},
          {"success_rate", r.success_rate},
          {"ci95", {r.ci95.low, r.ci95.high}},
          {"ci_method", "wilson"},
          {"repeat_counts_averaging", "per_step"},
          {"token_proxy_unit", "whitespace tokens of rendered prompts and raw outputs"},
          {"mean_trajectory_length", r.mean_trajectory_length},
          {"exploration", stats_json(r.mean)}};
}

inline std::string series_csv(const metrics::EvalReport& r) {
  std::ostringstream os;
  os << std::setprecision(17)
     << "episode,task_index,seed,success,failure_reason,diversity,mean_action_repeats,mean_transition_repeats,"
        "trajectory_length,mean_parallel_actions,token_proxy\n";
  for (std::size_t e = 0; e < r.series.size(); ++e) {
    const auto& ep = r.series[e];
    os << e << ',' << ep.task_index << ',' << ep.seed << ',' << (ep.success ? 1 : 0) << ','
       << (ep.failure_reason ? to_string(*ep.failure_reason) : std::string_view()) << ',' << ep.stats.diversity << ','
       << ep.stats.mean_action_repeats << ',' << ep.stats.mean_transition_repeats << ','
       << ep.stats.trajectory_length << ',' << ep.stats.mean_parallel_actions << ',' << ep.stats.token_proxy << '\n';
  }
  return os.str();
}

struct EvalOptions {
  std::optional<std::string> checkpoint;  // default: <output_dir>/checkpoint.txt
  bool untrained = false;
  std::vector<int> k_values;              // default: rollout.k_parallel
  std::optional<int> env_limit;
  std::optional<int> episodes;            // per task
  std::optional<bool> greedy;
};

inline int cmd_eval(const RunConfig& cfg, const EvalOptions& opt, std::ostream& out) {
  if (opt.episodes && *opt.episodes < 1) throw Error(ErrorKind::usage, "--episodes must be >= 1");
  const auto paths = prepare_output_dir(cfg);
  auto params = cfg.initial_params();
  if (!opt.untrained) {
    params = load_matching_checkpoint(cfg, opt.checkpoint ? fs::path(*opt.checkpoint) : paths.checkpoint()).params;
  }
  const bool greedy = opt.greedy.value_or(cfg.eval_greedy);
  const rollout::TabularAgent agent(std::make_shared<const policy::TabularPolicyParams>(std::move(params)),
                                    greedy ? policy::DecisionMode::greedy : policy::DecisionMode::sample);
  const auto tasks = cfg.tasks();
  auto ks = opt.k_values;
  if (ks.empty()) ks.push_back(cfg.rollout.k_parallel);

  nlohmann::json reports = nlohmann::json::array();
  for (int k : ks) {
    metrics::EvalConfig ec;
    ec.rollout = cfg.rollout;
    ec.rollout.k_parallel = k;
    if (opt.env_limit) ec.rollout.env_limit = *opt.env_limit;
    ec.episodes_per_task = opt.episodes.value_or(cfg.eval_episodes_per_task);
    ec.seed = cfg.eval_seed;
    const auto rep = metrics::evaluate(agent, tasks, ec);
    auto j = report_json(rep, greedy);
    const auto stem = "eval_k" + std::to_string(k) + (ec.rollout.env_limit ? "_limit" + std::to_string(*ec.rollout.env_limit) : "");
    write_text(paths.dir / (stem + ".json"), j.dump(2) + "\n");
    write_text(paths.dir / (stem + ".csv"), series_csv(rep));
    out << "k=" << k << "  success " << rep.successes << "/" << rep.episodes << " = " << std::fixed
        << std::setprecision(3) << rep.success_rate << "  95% CI [" << rep.ci95.low << ", " << rep.ci95.high
        << "]  diversity " << rep.mean.diversity << std::defaultfloat << '\n';
    reports.push_back(std::move(j));
  }
  out << reports.dump(2) << '\n';
  return kExitOk;
}

struct RolloutOptions {
  std::optional<PolicyKind> policy;  // overrides policy.kind
  std::optional<std::string> checkpoint;
  std::optional<std::string> transcript;  // default: <output_dir>/transcript.json
  std::size_t task_index = 0;
  std::uint64_t seed = 0;
};

inline nlohmann::json transcript_json(const RunConfig& cfg, const Trajectory& traj,
                                      const std::vector<rollout::TranscriptEntry>& entries) {
  using nlohmann::json;
  json steps = json::array();
  for (const auto& e : entries) {
    json prompt = json::array();
    for (const auto& m : e.prompt) prompt.push_back({{"role", m.role}, {"content", m.content}});
    json parsed = nullptr;
    if (e.parsed) {
      parsed = json::array();
      for (const auto& in : e.parsed->intents) parsed.push_back({{"env_id", in.env_id}, {"action", in.action}});
    }
    steps.push_back({{"t", e.t},
                     {"prompt", std::move(prompt)},
                     {"raw_output", e.raw_output},
                     {"parsed_intents", std::move(parsed)},
                     {"warnings", e.warnings},
                     {"error", e.error}});
  }
  TrajectoryRecord rec;
  rec.meta.run_id = cfg.run_id;
  rec.trajectory = traj;
  rec.reward = cfg.reward;
  rec.advantage = cfg.advantage;
  rec.group_rewards = {traj.r_traj, traj.r_traj};
  return {{"schema_version", kRecordSchemaVersion},
          {"env_limit", cfg.rollout.env_limit ? json(*cfg.rollout.env_limit) : json(nullptr)},
          {"steps", std::move(steps)},
          {"trajectory", record_to_json(rec)}};
}

/// Prompts every step would be shown, re-rendered from the transcript's own
/// trajectory. Equal to the stored prompts when the transcript is intact.
inline bool transcript_replays(const nlohmann::json& transcript, std::string* first_difference = nullptr) {
  const auto rec = record_from_json(transcript.at("trajectory"));
  std::optional<int> env_limit;
  if (!transcript.at("env_limit").is_null()) env_limit = transcript.at("env_limit").get<int>();
  Trajectory prefix = rec.trajectory;
  prefix.steps.clear();
  std::size_t s = 0;
  for (const auto& step : transcript.at("steps")) {
    const auto& prompt = step.at("prompt");
    if (!prompt.empty()) {
      const auto system = protocol::render_system_prompt();
      const auto user = protocol::render_step_prompt(prefix, env_limit);
      if (prompt.size() != 2 || prompt[0].at("content") != system || prompt[1].at("content") != user) {
        if (first_difference) *first_difference = "prompt of step " + std::to_string(step.at("t").get<int>());
        return false;
      }
    }
    if (s < rec.trajectory.steps.size()) {
      if (rec.trajectory.steps[s].raw_output != step.at("raw_output").get<std::string>()) {
        if (first_difference) *first_difference = "raw output of step " + std::to_string(step.at("t").get<int>());
        return false;
      }
      prefix.steps.push_back(rec.trajectory.steps[s++]);
    }
  }
  return true;
}

inline int cmd_rollout(const RunConfig& cfg, const RolloutOptions& opt, std::ostream& out) {
  const auto paths = prepare_output_dir(cfg);
  const auto kind = opt.policy.value_or(cfg.policy.kind);
  std::unique_ptr<rollout::Agent> agent;
  if (kind == PolicyKind::external_llm) {
    agent = std::make_unique<rollout::LlmAgent>(cfg.policy.endpoint);
  } else {
    auto params = cfg.initial_params();
    const auto path = opt.checkpoint ? fs::path(*opt.checkpoint) : paths.checkpoint();
    if (opt.checkpoint || fs::exists(path)) params = load_matching_checkpoint(cfg, path).params;
    agent = std::make_unique<rollout::TabularAgent>(std::make_shared<const policy::TabularPolicyParams>(std::move(params)),
                                                    policy::DecisionMode::greedy, true);
  }
  const auto tasks = cfg.tasks();
  if (opt.task_index >= tasks.size()) throw Error(ErrorKind::usage, "--task out of range");

  std::vector<rollout::TranscriptEntry> entries;
  auto traj = rollout::rollout_trajectory(*agent, tasks[opt.task_index], cfg.rollout, opt.seed, &entries);
  rollout::score_steps(traj, cfg.reward);
  const auto transcript = transcript_json(cfg, traj, entries);
  const fs::path tpath = opt.transcript ? fs::path(*opt.transcript) : paths.dir / "transcript.json";
  write_text(tpath, transcript.dump(2) + "\n");

  for (const auto& e : entries) {
    out << "t=" << e.t << "  " << (e.parsed ? std::to_string(e.parsed->intents.size()) + " action(s)" : "no parse");
    if (!e.error.empty()) out << "  error: " << e.error;
    out << '\n';
  }
  out << "result: " << (traj.success ? "success" : std::string(to_string(*traj.failure_reason))) << " after "
      << traj.terminal_step << " step(s); transcript " << tpath.string() << '\n';
  if (traj.failure_reason == FailureReason::aborted) {
    spdlog::error("rollout aborted: {}", traj.abort_message);
    return kExitFailure;
  }
  return kExitOk;
}

inline int cmd_replay(const fs::path& transcript_path, std::ostream& out) {
  std::ifstream in(transcript_path, std::ios::binary);
  if (!in) throw Error(ErrorKind::usage, "cannot read transcript " + transcript_path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::format, std::string("transcript is not JSON: ") + e.what());
  }
  std::string diff;
  if (!transcript_replays(doc, &diff)) {
    out << "replay mismatch at " << diff << '\n';
    return kExitFailure;
  }
  out << "replay identical (" << doc.at("steps").size() << " steps)\n";
  return kExitOk;
}

struct AnalyzeOptions {
  bool continue_on_error = false;
  std::optional<std::string> out_dir;  // default: next to the log
};

struct AnalyzeSummary {
  std::size_t records = 0;
  std::size_t discrepancies = 0;
  std::size_t bad_lines = 0;
  std::vector<std::string> messages;
};

/// Validates every record of a JSONL log and aggregates exploration
/// statistics per iteration.
inline AnalyzeSummary analyze_log(const fs::path& log_path, const AnalyzeOptions& opt, nlohmann::json* report,
                                  std::string* csv) {
  std::ifstream in(log_path, std::ios::binary);
  if (!in) throw Error(ErrorKind::usage, "cannot read log " + log_path.string());
  AnalyzeSummary sum;
  struct Agg {
    std::size_t n = 0;
    double success = 0, diversity = 0, action_repeats = 0, transition_repeats = 0, length = 0, width = 0, r_step = 0;
  };
  std::map<int, Agg> per_iter;
  std::map<std::tuple<std::string, int, int>, std::vector<double>> group_rewards;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (protocol::is_blank(line)) continue;
    const auto where = log_path.string() + ":" + std::to_string(lineno);
    TrajectoryRecord rec;
    try {
      rec = record_from_json(nlohmann::json::parse(line));
    } catch (const std::exception& e) {
      ++sum.bad_lines;
      sum.messages.push_back(where + ": " + e.what());
      if (!opt.continue_on_error) throw Error(ErrorKind::format, sum.messages.back());
      continue;
    }
    ++sum.records;
    const auto id = rec.meta.run_id + " iteration " + std::to_string(rec.meta.iteration) + " group " +
                    std::to_string(rec.meta.group_index) + " member " + std::to_string(rec.meta.member_index);
    auto issues = validate_record(rec);
    const auto key = std::make_tuple(rec.meta.run_id, rec.meta.iteration, rec.meta.group_index);
    const auto [it, fresh] = group_rewards.emplace(key, rec.group_rewards);
    if (!fresh && it->second != rec.group_rewards) issues.push_back("group_rewards disagree with sibling records");
    for (const auto& msg : issues) sum.messages.push_back(where + " (" + id + "): " + msg);
    sum.discrepancies += issues.size();

    const auto& traj = rec.trajectory;
    auto& a = per_iter[rec.meta.iteration];
    ++a.n;
    a.success += traj.success ? 1 : 0;
    const auto st = metrics::exploration_stats(traj, std::nullopt, false);
    a.diversity += st.diversity;
    a.action_repeats += st.mean_action_repeats;
    a.transition_repeats += st.mean_transition_repeats;
    a.length += st.trajectory_length;
    a.width += st.mean_parallel_actions;
    double rs = 0;
    for (const auto& s : traj.steps) rs += s.reward.r_step;
    a.r_step += traj.steps.empty() ? 0.0 : rs / static_cast<double>(traj.steps.size());
  }

  if (report) {
    nlohmann::json iters = nlohmann::json::array();
    for (const auto& [i, a] : per_iter) {
      const double n = static_cast<double>(a.n);
      iters.push_back({{"iteration", i},
                       {"trajectories", a.n},
                       {"success_rate", a.success / n},
                       {"diversity", a.diversity / n},
                       {"mean_action_repeats", a.action_repeats / n},
                       {"mean_transition_repeats", a.transition_repeats / n},
                       {"mean_trajectory_length", a.length / n},
                       {"mean_parallel_actions", a.width / n},
                       {"mean_r_step", a.r_step / n}});
    }
    *report = {{"log", log_path.string()},
               {"records", sum.records},
               {"bad_lines", sum.bad_lines},
               {"discrepancies", sum.discrepancies},
               {"tolerance", kValidationTolerance},
               {"repeat_counts_averaging", "per_step"},
               {"iterations", std::move(iters)}};
  }
  if (csv) {
    std::ostringstream os;
    os << std::setprecision(17)
       << "iteration,trajectories,success_rate,diversity,mean_action_repeats,mean_transition_repeats,"
          "mean_trajectory_length,mean_parallel_actions,mean_r_step\n";
    for (const auto& [i, a] : per_iter) {
      const double n = static_cast<double>(a.n);
      os << i << ',' << a.n << ',' << a.success / n << ',' << a.diversity / n << ',' << a.action_repeats / n << ','
         << a.transition_repeats / n << ',' << a.length / n << ',' << a.width / n << ',' << a.r_step / n << '\n';
    }
    *csv = os.str();
  }
  return sum;
}

inline int cmd_analyze(const fs::path& log_path, const AnalyzeOptions& opt, std::ostream& out) {
  nlohmann::json report;
  std::string csv;
  const auto sum = analyze_log(log_path, opt, &report, &csv);
  const fs::path dir = opt.out_dir ? fs::path(*opt.out_dir) : log_path.parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  write_text(dir / "analysis.json", report.dump(2) + "\n");
  write_text(dir / "analysis.csv", csv);
  if (sum.records == 0 && sum.bad_lines == 0) spdlog::warn("log {} holds no records", log_path.string());
  for (const auto& m : sum.messages) out << m << '\n';
  out << "records " << sum.records << ", discrepancies " << sum.discrepancies << ", unreadable lines "
      << sum.bad_lines << '\n';
  return (sum.discrepancies == 0 && sum.bad_lines == 0) ? kExitOk : kExitFailure;
}

}  // namespace dpepo::cli
