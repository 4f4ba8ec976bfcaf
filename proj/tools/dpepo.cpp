// dpepo: train, evaluate, inspect and analyze parallel-exploration agents.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dpepo/cli/commands.hpp"

namespace {

using namespace dpepo;

template <typename Fn>
int guarded(Fn fn) {
  try {
    return fn();
  } catch (const Error& e) {
    std::cerr << "dpepo: " << e.what() << '\n';
    return cli::exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "dpepo: " << e.what() << '\n';
    return cli::kExitFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diverse parallel exploration policy optimization on a text world"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

  std::string config_path;
  auto add_config = [&](CLI::App* sub) { sub->add_option("config", config_path, "run configuration (JSON)")->required(); };

  auto* train = app.add_subcommand("train", "train the tabular policy");
  add_config(train);
  cli::TrainOptions train_opt;
  train->add_flag("--resume", train_opt.resume, "continue from the checkpoint in output_dir");
  std::optional<int> train_iters;
  train->add_option("--iterations", train_iters, "stop after this many iterations in total");
  train->add_flag("--quiet", train_opt.quiet, "no per-iteration lines");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_config(eval);
  cli::EvalOptions eval_opt;
  std::optional<std::string> eval_ckpt;
  std::optional<int> eval_limit;
  std::optional<int> eval_episodes;
  std::string eval_mode;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file (default: <output_dir>/checkpoint.txt)");
  eval->add_flag("--untrained", eval_opt.untrained, "evaluate the initial, untrained policy");
  eval->add_option("--k", eval_opt.k_values, "parallel environment counts to sweep")->delimiter(',');
  eval->add_option("--env-limit", eval_limit, "maximum number of environments a trajectory may touch");
  eval->add_option("--episodes", eval_episodes, "episodes per task");
  eval->add_option("--mode", eval_mode, "greedy or sample")->check(CLI::IsMember({"greedy", "sample"}));

  auto* roll = app.add_subcommand("rollout", "drive one trajectory and write its transcript");
  add_config(roll);
  cli::RolloutOptions roll_opt;
  std::string roll_policy;
  std::optional<std::string> roll_ckpt;
  std::optional<std::string> roll_transcript;
  std::optional<std::string> replay_path;
  roll->add_option("--policy", roll_policy, "tabular or external-llm")
      ->check(CLI::IsMember({"tabular", "external-llm"}));
  roll->add_option("--checkpoint", roll_ckpt, "tabular checkpoint");
  roll->add_option("--transcript", roll_transcript, "where to write the transcript");
  roll->add_option("--task", roll_opt.task_index, "task index");
  roll->add_option("--seed", roll_opt.seed, "rollout seed");
  roll->add_option("--replay", replay_path, "check that a transcript re-renders identically and exit");

  auto* analyze = app.add_subcommand("analyze", "re-derive and check every value in a trajectory log");
  std::string log_path;
  cli::AnalyzeOptions analyze_opt;
  std::optional<std::string> analyze_out;
  analyze->add_option("log", log_path, "trajectories.jsonl")->required();
  analyze->add_flag("--continue-on-error", analyze_opt.continue_on_error, "keep going past unreadable lines");
  analyze->add_option("--out", analyze_out, "directory for analysis.json and analysis.csv");

  // The replay mode needs no config.
  roll->get_option("config")->required(false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kExitConfig;
  }
  spdlog::set_default_logger(spdlog::stderr_color_mt("dpepo"));
  spdlog::set_level(spdlog::level::from_str(log_level));
  spdlog::set_pattern("[%l] %v");

  if (*analyze) {
    analyze_opt.out_dir = analyze_out;
    return guarded([&] { return cli::cmd_analyze(log_path, analyze_opt, std::cout); });
  }
  if (*roll && replay_path) return guarded([&] { return cli::cmd_replay(*replay_path, std::cout); });
  if (config_path.empty()) {
    std::cerr << "dpepo: a config file is required\n";
    return cli::kExitConfig;
  }
  return guarded([&] {
    const auto cfg = cli::load_config(config_path);
    if (*train) {
      train_opt.iterations = train_iters;
      return cli::cmd_train(cfg, train_opt, std::cout);
    }
    if (*eval) {
      eval_opt.checkpoint = eval_ckpt;
      eval_opt.env_limit = eval_limit;
      eval_opt.episodes = eval_episodes;
      if (!eval_mode.empty()) eval_opt.greedy = eval_mode == "greedy";
      return cli::cmd_eval(cfg, eval_opt, std::cout);
    }
    if (!roll_policy.empty()) {
      roll_opt.policy = roll_policy == "tabular" ? cli::PolicyKind::tabular : cli::PolicyKind::external_llm;
    }
    roll_opt.checkpoint = roll_ckpt;
    roll_opt.transcript = roll_transcript;
    return cli::cmd_rollout(cfg, roll_opt, std::cout);
  });
}
