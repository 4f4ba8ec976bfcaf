#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dpepo/cli/commands.hpp"
#include "support/fixtures.hpp"

using namespace dpepo;
using namespace dpepo::cli;
namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("dpepo_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  RunConfig tiny() const {
    RunConfig cfg;
    cfg.run_id = "tiny";
    cfg.world.container_count = 4;
    cfg.world.target_location = 4;
    cfg.rollout.k_parallel = 2;
    cfg.rollout.max_steps = 8;
    cfg.rollout.group_size = 4;
    cfg.rollout.groups_per_iteration = 3;
    cfg.rollout.workers = 1;
    cfg.iterations = 2;
    cfg.eval_episodes_per_task = 2;
    cfg.output_dir = (dir_ / "run").string();
    return cfg;
  }

  fs::path write_config(const nlohmann::json& doc, const std::string& name = "config.json") const {
    const auto path = dir_ / name;
    std::ofstream(path) << doc.dump(2);
    return path;
  }

  // Runs the command line tool and returns its exit status.
  int run(const std::string& args) const {
    const auto cmd = std::string(DPEPO_CLI_PATH) + " " + args + " >" + (dir_ / "stdout.txt").string() + " 2>" +
                     (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string stderr_text() const { return test_support::read_file((dir_ / "stderr.txt").string()); }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, ConfigRoundTrip) {
  auto cfg = tiny();
  cfg.rollout.env_limit = 2;
  cfg.rollout.env_limit_mode = rollout::EnvLimitMode::per_turn;
  cfg.reward.disable_action_reward = true;
  cfg.world.distractor_items = {"mug", "pen"};
  const auto doc = config_to_json(cfg);
  EXPECT_EQ(config_to_json(config_from_json(doc)), doc);
  EXPECT_EQ(config_to_json(config_from_json(nlohmann::json::object())), config_to_json(RunConfig{}));
}

TEST_F(CliTest, UnknownKeyIsConfigurationError) {
  auto doc = config_to_json(tiny());
  doc["rollout"]["k_paralel"] = 3;
  try {
    config_from_json(doc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::configuration);
    EXPECT_NE(std::string(e.what()).find("rollout.k_paralel"), std::string::npos);
  }
  EXPECT_EQ(run("train " + write_config(doc).string()), kExitConfig);
  EXPECT_NE(stderr_text().find("k_paralel"), std::string::npos);
}

TEST_F(CliTest, InvalidValuesAreRejected) {
  auto doc = config_to_json(tiny());
  doc["rollout"]["group_size"] = 1;
  EXPECT_THROW(config_from_json(doc), Error);
  doc = config_to_json(tiny());
  doc["reward"]["omega"] = "high";
  EXPECT_THROW(config_from_json(doc), Error);
  EXPECT_THROW(parse_config("{ not json"), Error);
  EXPECT_EQ(run("train " + (dir_ / "missing.json").string()), kExitConfig);
}

TEST_F(CliTest, ZeroEpisodesIsUsageError) {
  const auto path = write_config(config_to_json(tiny()));
  EXPECT_EQ(run("eval " + path.string() + " --untrained --episodes 0"), kExitConfig);
  EXPECT_EQ(run("bogus-command"), kExitConfig);
}

TEST_F(CliTest, TrainThenEvalThroughBinary) {
  const auto path = write_config(config_to_json(tiny()));
  ASSERT_EQ(run("train " + path.string() + " --quiet"), kExitOk) << stderr_text();
  const auto run_dir = dir_ / "run";
  EXPECT_TRUE(fs::exists(run_dir / "checkpoint.txt"));
  EXPECT_TRUE(fs::exists(run_dir / "stats.csv"));
  ASSERT_EQ(run("eval " + path.string() + " --k 1,2"), kExitOk) << stderr_text();
  EXPECT_TRUE(fs::exists(run_dir / "eval_k1.json"));
  EXPECT_TRUE(fs::exists(run_dir / "eval_k2.json"));
  ASSERT_EQ(run("analyze " + (run_dir / "trajectories.jsonl").string()), kExitOk) << stderr_text();
  const auto report = nlohmann::json::parse(test_support::read_file((run_dir / "analysis.json").string()));
  EXPECT_EQ(report["records"], 2 * 3 * 4);
  EXPECT_EQ(report["discrepancies"], 0);
}

TEST_F(CliTest, TamperedRecordIsReported) {
  const auto cfg = tiny();
  std::ostringstream sink;
  ASSERT_EQ(cmd_train(cfg, {false, std::nullopt, true}, sink), kExitOk);
  const auto log = fs::path(cfg.output_dir) / "trajectories.jsonl";
  std::istringstream lines(test_support::read_file(log.string()));
  std::string first, rest, line;
  std::getline(lines, first);
  while (std::getline(lines, line)) rest += line + "\n";
  auto rec = nlohmann::json::parse(first);
  ASSERT_FALSE(rec["steps"].empty());
  rec["steps"][0]["r_step"] = rec["steps"][0]["r_step"].get<double>() + 1e-6;
  const auto tampered = dir_ / "tampered.jsonl";
  std::ofstream(tampered) << rec.dump() << "\n" << rest;

  const auto sum = analyze_log(tampered, {}, nullptr, nullptr);
  EXPECT_EQ(sum.records, 2u * 3 * 4);
  EXPECT_GE(sum.discrepancies, 1u);
  ASSERT_FALSE(sum.messages.empty());
  EXPECT_NE(sum.messages.front().find(":1 "), std::string::npos) << sum.messages.front();
  EXPECT_EQ(run("analyze " + tampered.string()), kExitFailure);
}

TEST_F(CliTest, UnreadableLineStopsUnlessContinuing) {
  const auto log = dir_ / "broken.jsonl";
  std::ofstream(log) << "{\"schema_version\": 1\n";
  EXPECT_THROW(analyze_log(log, {}, nullptr, nullptr), Error);
  AnalyzeOptions keep_going;
  keep_going.continue_on_error = true;
  EXPECT_EQ(analyze_log(log, keep_going, nullptr, nullptr).bad_lines, 1u);
}

TEST_F(CliTest, EmptyLogWarnsAndSucceeds) {
  const auto log = dir_ / "empty.jsonl";
  std::ofstream(log) << "";
  EXPECT_EQ(run("analyze " + log.string()), kExitOk);
  EXPECT_NE(stderr_text().find("no records"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "analysis.json"));
}

TEST_F(CliTest, CheckpointFromOtherWorldIsRejected) {
  auto cfg = tiny();
  std::ostringstream sink;
  ASSERT_EQ(cmd_train(cfg, {false, 1, true}, sink), kExitOk);
  cfg.world.container_count = 5;
  cfg.world.target_location = 5;
  try {
    cmd_eval(cfg, {}, sink);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::format);
    EXPECT_NE(std::string(e.what()).find("containers=4"), std::string::npos);
  }
  EXPECT_EQ(run("eval " + write_config(config_to_json(cfg)).string()), kExitFailure);
}

TEST_F(CliTest, RolloutTranscriptReplays) {
  auto cfg = tiny();
  std::ostringstream sink;
  RolloutOptions opt;
  opt.transcript = (dir_ / "t.json").string();
  opt.seed = 4;
  ASSERT_EQ(cmd_rollout(cfg, opt, sink), kExitOk);
  EXPECT_EQ(cmd_replay(dir_ / "t.json", sink), kExitOk);
  EXPECT_EQ(run("rollout --replay " + (dir_ / "t.json").string()), kExitOk);

  auto doc = nlohmann::json::parse(test_support::read_file((dir_ / "t.json").string()));
  std::string diff;
  ASSERT_TRUE(transcript_replays(doc, &diff)) << diff;
  doc["steps"][0]["prompt"][1]["content"] = "edited";
  EXPECT_FALSE(transcript_replays(doc, &diff));
}
