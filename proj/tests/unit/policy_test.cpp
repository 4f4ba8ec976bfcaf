#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>

#include "dpepo/policy/checkpoint.hpp"
#include "dpepo/policy/tabular.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace dpepo;
using namespace dpepo::policy;
using test_support::random_context;
using test_support::random_params;

TEST(Options, ProbabilitiesNormalize) {
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto ctx = random_context(rng, 1 + static_cast<int>(rng() % 4), 8);
    auto params = random_params(rng, ctx, 4.0);
    params.temperature = std::exp(std::uniform_real_distribution<double>(-4, 2)(rng));
    for (const auto& env : ctx.envs) {
      const auto p = option_probabilities(params, env);
      ASSERT_EQ(p.size(), env.admissible_actions.size() + 1);
      EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
      for (double v : p) EXPECT_GE(v, 0.0);
    }
  }
}

TEST(Options, UniformLogitsGiveUniformChoice) {
  DecisionContext ctx;
  ctx.envs.push_back({1, 7, {"a", "b", "c", "d"}});
  const TabularPolicyParams params;
  for (const auto& a : ctx.envs[0].admissible_actions) {
    EXPECT_NEAR(logprob(params, ctx, protocol::AgentTurn{"", {{1, a}}}), std::log(0.2), 1e-15);
  }
}

TEST(Options, EmptyAdmissibleSetIsContractViolation) {
  DecisionContext ctx;
  ctx.envs.push_back({1, 7, {}});
  try {
    decide(TabularPolicyParams{}, ctx, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::contract);
  }
  EXPECT_THROW(decide(TabularPolicyParams{}, DecisionContext{}, 1), Error);
}

TEST(Decide, LowTemperatureIsArgmax) {
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 200; ++trial) {
    const auto ctx = random_context(rng, 3);
    auto params = random_params(rng, ctx, 2.0);
    params.temperature = 1e-4;
    // Distinct logits everywhere so the argmax is unique.
    for (const auto& env : ctx.envs) {
      const auto state = params.state_for(env);
      for (const auto& a : env.admissible_actions) params.add(state, a, std::uniform_real_distribution<double>(0, 1)(rng));
      params.add(state, kSkipOption, std::uniform_real_distribution<double>(0, 1)(rng));
    }
    const auto greedy = decide(params, ctx, 0, DecisionMode::greedy);
    for (int s = 0; s < 5; ++s) EXPECT_EQ(decide(params, ctx, rng()).turn, greedy.turn);
  }
}

TEST(Decide, IdenticalFreshEnvsShareDistribution) {
  DecisionContext ctx;
  ctx.envs.push_back({1, 99, {"look", "inventory", "open container 1"}});
  ctx.envs.push_back({2, 99, {"look", "inventory", "open container 1"}});
  TabularPolicyParams params;
  params.env_keyed = false;
  params.add(99, "look", 0.7);
  EXPECT_EQ(option_probabilities(params, ctx.envs[0]), option_probabilities(params, ctx.envs[1]));
}

TEST(Decide, DeterministicInSeed) {
  std::mt19937_64 rng(57);
  for (int trial = 0; trial < 200; ++trial) {
    const auto ctx = random_context(rng, 4);
    const auto params = random_params(rng, ctx);
    const auto seed = rng();
    const auto a = decide(params, ctx, seed);
    const auto b = decide(params, ctx, seed);
    EXPECT_EQ(a.turn, b.turn);
    EXPECT_EQ(a.logprob_old, b.logprob_old);
  }
}

TEST(Decide, LogprobReproducesSampledScore) {
  std::mt19937_64 rng(59);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto ctx = random_context(rng, 1 + static_cast<int>(rng() % 4));
    auto params = random_params(rng, ctx);
    // Strongly negative SKIP bias makes forced inclusion rare; positive makes it common.
    params.skip_logit_bias = std::uniform_real_distribution<double>(-3, 6)(rng);
    const auto out = decide(params, ctx, rng(), trial % 5 == 0 ? DecisionMode::greedy : DecisionMode::sample);
    ASSERT_FALSE(out.turn.intents.empty());
    EXPECT_LE(out.logprob_old, 0.0);
    worst = std::max(worst, std::abs(out.logprob_old - logprob(params, ctx, out.turn)));
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Decide, SkipRealisesEverySubsetSize) {
  std::mt19937_64 rng(61);
  const int k = 4;
  std::set<std::size_t> sizes;
  for (int trial = 0; trial < 2000; ++trial) {
    const auto ctx = random_context(rng, k);
    const auto params = random_params(rng, ctx, 2.0);
    const auto out = decide(params, ctx, rng());
    sizes.insert(out.turn.intents.size());
    EXPECT_GE(out.turn.intents.size(), 1u);
    EXPECT_LE(out.turn.intents.size(), static_cast<std::size_t>(k));
  }
  EXPECT_EQ(sizes, (std::set<std::size_t>{1, 2, 3, 4}));
}

TEST(Decide, AllSkipForcesMostConfidentEnv) {
  DecisionContext ctx;
  ctx.envs.push_back({1, 1, {"a", "b"}});
  ctx.envs.push_back({2, 2, {"c", "d"}});
  TabularPolicyParams params;
  params.env_keyed = false;
  params.skip_logit_bias = 50.0;
  params.add(2, "d", 3.0);
  for (int s = 0; s < 50; ++s) {
    const auto out = decide(params, ctx, static_cast<std::uint64_t>(s));
    ASSERT_EQ(out.turn.intents.size(), 1u);
    EXPECT_EQ(out.turn.intents[0].env_id, 2);
  }
  EXPECT_EQ(decide(params, ctx, 0, DecisionMode::greedy).turn.intents[0], (Intent{2, "d"}));
}

TEST(Logprob, RaisingChosenLogitRaisesScore) {
  std::mt19937_64 rng(67);
  for (int trial = 0; trial < 300; ++trial) {
    const auto ctx = random_context(rng, 3);
    auto params = random_params(rng, ctx);
    // A shared row would couple sibling environments.
    params.env_keyed = true;
    const auto out = decide(params, ctx, rng());
    const auto& in = out.turn.intents.front();
    const auto& env = ctx.envs[static_cast<std::size_t>(in.env_id - 1)];
    const double before = logprob(params, ctx, out.turn);
    params.add(params.state_for(env), in.action, 0.5);
    EXPECT_GT(logprob(params, ctx, out.turn), before);
  }
}

TEST(Logprob, InadmissibleOrUnknownIsScoringError) {
  DecisionContext ctx;
  ctx.envs.push_back({1, 1, {"a", "b"}});
  const TabularPolicyParams params;
  auto kind = [&](const protocol::AgentTurn& turn) {
    try {
      logprob(params, ctx, turn);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::contract;
  };
  EXPECT_EQ(kind({"", {{1, "zzz"}}}), ErrorKind::scoring);
  EXPECT_EQ(kind({"", {{3, "a"}}}), ErrorKind::scoring);
  EXPECT_EQ(kind({"", {}}), ErrorKind::scoring);
}

TEST(Gradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 50; ++trial) {
    const auto gc = test_support::random_gradient_case(rng, 0.2);
    EXPECT_LT(test_support::max_gradient_rel_error(gc.params, gc.batch, 0.2), 1e-5) << "case " << trial;
  }
}

TEST(Gradient, ZeroAdvantageLeavesParamsUnchanged) {
  std::mt19937_64 rng(73);
  auto gc = test_support::random_gradient_case(rng, 0.2);
  for (auto& r : gc.batch) r.phi = 0.0;
  const auto after = apply_gradient(gc.params, gc.batch, 1.0, 0.2);
  EXPECT_EQ(checkpoint_to_string({after, {}}), checkpoint_to_string({gc.params, {}}));
}

TEST(Gradient, PositiveAdvantageRaisesChosenLogits) {
  DecisionContext ctx;
  ctx.envs.push_back({1, 5, {"a", "b", "c"}});
  ctx.envs.push_back({2, 5, {"a", "b", "c"}});
  TabularPolicyParams params;
  GradientRecord rec;
  rec.ctx = ctx;
  rec.turn = {"", {{1, "b"}}};
  rec.phi = 1.0;
  rec.logprob_old = logprob(params, ctx, rec.turn);
  const auto after = apply_gradient(params, std::vector<GradientRecord>{rec}, 0.1, 0.2);
  EXPECT_GT(after.logit(params.state_for(ctx.envs[0]), "b"), 0.0);
  EXPECT_LT(after.logit(params.state_for(ctx.envs[0]), "a"), 0.0);
  EXPECT_GT(after.logit(params.state_for(ctx.envs[1]), kSkipOption), 0.0);
  EXPECT_GT(logprob(after, ctx, rec.turn), rec.logprob_old);
}

TEST(Gradient, NonFiniteNamesRecord) {
  std::mt19937_64 rng(79);
  auto gc = test_support::random_gradient_case(rng, 0.2);
  gc.batch.back().phi = std::nan("");
  gc.batch.back().id = "iter 3 member 5";
  try {
    apply_gradient(gc.params, gc.batch, 1.0, 0.2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
    EXPECT_NE(std::string(e.what()).find("iter 3 member 5"), std::string::npos);
  }
}

TEST(Checkpoint, RoundTripIsExact) {
  std::mt19937_64 rng(83);
  for (int trial = 0; trial < 50; ++trial) {
    const auto ctx = random_context(rng, 4);
    Checkpoint ckpt{random_params(rng, ctx, 3.0), {{"run_id", "r \"quoted\"\n"}, {"iterations_completed", "7"}}};
    ckpt.params.add(rng(), "odd action with \"quotes\" and \\ slashes", 1.0 / 3.0);
    const auto text = checkpoint_to_string(ckpt);
    const auto back = checkpoint_from_string(text);
    EXPECT_EQ(back.meta, ckpt.meta);
    EXPECT_EQ(back.params.temperature, ckpt.params.temperature);
    EXPECT_EQ(back.params.skip_logit_bias, ckpt.params.skip_logit_bias);
    EXPECT_EQ(back.params.env_keyed, ckpt.params.env_keyed);
    ASSERT_EQ(back.params.logits.size(), ckpt.params.logits.size());
    for (const auto& [key, entry] : ckpt.params.logits) {
      const auto it = back.params.logits.find(key);
      ASSERT_NE(it, back.params.logits.end());
      EXPECT_EQ(it->second.logit, entry.logit);
      EXPECT_EQ(it->second.action, entry.action);
    }
    EXPECT_EQ(checkpoint_to_string(back), text);
  }
}

TEST(Checkpoint, MalformedInputIsFormatErrorWithLine) {
  TabularPolicyParams p;
  p.add(1, "look", 0.5);
  auto text = checkpoint_to_string({p, {}});
  const auto pos = text.find("0.5");
  text.replace(pos, 3, "0.5x");
  try {
    checkpoint_from_string(text);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::format);
    EXPECT_NE(std::string(e.what()).find("line 6"), std::string::npos) << e.what();
  }
  EXPECT_THROW(checkpoint_from_string("something else\n"), Error);
  EXPECT_THROW(checkpoint_from_string("dpepo-tabular-policy 2\n"), Error);
  EXPECT_THROW(checkpoint_from_string(checkpoint_to_string({p, {}}).substr(0, 60)), Error);
}

TEST(Checkpoint, SaveAndLoadFile) {
  const auto dir = std::filesystem::temp_directory_path() / "dpepo_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "c.txt").string();
  TabularPolicyParams p;
  p.add(42, "open container 3", -1.25);
  save_checkpoint(path, {p, {{"k", "v"}}});
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.params.logit(42, "open container 3"), -1.25);
  EXPECT_FALSE(std::filesystem::exists(path + ".tmp"));
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_checkpoint(path), Error);
}
