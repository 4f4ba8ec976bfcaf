#pragma once

#include "dpepo/error.hpp"
#include "dpepo/hash.hpp"
#include "dpepo/intent.hpp"
#include "dpepo/trajectory.hpp"
#include "dpepo/env/world.hpp"
#include "dpepo/env/parallel.hpp"
#include "dpepo/protocol/agent_turn.hpp"
#include "dpepo/protocol/prompts.hpp"
#include "dpepo/reward/reward.hpp"
#include "dpepo/advantage/advantage.hpp"
#include "dpepo/policy/tabular.hpp"
#include "dpepo/policy/checkpoint.hpp"
#include "dpepo/policy/llm_client.hpp"
#include "dpepo/rollout/agent.hpp"
#include "dpepo/rollout/rollout.hpp"
#include "dpepo/rollout/trainer.hpp"
#include "dpepo/metrics/metrics.hpp"
#include "dpepo/cli/config.hpp"
#include "dpepo/cli/records.hpp"
#include "dpepo/cli/commands.hpp"
