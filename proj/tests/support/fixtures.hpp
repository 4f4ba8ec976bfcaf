#pragma once

// Helpers shared by the unit and acceptance binaries.

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpepo/env/parallel.hpp"
#include "dpepo/env/world.hpp"
#include "dpepo/trajectory.hpp"

namespace dpepo::test_support {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// The three-shelf assistant reply from the reference document, with the
/// typesetting lines removed and everything else kept byte for byte.
inline std::string reference_assistant_block() {
  const auto doc = read_file(DPEPO_REFERENCE_DOC);
  const auto anchor = doc.find("<env_1> go to shelf 1 </env_1>");
  if (anchor == std::string::npos) throw std::runtime_error("three-shelf reply not found");
  const auto start = doc.rfind("\\textbf{Assistant:}", anchor);
  const auto end = doc.find("</parallel>", anchor);
  if (start == std::string::npos || end == std::string::npos) throw std::runtime_error("reply bounds not found");
  std::istringstream lines(doc.substr(start, end + 11 - start));
  std::string line;
  std::string out;
  std::getline(lines, line);  // the speaker label
  while (std::getline(lines, line)) {
    if (line.rfind("\\begin{verbatim}", 0) == 0 || line.rfind("\\end{verbatim}", 0) == 0) continue;
    out += line + "\n";
  }
  out.pop_back();
  return out;
}

/// Every item location except the target; the training task set.
inline std::vector<env::WorldSpec> all_item_locations(env::WorldSpec base = {}) {
  std::vector<env::WorldSpec> out;
  for (int i = 1; i <= base.container_count; ++i) {
    if (i == base.target_location) continue;
    base.item_location = i;
    out.push_back(base);
  }
  return out;
}

/// Runs fixed per-step intents on K fresh copies of `world`.
inline Trajectory scripted_trajectory(const env::WorldSpec& world, const std::vector<std::vector<Intent>>& script,
                                      int k) {
  auto set = env::spawn_parallel(env::create_world(world), k);
  Trajectory traj;
  traj.task_description = set.task_description;
  traj.initial_observation = set.initial_observation;
  traj.k_parallel = k;
  for (const auto& intents : script) {
    ParallelStep step;
    step.t = static_cast<int>(traj.steps.size()) + 1;
    step.intents = intents;
    traj.steps.push_back(env::parallel_step(set, step));
  }
  return traj;
}

}  // namespace dpepo::test_support
