#pragma once

// KeyDoorWorld: a deterministic hidden-item text world.
//
// A room holds `container_count` closed containers. One of them hides the
// task item; the task is to put the item into the target container. The
// agent sees the contents of a container only after opening it, so finding
// the item is a search problem that benefits from exploring several
// containers in parallel.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dpepo/error.hpp"
#include "dpepo/hash.hpp"

namespace dpepo::env {

inline constexpr std::string_view kNothingHappens = "Nothing happens.";

struct WorldSpec {
  int container_count = 12;
  int item_location = 1;  // 1-based container index
  int target_location = 12;
  std::uint64_t seed = 0;
  std::vector<std::string> distractor_items;
  std::string item_name = "key";

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw Error(ErrorKind::configuration, "world." + field + ": " + why);
    };
    if (container_count < 1 || container_count > 999) {
      fail("container_count", "must lie in [1, 999]");
    }
    if (item_location < 1 || item_location > container_count) {
      fail("item_location", "must be a container index in [1, container_count]");
    }
    if (target_location < 1 || target_location > container_count) {
      fail("target_location", "must be a container index in [1, container_count]");
    }
    if (item_location == target_location) {
      fail("item_location", "must differ from target_location");
    }
    if (item_name.empty() || item_name.find_first_of("\n<>") != std::string::npos) {
      fail("item_name", "must be a non-empty single-line name without '<' or '>'");
    }
    for (const auto& d : distractor_items) {
      if (d.empty() || d == item_name || d.find_first_of("\n<>") != std::string::npos) {
        fail("distractor_items", "entries must be non-empty, single-line and differ from item_name");
      }
    }
  }

  friend bool operator==(const WorldSpec&, const WorldSpec&) = default;
};

struct Observation {
  std::string text;
  std::vector<std::string> admissible_actions;
  bool is_goal = false;

  friend bool operator==(const Observation&, const Observation&) = default;
};

/// Complete mutable state of one world. `feedback` is the text produced by
/// the transition that led here and is what the agent observes.
struct WorldState {
  int location = 0;  // 0: middle of the room
  std::vector<char> opened;  // indexed 1..n
  int item_container = 0;  // 0 while held
  bool holding = false;
  bool goal = false;
  std::string feedback;

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

/// Immutable part of a world: the spec plus where the distractors sit.
class WorldLayout {
 public:
  explicit WorldLayout(WorldSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    distractors_.resize(static_cast<std::size_t>(spec_.container_count) + 1);
    for (std::size_t j = 0; j < spec_.distractor_items.size(); ++j) {
      const auto slot = 1 + derive_seed(spec_.seed, j) % static_cast<std::uint64_t>(spec_.container_count);
      distractors_[slot].push_back(spec_.distractor_items[j]);
    }
  }

  const WorldSpec& spec() const noexcept { return spec_; }
  int container_count() const noexcept { return spec_.container_count; }

  std::string task_description() const {
    return "put some " + spec_.item_name + " in container " +
           std::to_string(spec_.target_location) + ".";
  }

  std::string room_description() const {
    std::string text = "You are in the middle of a room. Looking quickly around you, you see ";
    const int n = spec_.container_count;
    for (int i = 1; i <= n; ++i) {
      if (i > 1) text += (i == n) ? (n == 2 ? " and " : ", and ") : ", ";
      text += "container " + std::to_string(i);
    }
    return text + ".";
  }

  /// Items visible inside an open container, item first.
  std::vector<std::string> contents(const WorldState& s, int container) const {
    std::vector<std::string> items;
    if (s.item_container == container) items.push_back(spec_.item_name);
    const auto& extra = distractors_[static_cast<std::size_t>(container)];
    items.insert(items.end(), extra.begin(), extra.end());
    return items;
  }

  std::string describe_contents(const WorldState& s, int container) const {
    const auto items = contents(s, container);
    if (items.empty()) return "In it, you see nothing.";
    std::string out = "In it, you see ";
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (i > 0) out += (i + 1 == items.size()) ? (items.size() == 2 ? " and " : ", and ") : ", ";
      out += "a " + items[i];
    }
    return out + ".";
  }

  WorldState initial_state() const {
    WorldState s;
    s.opened.assign(static_cast<std::size_t>(spec_.container_count) + 1, 0);
    s.item_container = spec_.item_location;
    s.feedback = room_description();
    return s;
  }

  std::vector<std::string> admissible_actions(const WorldState& s) const {
    std::vector<std::string> actions;
    if (s.goal) return actions;
    const int n = spec_.container_count;
    for (int i = 1; i <= n; ++i) {
      if (i != s.location) actions.push_back("go to container " + std::to_string(i));
    }
    for (int i = 1; i <= n; ++i) {
      if (!s.opened[static_cast<std::size_t>(i)]) actions.push_back("open container " + std::to_string(i));
    }
    if (!s.holding && s.location > 0 && s.opened[static_cast<std::size_t>(s.location)] &&
        s.item_container == s.location) {
      actions.push_back("take " + spec_.item_name + " from container " + std::to_string(s.location));
    }
    if (s.holding) {
      for (int i = 1; i <= n; ++i) {
        actions.push_back("put " + spec_.item_name + " in container " + std::to_string(i));
      }
    }
    actions.emplace_back("inventory");
    actions.emplace_back("look");
    return actions;
  }

  Observation render(const WorldState& s) const {
    return Observation{s.feedback, admissible_actions(s), s.goal};
  }

  /// Applies an admissible action. Returns false (state untouched apart from
  /// the feedback line) when the action is not admissible.
  bool apply(WorldState& s, std::string_view action) const {
    const auto admissible = admissible_actions(s);
    if (std::find(admissible.begin(), admissible.end(), action) == admissible.end()) {
      s.feedback = std::string(kNothingHappens);
      return false;
    }
    const std::string item = spec_.item_name;
    if (action == "look") {
      if (s.location == 0) {
        s.feedback = room_description();
      } else {
        s.feedback = "You are facing the container " + std::to_string(s.location) + ". " +
                     (s.opened[static_cast<std::size_t>(s.location)]
                          ? "The container " + std::to_string(s.location) + " is open. " +
                                describe_contents(s, s.location)
                          : "The container " + std::to_string(s.location) + " is closed.");
      }
    } else if (action == "inventory") {
      s.feedback = s.holding ? "You are carrying: a " + item + "." : "You are not carrying anything.";
    } else if (auto n = trailing_index(action, "go to container ")) {
      s.location = *n;
      const auto idx = std::to_string(*n);
      s.feedback = "You arrive at container " + idx + ". " +
                   (s.opened[static_cast<std::size_t>(*n)]
                        ? "The container " + idx + " is open. " + describe_contents(s, *n)
                        : "The container " + idx + " is closed.");
    } else if (auto n = trailing_index(action, "open container ")) {
      s.location = *n;
      s.opened[static_cast<std::size_t>(*n)] = 1;
      const auto idx = std::to_string(*n);
      s.feedback = "You open the container " + idx + ". The container " + idx + " is open. " +
                   describe_contents(s, *n);
    } else if (auto n = trailing_index(action, "take " + item + " from container ")) {
      s.holding = true;
      s.item_container = 0;
      s.feedback = "You pick up the " + item + " from the container " + std::to_string(*n) + ".";
    } else if (auto n = trailing_index(action, "put " + item + " in container ")) {
      s.holding = false;
      s.item_container = *n;
      s.location = *n;
      s.opened[static_cast<std::size_t>(*n)] = 1;
      s.goal = (*n == spec_.target_location);
      s.feedback = "You put the " + item + " in the container " + std::to_string(*n) + ".";
    }
    return true;
  }

 private:
  static std::optional<int> trailing_index(std::string_view action, std::string_view prefix) {
    if (action.substr(0, prefix.size()) != prefix) return std::nullopt;
    return std::stoi(std::string(action.substr(prefix.size())));
  }

  WorldSpec spec_;
  std::vector<std::vector<std::string>> distractors_;
};

struct HistoryEntry {
  std::string action;
  Observation observation;

  friend bool operator==(const HistoryEntry&, const HistoryEntry&) = default;
};

struct StepOutcome {
  Observation observation;
  bool invalid = false;
};

/// One environment slot. Copying an instance yields a fully independent
/// clone; the layout is immutable and shared.
class EnvInstance {
 public:
  EnvInstance(std::shared_ptr<const WorldLayout> layout, int env_id)
      : layout_(std::move(layout)), env_id_(env_id), state_(layout_->initial_state()) {
    observation_ = layout_->render(state_);
  }

  int env_id() const noexcept { return env_id_; }
  void set_env_id(int id) noexcept { env_id_ = id; }
  int step_count() const noexcept { return static_cast<int>(history_.size()); }
  bool terminal() const noexcept { return state_.goal; }
  const std::vector<HistoryEntry>& history() const noexcept { return history_; }
  const Observation& observation() const noexcept { return observation_; }
  const WorldState& state() const noexcept { return state_; }
  const WorldLayout& layout() const noexcept { return *layout_; }
  std::string task_description() const { return layout_->task_description(); }

  StepOutcome step(std::string_view action) {
    if (terminal()) {
      throw Error(ErrorKind::usage, "environment " + std::to_string(env_id_) +
                                        " is terminal and accepts no further actions");
    }
    const bool valid = layout_->apply(state_, action);
    observation_ = layout_->render(state_);
    history_.push_back(HistoryEntry{std::string(action), observation_});
    return StepOutcome{observation_, !valid};
  }

  /// Same world, same state and same history; env_id is not compared.
  bool same_contents(const EnvInstance& other) const {
    return layout_->spec() == other.layout_->spec() && state_ == other.state_ &&
           history_ == other.history_ && observation_ == other.observation_;
  }

 private:
  std::shared_ptr<const WorldLayout> layout_;
  int env_id_;
  WorldState state_;
  Observation observation_;
  std::vector<HistoryEntry> history_;
};

inline EnvInstance create_world(const WorldSpec& spec) {
  return EnvInstance(std::make_shared<const WorldLayout>(spec), 1);
}

inline StepOutcome step(EnvInstance& instance, std::string_view action) {
  return instance.step(action);
}

}  // namespace dpepo::env
