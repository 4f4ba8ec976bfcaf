#pragma once

// Structured agent output:
//
//   <think> free text </think>
//   <parallel>
//   <env_1> action </env_1>
//   <env_3> action </env_3>
//   </parallel>
//
// Tags are ASCII and case-sensitive. A single bare <env_N>...</env_N> without
// the parallel wrapper is accepted as a one-action turn.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstddef>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "dpepo/error.hpp"
#include "dpepo/intent.hpp"

namespace dpepo::protocol {

struct AgentTurn {
  std::string think_text;
  std::vector<Intent> intents;

  /// Intents are a set keyed by env_id; order does not take part in equality.
  friend bool operator==(const AgentTurn& a, const AgentTurn& b) {
    if (a.think_text != b.think_text || a.intents.size() != b.intents.size()) return false;
    auto x = a.intents;
    auto y = b.intents;
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    return x == y;
  }
};

inline std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline bool is_blank(std::string_view s) { return trim(s).empty(); }

/// Throws a contract violation when `turn` cannot be serialized losslessly.
inline void validate_turn(const AgentTurn& turn) {
  if (turn.intents.empty()) throw Error(ErrorKind::contract, "agent turn has no intents");
  if (turn.think_text.find("</think>") != std::string::npos) {
    throw Error(ErrorKind::contract, "think text may not contain </think>");
  }
  std::set<int> ids;
  for (const auto& in : turn.intents) {
    if (in.env_id < 1) throw Error(ErrorKind::contract, "env ids start at 1");
    if (!ids.insert(in.env_id).second) {
      throw Error(ErrorKind::contract, "duplicate env id " + std::to_string(in.env_id));
    }
    if (in.action.empty() || trim(in.action) != in.action ||
        in.action.find('<') != std::string::npos) {
      throw Error(ErrorKind::contract,
                  "action for env " + std::to_string(in.env_id) +
                      " must be non-empty, trimmed and free of '<'");
    }
  }
}

/// Canonical form: think block, then env sections in ascending env_id.
inline std::string serialize_turn(const AgentTurn& turn) {
  validate_turn(turn);
  auto intents = turn.intents;
  std::sort(intents.begin(), intents.end());
  std::string out = "<think>" + turn.think_text + "</think>\n<parallel>\n";
  for (const auto& in : intents) {
    const auto id = std::to_string(in.env_id);
    out += "<env_" + id + ">" + in.action + "</env_" + id + ">\n";
  }
  out += "</parallel>";
  return out;
}

namespace detail {

class TurnParser {
 public:
  TurnParser(std::string_view text, std::vector<std::string>* warnings)
      : text_(text), warnings_(warnings) {}

  AgentTurn parse() {
    AgentTurn turn;
    std::size_t pos = 0;
    if (const auto open = text_.find("<think>"); open != npos) {
      warn_if_text(0, open);
      const auto body = open + 7;
      const auto close = text_.find("</think>", body);
      if (close == npos) fail(ErrorKind::parse, "unclosed <think>", open);
      turn.think_text = std::string(text_.substr(body, close - body));
      pos = close + 8;
    }

    if (const auto open = text_.find("<parallel>", pos); open != npos) {
      const auto body = open + 10;
      const auto close = text_.find("</parallel>", body);
      if (close == npos) fail(ErrorKind::parse, "unclosed <parallel>", open);
      warn_if_text(pos, open);
      parse_env_blocks(body, close, turn.intents);
      if (turn.intents.empty()) fail(ErrorKind::parse, "empty <parallel> block", open);
      warn_if_text(close + 11, text_.size());
    } else {
      if (const auto stray = text_.find("</parallel>", pos); stray != npos) {
        fail(ErrorKind::parse, "</parallel> without opening <parallel>", stray);
      }
      parse_env_blocks(pos, text_.size(), turn.intents);
      if (turn.intents.empty()) fail(ErrorKind::parse, "no <env_N> action tag found", pos);
      if (turn.intents.size() > 1) {
        fail(ErrorKind::parse, "several <env_N> tags need a <parallel> wrapper", pos);
      }
    }
    return turn;
  }

 private:
  static constexpr auto npos = std::string_view::npos;

  [[noreturn]] static void fail(ErrorKind kind, const std::string& what, std::size_t offset) {
    throw Error(kind, what + " at byte " + std::to_string(offset), offset);
  }

  void warn_if_text(std::size_t from, std::size_t to) {
    if (to <= from) return;
    const auto gap = text_.substr(from, to - from);
    if (is_blank(gap)) return;
    if (const auto stray = gap.find("</env_"); stray != npos) {
      fail(ErrorKind::parse, "closing env tag without opening tag", from + stray);
    }
    if (warnings_ != nullptr) {
      warnings_->push_back("ignored text outside tags at byte " + std::to_string(from));
    }
  }

  // Parses "<env_N>" starting at `open`; returns N and sets `body` past '>'.
  int parse_open_tag(std::size_t open, std::size_t end, std::size_t& body) const {
    const auto digits_begin = open + 5;
    const auto gt = text_.find('>', digits_begin);
    if (gt == npos || gt >= end) fail(ErrorKind::parse, "unterminated <env_ tag", open);
    const auto digits = text_.substr(digits_begin, gt - digits_begin);
    const bool numeric = !digits.empty() && std::all_of(digits.begin(), digits.end(), [](char c) {
      return c >= '0' && c <= '9';
    });
    if (!numeric) {
      fail(ErrorKind::parse, "environment index '" + std::string(digits) + "' is not an integer", open);
    }
    int id = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), id);
    if (ec != std::errc() || ptr != digits.data() + digits.size()) {
      fail(ErrorKind::parse, "environment index out of range", open);
    }
    body = gt + 1;
    return id;
  }

  void parse_env_blocks(std::size_t from, std::size_t end, std::vector<Intent>& out) {
    std::set<int> ids;
    std::size_t pos = from;
    while (pos < end) {
      const auto open = text_.find("<env_", pos);
      if (open == npos || open >= end) {
        warn_if_text(pos, end);
        return;
      }
      warn_if_text(pos, open);
      std::size_t body = 0;
      const int id = parse_open_tag(open, end, body);
      const auto close = text_.find("</env_", body);
      const auto nested = text_.find("<env_", body);
      if (close == npos || close >= end || (nested != npos && nested < close)) {
        fail(ErrorKind::parse, "unclosed <env_" + std::to_string(id) + ">", open);
      }
      const std::string expected = "</env_" + std::string(text_.substr(open + 5, body - 1 - (open + 5))) + ">";
      if (text_.substr(close, expected.size()) != expected) {
        fail(ErrorKind::parse, "mismatched closing tag for <env_" + std::to_string(id) + ">", close);
      }
      const auto action = trim(text_.substr(body, close - body));
      if (action.empty()) fail(ErrorKind::parse, "empty action for env " + std::to_string(id), open);
      if (!ids.insert(id).second) {
        fail(ErrorKind::protocol, "environment " + std::to_string(id) + " addressed twice in one turn", open);
      }
      out.push_back(Intent{id, std::string(action)});
      pos = close + expected.size();
    }
  }

  std::string_view text_;
  std::vector<std::string>* warnings_;
};

}  // namespace detail

/// Parses raw agent output. Never aborts: malformed input yields an Error of
/// kind `parse` (with byte offset) or `protocol` (duplicate environment).
/// Non-blank text outside recognised tags is reported through `warnings`.
inline AgentTurn parse_agent_output(std::string_view text,
                                    std::vector<std::string>* warnings = nullptr) {
  return detail::TurnParser(text, warnings).parse();
}

}  // namespace dpepo::protocol
