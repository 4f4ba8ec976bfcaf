#pragma once

// Text checkpoint for TabularPolicyParams.
//
//   dpepo-tabular-policy 1
//   temperature <%.17g>
//   skip_logit_bias <%.17g>
//   env_keyed <0|1>
//   meta <key> <json string>        zero or more, sorted by key
//   entries <count>
//   <state hex16> <logit %.17g> <action as json string>    sorted by (state, action)
//
// %.17g round-trips every double exactly, so resuming from a checkpoint is
// bit-identical to never having stopped.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpepo/error.hpp"
#include "dpepo/hash.hpp"
#include "dpepo/policy/tabular.hpp"

namespace dpepo::policy {

inline constexpr std::string_view kCheckpointMagic = "dpepo-tabular-policy";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  TabularPolicyParams params;
  std::map<std::string, std::string> meta;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s, int line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size()) throw Error(ErrorKind::format, "bad number '" + s + "' on checkpoint line " + std::to_string(line));
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const auto& p = ckpt.params;
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "temperature " << detail::format_double(p.temperature) << '\n';
  out << "skip_logit_bias " << detail::format_double(p.skip_logit_bias) << '\n';
  out << "env_keyed " << (p.env_keyed ? 1 : 0) << '\n';
  for (const auto& [k, v] : ckpt.meta) out << "meta " << k << ' ' << nlohmann::json(v).dump() << '\n';

  std::vector<std::pair<std::uint64_t, const LogitEntry*>> rows;
  rows.reserve(p.logits.size());
  for (const auto& [key, entry] : p.logits) rows.emplace_back(key.state, &entry);
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : a.second->action < b.second->action;
  });
  out << "entries " << rows.size() << '\n';
  char hex[20];
  for (const auto& [state, entry] : rows) {
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(state));
    out << hex << ' ' << detail::format_double(entry->logit) << ' ' << nlohmann::json(entry->action).dump() << '\n';
  }
}

inline std::string checkpoint_to_string(const Checkpoint& ckpt) {
  std::ostringstream out;
  write_checkpoint(out, ckpt);
  return out.str();
}

inline Checkpoint read_checkpoint(std::istream& in) {
  Checkpoint ckpt;
  std::string line;
  int lineno = 0;
  auto next = [&](const char* what) {
    if (!std::getline(in, line)) {
      throw Error(ErrorKind::format, std::string("checkpoint truncated before ") + what);
    }
    ++lineno;
  };
  auto field = [&](const std::string& name) {
    next(name.c_str());
    if (line.rfind(name + " ", 0) != 0) {
      throw Error(ErrorKind::format, "expected '" + name + "' on checkpoint line " + std::to_string(lineno));
    }
    return line.substr(name.size() + 1);
  };

  next("header");
  const std::string header = std::string(kCheckpointMagic) + " ";
  if (line.rfind(header, 0) != 0) throw Error(ErrorKind::format, "not a tabular policy checkpoint");
  if (line.substr(header.size()) != std::to_string(kCheckpointVersion)) {
    throw Error(ErrorKind::format, "unsupported checkpoint version '" + line.substr(header.size()) + "'");
  }
  ckpt.params.temperature = detail::parse_double(field("temperature"), lineno);
  ckpt.params.skip_logit_bias = detail::parse_double(field("skip_logit_bias"), lineno);
  const auto keyed = field("env_keyed");
  if (keyed != "0" && keyed != "1") throw Error(ErrorKind::format, "env_keyed must be 0 or 1");
  ckpt.params.env_keyed = keyed == "1";

  next("entries");
  while (line.rfind("meta ", 0) == 0) {
    const auto space = line.find(' ', 5);
    if (space == std::string::npos) throw Error(ErrorKind::format, "bad meta line " + std::to_string(lineno));
    try {
      ckpt.meta[line.substr(5, space - 5)] = nlohmann::json::parse(line.substr(space + 1)).get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorKind::format, "bad meta value on checkpoint line " + std::to_string(lineno));
    }
    next("entries");
  }
  if (line.rfind("entries ", 0) != 0) throw Error(ErrorKind::format, "expected 'entries' on line " + std::to_string(lineno));
  const auto count = static_cast<std::size_t>(detail::parse_double(line.substr(8), lineno));
  ckpt.params.logits.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    next("end of entries");
    const auto a = line.find(' ');
    const auto b = a == std::string::npos ? a : line.find(' ', a + 1);
    if (b == std::string::npos || a != 16) throw Error(ErrorKind::format, "bad entry on checkpoint line " + std::to_string(lineno));
    std::uint64_t state = 0;
    try {
      state = std::stoull(line.substr(0, 16), nullptr, 16);
    } catch (const std::exception&) {
      throw Error(ErrorKind::format, "bad state digest on checkpoint line " + std::to_string(lineno));
    }
    const double logit = detail::parse_double(line.substr(a + 1, b - a - 1), lineno);
    std::string action;
    try {
      action = nlohmann::json::parse(line.substr(b + 1)).get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorKind::format, "bad action on checkpoint line " + std::to_string(lineno));
    }
    const LogitKey key{state, fnv1a(action)};
    ckpt.params.logits[key] = LogitEntry{std::move(action), logit};
  }
  ckpt.params.validate();
  return ckpt;
}

inline Checkpoint checkpoint_from_string(const std::string& text) {
  std::istringstream in(text);
  return read_checkpoint(in);
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::usage, "cannot write checkpoint " + tmp);
    write_checkpoint(out, ckpt);
    if (!out) throw Error(ErrorKind::usage, "failed writing checkpoint " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw Error(ErrorKind::usage, "cannot move checkpoint into place at " + path);
  }
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::usage, "cannot open checkpoint " + path);
  return read_checkpoint(in);
}

}  // namespace dpepo::policy
