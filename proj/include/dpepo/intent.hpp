#pragma once

#include <compare>
#include <string>

namespace dpepo {

/// One action addressed to one environment slot (1-based).
struct Intent {
  int env_id = 0;
  std::string action;

  friend bool operator==(const Intent&, const Intent&) = default;
  friend auto operator<=>(const Intent&, const Intent&) = default;
};

}  // namespace dpepo
