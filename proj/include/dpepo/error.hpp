#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace dpepo {

enum class ErrorKind {
  configuration,
  usage,
  protocol,
  parse,
  numeric,
  transport,
  scoring,
  contract,
  format,
};

inline const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::configuration: return "configuration error";
    case ErrorKind::usage: return "usage error";
    case ErrorKind::protocol: return "protocol error";
    case ErrorKind::parse: return "parse error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::transport: return "transport error";
    case ErrorKind::scoring: return "scoring error";
    case ErrorKind::contract: return "contract violation";
    case ErrorKind::format: return "format error";
  }
  return "error";
}

/// Every recoverable failure in the library is reported through this type.
/// `offset` is set for parse errors and points at the offending byte.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message,
        std::optional<std::size_t> offset = std::nullopt)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        offset_(offset) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::optional<std::size_t> offset() const noexcept { return offset_; }

 private:
  ErrorKind kind_;
  std::optional<std::size_t> offset_;
};

}  // namespace dpepo
