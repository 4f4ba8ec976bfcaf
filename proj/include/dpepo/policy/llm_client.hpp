#pragma once

// Chat-completion client for driving rollouts with an external LLM.
//
// POST {base_url}/chat/completions with
//   {"model", "messages": [{"role","content"}...], "temperature", "max_tokens"}
// and read choices[0].message.content from the reply. Transport failures,
// 429 and 5xx are retried with capped exponential backoff; anything else
// that is not a conforming 200 is a protocol error.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "dpepo/error.hpp"

namespace dpepo::policy {

struct EndpointConfig {
  std::string base_url = "http://127.0.0.1:8000/v1";
  std::string model = "dpepo-agent";
  std::string api_key_env = "DPEPO_API_KEY";  // name of the variable, never the key itself
  double timeout_seconds = 60.0;
  int max_retries = 3;
  int backoff_initial_ms = 200;
  int backoff_max_ms = 5000;
  double temperature = 0.4;
  int max_tokens = 512;

  void validate() const {
    auto fail = [](const std::string& key, const std::string& why) {
      throw Error(ErrorKind::configuration, "endpoint." + key + ": " + why);
    };
    if (base_url.rfind("http://", 0) != 0 && base_url.rfind("https://", 0) != 0) {
      fail("base_url", "must start with http:// or https://");
    }
    if (model.empty()) fail("model", "must be non-empty");
    if (!(timeout_seconds > 0.0)) fail("timeout_seconds", "must be > 0");
    if (max_retries < 0) fail("max_retries", "must be >= 0");
    if (backoff_initial_ms < 0 || backoff_max_ms < backoff_initial_ms) {
      fail("backoff_max_ms", "must be >= backoff_initial_ms >= 0");
    }
    if (!(temperature >= 0.0)) fail("temperature", "must be >= 0");
    if (max_tokens < 1) fail("max_tokens", "must be >= 1");
  }
};

struct ChatMessage {
  std::string role;
  std::string content;
};

struct Completion {
  std::string text;
  int retries = 0;
};

/// Delay before retry number `attempt` (0-based).
inline std::chrono::milliseconds backoff_delay(const EndpointConfig& cfg, int attempt) {
  double ms = cfg.backoff_initial_ms;
  for (int i = 0; i < attempt && ms < cfg.backoff_max_ms; ++i) ms *= 2.0;
  return std::chrono::milliseconds(static_cast<long long>(std::min<double>(ms, cfg.backoff_max_ms)));
}

inline std::string chat_request_body(const EndpointConfig& cfg, const std::vector<ChatMessage>& messages) {
  nlohmann::json body;
  body["model"] = cfg.model;
  body["temperature"] = cfg.temperature;
  body["max_tokens"] = cfg.max_tokens;
  body["messages"] = nlohmann::json::array();
  for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  return body.dump();
}

/// Extracts the assistant text from a chat-completion response body.
inline std::string parse_chat_response(const std::string& body) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::protocol, std::string("endpoint returned malformed JSON: ") + e.what());
  }
  const auto* content = [&]() -> const nlohmann::json* {
    if (!doc.is_object() || !doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty()) {
      return nullptr;
    }
    const auto& first = doc["choices"][0];
    if (!first.is_object() || !first.contains("message") || !first["message"].is_object()) return nullptr;
    const auto& msg = first["message"];
    if (!msg.contains("content") || !msg["content"].is_string()) return nullptr;
    return &msg["content"];
  }();
  if (content == nullptr) throw Error(ErrorKind::protocol, "endpoint response lacks choices[0].message.content");
  return content->get<std::string>();
}

class ChatClient {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit ChatClient(EndpointConfig cfg, Sleeper sleeper = nullptr)
      : cfg_(std::move(cfg)), sleeper_(std::move(sleeper)) {
    cfg_.validate();
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    const auto scheme_end = cfg_.base_url.find("://") + 3;
    const auto slash = cfg_.base_url.find('/', scheme_end);
    origin_ = cfg_.base_url.substr(0, slash);
    path_ = (slash == std::string::npos ? std::string() : cfg_.base_url.substr(slash));
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
    path_ += "/chat/completions";
  }

  const EndpointConfig& config() const noexcept { return cfg_; }

  /// Thread-safe: each call opens its own connection.
  Completion complete(const std::vector<ChatMessage>& messages) const {
    const auto body = chat_request_body(cfg_, messages);
    httplib::Headers headers;
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key != nullptr && *key != '\0') {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    std::string last_failure;
    for (int attempt = 0;; ++attempt) {
      httplib::Client client(origin_);
      const auto timeout = std::chrono::duration<double>(cfg_.timeout_seconds);
      client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

      auto res = client.Post(path_, headers, body, "application/json");
      bool retryable = false;
      if (!res) {
        last_failure = "transport failure: " + httplib::to_string(res.error());
        retryable = true;
      } else if (res->status == 429 || res->status >= 500) {
        last_failure = "HTTP " + std::to_string(res->status);
        retryable = true;
      } else if (res->status != 200) {
        throw Error(ErrorKind::protocol, "endpoint answered HTTP " + std::to_string(res->status));
      } else {
        if (attempt > 0) spdlog::info("chat completion succeeded after {} retries", attempt);
        return Completion{parse_chat_response(res->body), attempt};
      }

      if (!retryable || attempt >= cfg_.max_retries) break;
      const auto delay = backoff_delay(cfg_, attempt);
      spdlog::warn("chat completion attempt {} failed ({}), retrying in {} ms", attempt + 1, last_failure,
                   delay.count());
      sleeper_(delay);
    }
    throw Error(ErrorKind::transport,
                "endpoint " + cfg_.base_url + " failed after " + std::to_string(cfg_.max_retries) +
                    " retries: " + last_failure);
  }

 private:
  EndpointConfig cfg_;
  Sleeper sleeper_;
  std::string origin_;
  std::string path_;
};

}  // namespace dpepo::policy
