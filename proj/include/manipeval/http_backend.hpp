#pragma once

#include <chrono>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include <json.hpp>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include "manipeval/errors.hpp"
#include "manipeval/gateway.hpp"

namespace manipeval {

struct HttpBackendOptions {
  std::string endpoint;  // e.g. https://api.openai.com/v1 or http://127.0.0.1:8089/v1
  std::string api_key;
  std::chrono::seconds connect_timeout{10};
  std::chrono::seconds read_timeout{120};
};

namespace detail {

struct SplitUrl {
  std::string base;         // scheme://host[:port]
  std::string path_prefix;  // possibly empty, no trailing slash
};

inline SplitUrl split_endpoint(const std::string& endpoint) {
  auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("endpoint must start with http:// or https://: " + endpoint);
  }
  auto path_start = endpoint.find('/', scheme_end + 3);
  SplitUrl split;
  if (path_start == std::string::npos) {
    split.base = endpoint;
  } else {
    split.base = endpoint.substr(0, path_start);
    split.path_prefix = endpoint.substr(path_start);
  }
  while (!split.path_prefix.empty() && split.path_prefix.back() == '/') {
    split.path_prefix.pop_back();
  }
  return split;
}

inline std::optional<std::chrono::milliseconds> parse_retry_after(const httplib::Response& res) {
  if (!res.has_header("Retry-After")) {
    return std::nullopt;
  }
  const std::string value = res.get_header_value("Retry-After");
  char* end = nullptr;
  long seconds = std::strtol(value.c_str(), &end, 10);
  if (end == value.c_str() || seconds < 0) {
    return std::nullopt;  // HTTP-date form; fall back to backoff schedule
  }
  return std::chrono::milliseconds(seconds * 1000);
}

}  // namespace detail

// Chat-completions client for any OpenAI-compatible server.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendOptions options) : options_(std::move(options)) {
    auto split = detail::split_endpoint(options_.endpoint);
    path_prefix_ = split.path_prefix;
    client_ = std::make_unique<httplib::Client>(split.base);
    client_->set_connection_timeout(options_.connect_timeout);
    client_->set_read_timeout(options_.read_timeout);
    client_->set_follow_location(true);
  }

  std::string name() const override { return "http:" + options_.endpoint; }

  BackendResponse send(const CompletionRequest& request) override {
    nlohmann::json body = {
        {"model", request.model},
        {"temperature", request.temperature},
        {"messages", nlohmann::json::array()},
    };
    for (const auto& m : request.messages) {
      body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    }
    if (request.max_tokens) {
      body["max_tokens"] = *request.max_tokens;
    }

    httplib::Headers headers;
    if (!options_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + options_.api_key);
    }

    auto result = client_->Post(path_prefix_ + "/chat/completions", headers, body.dump(),
                                "application/json");
    if (!result) {
      throw TransportError("request to " + options_.endpoint + " failed: " +
                           httplib::to_string(result.error()));
    }
    const httplib::Response& res = result.value();
    if (res.status == 401 || res.status == 403) {
      throw AuthError("server returned " + std::to_string(res.status) + ": " + res.body);
    }
    if (res.status == 429) {
      throw RateLimitedError("server returned 429: " + res.body,
                             detail::parse_retry_after(res));
    }
    if (res.status == 408 || res.status >= 500) {
      throw TransportError("server returned " + std::to_string(res.status) + ": " + res.body);
    }
    if (res.status != 200) {
      throw Error("server returned " + std::to_string(res.status) + ": " + res.body);
    }

    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(res.body);
    } catch (const nlohmann::json::parse_error& e) {
      throw TransportError(std::string("malformed response body: ") + e.what());
    }
    if (!doc.contains("choices") || doc["choices"].empty()) {
      throw TransportError("response has no choices: " + res.body.substr(0, 200));
    }
    const auto& choice = doc["choices"][0];
    BackendResponse response;
    response.finish_reason = choice.value("finish_reason", "stop");
    if (choice.contains("message") && choice["message"].contains("content") &&
        !choice["message"]["content"].is_null()) {
      response.text = choice["message"]["content"].get<std::string>();
    }
    return response;
  }

 private:
  HttpBackendOptions options_;
  std::string path_prefix_;
  std::unique_ptr<httplib::Client> client_;
};

}  // namespace manipeval
