#pragma once

#include <chrono>
#include <deque>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "manipeval/errors.hpp"
#include "manipeval/gateway.hpp"
#include "manipeval/io.hpp"

namespace manipeval {

// One scripted response: fires when the concatenated message contents of a
// request contain `contains`. Rules are checked in order; first match wins.
struct ScriptRule {
  std::string contains;
  std::string response;
  std::string finish_reason = "stop";
};

struct MockScript {
  std::vector<ScriptRule> rules;
  std::optional<std::string> default_response;
  bool strict = true;  // unmatched request -> UnscriptedPromptError
};

inline MockScript load_mock_script(const std::filesystem::path& file) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(file));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("mock script " + file.string() + ": " + e.what());
  }
  MockScript script;
  script.strict = doc.value("strict", true);
  if (doc.contains("default")) {
    script.default_response = doc["default"].get<std::string>();
  }
  for (const auto& rule : doc.value("rules", nlohmann::json::array())) {
    if (!rule.contains("contains") || !rule.contains("text")) {
      throw ConfigError("mock script " + file.string() +
                        ": each rule needs 'contains' and 'text'");
    }
    script.rules.push_back({rule["contains"].get<std::string>(),
                            rule["text"].get<std::string>(),
                            rule.value("finish_reason", "stop")});
  }
  return script;
}

// Deterministic stand-in backend for tests and offline runs. Replays a
// script, records every request it sees, and can inject one-shot faults.
class MockBackend : public Backend {
 public:
  explicit MockBackend(MockScript script = {}) : script_(std::move(script)) {}

  std::string name() const override { return "mock"; }

  BackendResponse send(const CompletionRequest& request) override {
    maybe_sleep();
    std::string joined;
    {
      std::lock_guard<std::mutex> lock(mutex_);
      requests_.push_back(request);
      if (!pending_faults_.empty()) {
        Fault fault = pending_faults_.front();
        pending_faults_.pop_front();
        raise(fault);
      }
      for (const auto& m : request.messages) {
        joined += m.content;
        joined += '\n';
      }
      for (const auto& rule : script_.rules) {
        if (joined.find(rule.contains) != std::string::npos) {
          return {rule.response, rule.finish_reason};
        }
      }
      if (script_.default_response) {
        return {*script_.default_response, "stop"};
      }
      if (!script_.strict) {
        return {"No", "stop"};
      }
    }
    throw UnscriptedPromptError("mock backend has no rule for request: " +
                                joined.substr(0, 200));
  }

  // Queues n faults; each consumes one send() before any rule matching.
  // kind: "transport" | "rate_limited" | "auth" | "refusal".
  void fail_next(int n, const std::string& kind,
                 std::optional<std::chrono::milliseconds> retry_after = std::nullopt) {
    std::lock_guard<std::mutex> lock(mutex_);
    for (int i = 0; i < n; ++i) {
      pending_faults_.push_back({kind, retry_after});
    }
  }

  void set_latency(std::chrono::milliseconds latency) {
    std::lock_guard<std::mutex> lock(mutex_);
    latency_ = latency;
  }

  std::size_t call_count() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return requests_.size();
  }

  std::vector<CompletionRequest> requests() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return requests_;
  }

 private:
  struct Fault {
    std::string kind;
    std::optional<std::chrono::milliseconds> retry_after;
  };

  [[noreturn]] static void raise(const Fault& fault) {
    if (fault.kind == "transport") {
      throw TransportError("injected transport failure");
    }
    if (fault.kind == "rate_limited") {
      throw RateLimitedError("injected rate limit", fault.retry_after);
    }
    if (fault.kind == "auth") {
      throw AuthError("injected auth failure");
    }
    if (fault.kind == "refusal") {
      throw BackendRefusalError("injected refusal", "content_filter");
    }
    throw ConfigError("unknown fault kind '" + fault.kind + "'");
  }

  void maybe_sleep() {
    std::chrono::milliseconds latency{0};
    {
      std::lock_guard<std::mutex> lock(mutex_);
      latency = latency_;
    }
    if (latency.count() > 0) {
      std::this_thread::sleep_for(latency);
    }
  }

  mutable std::mutex mutex_;
  MockScript script_;
  std::vector<CompletionRequest> requests_;
  std::deque<Fault> pending_faults_;
  std::chrono::milliseconds latency_{0};
};

}  // namespace manipeval
