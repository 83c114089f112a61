#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "manipeval/errors.hpp"
#include "manipeval/io.hpp"
#include "manipeval/logging.hpp"

namespace manipeval {

struct Message {
  std::string role;  // system | user | assistant
  std::string content;

  bool operator==(const Message&) const = default;
};

struct CompletionRequest {
  std::string model;
  double temperature = 0.0;
  std::vector<Message> messages;
  std::optional<int> max_tokens;
};

struct Completion {
  std::string text;
  std::string finish_reason;
  std::chrono::milliseconds latency{0};
  bool from_cache = false;
};

// Canonical form: fixed field set serialized with sorted keys, message
// content hashed verbatim. Equal requests always canonicalize to equal JSON.
inline nlohmann::json canonical_request_json(const CompletionRequest& req) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : req.messages) {
    messages.push_back({{"content", m.content}, {"role", m.role}});
  }
  nlohmann::json canonical = {
      {"messages", std::move(messages)},
      {"model", req.model},
      {"temperature", req.temperature},
  };
  if (req.max_tokens) {
    canonical["max_tokens"] = *req.max_tokens;
  }
  return canonical;
}

inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int digest_len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, digest, &digest_len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("sha256 digest failed");
  }
  EVP_MD_CTX_free(ctx);

  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(digest_len * 2);
  for (unsigned int i = 0; i < digest_len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0x0f]);
  }
  return out;
}

inline std::string cache_key(const CompletionRequest& req) {
  return sha256_hex(canonical_request_json(req).dump());
}

// --- backend interface ---

struct BackendResponse {
  std::string text;
  std::string finish_reason = "stop";
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  virtual BackendResponse send(const CompletionRequest& request) = 0;
};

// --- persistent completion cache ---

// Append-only store keyed by request digest. Entries are immutable: put()
// refuses to replace an existing key. When backed by a file, every accepted
// entry is appended as one JSON line, so interrupted runs resume without
// re-issuing paid calls.
class CompletionCache {
 public:
  CompletionCache() = default;

  explicit CompletionCache(const std::filesystem::path& file) : file_(file) {
    if (std::filesystem::exists(file)) {
      for (const auto& record : read_jsonl(file)) {
        if (!record.contains("key") || !record.contains("completion")) {
          log::warn("cache " + file.string() + ": skipping record without key/completion");
          continue;
        }
        Entry entry;
        entry.text = record["completion"].value("text", "");
        entry.finish_reason = record["completion"].value("finish_reason", "stop");
        entries_.emplace(record["key"].get<std::string>(), std::move(entry));
      }
    }
    if (file.has_parent_path()) {
      std::filesystem::create_directories(file.parent_path());
    }
    out_.open(file, std::ios::binary | std::ios::app);
    if (!out_) {
      throw IoError("cannot open cache file: " + file.string());
    }
  }

  std::optional<Completion> get(const std::string& key) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) {
      return std::nullopt;
    }
    Completion completion;
    completion.text = it->second.text;
    completion.finish_reason = it->second.finish_reason;
    completion.from_cache = true;
    return completion;
  }

  // Returns false (and writes nothing) if the key already exists.
  bool put(const std::string& key, const CompletionRequest& request,
           const Completion& completion) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto [it, inserted] = entries_.emplace(key, Entry{completion.text, completion.finish_reason});
    if (!inserted) {
      return false;
    }
    if (out_.is_open()) {
      nlohmann::json record = {
          {"key", key},
          {"request", canonical_request_json(request)},
          {"completion", {{"text", completion.text}, {"finish_reason", completion.finish_reason}}},
          {"created_at", iso8601_utc_now()},
      };
      out_ << record.dump() << '\n';
      out_.flush();
    }
    return true;
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return entries_.size();
  }

 private:
  struct Entry {
    std::string text;
    std::string finish_reason;
  };

  std::filesystem::path file_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, Entry> entries_;
  std::ofstream out_;
};

// --- retry policy ---

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{1000};
  double multiplier = 2.0;
  bool jitter = true;
  std::chrono::milliseconds max_delay{30000};
};

struct GatewayOptions {
  RetryPolicy retry;
  int max_concurrent_requests = 4;
  std::optional<std::filesystem::path> cache_file;
  bool cache_enabled = true;
};

namespace detail {

// Counting gate; std::counting_semaphore's count is a compile-time template
// parameter, and the bound here comes from runtime configuration.
class ConcurrencyGate {
 public:
  explicit ConcurrencyGate(int limit) : limit_(limit < 1 ? 1 : limit) {}

  void acquire() {
    std::unique_lock<std::mutex> lock(mutex_);
    cv_.wait(lock, [&] { return in_use_ < limit_; });
    ++in_use_;
  }

  void release() {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      --in_use_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  int limit_;
  int in_use_ = 0;
};

}  // namespace detail

// Backend-agnostic completion client: persistent response cache, bounded
// concurrency, in-flight de-duplication, and retry with exponential backoff.
class Gateway {
 public:
  explicit Gateway(std::shared_ptr<Backend> backend, GatewayOptions options = {})
      : backend_(std::move(backend)),
        options_(options),
        gate_(options.max_concurrent_requests),
        jitter_rng_(std::random_device{}()) {
    if (!backend_) {
      throw Error("gateway requires a backend");
    }
    if (options_.cache_enabled && options_.cache_file) {
      cache_ = std::make_unique<CompletionCache>(*options_.cache_file);
    } else if (options_.cache_enabled) {
      cache_ = std::make_unique<CompletionCache>();
    }
  }

  // On a cache hit returns the stored completion with from_cache=true and no
  // backend call. Concurrent identical requests share one backend call.
  Completion complete(const CompletionRequest& request, bool bypass_cache = false) {
    validate(request);
    const std::string key = cache_key(request);

    if (cache_ && !bypass_cache) {
      if (auto hit = cache_->get(key)) {
        return *hit;
      }
    }

    std::shared_future<Completion> future;
    bool leader = false;
    {
      std::lock_guard<std::mutex> lock(inflight_mutex_);
      auto it = inflight_.find(key);
      if (it != inflight_.end()) {
        future = it->second;
      } else {
        std::promise<Completion> promise;
        future = promise.get_future().share();
        inflight_.emplace(key, future);
        inflight_promises_.emplace(key, std::move(promise));
        leader = true;
      }
    }

    if (!leader) {
      Completion completion = future.get();
      completion.from_cache = true;
      return completion;
    }

    try {
      Completion completion = call_with_retries(request);
      if (cache_ && !bypass_cache) {
        cache_->put(key, request, completion);
      }
      settle(key, [&](std::promise<Completion>& p) { p.set_value(completion); });
      return completion;
    } catch (...) {
      auto eptr = std::current_exception();
      settle(key, [&](std::promise<Completion>& p) { p.set_exception(eptr); });
      std::rethrow_exception(eptr);
    }
  }

  std::size_t backend_calls() const { return backend_calls_.load(); }

  const CompletionCache* cache() const { return cache_.get(); }

 private:
  static void validate(const CompletionRequest& request) {
    if (request.model.empty()) {
      throw Error("completion request needs a model id");
    }
    if (request.temperature < 0.0) {
      throw Error("temperature must be >= 0");
    }
    bool has_user = false;
    for (const auto& m : request.messages) {
      if (m.role == "user") {
        has_user = true;
      } else if (m.role != "system" && m.role != "assistant") {
        throw Error("unknown message role '" + m.role + "'");
      }
    }
    if (!has_user) {
      throw Error("completion request needs at least one user message");
    }
  }

  Completion call_with_retries(const CompletionRequest& request) {
    const int max_attempts = options_.retry.max_attempts < 1 ? 1 : options_.retry.max_attempts;
    for (int attempt = 1;; ++attempt) {
      try {
        auto start = std::chrono::steady_clock::now();
        gate_.acquire();
        BackendResponse response;
        try {
          ++backend_calls_;
          response = backend_->send(request);
        } catch (...) {
          gate_.release();
          throw;
        }
        gate_.release();
        auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start);

        if (response.finish_reason != "stop" && !response.finish_reason.empty()) {
          throw BackendRefusalError(
              "backend finished with reason '" + response.finish_reason + "'",
              response.finish_reason);
        }
        Completion completion;
        completion.text = response.text;
        completion.finish_reason = response.finish_reason.empty() ? "stop"
                                                                  : response.finish_reason;
        completion.latency = latency;
        completion.from_cache = false;
        return completion;
      } catch (const AuthError&) {
        throw;  // fatal, never retried
      } catch (const BackendRefusalError&) {
        throw;
      } catch (const RateLimitedError& e) {
        if (attempt >= max_attempts) {
          throw;
        }
        auto delay = e.retry_after ? *e.retry_after : backoff_delay(attempt);
        log::warn("rate limited, retrying in " + std::to_string(delay.count()) + "ms (attempt " +
                  std::to_string(attempt) + "/" + std::to_string(max_attempts) + ")");
        std::this_thread::sleep_for(delay);
      } catch (const TransportError& e) {
        if (attempt >= max_attempts) {
          throw;
        }
        auto delay = backoff_delay(attempt);
        log::warn(std::string("transport error: ") + e.what() + ", retrying in " +
                  std::to_string(delay.count()) + "ms (attempt " + std::to_string(attempt) + "/" +
                  std::to_string(max_attempts) + ")");
        std::this_thread::sleep_for(delay);
      }
    }
  }

  std::chrono::milliseconds backoff_delay(int attempt) {
    double factor = 1.0;
    for (int i = 1; i < attempt; ++i) {
      factor *= options_.retry.multiplier;
    }
    auto delay = std::chrono::milliseconds(
        static_cast<std::int64_t>(static_cast<double>(options_.retry.base_delay.count()) * factor));
    if (delay > options_.retry.max_delay) {
      delay = options_.retry.max_delay;
    }
    if (options_.retry.jitter && delay.count() > 0) {
      std::lock_guard<std::mutex> lock(jitter_mutex_);
      std::uint64_t span = static_cast<std::uint64_t>(delay.count() / 2) + 1;
      delay += std::chrono::milliseconds(static_cast<std::int64_t>(jitter_rng_() % span));
    }
    return delay;
  }

  template <typename Settle>
  void settle(const std::string& key, Settle&& fn) {
    std::lock_guard<std::mutex> lock(inflight_mutex_);
    auto it = inflight_promises_.find(key);
    if (it != inflight_promises_.end()) {
      fn(it->second);
      inflight_promises_.erase(it);
    }
    inflight_.erase(key);
  }

  std::shared_ptr<Backend> backend_;
  GatewayOptions options_;
  std::unique_ptr<CompletionCache> cache_;
  detail::ConcurrencyGate gate_;
  std::atomic<std::size_t> backend_calls_{0};

  std::mutex inflight_mutex_;
  std::unordered_map<std::string, std::shared_future<Completion>> inflight_;
  std::unordered_map<std::string, std::promise<Completion>> inflight_promises_;

  std::mutex jitter_mutex_;
  std::mt19937_64 jitter_rng_;
};

}  // namespace manipeval
