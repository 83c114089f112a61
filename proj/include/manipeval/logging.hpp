#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <utility>

namespace manipeval::log {

enum class Level { Info, Warning };

using Sink = std::function<void(Level, const std::string&)>;

namespace detail {

inline std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

inline Sink& sink_ref() {
  static Sink sink = [](Level level, const std::string& message) {
    std::cerr << (level == Level::Warning ? "[warn] " : "[info] ") << message << '\n';
  };
  return sink;
}

inline void emit(Level level, const std::string& message) {
  std::lock_guard<std::mutex> lock(detail::sink_mutex());
  if (sink_ref()) {
    sink_ref()(level, message);
  }
}

}  // namespace detail

inline void set_sink(Sink sink) {
  std::lock_guard<std::mutex> lock(detail::sink_mutex());
  detail::sink_ref() = std::move(sink);
}

inline void warn(const std::string& message) { detail::emit(Level::Warning, message); }

inline void info(const std::string& message) { detail::emit(Level::Info, message); }

}  // namespace manipeval::log
