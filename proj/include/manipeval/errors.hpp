#pragma once

#include <chrono>
#include <optional>
#include <stdexcept>
#include <string>

namespace manipeval {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& message) : std::runtime_error(message) {}
};

// --- corpus ---

class EmptyDialogueError : public Error {
 public:
  using Error::Error;
};

class MalformedLineError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

// Aggregates row-level failures (parse errors, label errors, duplicate ids)
// raised when loading a dataset in strict mode.
class DatasetError : public Error {
 public:
  using Error::Error;
};

class InvalidFractionError : public Error {
 public:
  using Error::Error;
};

class InsufficientPoolError : public Error {
 public:
  using Error::Error;
};

// --- prompting ---

class TemplateError : public Error {
 public:
  using Error::Error;
};

class BankCompositionError : public Error {
 public:
  using Error::Error;
};

class EmptyIntentError : public Error {
 public:
  using Error::Error;
};

class RenderError : public Error {
 public:
  using Error::Error;
};

// --- gateway ---

class TransportError : public Error {
 public:
  using Error::Error;
};

class RateLimitedError : public Error {
 public:
  explicit RateLimitedError(const std::string& message,
                            std::optional<std::chrono::milliseconds> retry_after = std::nullopt)
      : Error(message), retry_after(retry_after) {}

  std::optional<std::chrono::milliseconds> retry_after;
};

class AuthError : public Error {
 public:
  using Error::Error;
};

// Raised when the backend finished for a reason other than a normal stop
// (content filter, truncation, ...). The finish reason is preserved.
class BackendRefusalError : public Error {
 public:
  explicit BackendRefusalError(const std::string& message, std::string finish_reason)
      : Error(message), finish_reason(std::move(finish_reason)) {}

  std::string finish_reason;
};

class UnscriptedPromptError : public Error {
 public:
  using Error::Error;
};

// --- metrics ---

class MissingLabelError : public Error {
 public:
  using Error::Error;
};

class EmptyMatrixError : public Error {
 public:
  using Error::Error;
};

// --- anneval ---

class IdMismatchError : public Error {
 public:
  using Error::Error;
};

class SessionError : public Error {
 public:
  using Error::Error;
};

// --- pipeline / cli ---

class ThresholdExceededError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace manipeval
