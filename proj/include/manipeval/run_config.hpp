#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "manipeval/corpus.hpp"
#include "manipeval/errors.hpp"
#include "manipeval/io.hpp"
#include "manipeval/pipeline.hpp"

namespace manipeval {

// Fully resolved run configuration; every field has its final value.
struct RunConfig {
  std::filesystem::path dataset;
  SchemaMap schema;
  std::optional<double> sample_frac;  // unset = evaluate the full corpus
  std::uint32_t seed = 7;
  std::uint32_t fewshot_seed = 7;  // defaults to `seed` unless set explicitly
  std::vector<Strategy> strategies;  // resolution default: all four
  std::string model = "gpt-4-1106-preview";
  double temperature = 0.0;
  std::string endpoint = "https://api.openai.com/v1";
  std::string api_key;
  std::optional<std::filesystem::path> cache;  // default <out>/cache.jsonl
  std::filesystem::path out = "out";
  int concurrency = 4;
  std::optional<std::filesystem::path> mock_script;
  Strategy baseline = Strategy::ZeroShot;
  double error_threshold = 0.05;
  std::map<Strategy, VerdictMode> verdict_overrides;
  std::filesystem::path templates_dir = "assets/templates";
};

// Values captured from command-line flags; unset members defer to the
// config file, then the environment, then built-in defaults.
struct CliOverrides {
  std::optional<std::filesystem::path> config_file;
  std::optional<std::filesystem::path> dataset;
  std::optional<double> sample_frac;
  std::optional<std::uint32_t> seed;
  std::optional<std::uint32_t> fewshot_seed;
  std::vector<std::string> strategies;  // empty = unset
  std::optional<std::string> model;
  std::optional<double> temperature;
  std::optional<std::string> endpoint;
  std::optional<std::string> api_key;
  std::optional<std::filesystem::path> cache;
  std::optional<std::filesystem::path> out;
  std::optional<int> concurrency;
  std::optional<std::filesystem::path> mock_script;
  std::optional<std::string> baseline;
  std::optional<double> error_threshold;
  std::optional<std::filesystem::path> templates_dir;
};

using EnvReader = std::function<std::optional<std::string>(const std::string&)>;

inline EnvReader default_env_reader() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* value = std::getenv(name.c_str());
    if (!value) {
      return std::nullopt;
    }
    return std::string(value);
  };
}

namespace detail {

inline VerdictMode parse_verdict_mode(const std::string& name) {
  std::string key = to_lower(trim(name));
  if (key == "strict") {
    return VerdictMode::Strict;
  }
  if (key == "lenient") {
    return VerdictMode::Lenient;
  }
  throw ConfigError("unknown verdict mode '" + name + "' (expected strict or lenient)");
}

inline GoldLabel parse_gold_label(const std::string& name) {
  std::string key = to_lower(trim(name));
  if (key == "manipulative") {
    return GoldLabel::Manipulative;
  }
  if (key == "non_manipulative" || key == "non-manipulative") {
    return GoldLabel::NonManipulative;
  }
  throw ConfigError("unknown gold label '" + name +
                    "' (expected manipulative or non_manipulative)");
}

// Returns true when the file assigned fewshot_seed explicitly.
inline bool apply_config_file(RunConfig& config, const std::filesystem::path& file) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(file));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + file.string() + ": " + e.what());
  }
  if (!doc.is_object()) {
    throw ConfigError("config file " + file.string() + " must hold a JSON object");
  }
  for (const auto& [key, value] : doc.items()) {
    if (key == "dataset") {
      config.dataset = value.get<std::string>();
    } else if (key == "schema") {
      if (value.contains("id_column")) config.schema.id_column = value["id_column"];
      if (value.contains("text_column")) config.schema.text_column = value["text_column"];
      if (value.contains("label_column")) config.schema.label_column = value["label_column"];
      if (value.contains("label_values")) {
        config.schema.label_values.clear();
        for (const auto& [cell, label] : value["label_values"].items()) {
          config.schema.label_values.emplace(to_lower(cell),
                                             parse_gold_label(label.get<std::string>()));
        }
      }
    } else if (key == "sample_frac") {
      config.sample_frac = value.get<double>();
    } else if (key == "seed") {
      config.seed = value.get<std::uint32_t>();
    } else if (key == "fewshot_seed") {
      config.fewshot_seed = value.get<std::uint32_t>();
    } else if (key == "strategies") {
      config.strategies.clear();
      for (const auto& id : value) {
        config.strategies.push_back(parse_strategy(id.get<std::string>()));
      }
    } else if (key == "model") {
      config.model = value.get<std::string>();
    } else if (key == "temperature") {
      config.temperature = value.get<double>();
    } else if (key == "endpoint") {
      config.endpoint = value.get<std::string>();
    } else if (key == "api_key") {
      config.api_key = value.get<std::string>();
    } else if (key == "cache") {
      config.cache = std::filesystem::path(value.get<std::string>());
    } else if (key == "out") {
      config.out = value.get<std::string>();
    } else if (key == "concurrency") {
      config.concurrency = value.get<int>();
    } else if (key == "mock_script") {
      config.mock_script = std::filesystem::path(value.get<std::string>());
    } else if (key == "baseline") {
      config.baseline = parse_strategy(value.get<std::string>());
    } else if (key == "error_threshold") {
      config.error_threshold = value.get<double>();
    } else if (key == "verdict_overrides") {
      for (const auto& [strategy, mode] : value.items()) {
        config.verdict_overrides[parse_strategy(strategy)] =
            parse_verdict_mode(mode.get<std::string>());
      }
    } else if (key == "templates_dir") {
      config.templates_dir = value.get<std::string>();
    } else {
      throw ConfigError("config file " + file.string() + ": unknown key '" + key + "'");
    }
  }
  return doc.contains("fewshot_seed");
}

inline std::string endpoint_host(const std::string& endpoint) {
  auto scheme_end = endpoint.find("://");
  std::size_t start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  if (start < endpoint.size() && endpoint[start] == '[') {  // bracketed IPv6 literal
    auto close = endpoint.find(']', start);
    if (close != std::string::npos) {
      return endpoint.substr(start, close - start + 1);
    }
  }
  auto end = endpoint.find_first_of(":/", start);
  return endpoint.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

inline bool is_local_endpoint(const std::string& endpoint) {
  std::string host = to_lower(endpoint_host(endpoint));
  return host == "localhost" || host == "127.0.0.1" || host == "[::1]" || host == "::1" ||
         host == "0.0.0.0";
}

}  // namespace detail

// Layering, lowest to highest: built-in defaults, environment (MANIPEVAL_API_KEY,
// MANIPEVAL_ENDPOINT, MANIPEVAL_MODEL), config file, command-line flags.
inline RunConfig resolve_config(const CliOverrides& overrides,
                                const EnvReader& env = default_env_reader()) {
  RunConfig config;
  bool fewshot_seed_set = false;

  if (auto v = env("MANIPEVAL_API_KEY")) {
    config.api_key = *v;
  }
  if (auto v = env("MANIPEVAL_ENDPOINT")) {
    config.endpoint = *v;
  }
  if (auto v = env("MANIPEVAL_MODEL")) {
    config.model = *v;
  }

  if (overrides.config_file) {
    fewshot_seed_set = detail::apply_config_file(config, *overrides.config_file);
  }

  if (overrides.dataset) config.dataset = *overrides.dataset;
  if (overrides.sample_frac) config.sample_frac = *overrides.sample_frac;
  if (overrides.seed) config.seed = *overrides.seed;
  if (overrides.fewshot_seed) {
    config.fewshot_seed = *overrides.fewshot_seed;
    fewshot_seed_set = true;
  }
  if (!overrides.strategies.empty()) {
    config.strategies.clear();
    for (const auto& id : overrides.strategies) {
      config.strategies.push_back(parse_strategy(id));
    }
  }
  if (overrides.model) config.model = *overrides.model;
  if (overrides.temperature) config.temperature = *overrides.temperature;
  if (overrides.endpoint) config.endpoint = *overrides.endpoint;
  if (overrides.api_key) config.api_key = *overrides.api_key;
  if (overrides.cache) config.cache = *overrides.cache;
  if (overrides.out) config.out = *overrides.out;
  if (overrides.concurrency) config.concurrency = *overrides.concurrency;
  if (overrides.mock_script) config.mock_script = *overrides.mock_script;
  if (overrides.baseline) config.baseline = parse_strategy(*overrides.baseline);
  if (overrides.error_threshold) config.error_threshold = *overrides.error_threshold;
  if (overrides.templates_dir) config.templates_dir = *overrides.templates_dir;

  if (!fewshot_seed_set) {
    config.fewshot_seed = config.seed;
  }
  if (config.strategies.empty()) {
    config.strategies = {Strategy::ZeroShot, Strategy::FewShot, Strategy::CoT, Strategy::Iap};
  }
  if (!config.cache) {
    config.cache = config.out / "cache.jsonl";
  }
  return config;
}

// Startup validation; throws ConfigError before any artifact is written.
inline void validate_config(const RunConfig& config) {
  if (config.dataset.empty()) {
    throw ConfigError("no dataset given (--dataset or config key 'dataset')");
  }
  if (!std::filesystem::exists(config.dataset)) {
    throw ConfigError("dataset not found: " + config.dataset.string());
  }
  if (!std::filesystem::exists(config.templates_dir)) {
    throw ConfigError("template directory not found: " + config.templates_dir.string());
  }
  if (config.sample_frac && (*config.sample_frac <= 0.0 || *config.sample_frac > 1.0)) {
    throw ConfigError("sample fraction must lie in (0,1], got " +
                      std::to_string(*config.sample_frac));
  }
  if (config.concurrency < 1) {
    throw ConfigError("concurrency bound must be >= 1");
  }
  if (config.error_threshold < 0.0 || config.error_threshold > 1.0) {
    throw ConfigError("error threshold must lie in [0,1]");
  }
  if (config.temperature < 0.0) {
    throw ConfigError("temperature must be >= 0");
  }
  if (config.mock_script && !std::filesystem::exists(*config.mock_script)) {
    throw ConfigError("mock script not found: " + config.mock_script->string());
  }
  if (!config.mock_script && config.api_key.empty() &&
      !detail::is_local_endpoint(config.endpoint)) {
    throw ConfigError("remote endpoint " + config.endpoint +
                      " needs a credential (MANIPEVAL_API_KEY) or a --mock-script");
  }
}

}  // namespace manipeval
