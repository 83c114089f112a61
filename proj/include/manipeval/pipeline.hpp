#pragma once

#include <atomic>
#include <cctype>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "manipeval/corpus.hpp"
#include "manipeval/errors.hpp"
#include "manipeval/gateway.hpp"
#include "manipeval/io.hpp"
#include "manipeval/logging.hpp"
#include "manipeval/prompting.hpp"

namespace manipeval {

enum class Strategy { ZeroShot, FewShot, CoT, Iap };

inline constexpr Strategy kAllStrategies[] = {Strategy::ZeroShot, Strategy::FewShot,
                                              Strategy::CoT, Strategy::Iap};

inline std::string strategy_id(Strategy strategy) {
  switch (strategy) {
    case Strategy::ZeroShot: return "zero-shot";
    case Strategy::FewShot: return "few-shot";
    case Strategy::CoT: return "cot";
    case Strategy::Iap: return "iap";
  }
  throw Error("unreachable strategy");
}

inline std::string strategy_label(Strategy strategy) {
  switch (strategy) {
    case Strategy::ZeroShot: return "Zero-Shot";
    case Strategy::FewShot: return "Few-Shot";
    case Strategy::CoT: return "Zero-Shot CoT";
    case Strategy::Iap: return "Intent-Aware";
  }
  throw Error("unreachable strategy");
}

inline Strategy parse_strategy(const std::string& id) {
  for (Strategy s : kAllStrategies) {
    if (strategy_id(s) == id) {
      return s;
    }
  }
  throw ConfigError("unknown strategy '" + id +
                    "' (expected zero-shot, few-shot, cot, or iap)");
}

struct IntentPair {
  std::string person1;
  std::string person2;
};

struct Prediction {
  std::string dialogue_id;
  Strategy strategy = Strategy::ZeroShot;
  int r = 0;               // 1 = manipulative, 0 = not
  bool valid = false;      // false when the verdict never parsed or the call errored
  std::string raw_text;    // final raw completion text ("" on hard error)
  std::optional<IntentPair> intents;
  int n_llm_calls = 0;     // completions issued for this dialogue, cache hits included
  std::optional<std::string> error;
};

// --- verdict parsing ---

enum class VerdictMode { Strict, Lenient };

inline VerdictMode default_verdict_mode(Strategy strategy) {
  return strategy == Strategy::CoT ? VerdictMode::Lenient : VerdictMode::Strict;
}

namespace detail {

inline bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

inline std::optional<int> classify_token(const std::string& token) {
  std::string lowered = to_lower(token);
  if (lowered == "yes") {
    return 1;
  }
  if (lowered == "no") {
    return 0;
  }
  return std::nullopt;
}

}  // namespace detail

// Strict: the whole reply, minus surrounding whitespace and trailing
// punctuation (.!?), must case-insensitively equal "yes" or "no".
// Lenient: the last standalone "yes"/"no" word anywhere in the reply decides;
// intended for chain-of-thought replies that end in a verdict.
inline std::optional<int> parse_verdict(const std::string& text, VerdictMode mode) {
  if (mode == VerdictMode::Strict) {
    std::string s = trim(text);
    while (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?' ||
                          std::isspace(static_cast<unsigned char>(s.back())))) {
      s.pop_back();
    }
    return detail::classify_token(s);
  }

  std::optional<int> last;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!detail::is_word_char(text[i])) {
      ++i;
      continue;
    }
    std::size_t start = i;
    while (i < text.size() && detail::is_word_char(text[i])) {
      ++i;
    }
    if (auto verdict = detail::classify_token(text.substr(start, i - start))) {
      last = verdict;
    }
  }
  return last;
}

// --- prediction records ---

inline nlohmann::json prediction_record(const Prediction& prediction) {
  nlohmann::json record = {
      {"dialogue_id", prediction.dialogue_id},
      {"strategy", strategy_id(prediction.strategy)},
      {"r", prediction.r},
      {"valid", prediction.valid},
      {"raw_text", prediction.raw_text},
      {"n_llm_calls", prediction.n_llm_calls},
  };
  if (prediction.intents) {
    record["intents"] = {{"person1", prediction.intents->person1},
                         {"person2", prediction.intents->person2}};
  }
  if (prediction.error) {
    record["error"] = *prediction.error;
  }
  return record;
}

inline void write_predictions(const std::filesystem::path& path,
                              const std::vector<Prediction>& predictions) {
  JsonlWriter writer(path, /*append=*/false);
  for (const auto& prediction : predictions) {
    writer.write(prediction_record(prediction));
  }
}

inline std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  std::vector<Prediction> predictions;
  for (const auto& record : read_jsonl(path)) {
    Prediction prediction;
    prediction.dialogue_id = record.at("dialogue_id").get<std::string>();
    prediction.strategy = parse_strategy(record.at("strategy").get<std::string>());
    prediction.r = record.at("r").get<int>();
    prediction.valid = record.at("valid").get<bool>();
    prediction.raw_text = record.value("raw_text", "");
    prediction.n_llm_calls = record.value("n_llm_calls", 0);
    if (record.contains("intents")) {
      prediction.intents = IntentPair{record["intents"].value("person1", ""),
                                      record["intents"].value("person2", "")};
    }
    if (record.contains("error")) {
      prediction.error = record["error"].get<std::string>();
    }
    predictions.push_back(std::move(prediction));
  }
  return predictions;
}

// --- runner ---

struct RunOptions {
  int concurrency = 1;
  double error_threshold = 0.05;  // abort when errored fraction exceeds this
  std::map<Strategy, VerdictMode> verdict_overrides;
  JsonlWriter* log = nullptr;  // optional per-dialogue run log
};

struct RunResult {
  std::vector<Prediction> predictions;  // corpus order
  std::size_t n_errors = 0;
  std::size_t n_invalid = 0;  // valid == false, errors included
  std::size_t total_llm_calls = 0;
};

// Executes one detection strategy over a corpus through the gateway.
// Baseline strategies are one call per dialogue; the intent-aware strategy
// first summarizes both speakers' intents with the full dialogue in view,
// then passes dialogue plus both intents to the detection prompt.
class StrategyRunner {
 public:
  StrategyRunner(Gateway& gateway, const TemplateSet& templates, std::string model,
                 double temperature, std::optional<FewShotBank> bank = std::nullopt)
      : gateway_(gateway),
        templates_(templates),
        model_(std::move(model)),
        temperature_(temperature),
        bank_(std::move(bank)) {}

  IntentPair summarize_intents(const Dialogue& dialogue, int* n_calls = nullptr) const {
    IntentPair intents;
    intents.person1 = summarize_one(dialogue, Speaker::Person1, n_calls);
    intents.person2 = summarize_one(dialogue, Speaker::Person2, n_calls);
    return intents;
  }

  Prediction detect(const Dialogue& dialogue, Strategy strategy,
                    std::optional<VerdictMode> mode_override = std::nullopt) const {
    if (strategy == Strategy::Iap) {
      return detect_iap(dialogue, mode_override);
    }
    Prediction prediction;
    prediction.dialogue_id = dialogue.id;
    prediction.strategy = strategy;

    RenderedPrompt prompt = render_baseline(dialogue, strategy);
    VerdictMode mode = mode_override.value_or(default_verdict_mode(strategy));
    finish_with_verdict(prediction, prompt.text, mode);
    return prediction;
  }

  Prediction detect_iap(const Dialogue& dialogue,
                        std::optional<VerdictMode> mode_override = std::nullopt) const {
    Prediction prediction;
    prediction.dialogue_id = dialogue.id;
    prediction.strategy = Strategy::Iap;

    IntentPair intents = summarize_intents(dialogue, &prediction.n_llm_calls);
    prediction.intents = intents;
    RenderedPrompt prompt =
        render_iap_detection(templates_, dialogue, intents.person1, intents.person2);
    VerdictMode mode = mode_override.value_or(default_verdict_mode(Strategy::Iap));
    finish_with_verdict(prediction, prompt.text, mode);
    return prediction;
  }

  RunResult run(const Corpus& corpus, Strategy strategy, const RunOptions& options) const {
    RunResult result;
    const std::size_t n = corpus.dialogues.size();
    result.predictions.resize(n);
    if (n == 0) {
      return result;
    }

    std::optional<VerdictMode> override;
    if (auto it = options.verdict_overrides.find(strategy);
        it != options.verdict_overrides.end()) {
      override = it->second;
    }

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        const Dialogue& dialogue = corpus.dialogues[i];
        auto start = std::chrono::steady_clock::now();
        Prediction prediction;
        try {
          prediction = detect(dialogue, strategy, override);
        } catch (const Error& e) {
          prediction.dialogue_id = dialogue.id;
          prediction.strategy = strategy;
          prediction.r = 0;
          prediction.valid = false;
          prediction.error = e.what();
          log::warn("dialogue " + dialogue.id + " (" + strategy_id(strategy) +
                    ") failed: " + e.what());
        }
        auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start);
        if (options.log) {
          nlohmann::json record = prediction_record(prediction);
          record["timings"] = {{"latency_ms", elapsed.count()}, {"finished_at", iso8601_utc_now()}};
          options.log->write(record);
        }
        result.predictions[i] = std::move(prediction);
      }
    };

    int threads = options.concurrency < 1 ? 1 : options.concurrency;
    if (static_cast<std::size_t>(threads) > n) {
      threads = static_cast<int>(n);
    }
    if (threads == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      pool.reserve(static_cast<std::size_t>(threads));
      for (int t = 0; t < threads; ++t) {
        pool.emplace_back(worker);
      }
      for (auto& t : pool) {
        t.join();
      }
    }

    for (const auto& prediction : result.predictions) {
      if (prediction.error) {
        ++result.n_errors;
      }
      if (!prediction.valid) {
        ++result.n_invalid;
      }
      result.total_llm_calls += static_cast<std::size_t>(prediction.n_llm_calls);
    }
    double error_fraction = static_cast<double>(result.n_errors) / static_cast<double>(n);
    if (error_fraction > options.error_threshold) {
      throw ThresholdExceededError(
          "errored on " + std::to_string(result.n_errors) + "/" + std::to_string(n) +
          " dialogues, above threshold " + std::to_string(options.error_threshold));
    }
    return result;
  }

 private:
  static constexpr const char* kVerdictNudge = "\n\nAnswer only 'Yes' or 'No'.";

  RenderedPrompt render_baseline(const Dialogue& dialogue, Strategy strategy) const {
    switch (strategy) {
      case Strategy::ZeroShot:
        return render_zero_shot(templates_, dialogue);
      case Strategy::FewShot:
        if (!bank_) {
          throw BankCompositionError("few-shot strategy needs an exemplar bank");
        }
        return render_few_shot(templates_, dialogue, *bank_);
      case Strategy::CoT:
        return render_cot(templates_, dialogue);
      case Strategy::Iap:
        break;
    }
    throw Error("unreachable strategy");
  }

  Completion issue(const std::string& prompt_text, int& n_calls, bool bypass_cache = false) const {
    CompletionRequest request;
    request.model = model_;
    request.temperature = temperature_;
    request.messages = {{"user", prompt_text}};
    ++n_calls;
    return gateway_.complete(request, bypass_cache);
  }

  std::string summarize_one(const Dialogue& dialogue, Speaker speaker, int* n_calls) const {
    int local_calls = 0;
    int& calls = n_calls ? *n_calls : local_calls;
    RenderedPrompt prompt = render_intent_summarization(templates_, dialogue, speaker);
    std::string intent = trim(issue(prompt.text, calls).text);
    if (intent.empty()) {
      log::warn("blank intent for " + speaker_name(speaker) + " on dialogue " + dialogue.id +
                ", retrying once");
      intent = trim(issue(prompt.text, calls, /*bypass_cache=*/true).text);
    }
    if (intent.empty()) {
      throw EmptyIntentError("intent summary for " + speaker_name(speaker) + " on dialogue " +
                             dialogue.id + " came back blank twice");
    }
    return intent;
  }

  // One completion, one re-ask on an unparseable verdict, then give up with
  // r=0 and valid=false so the dialogue still counts in every denominator.
  void finish_with_verdict(Prediction& prediction, const std::string& prompt_text,
                           VerdictMode mode) const {
    Completion completion = issue(prompt_text, prediction.n_llm_calls);
    prediction.raw_text = completion.text;
    if (auto verdict = parse_verdict(completion.text, mode)) {
      prediction.r = *verdict;
      prediction.valid = true;
      return;
    }
    log::warn("unparseable verdict for dialogue " + prediction.dialogue_id + ", re-asking");
    completion = issue(prompt_text + kVerdictNudge, prediction.n_llm_calls);
    prediction.raw_text = completion.text;
    if (auto verdict = parse_verdict(completion.text, mode)) {
      prediction.r = *verdict;
      prediction.valid = true;
      return;
    }
    prediction.r = 0;
    prediction.valid = false;
  }

  Gateway& gateway_;
  const TemplateSet& templates_;
  std::string model_;
  double temperature_;
  std::optional<FewShotBank> bank_;
};

}  // namespace manipeval
