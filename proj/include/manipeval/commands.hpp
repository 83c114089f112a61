#pragma once

#include <algorithm>
#include <filesystem>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "manipeval/anneval.hpp"
#include "manipeval/corpus.hpp"
#include "manipeval/errors.hpp"
#include "manipeval/gateway.hpp"
#include "manipeval/http_backend.hpp"
#include "manipeval/metrics.hpp"
#include "manipeval/mock_backend.hpp"
#include "manipeval/pipeline.hpp"
#include "manipeval/prompting.hpp"
#include "manipeval/run_config.hpp"

namespace manipeval {

namespace detail {

inline std::string json_file_text(const nlohmann::json& doc) { return doc.dump(2) + "\n"; }

inline StrategyResult strategy_result_from_file(const std::filesystem::path& file) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(file));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("metrics file " + file.string() + ": " + e.what());
  }
  StrategyResult result;
  result.strategy = parse_strategy(doc.at("strategy").get<std::string>());
  result.metrics = metrics_from_json(doc);
  result.n_invalid = doc.value("n_invalid", 0u);
  return result;
}

// Accepts metrics files directly, or directories scanned for *.json
// (preferring a metrics/ subdirectory when present).
inline std::vector<StrategyResult> load_strategy_results(
    const std::vector<std::filesystem::path>& inputs) {
  std::vector<std::filesystem::path> files;
  for (const auto& input : inputs) {
    if (std::filesystem::is_directory(input)) {
      std::filesystem::path dir = input;
      if (std::filesystem::is_directory(input / "metrics")) {
        dir = input / "metrics";
      }
      std::vector<std::filesystem::path> found;
      for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") {
          found.push_back(entry.path());
        }
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(input);
    }
  }
  std::vector<StrategyResult> results;
  std::set<std::string> seen;
  for (const auto& file : files) {
    StrategyResult result = strategy_result_from_file(file);
    if (!seen.insert(strategy_id(result.strategy)).second) {
      throw ConfigError("strategy " + strategy_id(result.strategy) +
                        " appears in more than one metrics file");
    }
    results.push_back(std::move(result));
  }
  return results;
}

// Stable reporting order regardless of how inputs were discovered.
inline void sort_chart_order(std::vector<StrategyResult>& results) {
  auto rank = [](Strategy strategy) {
    for (std::size_t i = 0; i < std::size(kAllStrategies); ++i) {
      if (kAllStrategies[i] == strategy) {
        return i;
      }
    }
    return std::size(kAllStrategies);
  };
  std::sort(results.begin(), results.end(), [&](const auto& a, const auto& b) {
    return rank(a.strategy) < rank(b.strategy);
  });
}

inline void write_comparison_artifacts(const std::vector<StrategyResult>& results,
                                       Strategy baseline,
                                       const std::filesystem::path& out_dir) {
  write_text_file(out_dir / "compare.md", render_comparison_markdown(results, baseline));
  write_text_file(out_dir / "compare.json", json_file_text(comparison_json(results, baseline)));
  write_text_file(out_dir / "fnfp.json", json_file_text(emit_fnfp_chart(results)));
}

}  // namespace detail

struct RunSummary {
  std::vector<StrategyResult> results;
  std::filesystem::path out;
};

// Load → sample → (few-shot only) pick exemplars from the held-out remainder
// → run each strategy → write predictions, metrics, and comparison artifacts.
// An INCOMPLETE marker sits in the output directory for the whole run and is
// removed only on success, so partial artifacts are always flagged.
inline RunSummary cmd_run(const RunConfig& config, std::ostream& out) {
  validate_config(config);
  TemplateSet templates = TemplateSet::load(config.templates_dir);

  std::filesystem::create_directories(config.out);
  const std::filesystem::path marker = config.out / "INCOMPLETE";
  write_text_file(marker, "run started " + iso8601_utc_now() + "\n");

  Corpus corpus = load_dataset(config.dataset, config.schema, {});
  out << "loaded " << corpus.dialogues.size() << " dialogues from " << config.dataset.string()
      << "\n";

  Corpus subset = corpus;
  if (config.sample_frac) {
    subset = sample_subset(corpus, *config.sample_frac, config.seed);
    out << "sampled " << subset.dialogues.size() << " dialogues (fraction "
        << *config.sample_frac << ", seed " << config.seed << ")\n";
  }

  std::vector<Strategy> strategies;
  for (Strategy strategy : config.strategies) {
    if (std::find(strategies.begin(), strategies.end(), strategy) == strategies.end()) {
      strategies.push_back(strategy);
    }
  }

  std::optional<FewShotBank> bank;
  if (std::find(strategies.begin(), strategies.end(), Strategy::FewShot) != strategies.end()) {
    Corpus pool = complement(corpus, subset);
    if (pool.dialogues.empty()) {
      throw ConfigError(
          "few-shot exemplars come from dialogues held out of the evaluation subset; "
          "run with --sample-frac below 1 so a remainder exists");
    }
    bank = select_few_shot(pool, config.fewshot_seed);
    out << "few-shot bank: " << bank->exemplars[0].dialogue.id << " (Yes), "
        << bank->exemplars[1].dialogue.id << " (No), " << bank->exemplars[2].dialogue.id
        << " (No)\n";
  }

  std::shared_ptr<Backend> backend;
  if (config.mock_script) {
    backend = std::make_shared<MockBackend>(load_mock_script(*config.mock_script));
  } else {
    HttpBackendOptions http;
    http.endpoint = config.endpoint;
    http.api_key = config.api_key;
    backend = std::make_shared<HttpBackend>(http);
  }
  GatewayOptions gateway_options;
  gateway_options.max_concurrent_requests = config.concurrency;
  gateway_options.cache_file = config.cache;
  Gateway gateway(backend, gateway_options);

  StrategyRunner runner(gateway, templates, config.model, config.temperature, bank);

  RunSummary summary;
  summary.out = config.out;
  for (Strategy strategy : strategies) {
    JsonlWriter log(config.out / "logs" / (strategy_id(strategy) + ".jsonl"), /*append=*/false);
    RunOptions options;
    options.concurrency = config.concurrency;
    options.error_threshold = config.error_threshold;
    options.verdict_overrides = config.verdict_overrides;
    options.log = &log;

    RunResult result = runner.run(subset, strategy, options);
    write_predictions(config.out / "predictions" / (strategy_id(strategy) + ".jsonl"),
                      result.predictions);

    StrategyResult scored;
    scored.strategy = strategy;
    scored.metrics = compute_metrics(confusion(result.predictions, subset));
    scored.n_invalid = result.n_invalid;
    write_text_file(config.out / "metrics" / (strategy_id(strategy) + ".json"),
                    detail::json_file_text(metrics_json(scored)));
    summary.results.push_back(scored);

    out << strategy_id(strategy) << ": n=" << scored.metrics.confusion.total()
        << " fn=" << scored.metrics.confusion.fn << " fp=" << scored.metrics.confusion.fp
        << " accuracy=" << detail::fmt3(scored.metrics.accuracy)
        << " f1w=" << detail::fmt3(scored.metrics.f1_weighted)
        << " f1m=" << detail::fmt3(scored.metrics.f1_macro) << " invalid=" << result.n_invalid
        << " llm_calls=" << result.total_llm_calls << "\n";
  }

  bool baseline_present =
      std::find(strategies.begin(), strategies.end(), config.baseline) != strategies.end();
  if (summary.results.size() >= 2 && baseline_present) {
    detail::write_comparison_artifacts(summary.results, config.baseline, config.out);
    out << "wrote " << (config.out / "compare.md").string() << "\n";
  }

  nlohmann::json manifest = {
      {"dataset", config.dataset.string()},
      {"model", config.model},
      {"temperature", config.temperature},
      {"seed", config.seed},
      {"fewshot_seed", config.fewshot_seed},
      {"strategies", nlohmann::json::array()},
      {"baseline", strategy_id(config.baseline)},
  };
  if (config.sample_frac) {
    manifest["sample_frac"] = *config.sample_frac;
  }
  for (Strategy strategy : strategies) {
    manifest["strategies"].push_back(strategy_id(strategy));
  }
  write_text_file(config.out / "run.json", detail::json_file_text(manifest));

  std::filesystem::remove(marker);
  return summary;
}

// Rebuild the comparison artifacts from previously written metrics files.
inline void cmd_compare(const std::vector<std::filesystem::path>& inputs, Strategy baseline,
                        const std::filesystem::path& out_dir, std::ostream& out) {
  std::vector<StrategyResult> results = detail::load_strategy_results(inputs);
  if (results.size() < 2) {
    throw ConfigError("compare needs at least two metrics reports, got " +
                      std::to_string(results.size()));
  }
  detail::sort_chart_order(results);
  std::string markdown = render_comparison_markdown(results, baseline);
  std::filesystem::create_directories(out_dir);
  detail::write_comparison_artifacts(results, baseline, out_dir);
  out << markdown;
}

struct AnnotateArgs {
  std::filesystem::path dataset;
  SchemaMap schema;
  std::optional<std::filesystem::path> predictions;  // required for the intent task
  std::string task = "manipulator";                  // manipulator | intent
  std::string annotator_id;
  std::filesystem::path out = "out";
  std::optional<std::size_t> limit;
};

// Interactive annotation pass; writes out/sessions/<annotator>_<task>.jsonl.
// Sessions resume automatically: already-answered dialogues are skipped.
inline void cmd_annotate(const AnnotateArgs& args, std::istream& in, std::ostream& out) {
  if (args.annotator_id.empty()) {
    throw ConfigError("annotate needs --annotator");
  }
  if (args.task != "manipulator" && args.task != "intent") {
    throw ConfigError("unknown annotation task '" + args.task +
                      "' (expected manipulator or intent)");
  }
  Corpus corpus = load_dataset(args.dataset, args.schema, {});

  std::vector<AnnotationItem> items;
  if (args.task == "manipulator") {
    for (const auto& dialogue : corpus.dialogues) {
      items.push_back({dialogue.id, serialize_dialogue(dialogue) +
                                        "\n\nWho is the manipulator in this dialogue?"});
    }
  } else {
    if (!args.predictions) {
      throw ConfigError("the intent task needs --predictions pointing at an iap run");
    }
    std::map<std::string, const Dialogue*> by_id;
    for (const auto& dialogue : corpus.dialogues) {
      by_id.emplace(dialogue.id, &dialogue);
    }
    for (const auto& prediction : read_predictions(*args.predictions)) {
      if (!prediction.intents) {
        continue;  // only intent-bearing predictions are judgeable
      }
      auto it = by_id.find(prediction.dialogue_id);
      if (it == by_id.end()) {
        throw IdMismatchError("prediction for dialogue " + prediction.dialogue_id +
                              " has no dialogue in the dataset");
      }
      items.push_back({prediction.dialogue_id,
                       serialize_dialogue(*it->second) + "\n\nPerson1 intent: " +
                           prediction.intents->person1 + "\nPerson2 intent: " +
                           prediction.intents->person2 +
                           "\n\nDo these summaries point to the actual manipulator(s)?"});
    }
    if (items.empty()) {
      throw ConfigError("no predictions with intents found in " + args.predictions->string());
    }
  }
  if (args.limit && items.size() > *args.limit) {
    items.resize(*args.limit);
  }

  AnswerSpec spec = args.task == "manipulator" ? manipulator_answer_spec() : intent_answer_spec();
  std::filesystem::path session_file =
      args.out / "sessions" / (args.annotator_id + "_" + args.task + ".jsonl");
  annotate_session(items, spec, args.annotator_id, session_file, in, out);
  out << "session file: " << session_file.string() << "\n";
}

// Percent agreement between two annotators' session files.
inline AgreementReport cmd_agreement(const std::filesystem::path& a,
                                     const std::filesystem::path& b, bool with_kappa,
                                     std::ostream& out) {
  std::vector<SessionRecord> records_a = load_session(a);
  std::vector<SessionRecord> records_b = load_session(b);
  AgreementReport report =
      percent_agreement(to_annotations(records_a), to_annotations(records_b));
  out << "agreement: " << report.n_agree << "/" << report.n << " = "
      << format_percent(report.ratio) << "\n";
  if (with_kappa) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f",
                  cohen_kappa(to_annotations(records_a), to_annotations(records_b)));
    out << "cohen_kappa: " << buf << "\n";
  }
  return report;
}

// Fraction of intent judgments marked accurate in one session file.
inline IntentAccuracyReport cmd_intent_accuracy(const std::filesystem::path& file,
                                                std::ostream& out) {
  IntentAccuracyReport report = intent_accuracy(to_intent_judgments(load_session(file)));
  out << "intent accuracy: " << report.n_accurate << "/" << report.n << " = "
      << format_percent(report.ratio) << "\n";
  return report;
}

// FN/FP chart data from a directory of metrics reports.
inline void cmd_chart(const std::filesystem::path& in_dir,
                      const std::filesystem::path& out_file, std::ostream& out) {
  std::vector<StrategyResult> results = detail::load_strategy_results({in_dir});
  if (results.empty()) {
    throw ConfigError("no metrics reports found under " + in_dir.string());
  }
  write_text_file(out_file, detail::json_file_text(emit_fnfp_chart(results)));
  out << "wrote " << out_file.string() << "\n";
}

}  // namespace manipeval
