#include "manipeval/pipeline.hpp"

#include <gtest/gtest.h>

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "manipeval/mock_backend.hpp"
#include "test_support.hpp"

using namespace manipeval;
using testsupport::TempDir;
using testsupport::make_dialogue;

namespace {

const TemplateSet& shipped_templates() {
  static TemplateSet set = TemplateSet::load(testsupport::templates_dir());
  return set;
}

struct Harness {
  std::shared_ptr<MockBackend> backend;
  std::unique_ptr<Gateway> gateway;
  std::unique_ptr<StrategyRunner> runner;

  explicit Harness(MockScript script, std::optional<FewShotBank> bank = std::nullopt,
                   std::optional<std::filesystem::path> cache_file = std::nullopt) {
    backend = std::make_shared<MockBackend>(std::move(script));
    GatewayOptions options;
    options.retry.max_attempts = 1;
    options.retry.jitter = false;
    options.cache_file = std::move(cache_file);
    gateway = std::make_unique<Gateway>(backend, options);
    runner = std::make_unique<StrategyRunner>(*gateway, shipped_templates(), "test-model", 0.0,
                                              std::move(bank));
  }
};

// Markers present in exactly one of the three prompt families.
constexpr const char* kIntentP1Marker = "statement made by Person1";
constexpr const char* kIntentP2Marker = "statement made by Person2";
constexpr const char* kDetectionMarker = "dialogue and intent of person1";

MockScript iap_script(const std::string& verdict = "Yes") {
  MockScript script;
  script.rules.push_back({kIntentP1Marker, "Person1 wants to shift the blame."});
  script.rules.push_back({kIntentP2Marker, "Person2 wants reassurance."});
  script.rules.push_back({kDetectionMarker, verdict});
  return script;
}

}  // namespace

// --- strategy identifiers ---

TEST(StrategyIds, RoundTripThroughParse) {
  for (Strategy strategy : kAllStrategies) {
    EXPECT_EQ(parse_strategy(strategy_id(strategy)), strategy);
  }
  EXPECT_EQ(strategy_id(Strategy::ZeroShot), "zero-shot");
  EXPECT_EQ(strategy_id(Strategy::FewShot), "few-shot");
  EXPECT_EQ(strategy_id(Strategy::CoT), "cot");
  EXPECT_EQ(strategy_id(Strategy::Iap), "iap");
  EXPECT_THROW(parse_strategy("chain-of-thought"), ConfigError);
}

TEST(StrategyIds, LabelsMatchReportingNames) {
  EXPECT_EQ(strategy_label(Strategy::ZeroShot), "Zero-Shot");
  EXPECT_EQ(strategy_label(Strategy::FewShot), "Few-Shot");
  EXPECT_EQ(strategy_label(Strategy::CoT), "Zero-Shot CoT");
  EXPECT_EQ(strategy_label(Strategy::Iap), "Intent-Aware");
}

TEST(VerdictMode, CoTDefaultsLenientOthersStrict) {
  EXPECT_EQ(default_verdict_mode(Strategy::ZeroShot), VerdictMode::Strict);
  EXPECT_EQ(default_verdict_mode(Strategy::FewShot), VerdictMode::Strict);
  EXPECT_EQ(default_verdict_mode(Strategy::Iap), VerdictMode::Strict);
  EXPECT_EQ(default_verdict_mode(Strategy::CoT), VerdictMode::Lenient);
}

// --- parse_verdict ---

TEST(ParseVerdictStrict, AcceptsBareYesNoModuloCaseAndPunctuation) {
  for (const char* text : {"Yes", "yes", "YES", "yEs", " Yes ", "Yes.", "Yes!", "Yes?", "Yes...",
                           "\tYes.\n", "Yes.!?", "Yes . "}) {
    EXPECT_EQ(parse_verdict(text, VerdictMode::Strict), 1) << text;
  }
  for (const char* text : {"No", "no", "NO", "No.", " no! ", "No?\n"}) {
    EXPECT_EQ(parse_verdict(text, VerdictMode::Strict), 0) << text;
  }
}

TEST(ParseVerdictStrict, RejectsEverythingElse) {
  for (const char* text :
       {"", "   ", "Yes it is", "I think yes", "Absolutely", "Y", "N", "yeah", "nope", "eyes",
        "Yes No", "no way", "yes,", "\"Yes\"", "1", "manipulative"}) {
    EXPECT_EQ(parse_verdict(text, VerdictMode::Strict), std::nullopt) << text;
  }
}

TEST(ParseVerdictLenient, LastStandaloneTokenDecides) {
  EXPECT_EQ(parse_verdict("Step 1: tension. Step 2: control. So the answer is Yes.",
                          VerdictMode::Lenient),
            1);
  EXPECT_EQ(parse_verdict("One could argue yes, but on balance the answer is no",
                          VerdictMode::Lenient),
            0);
  EXPECT_EQ(parse_verdict("Final answer:\nYES", VerdictMode::Lenient), 1);
  EXPECT_EQ(parse_verdict("no... wait... yes!", VerdictMode::Lenient), 1);
  EXPECT_EQ(parse_verdict("It's a no-brainer", VerdictMode::Lenient), 0);  // 'no' stands alone
}

TEST(ParseVerdictLenient, EmbeddedWordsDoNotCount) {
  EXPECT_EQ(parse_verdict("Yesterday they spoke about nothing.", VerdictMode::Lenient),
            std::nullopt);
  EXPECT_EQ(parse_verdict("noes and yeses everywhere", VerdictMode::Lenient), std::nullopt);
  EXPECT_EQ(parse_verdict("the yes_flag variable", VerdictMode::Lenient), std::nullopt);
  EXPECT_EQ(parse_verdict("", VerdictMode::Lenient), std::nullopt);
  EXPECT_EQ(parse_verdict("unclear either way", VerdictMode::Lenient), std::nullopt);
}

// --- prediction records ---

TEST(PredictionRecords, RoundTripWithOptionalFields) {
  TempDir tmp;
  Prediction bare;
  bare.dialogue_id = "d1";
  bare.strategy = Strategy::ZeroShot;
  bare.r = 1;
  bare.valid = true;
  bare.raw_text = "Yes";
  bare.n_llm_calls = 1;

  Prediction rich;
  rich.dialogue_id = "d2";
  rich.strategy = Strategy::Iap;
  rich.r = 0;
  rich.valid = false;
  rich.raw_text = "";
  rich.intents = IntentPair{"P1 wants control.", "P2 wants peace."};
  rich.n_llm_calls = 3;
  rich.error = "backend exploded";

  auto path = tmp / "predictions.jsonl";
  write_predictions(path, {bare, rich});
  auto loaded = read_predictions(path);
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(loaded[0].dialogue_id, "d1");
  EXPECT_EQ(loaded[0].r, 1);
  EXPECT_TRUE(loaded[0].valid);
  EXPECT_FALSE(loaded[0].intents.has_value());
  EXPECT_FALSE(loaded[0].error.has_value());
  EXPECT_EQ(loaded[1].strategy, Strategy::Iap);
  ASSERT_TRUE(loaded[1].intents.has_value());
  EXPECT_EQ(loaded[1].intents->person1, "P1 wants control.");
  EXPECT_EQ(loaded[1].error, "backend exploded");
  EXPECT_EQ(loaded[1].n_llm_calls, 3);
}

TEST(PredictionRecords, OmitsAbsentOptionalKeys) {
  Prediction bare;
  bare.dialogue_id = "d1";
  bare.strategy = Strategy::FewShot;
  bare.valid = true;
  bare.raw_text = "No";
  bare.n_llm_calls = 1;
  nlohmann::json record = prediction_record(bare);
  EXPECT_FALSE(record.contains("intents"));
  EXPECT_FALSE(record.contains("error"));
  EXPECT_EQ(record["strategy"], "few-shot");
}

TEST(PredictionRecords, WriteTruncatesExistingFile) {
  TempDir tmp;
  auto path = tmp / "predictions.jsonl";
  Prediction p;
  p.dialogue_id = "d1";
  p.valid = true;
  write_predictions(path, {p, p, p});
  write_predictions(path, {p});
  EXPECT_EQ(read_predictions(path).size(), 1u);
}

// --- single-dialogue detection ---

TEST(Detect, ZeroShotSingleCallParsesStrictVerdict) {
  MockScript script;
  script.rules.push_back({"gaslight-marker", "Yes."});
  script.default_response = "No";
  Harness h(std::move(script));

  Dialogue manip = make_dialogue("d1", std::nullopt, "This is the gaslight-marker utterance.");
  Prediction p = h.runner->detect(manip, Strategy::ZeroShot);
  EXPECT_EQ(p.r, 1);
  EXPECT_TRUE(p.valid);
  EXPECT_EQ(p.raw_text, "Yes.");
  EXPECT_EQ(p.n_llm_calls, 1);
  EXPECT_FALSE(p.intents.has_value());

  Prediction q = h.runner->detect(make_dialogue("d2"), Strategy::ZeroShot);
  EXPECT_EQ(q.r, 0);
  EXPECT_TRUE(q.valid);
  EXPECT_EQ(h.backend->call_count(), 2u);
}

TEST(Detect, FewShotRequiresBank) {
  MockScript script;
  script.default_response = "No";
  Harness without_bank(script);
  EXPECT_THROW(without_bank.runner->detect(make_dialogue("d1"), Strategy::FewShot),
               BankCompositionError);

  Harness with_bank(script, testsupport::fixture_bank());
  Prediction p = with_bank.runner->detect(make_dialogue("d1"), Strategy::FewShot);
  EXPECT_TRUE(p.valid);
  EXPECT_EQ(p.n_llm_calls, 1);
}

TEST(Detect, CoTUsesLenientParsingByDefault) {
  MockScript script;
  script.default_response = "Step by step: pressure, then guilt. The answer is Yes.";
  Harness h(script);

  Prediction p = h.runner->detect(make_dialogue("d1"), Strategy::CoT);
  EXPECT_EQ(p.r, 1);
  EXPECT_TRUE(p.valid);
  EXPECT_EQ(p.n_llm_calls, 1);
}

TEST(Detect, ModeOverrideReplacesDefault) {
  MockScript script;
  // Parseable leniently, never strictly; the strict nudge retry also fails.
  script.default_response = "The answer is Yes.";
  Harness h(script);

  Prediction strict = h.runner->detect(make_dialogue("d1"), Strategy::CoT, VerdictMode::Strict);
  EXPECT_FALSE(strict.valid);
  EXPECT_EQ(strict.r, 0);
  EXPECT_EQ(strict.n_llm_calls, 2);  // original ask + nudged re-ask

  Prediction lenient =
      h.runner->detect(make_dialogue("d2"), Strategy::ZeroShot, VerdictMode::Lenient);
  EXPECT_TRUE(lenient.valid);
  EXPECT_EQ(lenient.r, 1);
  EXPECT_EQ(lenient.n_llm_calls, 1);
}

TEST(Detect, UnparseableVerdictTriggersOneNudgedRetry) {
  MockScript script;
  script.rules.push_back({"Answer only 'Yes' or 'No'.", "Yes"});
  script.default_response = "Hard to say, honestly.";
  Harness h(std::move(script));
  testsupport::LogCapture capture;

  Prediction p = h.runner->detect(make_dialogue("d1"), Strategy::ZeroShot);
  EXPECT_EQ(p.r, 1);
  EXPECT_TRUE(p.valid);
  EXPECT_EQ(p.raw_text, "Yes");
  EXPECT_EQ(p.n_llm_calls, 2);
  EXPECT_EQ(h.backend->call_count(), 2u);
  EXPECT_TRUE(capture.contains("unparseable verdict"));
  ASSERT_EQ(h.backend->requests().size(), 2u);
  const std::string& second = h.backend->requests()[1].messages[0].content;
  EXPECT_NE(second.find("Answer only 'Yes' or 'No'."), std::string::npos);
}

TEST(Detect, TwoUnparseableRepliesYieldInvalidDefaultNo) {
  MockScript script;
  script.default_response = "Perhaps. Perhaps not.";
  Harness h(script);

  Prediction p = h.runner->detect(make_dialogue("d1"), Strategy::ZeroShot);
  EXPECT_EQ(p.r, 0);
  EXPECT_FALSE(p.valid);
  EXPECT_FALSE(p.error.has_value());  // a parse failure is not a pipeline error
  EXPECT_EQ(p.n_llm_calls, 2);
}

// --- intent-aware pipeline ---

TEST(DetectIap, ThreeCallsInSummarizeThenDetectOrder) {
  Harness h(iap_script("Yes"));
  Dialogue d = testsupport::load_fixture_dialogue("f1", "f1");

  Prediction p = h.runner->detect_iap(d);
  EXPECT_EQ(p.r, 1);
  EXPECT_TRUE(p.valid);
  EXPECT_EQ(p.n_llm_calls, 3);
  ASSERT_TRUE(p.intents.has_value());
  EXPECT_EQ(p.intents->person1, "Person1 wants to shift the blame.");
  EXPECT_EQ(p.intents->person2, "Person2 wants reassurance.");

  auto requests = h.backend->requests();
  ASSERT_EQ(requests.size(), 3u);
  EXPECT_NE(requests[0].messages[0].content.find(kIntentP1Marker), std::string::npos);
  EXPECT_NE(requests[1].messages[0].content.find(kIntentP2Marker), std::string::npos);
  EXPECT_NE(requests[2].messages[0].content.find(kDetectionMarker), std::string::npos);
  // The detection prompt embeds both summarized intents verbatim.
  EXPECT_NE(requests[2].messages[0].content.find("Person1 wants to shift the blame."),
            std::string::npos);
  EXPECT_NE(requests[2].messages[0].content.find("Person2 wants reassurance."),
            std::string::npos);
  // Every stage sees the full serialized dialogue.
  for (const auto& request : requests) {
    EXPECT_NE(request.messages[0].content.find(serialize_dialogue(d)), std::string::npos);
  }
}

TEST(DetectIap, RoutesThroughDetectDispatcher) {
  Harness h(iap_script("No"));
  Prediction p = h.runner->detect(make_dialogue("d1"), Strategy::Iap);
  EXPECT_EQ(p.r, 0);
  EXPECT_TRUE(p.valid);
  EXPECT_EQ(p.n_llm_calls, 3);
  EXPECT_TRUE(p.intents.has_value());
}

TEST(DetectIap, BlankIntentRetriesOnceBypassingCacheThenFails) {
  MockScript script;
  script.rules.push_back({kIntentP1Marker, ""});  // always blank
  script.rules.push_back({kIntentP2Marker, "Person2 wants reassurance."});
  script.rules.push_back({kDetectionMarker, "No"});
  Harness h(std::move(script));
  testsupport::LogCapture capture;

  EXPECT_THROW(h.runner->detect_iap(make_dialogue("d1")), EmptyIntentError);
  // One original call plus one cache-bypassing retry reached the backend.
  EXPECT_EQ(h.backend->call_count(), 2u);
  EXPECT_TRUE(capture.contains("blank intent"));
  EXPECT_TRUE(capture.contains("retrying once"));
}

TEST(SummarizeIntents, ReturnsTrimmedSummaries) {
  MockScript script;
  script.rules.push_back({kIntentP1Marker, "  Person1 wants control.  \n"});
  script.rules.push_back({kIntentP2Marker, "\tPerson2 wants distance."});
  Harness h(std::move(script));

  IntentPair intents = h.runner->summarize_intents(make_dialogue("d1"));
  EXPECT_EQ(intents.person1, "Person1 wants control.");
  EXPECT_EQ(intents.person2, "Person2 wants distance.");
}

// --- corpus runs ---

namespace {

Corpus scripted_corpus(MockScript* script, std::size_t n, std::size_t n_yes) {
  Corpus corpus;
  for (std::size_t i = 0; i < n; ++i) {
    // Fixed-width markers so no rule's needle is a prefix of another's.
    char suffix[8];
    std::snprintf(suffix, sizeof(suffix), "%03zu", i);
    std::string marker = "utterance-marker-" + std::string(suffix);
    corpus.dialogues.push_back(
        make_dialogue("d" + std::to_string(i),
                      i < n_yes ? GoldLabel::Manipulative : GoldLabel::NonManipulative, marker));
    script->rules.push_back({marker, i < n_yes ? "Yes" : "No"});
  }
  return corpus;
}

}  // namespace

TEST(Run, PredictionsComeBackInCorpusOrder) {
  MockScript script;
  Corpus corpus = scripted_corpus(&script, 12, 5);
  Harness h(std::move(script));

  RunOptions options;
  options.concurrency = 4;
  RunResult result = h.runner->run(corpus, Strategy::ZeroShot, options);

  ASSERT_EQ(result.predictions.size(), 12u);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    EXPECT_EQ(result.predictions[i].dialogue_id, corpus.dialogues[i].id);
    EXPECT_EQ(result.predictions[i].r, i < 5 ? 1 : 0);
    EXPECT_TRUE(result.predictions[i].valid);
  }
  EXPECT_EQ(result.n_errors, 0u);
  EXPECT_EQ(result.n_invalid, 0u);
  EXPECT_EQ(result.total_llm_calls, 12u);
  EXPECT_EQ(h.backend->call_count(), 12u);
}

TEST(Run, WritesOneLogRecordPerDialogue) {
  TempDir tmp;
  MockScript script;
  Corpus corpus = scripted_corpus(&script, 4, 2);
  Harness h(std::move(script));

  auto log_path = tmp / "run.jsonl";
  {
    JsonlWriter log(log_path, /*append=*/false);
    RunOptions options;
    options.log = &log;
    h.runner->run(corpus, Strategy::ZeroShot, options);
  }

  auto records = read_jsonl(log_path);
  ASSERT_EQ(records.size(), 4u);
  for (const auto& record : records) {
    EXPECT_TRUE(record.contains("dialogue_id"));
    EXPECT_EQ(record["strategy"], "zero-shot");
    EXPECT_TRUE(record.contains("r"));
    EXPECT_TRUE(record.contains("valid"));
    EXPECT_TRUE(record.contains("raw_text"));
    EXPECT_TRUE(record.contains("n_llm_calls"));
    ASSERT_TRUE(record.contains("timings"));
    EXPECT_TRUE(record["timings"].contains("latency_ms"));
    EXPECT_TRUE(record["timings"].contains("finished_at"));
  }
}

TEST(Run, ErrorAboveThresholdAbortsAfterProcessingEverything) {
  MockScript script;
  script.strict = true;  // dialogues without a rule raise UnscriptedPromptError
  Corpus corpus = scripted_corpus(&script, 10, 5);
  script.rules.erase(script.rules.begin());  // d0 now unscripted
  Harness h(std::move(script));
  testsupport::LogCapture capture;

  RunOptions options;
  options.error_threshold = 0.05;
  EXPECT_THROW(h.runner->run(corpus, Strategy::ZeroShot, options), ThresholdExceededError);
  // The threshold check happens after the sweep, not mid-run.
  EXPECT_EQ(h.backend->call_count(), 10u);
  EXPECT_TRUE(capture.contains("d0 (zero-shot) failed"));
}

TEST(Run, ErrorAtThresholdIsToleratedAndRecorded) {
  MockScript script;
  script.strict = true;
  Corpus corpus = scripted_corpus(&script, 10, 5);
  script.rules.erase(script.rules.begin());
  Harness h(std::move(script));
  testsupport::LogCapture capture;

  RunOptions options;
  options.error_threshold = 0.1;  // exactly 1/10 errors; not above threshold
  RunResult result = h.runner->run(corpus, Strategy::ZeroShot, options);

  EXPECT_EQ(result.n_errors, 1u);
  EXPECT_EQ(result.n_invalid, 1u);
  const Prediction& failed = result.predictions[0];
  EXPECT_EQ(failed.dialogue_id, "d0");
  EXPECT_EQ(failed.r, 0);
  EXPECT_FALSE(failed.valid);
  ASSERT_TRUE(failed.error.has_value());
  EXPECT_NE(failed.error->find("no rule"), std::string::npos);
}

TEST(Run, InvalidVerdictsCountSeparatelyFromErrors) {
  MockScript script;
  Corpus corpus = scripted_corpus(&script, 5, 2);
  script.rules[3].response = "Unsure.";  // d3 never parses, twice
  Harness h(std::move(script));

  RunOptions options;
  RunResult result = h.runner->run(corpus, Strategy::ZeroShot, options);
  EXPECT_EQ(result.n_errors, 0u);
  EXPECT_EQ(result.n_invalid, 1u);
  EXPECT_FALSE(result.predictions[3].valid);
  EXPECT_EQ(result.predictions[3].r, 0);
  EXPECT_EQ(result.total_llm_calls, 6u);  // 4 clean + 2 for the re-asked dialogue
}

TEST(Run, VerdictOverridesApplyPerStrategy) {
  MockScript script;
  script.default_response = "I believe the answer is No.";
  Harness h(script);
  Corpus corpus;
  corpus.dialogues = {make_dialogue("d1", GoldLabel::NonManipulative)};

  RunOptions lenient;
  lenient.verdict_overrides[Strategy::ZeroShot] = VerdictMode::Lenient;
  lenient.error_threshold = 1.0;
  RunResult result = h.runner->run(corpus, Strategy::ZeroShot, lenient);
  EXPECT_TRUE(result.predictions[0].valid);
  EXPECT_EQ(result.predictions[0].r, 0);
  EXPECT_EQ(result.predictions[0].n_llm_calls, 1);
}

TEST(Run, WarmCacheRerunIsByteIdenticalWithZeroBackendCalls) {
  TempDir tmp;
  auto cache_file = tmp / "cache.jsonl";
  MockScript script;
  Corpus corpus = scripted_corpus(&script, 6, 3);

  nlohmann::json cold_records = nlohmann::json::array();
  {
    Harness h(script, std::nullopt, cache_file);
    RunResult cold = h.runner->run(corpus, Strategy::ZeroShot, RunOptions{});
    EXPECT_EQ(h.gateway->backend_calls(), 6u);
    for (const auto& p : cold.predictions) {
      cold_records.push_back(prediction_record(p));
    }
  }

  Harness warm(script, std::nullopt, cache_file);
  RunResult rerun = warm.runner->run(corpus, Strategy::ZeroShot, RunOptions{});
  EXPECT_EQ(warm.gateway->backend_calls(), 0u);
  EXPECT_EQ(warm.backend->call_count(), 0u);

  nlohmann::json warm_records = nlohmann::json::array();
  for (const auto& p : rerun.predictions) {
    warm_records.push_back(prediction_record(p));
  }
  // Cache hits still count as issued calls, so records match byte for byte.
  EXPECT_EQ(warm_records.dump(), cold_records.dump());
  EXPECT_EQ(rerun.total_llm_calls, 6u);
}

TEST(Run, IapOverCorpusKeepsPerDialogueCallOrder) {
  MockScript script = iap_script("Yes");
  Corpus corpus;
  for (int i = 0; i < 4; ++i) {
    corpus.dialogues.push_back(
        make_dialogue("d" + std::to_string(i), GoldLabel::Manipulative,
                      "marker-" + std::to_string(i)));
  }
  Harness h(std::move(script));

  RunResult result = h.runner->run(corpus, Strategy::Iap, RunOptions{});
  EXPECT_EQ(result.total_llm_calls, 12u);

  auto requests = h.backend->requests();
  ASSERT_EQ(requests.size(), 12u);
  for (std::size_t d = 0; d < 4; ++d) {
    const std::string dialogue_marker = "marker-" + std::to_string(d);
    EXPECT_NE(requests[3 * d].messages[0].content.find(kIntentP1Marker), std::string::npos);
    EXPECT_NE(requests[3 * d + 1].messages[0].content.find(kIntentP2Marker), std::string::npos);
    EXPECT_NE(requests[3 * d + 2].messages[0].content.find(kDetectionMarker), std::string::npos);
    for (int stage = 0; stage < 3; ++stage) {
      EXPECT_NE(requests[3 * d + stage].messages[0].content.find(dialogue_marker),
                std::string::npos);
    }
  }
}

TEST(Run, EmptyCorpusReturnsEmptyResult) {
  MockScript script;
  script.default_response = "No";
  Harness h(script);
  RunResult result = h.runner->run(Corpus{}, Strategy::ZeroShot, RunOptions{});
  EXPECT_TRUE(result.predictions.empty());
  EXPECT_EQ(result.total_llm_calls, 0u);
}
