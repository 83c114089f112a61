#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "manipeval/commands.hpp"

namespace {

constexpr const char* kStrategyIds[] = {"zero-shot", "few-shot", "cot", "iap"};

}  // namespace

int main(int argc, char** argv) {
  using namespace manipeval;

  CLI::App app{"Evaluation harness for dialogue manipulation detection"};
  app.require_subcommand(1);

  // --- run ---
  CliOverrides overrides;
  CLI::App* run = app.add_subcommand("run", "Execute detection strategies over a dataset");
  run->add_option("--config", overrides.config_file, "JSON config file");
  run->add_option("--dataset", overrides.dataset, "CSV/TSV dataset of labeled dialogues");
  run->add_option("--strategy", overrides.strategies, "Strategy to run (repeatable)")
      ->check(CLI::IsMember(std::vector<std::string>(std::begin(kStrategyIds),
                                                     std::end(kStrategyIds))));
  run->add_option("--sample-frac", overrides.sample_frac,
                  "Evaluate a random subset of this fraction, in (0,1]");
  run->add_option("--seed", overrides.seed, "Sampling seed");
  run->add_option("--fewshot-seed", overrides.fewshot_seed,
                  "Seed for exemplar selection (defaults to --seed)");
  run->add_option("--model", overrides.model, "Model id sent to the backend");
  run->add_option("--temperature", overrides.temperature, "Sampling temperature");
  run->add_option("--endpoint", overrides.endpoint, "OpenAI-compatible base URL");
  run->add_option("--api-key", overrides.api_key,
                  "API credential (prefer the MANIPEVAL_API_KEY environment variable)");
  run->add_option("--cache", overrides.cache, "Completion cache file");
  run->add_option("--out", overrides.out, "Output directory");
  run->add_option("--concurrency", overrides.concurrency, "Max concurrent requests");
  run->add_option("--mock-script", overrides.mock_script,
                  "Scripted mock backend instead of a live endpoint");
  run->add_option("--baseline", overrides.baseline, "Baseline strategy for comparisons")
      ->check(CLI::IsMember(std::vector<std::string>(std::begin(kStrategyIds),
                                                     std::end(kStrategyIds))));
  run->add_option("--error-threshold", overrides.error_threshold,
                  "Abort when the errored-dialogue fraction exceeds this");
  run->add_option("--templates", overrides.templates_dir, "Prompt template directory");

  // --- compare ---
  std::vector<std::string> compare_inputs;
  std::string compare_baseline = "zero-shot";
  std::string compare_out = "out";
  CLI::App* compare =
      app.add_subcommand("compare", "Render the comparison table from metrics reports");
  compare->add_option("inputs", compare_inputs, "Metrics files or directories")->required();
  compare->add_option("--baseline", compare_baseline, "Baseline strategy")
      ->check(CLI::IsMember(std::vector<std::string>(std::begin(kStrategyIds),
                                                     std::end(kStrategyIds))));
  compare->add_option("--out", compare_out, "Output directory");

  // --- annotate ---
  AnnotateArgs annotate_args;
  std::optional<std::size_t> annotate_limit;
  CLI::App* annotate = app.add_subcommand("annotate", "Run an interactive annotation session");
  annotate->add_option("--dataset", annotate_args.dataset, "Dataset to annotate")->required();
  annotate->add_option("--predictions", annotate_args.predictions,
                       "Prediction file with intents (intent task)");
  annotate->add_option("--task", annotate_args.task, "manipulator | intent")
      ->check(CLI::IsMember({"manipulator", "intent"}));
  annotate->add_option("--annotator", annotate_args.annotator_id, "Annotator id")->required();
  annotate->add_option("--out", annotate_args.out, "Output directory (sessions/ lives here)");
  annotate->add_option("--limit", annotate_limit, "Annotate only the first N items");
  annotate->add_option("--id-column", annotate_args.schema.id_column, "Dataset id column");
  annotate->add_option("--text-column", annotate_args.schema.text_column,
                       "Dataset dialogue column");
  annotate->add_option("--label-column", annotate_args.schema.label_column,
                       "Dataset label column");
  annotate->add_flag("--resume", "Continue an interrupted session (sessions always resume; "
                                 "this flag documents intent)");

  // --- agreement ---
  std::string agreement_a;
  std::string agreement_b;
  bool agreement_kappa = false;
  CLI::App* agreement =
      app.add_subcommand("agreement", "Percent agreement between two session files");
  agreement->add_option("first", agreement_a, "First session file")->required();
  agreement->add_option("second", agreement_b, "Second session file")->required();
  agreement->add_flag("--kappa", agreement_kappa, "Also print Cohen's kappa");

  // --- intent-accuracy ---
  std::string intent_file;
  CLI::App* intent =
      app.add_subcommand("intent-accuracy", "Accurate fraction of an intent-judgment session");
  intent->add_option("session", intent_file, "Session file of accurate/inaccurate answers")
      ->required();

  // --- chart ---
  std::string chart_in;
  std::string chart_out = "fnfp.json";
  CLI::App* chart = app.add_subcommand("chart", "Emit FN/FP chart data from metrics reports");
  chart->add_option("--in", chart_in, "Directory of metrics reports")->required();
  chart->add_option("--out", chart_out, "Chart data file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      RunConfig config = resolve_config(overrides);
      cmd_run(config, std::cout);
    } else if (compare->parsed()) {
      std::vector<std::filesystem::path> inputs(compare_inputs.begin(), compare_inputs.end());
      cmd_compare(inputs, parse_strategy(compare_baseline), compare_out, std::cout);
    } else if (annotate->parsed()) {
      annotate_args.limit = annotate_limit;
      cmd_annotate(annotate_args, std::cin, std::cout);
    } else if (agreement->parsed()) {
      cmd_agreement(agreement_a, agreement_b, agreement_kappa, std::cout);
    } else if (intent->parsed()) {
      cmd_intent_accuracy(intent_file, std::cout);
    } else if (chart->parsed()) {
      cmd_chart(chart_in, chart_out, std::cout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
