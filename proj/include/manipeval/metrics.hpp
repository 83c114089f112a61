#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "manipeval/corpus.hpp"
#include "manipeval/errors.hpp"
#include "manipeval/logging.hpp"
#include "manipeval/pipeline.hpp"

namespace manipeval {

// Positive class is "manipulative" throughout.
struct ConfusionMatrix {
  std::int64_t tp = 0;  // r=1, gold manipulative
  std::int64_t fp = 0;  // r=1, gold non-manipulative
  std::int64_t fn = 0;  // r=0, gold manipulative
  std::int64_t tn = 0;  // r=0, gold non-manipulative

  std::int64_t total() const { return tp + fp + fn + tn; }

  bool operator==(const ConfusionMatrix&) const = default;
};

// Joins predictions to gold labels by dialogue id. Invalid predictions enter
// as r=0, so every dialogue stays in the denominators.
inline ConfusionMatrix confusion(const std::vector<Prediction>& predictions,
                                 const Corpus& corpus) {
  std::unordered_map<std::string, GoldLabel> gold;
  for (const auto& dialogue : corpus.dialogues) {
    if (!dialogue.gold_label) {
      throw MissingLabelError("dialogue " + dialogue.id + " has no gold label");
    }
    gold.emplace(dialogue.id, *dialogue.gold_label);
  }
  ConfusionMatrix m;
  for (const auto& prediction : predictions) {
    auto it = gold.find(prediction.dialogue_id);
    if (it == gold.end()) {
      throw MissingLabelError("prediction for unknown dialogue " + prediction.dialogue_id);
    }
    bool positive_gold = it->second == GoldLabel::Manipulative;
    if (prediction.r == 1) {
      positive_gold ? ++m.tp : ++m.fp;
    } else {
      positive_gold ? ++m.fn : ++m.tn;
    }
  }
  return m;
}

enum class PrAveraging { Positive, Weighted };

struct MetricsReport {
  ConfusionMatrix confusion;
  double accuracy = 0.0;
  double precision = 0.0;  // positive-class or support-weighted, per averaging
  double recall = 0.0;
  double f1_positive = 0.0;
  double f1_negative = 0.0;
  double f1_weighted = 0.0;
  double f1_macro = 0.0;
  PrAveraging averaging = PrAveraging::Positive;
};

namespace detail {

// All ratios here have numerator <= denominator-sum, so a zero denominator
// means a zero numerator; by convention that scores 0.
inline double safe_ratio(double num, double den, const char* what) {
  if (den == 0.0) {
    if (num != 0.0) {
      throw Error(std::string("impossible ratio for ") + what);
    }
    log::warn(std::string(what) + " undefined (0/0), reporting 0");
    return 0.0;
  }
  return num / den;
}

inline double f1_from(double precision, double recall) {
  if (precision + recall == 0.0) {
    return 0.0;
  }
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace detail

inline MetricsReport compute_metrics(const ConfusionMatrix& m,
                                     PrAveraging averaging = PrAveraging::Positive) {
  if (m.total() == 0) {
    throw EmptyMatrixError("cannot score an empty confusion matrix");
  }
  auto d = [](std::int64_t v) { return static_cast<double>(v); };

  MetricsReport report;
  report.confusion = m;
  report.averaging = averaging;
  report.accuracy = d(m.tp + m.tn) / d(m.total());

  double precision_pos = detail::safe_ratio(d(m.tp), d(m.tp + m.fp), "positive precision");
  double recall_pos = detail::safe_ratio(d(m.tp), d(m.tp + m.fn), "positive recall");
  double precision_neg = detail::safe_ratio(d(m.tn), d(m.tn + m.fn), "negative precision");
  double recall_neg = detail::safe_ratio(d(m.tn), d(m.tn + m.fp), "negative recall");

  report.f1_positive = detail::f1_from(precision_pos, recall_pos);
  report.f1_negative = detail::f1_from(precision_neg, recall_neg);
  report.f1_macro = (report.f1_positive + report.f1_negative) / 2.0;

  double support_pos = d(m.tp + m.fn);
  double support_neg = d(m.fp + m.tn);
  report.f1_weighted =
      (support_pos * report.f1_positive + support_neg * report.f1_negative) / d(m.total());

  if (averaging == PrAveraging::Weighted) {
    report.precision =
        (support_pos * precision_pos + support_neg * precision_neg) / d(m.total());
    report.recall = (support_pos * recall_pos + support_neg * recall_neg) / d(m.total());
  } else {
    report.precision = precision_pos;
    report.recall = recall_pos;
  }
  return report;
}

// --- deltas ---

// Percent change of `value` against `baseline`; no defined value when the
// baseline is zero.
inline std::optional<double> pct_change(double baseline, double value) {
  if (baseline == 0.0) {
    return std::nullopt;
  }
  return 100.0 * (value - baseline) / baseline;
}

// One decimal place, ties away from zero; "+1.5%", "-3.7%", "0.0%", or "n/a".
inline std::string format_pct(std::optional<double> pct) {
  if (!pct) {
    return "n/a";
  }
  double rounded = std::round(*pct * 10.0) / 10.0;
  if (rounded == 0.0) {
    return "0.0%";
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%.1f%%", rounded > 0 ? "+" : "-", std::fabs(rounded));
  return buf;
}

struct DeltaRow {
  std::string metric;
  double baseline = 0.0;
  double value = 0.0;
  std::optional<double> pct;
  std::string formatted;   // e.g. "+6.0%"
  bool lower_is_better = false;
  std::optional<bool> improved;  // nullopt when pct is undefined or change is zero
};

struct DeltaReport {
  std::vector<DeltaRow> rows;  // fn, fp, accuracy, precision, recall, f1_weighted, f1_macro

  const DeltaRow& row(const std::string& metric) const {
    for (const auto& r : rows) {
      if (r.metric == metric) {
        return r;
      }
    }
    throw Error("no delta row for metric '" + metric + "'");
  }
};

inline DeltaReport delta_report(const MetricsReport& baseline, const MetricsReport& candidate) {
  auto make = [](std::string metric, double base, double value, bool lower_is_better) {
    DeltaRow row;
    row.metric = std::move(metric);
    row.baseline = base;
    row.value = value;
    row.pct = pct_change(base, value);
    row.formatted = format_pct(row.pct);
    row.lower_is_better = lower_is_better;
    if (row.pct && *row.pct != 0.0) {
      row.improved = lower_is_better ? (*row.pct < 0.0) : (*row.pct > 0.0);
    }
    return row;
  };

  DeltaReport report;
  report.rows.push_back(make("fn", static_cast<double>(baseline.confusion.fn),
                             static_cast<double>(candidate.confusion.fn), true));
  report.rows.push_back(make("fp", static_cast<double>(baseline.confusion.fp),
                             static_cast<double>(candidate.confusion.fp), true));
  report.rows.push_back(make("accuracy", baseline.accuracy, candidate.accuracy, false));
  report.rows.push_back(make("precision", baseline.precision, candidate.precision, false));
  report.rows.push_back(make("recall", baseline.recall, candidate.recall, false));
  report.rows.push_back(make("f1_weighted", baseline.f1_weighted, candidate.f1_weighted, false));
  report.rows.push_back(make("f1_macro", baseline.f1_macro, candidate.f1_macro, false));
  return report;
}

// --- report artifacts ---

struct StrategyResult {
  Strategy strategy = Strategy::ZeroShot;
  MetricsReport metrics;
  std::size_t n_invalid = 0;
};

inline nlohmann::json metrics_json(const StrategyResult& result) {
  const MetricsReport& r = result.metrics;
  return {
      {"strategy", strategy_id(result.strategy)},
      {"n", r.confusion.total()},
      {"confusion",
       {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"fn", r.confusion.fn},
        {"tn", r.confusion.tn}}},
      {"accuracy", r.accuracy},
      {"precision", r.precision},
      {"recall", r.recall},
      {"f1_weighted", r.f1_weighted},
      {"f1_macro", r.f1_macro},
      {"pr_averaging", r.averaging == PrAveraging::Weighted ? "weighted" : "positive"},
      {"n_invalid", result.n_invalid},
  };
}

inline MetricsReport metrics_from_json(const nlohmann::json& doc) {
  MetricsReport r;
  r.confusion.tp = doc.at("confusion").at("tp").get<std::int64_t>();
  r.confusion.fp = doc.at("confusion").at("fp").get<std::int64_t>();
  r.confusion.fn = doc.at("confusion").at("fn").get<std::int64_t>();
  r.confusion.tn = doc.at("confusion").at("tn").get<std::int64_t>();
  r.accuracy = doc.at("accuracy").get<double>();
  r.precision = doc.at("precision").get<double>();
  r.recall = doc.at("recall").get<double>();
  r.f1_weighted = doc.at("f1_weighted").get<double>();
  r.f1_macro = doc.at("f1_macro").get<double>();
  r.averaging = doc.value("pr_averaging", "positive") == std::string("weighted")
                    ? PrAveraging::Weighted
                    : PrAveraging::Positive;
  return r;
}

namespace detail {

inline std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace detail

// Markdown comparison: absolute scores per strategy, then percent change of
// each non-baseline strategy against the baseline row.
inline std::string render_comparison_markdown(const std::vector<StrategyResult>& results,
                                              Strategy baseline) {
  const StrategyResult* base = nullptr;
  for (const auto& result : results) {
    if (result.strategy == baseline) {
      base = &result;
    }
  }
  if (!base) {
    throw Error("baseline strategy " + strategy_id(baseline) + " is not among the results");
  }

  std::string md;
  md += "# Strategy comparison\n\n";
  md += "Positive class: manipulative. Baseline: " + strategy_label(baseline) + ".\n\n";
  md += "| Strategy | N | FN | FP | Accuracy | Precision | Recall | F1 (weighted) | F1 (macro) | Invalid |\n";
  md += "|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& result : results) {
    const MetricsReport& r = result.metrics;
    md += "| " + strategy_label(result.strategy) + " | " + std::to_string(r.confusion.total()) +
          " | " + std::to_string(r.confusion.fn) + " | " + std::to_string(r.confusion.fp) +
          " | " + detail::fmt3(r.accuracy) + " | " + detail::fmt3(r.precision) + " | " +
          detail::fmt3(r.recall) + " | " + detail::fmt3(r.f1_weighted) + " | " +
          detail::fmt3(r.f1_macro) + " | " + std::to_string(result.n_invalid) + " |\n";
  }

  md += "\n## Change vs " + strategy_label(baseline) + "\n\n";
  md += "| Strategy | FN | FP | Accuracy | Precision | Recall | F1 (weighted) | F1 (macro) |\n";
  md += "|---|---:|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& result : results) {
    if (result.strategy == baseline) {
      continue;
    }
    DeltaReport deltas = delta_report(base->metrics, result.metrics);
    md += "| " + strategy_label(result.strategy) + " |";
    for (const char* metric :
         {"fn", "fp", "accuracy", "precision", "recall", "f1_weighted", "f1_macro"}) {
      md += " " + deltas.row(metric).formatted + " |";
    }
    md += "\n";
  }
  md += "\nLower is better for FN and FP; higher is better elsewhere.\n";
  return md;
}

// Structured mirror of the markdown comparison, delta annotations included.
inline nlohmann::json comparison_json(const std::vector<StrategyResult>& results,
                                      Strategy baseline) {
  const StrategyResult* base = nullptr;
  for (const auto& result : results) {
    if (result.strategy == baseline) {
      base = &result;
    }
  }
  if (!base) {
    throw Error("baseline strategy " + strategy_id(baseline) + " is not among the results");
  }
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& result : results) {
    nlohmann::json row = metrics_json(result);
    if (result.strategy != baseline) {
      DeltaReport deltas = delta_report(base->metrics, result.metrics);
      nlohmann::json annotations;
      for (const auto& delta : deltas.rows) {
        annotations[delta.metric] = delta.formatted;
      }
      row["delta_vs_baseline"] = annotations;
    }
    rows.push_back(std::move(row));
  }
  return {{"baseline", strategy_id(baseline)}, {"rows", rows}};
}

// Chart-ready false-negative / false-positive counts, in fixed strategy order.
inline nlohmann::json emit_fnfp_chart(const std::vector<StrategyResult>& results) {
  nlohmann::json labels = nlohmann::json::array();
  nlohmann::json fn = nlohmann::json::array();
  nlohmann::json fp = nlohmann::json::array();
  for (Strategy strategy : kAllStrategies) {
    for (const auto& result : results) {
      if (result.strategy == strategy) {
        labels.push_back(strategy_label(strategy));
        fn.push_back(result.metrics.confusion.fn);
        fp.push_back(result.metrics.confusion.fp);
      }
    }
  }
  return {{"labels", labels}, {"series", {{"fn", fn}, {"fp", fp}}}};
}

}  // namespace manipeval
