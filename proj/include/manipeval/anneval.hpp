#pragma once

#include <cstdio>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "manipeval/errors.hpp"
#include "manipeval/io.hpp"
#include "manipeval/logging.hpp"

namespace manipeval {

// One recorded answer in an annotation session.
struct SessionRecord {
  std::string dialogue_id;
  std::string annotator_id;
  std::string answer;  // canonical form, see AnswerSpec
  std::string timestamp;
};

struct AnnotationItem {
  std::string dialogue_id;
  std::string display_text;
};

// Maps typed input (case-insensitive, trimmed) to a canonical answer.
struct AnswerSpec {
  std::vector<std::pair<std::string, std::string>> aliases;
  std::string hint;  // shown with each question, e.g. "[a/b/both]"

  std::optional<std::string> normalize(const std::string& input) const {
    std::string key = to_lower(trim(input));
    for (const auto& [alias, canonical] : aliases) {
      if (key == alias) {
        return canonical;
      }
    }
    return std::nullopt;
  }
};

inline AnswerSpec manipulator_answer_spec() {
  return {{{"a", "A"},
           {"person1", "A"},
           {"1", "A"},
           {"b", "B"},
           {"person2", "B"},
           {"2", "B"},
           {"both", "Both"}},
          "[a=Person1, b=Person2, both]"};
}

inline AnswerSpec intent_answer_spec() {
  return {{{"y", "accurate"},
           {"yes", "accurate"},
           {"accurate", "accurate"},
           {"n", "inaccurate"},
           {"no", "inaccurate"},
           {"inaccurate", "inaccurate"}},
          "[y=accurate, n=inaccurate]"};
}

inline nlohmann::json session_record_json(const SessionRecord& record) {
  return {{"dialogue_id", record.dialogue_id},
          {"annotator_id", record.annotator_id},
          {"answer", record.answer},
          {"timestamp", record.timestamp}};
}

inline std::vector<SessionRecord> load_session(const std::filesystem::path& path) {
  std::vector<SessionRecord> records;
  if (!std::filesystem::exists(path)) {
    return records;
  }
  for (const auto& doc : read_jsonl(path)) {
    SessionRecord record;
    record.dialogue_id = doc.at("dialogue_id").get<std::string>();
    record.annotator_id = doc.at("annotator_id").get<std::string>();
    record.answer = doc.at("answer").get<std::string>();
    record.timestamp = doc.value("timestamp", "");
    records.push_back(std::move(record));
  }
  return records;
}

// Runs an interactive annotation pass. Answers are appended to the session
// file and flushed one by one, so a killed session loses nothing; restarting
// with the same file skips every dialogue that already has an answer. EOF on
// the input stream suspends the session. Returns all records, old and new.
inline std::vector<SessionRecord> annotate_session(const std::vector<AnnotationItem>& items,
                                                   const AnswerSpec& spec,
                                                   const std::string& annotator_id,
                                                   const std::filesystem::path& session_file,
                                                   std::istream& in, std::ostream& out) {
  std::vector<SessionRecord> records = load_session(session_file);
  std::set<std::string> done;
  for (const auto& record : records) {
    done.insert(record.dialogue_id);
  }

  JsonlWriter writer(session_file, /*append=*/true);
  std::size_t position = 0;
  for (const auto& item : items) {
    ++position;
    if (done.count(item.dialogue_id)) {
      continue;
    }
    out << "\n[" << position << "/" << items.size() << "] dialogue " << item.dialogue_id
        << "\n"
        << item.display_text << "\n";
    std::optional<std::string> answer;
    while (!answer) {
      out << "answer " << spec.hint << ": " << std::flush;
      std::string line;
      if (!std::getline(in, line)) {
        out << "\nsession suspended; rerun to resume\n";
        return records;
      }
      answer = spec.normalize(line);
      if (!answer) {
        out << "unrecognized answer '" << trim(line) << "'\n";
      }
    }
    SessionRecord record{item.dialogue_id, annotator_id, *answer, iso8601_utc_now()};
    writer.write(session_record_json(record));
    records.push_back(std::move(record));
    done.insert(item.dialogue_id);
  }
  out << "\nsession complete: " << done.size() << "/" << items.size() << " answered\n";
  return records;
}

// --- agreement arithmetic ---

struct Annotation {
  std::string dialogue_id;
  std::string answer;
};

inline std::vector<Annotation> to_annotations(const std::vector<SessionRecord>& records) {
  std::vector<Annotation> annotations;
  annotations.reserve(records.size());
  for (const auto& record : records) {
    annotations.push_back({record.dialogue_id, record.answer});
  }
  return annotations;
}

namespace detail {

inline std::map<std::string, std::string> answer_map(const std::vector<Annotation>& annotations,
                                                     const char* who) {
  std::map<std::string, std::string> map;
  for (const auto& a : annotations) {
    auto [it, inserted] = map.emplace(a.dialogue_id, a.answer);
    if (!inserted) {
      throw SessionError(std::string(who) + " has duplicate answers for dialogue " +
                         a.dialogue_id);
    }
  }
  return map;
}

}  // namespace detail

struct AgreementReport {
  std::size_t n = 0;
  std::size_t n_agree = 0;
  double ratio = 0.0;  // 0..1
};

// Renders a 0..1 ratio as "74.0%".
inline std::string format_percent(double ratio) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f%%", ratio * 100.0);
  return buf;
}

// Fraction of dialogues where both sides gave the same answer. Both sets
// must cover exactly the same dialogue ids.
inline AgreementReport percent_agreement(const std::vector<Annotation>& a,
                                         const std::vector<Annotation>& b) {
  auto map_a = detail::answer_map(a, "first set");
  auto map_b = detail::answer_map(b, "second set");
  if (map_a.empty()) {
    throw SessionError("cannot score agreement over zero annotations");
  }
  if (map_a.size() != map_b.size()) {
    throw IdMismatchError("annotation sets cover " + std::to_string(map_a.size()) + " vs " +
                          std::to_string(map_b.size()) + " dialogues");
  }
  AgreementReport report;
  for (const auto& [id, answer] : map_a) {
    auto it = map_b.find(id);
    if (it == map_b.end()) {
      throw IdMismatchError("dialogue " + id + " only annotated in the first set");
    }
    ++report.n;
    if (it->second == answer) {
      ++report.n_agree;
    }
  }
  report.ratio = static_cast<double>(report.n_agree) / static_cast<double>(report.n);
  return report;
}

// Chance-corrected agreement over the same joined pairs.
inline double cohen_kappa(const std::vector<Annotation>& a, const std::vector<Annotation>& b) {
  auto map_a = detail::answer_map(a, "first set");
  auto map_b = detail::answer_map(b, "second set");
  AgreementReport observed = percent_agreement(a, b);
  double po = static_cast<double>(observed.n_agree) / static_cast<double>(observed.n);

  std::map<std::string, double> freq_a;
  std::map<std::string, double> freq_b;
  for (const auto& [id, answer] : map_a) {
    freq_a[answer] += 1.0;
    freq_b[map_b.at(id)] += 1.0;
  }
  double pe = 0.0;
  for (const auto& [answer, count_a] : freq_a) {
    auto it = freq_b.find(answer);
    if (it != freq_b.end()) {
      pe += (count_a / static_cast<double>(observed.n)) *
            (it->second / static_cast<double>(observed.n));
    }
  }
  if (pe == 1.0) {
    log::warn("kappa undefined at expected agreement 1, reporting " +
              std::string(po == 1.0 ? "1" : "0"));
    return po == 1.0 ? 1.0 : 0.0;
  }
  return (po - pe) / (1.0 - pe);
}

enum class IntentVerdict { Accurate, Inaccurate };

struct IntentJudgment {
  std::string dialogue_id;
  std::string judge_id;
  IntentVerdict verdict = IntentVerdict::Inaccurate;
};

inline std::vector<IntentJudgment> to_intent_judgments(const std::vector<SessionRecord>& records) {
  std::vector<IntentJudgment> judgments;
  judgments.reserve(records.size());
  for (const auto& record : records) {
    if (record.answer == "accurate") {
      judgments.push_back({record.dialogue_id, record.annotator_id, IntentVerdict::Accurate});
    } else if (record.answer == "inaccurate") {
      judgments.push_back({record.dialogue_id, record.annotator_id, IntentVerdict::Inaccurate});
    } else {
      throw SessionError("answer '" + record.answer + "' for dialogue " + record.dialogue_id +
                         " is not an intent judgment");
    }
  }
  return judgments;
}

struct IntentAccuracyReport {
  std::size_t n = 0;
  std::size_t n_accurate = 0;
  double ratio = 0.0;  // 0..1
};

inline IntentAccuracyReport intent_accuracy(const std::vector<IntentJudgment>& judgments) {
  if (judgments.empty()) {
    throw SessionError("cannot score intent accuracy over zero judgments");
  }
  IntentAccuracyReport report;
  std::set<std::string> seen;
  for (const auto& judgment : judgments) {
    if (!seen.insert(judgment.dialogue_id + "\x1f" + judgment.judge_id).second) {
      throw SessionError("duplicate intent judgment for dialogue " + judgment.dialogue_id);
    }
    ++report.n;
    if (judgment.verdict == IntentVerdict::Accurate) {
      ++report.n_accurate;
    }
  }
  report.ratio = static_cast<double>(report.n_accurate) / static_cast<double>(report.n);
  return report;
}

// Majority answer per dialogue across several annotators' records.
// A tie is a hard error: consensus needs an odd panel or a tie-break pass.
inline std::vector<Annotation> merge_consensus(
    const std::vector<std::vector<SessionRecord>>& sessions) {
  std::map<std::string, std::map<std::string, int>> votes;
  for (const auto& session : sessions) {
    for (const auto& record : session) {
      ++votes[record.dialogue_id][record.answer];
    }
  }
  std::vector<Annotation> consensus;
  for (const auto& [id, counts] : votes) {
    std::string best;
    int best_count = 0;
    bool tied = false;
    for (const auto& [answer, count] : counts) {
      if (count > best_count) {
        best = answer;
        best_count = count;
        tied = false;
      } else if (count == best_count) {
        tied = true;
      }
    }
    if (tied) {
      throw SessionError("tied votes for dialogue " + id);
    }
    consensus.push_back({id, best});
  }
  return consensus;
}

}  // namespace manipeval
