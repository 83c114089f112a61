#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "manipeval/errors.hpp"
#include "manipeval/io.hpp"
#include "manipeval/logging.hpp"

namespace manipeval {

enum class Speaker { Person1, Person2 };

enum class GoldLabel { Manipulative, NonManipulative };

inline std::string speaker_name(Speaker speaker) {
  return speaker == Speaker::Person1 ? "Person1" : "Person2";
}

struct Turn {
  Speaker speaker;
  std::string utterance;

  bool operator==(const Turn&) const = default;
};

struct Dialogue {
  std::string id;
  std::vector<Turn> turns;
  std::optional<GoldLabel> gold_label;

  bool operator==(const Dialogue&) const = default;
};

struct Provenance {
  std::string source;
  std::string filter_tag;
  std::optional<std::uint32_t> sample_seed;
  std::optional<double> sample_fraction;
};

struct Corpus {
  std::vector<Dialogue> dialogues;
  Provenance provenance;

  std::size_t size() const { return dialogues.size(); }
  bool empty() const { return dialogues.empty(); }
};

// Canonical text form: one "PersonN: " line per turn, continuation lines for
// utterances that span multiple lines. parse_dialogue(serialize_dialogue(d))
// reconstructs d exactly.
inline std::string serialize_dialogue(const Dialogue& dialogue) {
  std::string out;
  for (std::size_t i = 0; i < dialogue.turns.size(); ++i) {
    if (i > 0) {
      out += '\n';
    }
    out += speaker_name(dialogue.turns[i].speaker);
    out += ": ";
    out += dialogue.turns[i].utterance;
  }
  return out;
}

namespace detail {

inline std::optional<Speaker> match_speaker_prefix(std::string_view line, std::string_view* rest) {
  for (Speaker speaker : {Speaker::Person1, Speaker::Person2}) {
    std::string prefix = speaker_name(speaker) + ":";
    if (line.substr(0, prefix.size()) == prefix) {
      std::string_view tail = line.substr(prefix.size());
      if (!tail.empty() && tail.front() == ' ') {
        tail.remove_prefix(1);
      }
      *rest = tail;
      return speaker;
    }
  }
  return std::nullopt;
}

inline std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

}  // namespace detail

inline Dialogue parse_dialogue(const std::string& text, std::string id,
                               std::optional<GoldLabel> gold_label = std::nullopt) {
  std::string normalized = trim(normalize_newlines(text));
  if (normalized.empty()) {
    throw EmptyDialogueError("dialogue '" + id + "': no speaker-prefixed line");
  }

  auto lines = detail::split_lines(normalized);
  bool any_speaker_line = false;
  for (const auto& line : lines) {
    std::string_view rest;
    if (detail::match_speaker_prefix(line, &rest)) {
      any_speaker_line = true;
      break;
    }
  }
  if (!any_speaker_line) {
    throw EmptyDialogueError("dialogue '" + id + "': no speaker-prefixed line");
  }

  Dialogue dialogue;
  dialogue.id = std::move(id);
  dialogue.gold_label = gold_label;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view rest;
    auto speaker = detail::match_speaker_prefix(lines[i], &rest);
    if (speaker) {
      dialogue.turns.push_back(Turn{*speaker, std::string(rest)});
    } else if (dialogue.turns.empty()) {
      throw MalformedLineError("dialogue '" + dialogue.id + "': line " + std::to_string(i + 1) +
                               " precedes the first speaker prefix");
    } else {
      dialogue.turns.back().utterance += '\n';
      dialogue.turns.back().utterance += lines[i];
    }
  }

  for (const auto& turn : dialogue.turns) {
    if (trim(turn.utterance).empty()) {
      throw MalformedLineError("dialogue '" + dialogue.id + "': empty utterance for " +
                               speaker_name(turn.speaker));
    }
  }
  return dialogue;
}

// --- dataset loading ---

inline std::map<std::string, GoldLabel> default_label_value_map() {
  return {
      {"1", GoldLabel::Manipulative},
      {"yes", GoldLabel::Manipulative},
      {"0", GoldLabel::NonManipulative},
      {"no", GoldLabel::NonManipulative},
  };
}

struct SchemaMap {
  std::string id_column = "id";
  std::string text_column = "dialogue";
  std::string label_column = "label";
  // Keys are compared case-insensitively (stored lowercase).
  std::map<std::string, GoldLabel> label_values = default_label_value_map();
};

enum class Delimiter { Auto, Comma, Tab };

struct LoadOptions {
  Delimiter delimiter = Delimiter::Auto;
  bool strict = true;
  std::string filter_tag;
};

struct RowIssue {
  std::size_t record;  // 1-based, header is record 1
  std::string kind;    // ParseError | LabelError | DuplicateId
  std::string message;
};

namespace detail {

// RFC 4180-style parser: quoted fields may contain the delimiter, doubled
// quotes, and embedded newlines (dialogue turns are newline-separated).
inline std::vector<std::vector<std::string>> parse_delimited(const std::string& content,
                                                             char delimiter) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool record_started = false;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
  };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(record));
    record.clear();
    record_started = false;
  };

  for (std::size_t i = 0; i < content.size(); ++i) {
    char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        record_started = true;
        break;
      case '\r':
        break;
      case '\n':
        if (record_started || !field.empty() || !record.empty()) {
          end_record();
        }
        break;
      default:
        if (c == delimiter) {
          end_field();
          record_started = true;
        } else {
          field += c;
          record_started = true;
        }
    }
  }
  if (record_started || !field.empty() || !record.empty()) {
    end_record();
  }
  return records;
}

inline char resolve_delimiter(const std::filesystem::path& path, Delimiter requested) {
  switch (requested) {
    case Delimiter::Comma:
      return ',';
    case Delimiter::Tab:
      return '\t';
    case Delimiter::Auto:
      break;
  }
  std::string ext = to_lower(path.extension().string());
  return (ext == ".tsv" || ext == ".tab") ? '\t' : ',';
}

}  // namespace detail

inline Corpus load_dataset(const std::filesystem::path& path, const SchemaMap& schema,
                           const LoadOptions& options = {},
                           std::vector<RowIssue>* issues_out = nullptr) {
  std::string content = read_text_file(path);
  char delimiter = detail::resolve_delimiter(path, options.delimiter);
  auto records = detail::parse_delimited(content, delimiter);
  if (records.empty()) {
    throw SchemaError("dataset " + path.string() + ": missing header row");
  }

  const auto& header = records.front();
  auto find_column = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (trim(header[i]) == name) {
        return i;
      }
    }
    throw SchemaError("dataset " + path.string() + ": missing column '" + name + "'");
  };
  std::size_t id_col = find_column(schema.id_column);
  std::size_t text_col = find_column(schema.text_column);
  std::size_t label_col = find_column(schema.label_column);

  std::map<std::string, GoldLabel> value_map;
  for (const auto& [key, label] : schema.label_values) {
    value_map[to_lower(key)] = label;
  }

  Corpus corpus;
  corpus.provenance.source = path.string();
  corpus.provenance.filter_tag = options.filter_tag;

  std::vector<RowIssue> issues;
  std::set<std::string> seen_ids;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& row = records[r];
    std::size_t record_no = r + 1;
    if (row.size() <= std::max({id_col, text_col, label_col})) {
      issues.push_back({record_no, "ParseError", "too few fields"});
      continue;
    }
    std::string id = trim(row[id_col]);
    if (id.empty()) {
      issues.push_back({record_no, "ParseError", "empty id"});
      continue;
    }
    if (!seen_ids.insert(id).second) {
      issues.push_back({record_no, "DuplicateId", "duplicate dialogue id '" + id + "'"});
      continue;
    }

    std::optional<GoldLabel> label;
    std::string label_cell = trim(row[label_col]);
    if (!label_cell.empty()) {
      auto it = value_map.find(to_lower(label_cell));
      if (it == value_map.end()) {
        issues.push_back({record_no, "LabelError", "unmapped label value '" + label_cell + "'"});
        continue;
      }
      label = it->second;
    }

    try {
      corpus.dialogues.push_back(parse_dialogue(row[text_col], id, label));
    } catch (const Error& e) {
      issues.push_back({record_no, "ParseError", e.what()});
    }
  }

  if (issues_out) {
    *issues_out = issues;
  }
  if (!issues.empty()) {
    std::string summary = "dataset " + path.string() + ": " + std::to_string(issues.size()) +
                          " bad row(s):";
    for (const auto& issue : issues) {
      summary += "\n  record " + std::to_string(issue.record) + " [" + issue.kind + "] " +
                 issue.message;
    }
    if (options.strict) {
      throw DatasetError(summary);
    }
    log::warn(summary);
  }
  return corpus;
}

// --- sampling ---

namespace detail {

// Modulo-rejection bounded draw over a mt19937 stream. mt19937 output is
// fully specified by the standard, so subsets are identical across runs and
// platforms for a given seed.
inline std::uint32_t bounded_draw(std::mt19937& rng, std::uint32_t n) {
  const std::uint32_t limit = UINT32_MAX - UINT32_MAX % n;
  std::uint32_t value = rng();
  while (value >= limit) {
    value = rng();
  }
  return value % n;
}

inline void sort_by_id(std::vector<Dialogue>& dialogues) {
  std::sort(dialogues.begin(), dialogues.end(),
            [](const Dialogue& a, const Dialogue& b) { return a.id < b.id; });
}

}  // namespace detail

// Draws floor(fraction * N) dialogues uniformly without replacement via a
// partial Fisher-Yates shuffle over the id-sorted corpus, seeded with
// mt19937(seed). Output is ordered ascending by id.
inline Corpus sample_subset(const Corpus& corpus, double fraction, std::uint32_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw InvalidFractionError("sample fraction must lie in (0, 1], got " +
                               std::to_string(fraction));
  }
  if (corpus.empty()) {
    throw Error("sample_subset: corpus is empty");
  }

  std::vector<Dialogue> pool = corpus.dialogues;
  detail::sort_by_id(pool);

  const std::size_t n = pool.size();
  // Epsilon guards against binary representation of fractions like 0.3,
  // where 0.3 * 1000 evaluates to 299.999... in doubles.
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));

  std::mt19937 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + detail::bounded_draw(rng, static_cast<std::uint32_t>(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  detail::sort_by_id(pool);

  Corpus subset;
  subset.dialogues = std::move(pool);
  subset.provenance = corpus.provenance;
  subset.provenance.sample_seed = seed;
  subset.provenance.sample_fraction = fraction;
  return subset;
}

// Class-proportional variant: floor(fraction * N_c) per gold label. Requires
// every dialogue to be labeled.
inline Corpus sample_subset_stratified(const Corpus& corpus, double fraction, std::uint32_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw InvalidFractionError("sample fraction must lie in (0, 1], got " +
                               std::to_string(fraction));
  }
  if (corpus.empty()) {
    throw Error("sample_subset_stratified: corpus is empty");
  }

  Corpus manipulative;
  Corpus non_manipulative;
  for (const auto& d : corpus.dialogues) {
    if (!d.gold_label) {
      throw Error("sample_subset_stratified: dialogue '" + d.id + "' has no gold label");
    }
    (*d.gold_label == GoldLabel::Manipulative ? manipulative : non_manipulative)
        .dialogues.push_back(d);
  }

  std::vector<Dialogue> picked;
  if (!manipulative.empty()) {
    auto part = sample_subset(manipulative, fraction, seed);
    picked.insert(picked.end(), part.dialogues.begin(), part.dialogues.end());
  }
  if (!non_manipulative.empty()) {
    auto part = sample_subset(non_manipulative, fraction, seed + 1);
    picked.insert(picked.end(), part.dialogues.begin(), part.dialogues.end());
  }
  detail::sort_by_id(picked);

  Corpus subset;
  subset.dialogues = std::move(picked);
  subset.provenance = corpus.provenance;
  subset.provenance.sample_seed = seed;
  subset.provenance.sample_fraction = fraction;
  return subset;
}

// Dialogues of `corpus` that are not in `subset`, in corpus order.
inline Corpus complement(const Corpus& corpus, const Corpus& subset) {
  std::set<std::string> taken;
  for (const auto& d : subset.dialogues) {
    taken.insert(d.id);
  }
  Corpus rest;
  rest.provenance = corpus.provenance;
  for (const auto& d : corpus.dialogues) {
    if (!taken.count(d.id)) {
      rest.dialogues.push_back(d);
    }
  }
  return rest;
}

// --- few-shot bank ---

enum class ExemplarAnswer { Yes, No };

struct Exemplar {
  Dialogue dialogue;
  ExemplarAnswer answer;
};

struct FewShotBank {
  std::vector<Exemplar> exemplars;  // expected order: Yes, No, No
};

inline bool bank_composition_ok(const FewShotBank& bank) {
  return bank.exemplars.size() == 3 && bank.exemplars[0].answer == ExemplarAnswer::Yes &&
         bank.exemplars[1].answer == ExemplarAnswer::No &&
         bank.exemplars[2].answer == ExemplarAnswer::No;
}

// Seeded draws of 1 manipulative then 2 distinct non-manipulative dialogues
// from the labeled portion of the pool (each class id-sorted first).
inline FewShotBank select_few_shot(const Corpus& pool, std::uint32_t seed) {
  std::vector<Dialogue> manipulative;
  std::vector<Dialogue> non_manipulative;
  for (const auto& d : pool.dialogues) {
    if (!d.gold_label) {
      continue;
    }
    (*d.gold_label == GoldLabel::Manipulative ? manipulative : non_manipulative).push_back(d);
  }
  if (manipulative.size() < 1 || non_manipulative.size() < 2) {
    throw InsufficientPoolError(
        "few-shot pool needs >=1 manipulative and >=2 non-manipulative labeled dialogues, got " +
        std::to_string(manipulative.size()) + " and " + std::to_string(non_manipulative.size()));
  }
  detail::sort_by_id(manipulative);
  detail::sort_by_id(non_manipulative);

  std::mt19937 rng(seed);
  FewShotBank bank;
  bank.exemplars.push_back(
      {manipulative[detail::bounded_draw(rng, static_cast<std::uint32_t>(manipulative.size()))],
       ExemplarAnswer::Yes});
  std::size_t first = detail::bounded_draw(rng, static_cast<std::uint32_t>(non_manipulative.size()));
  bank.exemplars.push_back({non_manipulative[first], ExemplarAnswer::No});
  non_manipulative.erase(non_manipulative.begin() + static_cast<std::ptrdiff_t>(first));
  std::size_t second =
      detail::bounded_draw(rng, static_cast<std::uint32_t>(non_manipulative.size()));
  bank.exemplars.push_back({non_manipulative[second], ExemplarAnswer::No});
  return bank;
}

}  // namespace manipeval
