#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "manipeval/corpus.hpp"
#include "manipeval/errors.hpp"
#include "manipeval/io.hpp"
#include "manipeval/logging.hpp"

namespace manipeval {

enum class TemplateStrategy { ZeroShot, FewShot, ZeroShotCoT, IntentSummarization, IapDetection };

inline std::string template_file_name(TemplateStrategy strategy) {
  switch (strategy) {
    case TemplateStrategy::ZeroShot:
      return "zero_shot.txt";
    case TemplateStrategy::FewShot:
      return "few_shot.txt";
    case TemplateStrategy::ZeroShotCoT:
      return "zero_shot_cot.txt";
    case TemplateStrategy::IntentSummarization:
      return "intent_summarization.txt";
    case TemplateStrategy::IapDetection:
      return "iap_detection.txt";
  }
  throw Error("unknown template strategy");
}

inline const std::vector<std::string>& required_slots(TemplateStrategy strategy) {
  static const std::vector<std::string> zero_shot = {"<insert dialogue>"};
  static const std::vector<std::string> few_shot = {
      "<insert manipulative_dialogue1>",    "<insert manipulative_answer1>",
      "<insert nonmanipulative_dialogue1>", "<insert nonmanipulative_answer1>",
      "<insert nonmanipulative_dialogue2>", "<insert nonmanipulative_answer2>",
      "<insert dialogue>"};
  static const std::vector<std::string> intent_summarization = {"<insert person>",
                                                                "<insert dialogue>"};
  static const std::vector<std::string> iap_detection = {"<insert dialogue>",
                                                         "<insert person1's intent>",
                                                         "<insert person2's intent>"};
  switch (strategy) {
    case TemplateStrategy::ZeroShot:
    case TemplateStrategy::ZeroShotCoT:
      return zero_shot;
    case TemplateStrategy::FewShot:
      return few_shot;
    case TemplateStrategy::IntentSummarization:
      return intent_summarization;
    case TemplateStrategy::IapDetection:
      return iap_detection;
  }
  throw Error("unknown template strategy");
}

struct PromptTemplate {
  TemplateStrategy strategy;
  std::string body;
};

namespace detail {

inline std::size_t count_occurrences(const std::string& haystack, const std::string& needle) {
  std::size_t count = 0;
  std::size_t pos = haystack.find(needle);
  while (pos != std::string::npos) {
    ++count;
    pos = haystack.find(needle, pos + needle.size());
  }
  return count;
}

inline void validate_template(const PromptTemplate& tpl) {
  const auto& slots = required_slots(tpl.strategy);
  std::size_t slot_chars = 0;
  for (const auto& slot : slots) {
    std::size_t n = count_occurrences(tpl.body, slot);
    if (n != 1) {
      throw TemplateError(template_file_name(tpl.strategy) + ": slot " + slot + " appears " +
                          std::to_string(n) + " times, expected exactly 1");
    }
    slot_chars += slot.size();
  }
  // Any other "<insert" marker is a slot the strategy does not define.
  std::size_t markers = count_occurrences(tpl.body, "<insert");
  if (markers != slots.size()) {
    throw TemplateError(template_file_name(tpl.strategy) + ": found " + std::to_string(markers) +
                        " slot markers, expected " + std::to_string(slots.size()));
  }
  (void)slot_chars;
}

inline std::string substitute_once(std::string text, const std::string& slot,
                                   const std::string& value) {
  std::size_t pos = text.find(slot);
  if (pos == std::string::npos) {
    throw RenderError("missing slot " + slot);
  }
  text.replace(pos, slot.size(), value);
  return text;
}

}  // namespace detail

// The five strategy templates, loaded from a golden asset directory (one
// text file per strategy). Bodies are normalized to LF and hold exactly the
// slots their strategy defines.
class TemplateSet {
 public:
  static TemplateSet load(const std::filesystem::path& dir) {
    TemplateSet set;
    for (TemplateStrategy strategy :
         {TemplateStrategy::ZeroShot, TemplateStrategy::FewShot, TemplateStrategy::ZeroShotCoT,
          TemplateStrategy::IntentSummarization, TemplateStrategy::IapDetection}) {
      auto path = dir / template_file_name(strategy);
      if (!std::filesystem::exists(path)) {
        throw TemplateError("template asset not found: " + path.string());
      }
      std::string body = normalize_newlines(read_text_file(path));
      while (!body.empty() && body.back() == '\n') {
        body.pop_back();
      }
      PromptTemplate tpl{strategy, std::move(body)};
      detail::validate_template(tpl);
      set.templates_.emplace(strategy, std::move(tpl));
    }
    return set;
  }

  const PromptTemplate& get(TemplateStrategy strategy) const {
    auto it = templates_.find(strategy);
    if (it == templates_.end()) {
      throw TemplateError("template not loaded: " + template_file_name(strategy));
    }
    return it->second;
  }

 private:
  std::map<TemplateStrategy, PromptTemplate> templates_;
};

struct RenderedPrompt {
  TemplateStrategy strategy;
  std::string text;
  std::string dialogue_id;
};

namespace detail {

inline RenderedPrompt finish_render(TemplateStrategy strategy, std::string text,
                                    std::string dialogue_id) {
  if (text.find("<insert") != std::string::npos) {
    throw RenderError("rendered prompt for dialogue '" + dialogue_id +
                      "' still contains an unresolved slot");
  }
  return RenderedPrompt{strategy, std::move(text), std::move(dialogue_id)};
}

}  // namespace detail

inline RenderedPrompt render_zero_shot(const TemplateSet& templates, const Dialogue& dialogue) {
  std::string text = detail::substitute_once(templates.get(TemplateStrategy::ZeroShot).body,
                                             "<insert dialogue>", serialize_dialogue(dialogue));
  return detail::finish_render(TemplateStrategy::ZeroShot, std::move(text), dialogue.id);
}

inline RenderedPrompt render_cot(const TemplateSet& templates, const Dialogue& dialogue) {
  std::string text = detail::substitute_once(templates.get(TemplateStrategy::ZeroShotCoT).body,
                                             "<insert dialogue>", serialize_dialogue(dialogue));
  return detail::finish_render(TemplateStrategy::ZeroShotCoT, std::move(text), dialogue.id);
}

inline RenderedPrompt render_few_shot(const TemplateSet& templates, const Dialogue& dialogue,
                                      const FewShotBank& bank) {
  if (!bank_composition_ok(bank)) {
    throw BankCompositionError("few-shot bank must hold exactly 3 exemplars ordered Yes, No, No");
  }
  for (const auto& exemplar : bank.exemplars) {
    if (exemplar.dialogue.id == dialogue.id) {
      log::warn("DisjointnessWarning: target dialogue '" + dialogue.id +
                "' is also a few-shot exemplar");
    }
  }
  std::string text = templates.get(TemplateStrategy::FewShot).body;
  text = detail::substitute_once(std::move(text), "<insert manipulative_dialogue1>",
                                 serialize_dialogue(bank.exemplars[0].dialogue));
  text = detail::substitute_once(std::move(text), "<insert manipulative_answer1>", "Yes");
  text = detail::substitute_once(std::move(text), "<insert nonmanipulative_dialogue1>",
                                 serialize_dialogue(bank.exemplars[1].dialogue));
  text = detail::substitute_once(std::move(text), "<insert nonmanipulative_answer1>", "No");
  text = detail::substitute_once(std::move(text), "<insert nonmanipulative_dialogue2>",
                                 serialize_dialogue(bank.exemplars[2].dialogue));
  text = detail::substitute_once(std::move(text), "<insert nonmanipulative_answer2>", "No");
  text = detail::substitute_once(std::move(text), "<insert dialogue>",
                                 serialize_dialogue(dialogue));
  return detail::finish_render(TemplateStrategy::FewShot, std::move(text), dialogue.id);
}

// The full dialogue is substituted regardless of which person is summarized;
// intent depends on the surrounding context, not one speaker's lines.
inline RenderedPrompt render_intent_summarization(const TemplateSet& templates,
                                                  const Dialogue& dialogue, Speaker person) {
  std::string text = templates.get(TemplateStrategy::IntentSummarization).body;
  text = detail::substitute_once(std::move(text), "<insert person>", speaker_name(person));
  text = detail::substitute_once(std::move(text), "<insert dialogue>",
                                 serialize_dialogue(dialogue));
  return detail::finish_render(TemplateStrategy::IntentSummarization, std::move(text),
                               dialogue.id);
}

inline RenderedPrompt render_iap_detection(const TemplateSet& templates, const Dialogue& dialogue,
                                           const std::string& intent_person1,
                                           const std::string& intent_person2) {
  if (trim(intent_person1).empty() || trim(intent_person2).empty()) {
    throw EmptyIntentError("dialogue '" + dialogue.id + "': both intents must be non-empty");
  }
  std::string text = templates.get(TemplateStrategy::IapDetection).body;
  text = detail::substitute_once(std::move(text), "<insert dialogue>",
                                 serialize_dialogue(dialogue));
  text = detail::substitute_once(std::move(text), "<insert person1's intent>", intent_person1);
  text = detail::substitute_once(std::move(text), "<insert person2's intent>", intent_person2);
  return detail::finish_render(TemplateStrategy::IapDetection, std::move(text), dialogue.id);
}

}  // namespace manipeval
