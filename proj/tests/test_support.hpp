#pragma once

#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "manipeval/corpus.hpp"
#include "manipeval/io.hpp"
#include "manipeval/logging.hpp"

// Locations injected by the build (see tests/CMakeLists.txt).
#ifndef MANIPEVAL_TEMPLATES_DIR
#error "MANIPEVAL_TEMPLATES_DIR must be defined"
#endif
#ifndef MANIPEVAL_TEST_DATA
#error "MANIPEVAL_TEST_DATA must be defined"
#endif
#ifndef MANIPEVAL_GOLDEN_DIR
#error "MANIPEVAL_GOLDEN_DIR must be defined"
#endif

namespace testsupport {

inline std::filesystem::path templates_dir() { return MANIPEVAL_TEMPLATES_DIR; }
inline std::filesystem::path data_dir() { return MANIPEVAL_TEST_DATA; }
inline std::filesystem::path golden_dir() { return MANIPEVAL_GOLDEN_DIR; }

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "manipeval-XXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (!mkdtemp(buf.data())) {
      throw std::runtime_error("mkdtemp failed");
    }
    path_ = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Captures log lines for assertions; restores the stderr sink on destruction.
class LogCapture {
 public:
  LogCapture() {
    manipeval::log::set_sink([this](manipeval::log::Level, const std::string& message) {
      std::lock_guard<std::mutex> lock(mutex_);
      lines_.push_back(message);
    });
  }
  ~LogCapture() {
    manipeval::log::set_sink([](manipeval::log::Level level, const std::string& message) {
      std::cerr << (level == manipeval::log::Level::Warning ? "[warn] " : "[info] ") << message
                << '\n';
    });
  }
  LogCapture(const LogCapture&) = delete;
  LogCapture& operator=(const LogCapture&) = delete;

  std::vector<std::string> lines() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return lines_;
  }

  bool contains(const std::string& needle) const {
    std::lock_guard<std::mutex> lock(mutex_);
    for (const auto& line : lines_) {
      if (line.find(needle) != std::string::npos) {
        return true;
      }
    }
    return false;
  }

 private:
  mutable std::mutex mutex_;
  std::vector<std::string> lines_;
};

inline manipeval::Dialogue load_fixture_dialogue(const std::string& name, const std::string& id) {
  return manipeval::parse_dialogue(
      manipeval::read_text_file(data_dir() / "fixtures" / (name + ".txt")), id);
}

// The fixed exemplar bank used by the few-shot golden prompts.
inline manipeval::FewShotBank fixture_bank() {
  using manipeval::ExemplarAnswer;
  using manipeval::GoldLabel;
  manipeval::FewShotBank bank;
  auto yes = load_fixture_dialogue("bank_yes", "ex-yes-1");
  yes.gold_label = GoldLabel::Manipulative;
  auto no1 = load_fixture_dialogue("bank_no1", "ex-no-1");
  no1.gold_label = GoldLabel::NonManipulative;
  auto no2 = load_fixture_dialogue("bank_no2", "ex-no-2");
  no2.gold_label = GoldLabel::NonManipulative;
  bank.exemplars = {{yes, ExemplarAnswer::Yes}, {no1, ExemplarAnswer::No},
                    {no2, ExemplarAnswer::No}};
  return bank;
}

// Minimal one-turn dialogue for synthetic corpora.
inline manipeval::Dialogue make_dialogue(const std::string& id,
                                         std::optional<manipeval::GoldLabel> label = std::nullopt,
                                         const std::string& utterance = "Hello there.") {
  manipeval::Dialogue dialogue;
  dialogue.id = id;
  dialogue.gold_label = label;
  dialogue.turns = {{manipeval::Speaker::Person1, utterance},
                    {manipeval::Speaker::Person2, "Indeed."}};
  return dialogue;
}

}  // namespace testsupport
