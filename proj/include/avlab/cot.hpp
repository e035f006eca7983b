#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "avlab/corpus.hpp"

namespace avlab {

// Reasoning trace. Abnormal answers carry the four-step perception-to-cognition
// chain; Normal answers the simplified two-step one.
struct FullThink {
  std::string perception_global;
  std::string perception_local;
  std::string cognition_shallow;
  std::string cognition_deep;
  bool operator==(const FullThink&) const = default;
};

struct SimplifiedThink {
  std::string perception;
  std::string cognition;
  bool operator==(const SimplifiedThink&) const = default;
};

using ThinkSection = std::variant<FullThink, SimplifiedThink>;

inline constexpr std::string_view kNormalAnswer = "Normal";

struct AnswerSection {
  std::string which;  // category name or "Normal"
  std::string what;
  std::optional<TemporalInterval> when;
  std::optional<std::string> where;
  std::optional<std::string> why;
  std::optional<std::string> how;
  bool operator==(const AnswerSection&) const = default;
};

struct CoTDocument {
  ThinkSection think;
  AnswerSection answer;
  bool operator==(const CoTDocument&) const = default;
};

struct ByteSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

enum class Severity {
  Error,   // parse fails
  Format,  // parses, but not in the strict form the format reward demands
  Info,
};

struct Diagnostic {
  Severity severity = Severity::Error;
  std::string message;
  ByteSpan span;
};

struct ParseResult {
  std::optional<CoTDocument> doc;
  std::vector<Diagnostic> diagnostics;

  bool ok() const { return doc.has_value(); }
};

// Lenient parse: tag order and stray text are reported but tolerated.
ParseResult parse_cot(std::string_view text);

// Empty when the document satisfies every structural invariant.
std::vector<std::string> document_problems(const CoTDocument& doc);

// Canonical text. Precondition: document_problems(doc) is empty.
std::string serialize(const CoTDocument& doc);

struct FormatCheck {
  bool valid = false;
  std::vector<Diagnostic> diagnostics;
};

FormatCheck validate_format(std::string_view text);

struct Verdict {
  Label prediction = Label::Normal;
  std::optional<TemporalInterval> interval;
  std::optional<std::string> category;
  bool operator==(const Verdict&) const = default;
};

// nullopt means "unextractable".
std::optional<Verdict> extract_verdict(const CoTDocument& doc);
std::optional<Verdict> extract_verdict(std::string_view text);

int think_word_count(const CoTDocument& doc);
int count_words(std::string_view text);

std::string format_diagnostic(const Diagnostic& d);

}  // namespace avlab
