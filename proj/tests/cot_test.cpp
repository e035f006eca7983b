#include <doctest.h>

#include <algorithm>

#include "avlab/cot.hpp"
#include "cot_gen.hpp"

using namespace avlab;

namespace {

const char* const kAbnormalDoc =
    "<think>\n"
    "Two people stand near a shop entrance.\n\n"
    "One person suddenly pushes the other.\n\n"
    "The push escalates into repeated blows.\n\n"
    "This is a physical fight between the two.\n"
    "</think>\n"
    "<answer>\n"
    "<which>Fighting</which>\n"
    "<what>Two people fight at the entrance.</what>\n"
    "<when>3-9</when>\n"
    "<where>left side of the frame</where>\n"
    "</answer>\n";

const char* const kNormalDoc =
    "<think>\n"
    "a b c\n\n"
    "d e\n"
    "</think>\n"
    "<answer>\n"
    "<which>Normal</which>\n"
    "<what>Nothing happens.</what>\n"
    "</answer>\n";

bool has_message(const std::vector<Diagnostic>& diags, const std::string& needle) {
  return std::any_of(diags.begin(), diags.end(),
                     [&](const Diagnostic& d) { return d.message.find(needle) != std::string::npos; });
}

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto at = s.find(from);
  REQUIRE(at != std::string::npos);
  return s.replace(at, from.size(), to);
}

}  // namespace

TEST_CASE("well-formed abnormal document parses to an abnormal verdict") {
  const auto r = parse_cot(kAbnormalDoc);
  REQUIRE(r.ok());
  CHECK(std::holds_alternative<FullThink>(r.doc->think));
  CHECK(r.doc->answer.which == "Fighting");
  CHECK(r.doc->answer.where == std::optional<std::string>("left side of the frame"));
  CHECK_FALSE(r.doc->answer.why);
  const auto v = extract_verdict(kAbnormalDoc);
  REQUIRE(v);
  CHECK(v->prediction == Label::Abnormal);
  CHECK(v->interval == std::optional<TemporalInterval>(TemporalInterval{3, 9}));
  CHECK(v->category == std::optional<std::string>("Fighting"));
  CHECK(validate_format(kAbnormalDoc).valid);
}

TEST_CASE("normal document") {
  const auto r = parse_cot(kNormalDoc);
  REQUIRE(r.ok());
  CHECK(std::holds_alternative<SimplifiedThink>(r.doc->think));
  CHECK(think_word_count(*r.doc) == 5);
  const auto v = extract_verdict(kNormalDoc);
  REQUIRE(v);
  CHECK(v->prediction == Label::Normal);
  CHECK_FALSE(v->interval);
  CHECK_FALSE(v->category);
  CHECK(serialize(*r.doc) == kNormalDoc);
}

TEST_CASE("missing closing answer tag") {
  const auto text = replace(kAbnormalDoc, "</answer>\n", "");
  const auto r = parse_cot(text);
  CHECK_FALSE(r.ok());
  CHECK(has_message(r.diagnostics, "unclosed tag: answer"));
  CHECK_FALSE(validate_format(text).valid);
  CHECK_FALSE(extract_verdict(text));
}

TEST_CASE("when is forbidden for Normal") {
  const auto text = replace(kNormalDoc, "</what>\n", "</what>\n<when>1-2</when>\n");
  const auto r = parse_cot(text);
  CHECK_FALSE(r.ok());
  CHECK(has_message(r.diagnostics, "when forbidden for Normal"));
}

TEST_CASE("structural diagnostics") {
  CHECK(has_message(parse_cot(replace(kAbnormalDoc, "<when>3-9</when>\n", "")).diagnostics, "missing tag: when"));
  CHECK(has_message(parse_cot(replace(kAbnormalDoc, "<where>", "<which>x</which><where>")).diagnostics,
                    "duplicate tag: which"));
  CHECK(has_message(parse_cot(replace(kAbnormalDoc, "<answer>\n<which>Fighting</which>", "<which>Fighting</which>\n<answer>"))
                        .diagnostics,
                    "misnested tag: which outside answer"));
  CHECK(has_message(parse_cot(replace(kAbnormalDoc, "frame</where>\n</answer>", "frame</answer></where>")).diagnostics,
                    "misnested closing tag: answer while where is open"));
  CHECK(has_message(parse_cot(replace(kAbnormalDoc, "<what>Two people fight at the entrance.</what>",
                                      "<what> </what>"))
                        .diagnostics,
                    "empty section: what"));
  CHECK(has_message(parse_cot(replace(kNormalDoc, "d e\n", "d e\n\nf g\n")).diagnostics, "inconsistent variant"));
  CHECK(has_message(parse_cot(replace(kAbnormalDoc, "3-9", "9-3")).diagnostics, "malformed when"));
  for (const auto& d : parse_cot(replace(kAbnormalDoc, "</answer>\n", "")).diagnostics) {
    CHECK(d.span.begin <= d.span.end);
    CHECK(d.span.end <= std::string(kAbnormalDoc).size());
  }
}

TEST_CASE("when payload tolerates whitespace") {
  const auto v = extract_verdict(replace(kAbnormalDoc, "3-9", " 3 - 9 "));
  REQUIRE(v);
  CHECK(*v->interval == TemporalInterval{3, 9});
}

TEST_CASE("non-canonical order and stray text fail the strict check but still parse") {
  const auto reordered = replace(replace(kAbnormalDoc, "<which>Fighting</which>\n", ""), "<when>",
                                 "<which>Fighting</which>\n<when>");
  auto check = validate_format(reordered);
  CHECK_FALSE(check.valid);
  CHECK(has_message(check.diagnostics, "non-canonical order"));
  CHECK(parse_cot(reordered).ok());

  const auto stray = std::string(kAbnormalDoc) + "trailing words\n";
  check = validate_format(stray);
  CHECK_FALSE(check.valid);
  CHECK(has_message(check.diagnostics, "stray text"));
  CHECK(extract_verdict(stray));
}

TEST_CASE("unknown category parses and is flagged") {
  const auto text = replace(kAbnormalDoc, "Fighting", "Meteor");
  const auto r = parse_cot(text);
  REQUIRE(r.ok());
  CHECK(has_message(r.diagnostics, "unknown category"));
  CHECK(extract_verdict(text)->prediction == Label::Abnormal);
}

TEST_CASE("serialize round-trips random documents") {
  Rng rng(2024);
  for (int k = 0; k < 2000; ++k) {
    const auto d = test::random_document(rng);
    REQUIRE(document_problems(d).empty());
    const auto text = serialize(d);
    CHECK(serialize(d) == text);
    const auto r = parse_cot(text);
    REQUIRE(r.ok());
    CHECK(*r.doc == d);
    CHECK(validate_format(text).valid);
    CHECK(think_word_count(*r.doc) == think_word_count(d));
    const auto v = extract_verdict(text);
    REQUIRE(v);
    CHECK(v->prediction == (d.answer.which == kNormalAnswer ? Label::Normal : Label::Abnormal));
  }
}

TEST_CASE("canonical layout") {
  Rng rng(8);
  for (int k = 0; k < 50; ++k) {
    const auto d = test::random_document(rng);
    const auto text = serialize(d);
    const std::size_t think_at = text.find("<think>"), answer_at = text.find("<answer>");
    CHECK(think_at == 0);
    CHECK(think_at < answer_at);
    std::size_t last = answer_at;
    for (const char* tag : {"<which>", "<what>", "<when>", "<where>", "<why>", "<how>"}) {
      const auto at = text.find(tag);
      if (at == std::string::npos) continue;
      CHECK(at > last);
      CHECK(text[at - 1] == '\n');
      last = at;
    }
    const std::size_t blank_lines = [&] {
      std::size_t n = 0;
      for (auto at = text.find("\n\n"); at != std::string::npos; at = text.find("\n\n", at + 1)) ++n;
      return n;
    }();
    CHECK(blank_lines == (d.answer.which == kNormalAnswer ? 1u : 3u));
  }
}

TEST_CASE("verdict ignores think content") {
  Rng rng(99);
  for (int k = 0; k < 200; ++k) {
    auto d = test::random_document(rng);
    const auto before = extract_verdict(serialize(d));
    if (auto* full = std::get_if<FullThink>(&d.think)) full->cognition_deep = test::random_sentence(rng);
    else std::get<SimplifiedThink>(d.think).perception = test::random_sentence(rng);
    CHECK(extract_verdict(serialize(d)) == before);
  }
}

TEST_CASE("document_problems reports invariant violations") {
  CoTDocument d;
  d.think = SimplifiedThink{"a", "b"};
  d.answer.which = "Fire";
  d.answer.what = "smoke";
  CHECK_FALSE(document_problems(d).empty());
  d.think = FullThink{"a", "b", "c", "d"};
  d.answer.when = TemporalInterval{2, 5};
  CHECK(document_problems(d).empty());
  d.answer.what = " padded";
  CHECK_FALSE(document_problems(d).empty());
}

TEST_CASE("parse survives random bytes") {
  Rng rng(5150);
  const std::string alphabet = "<>/thinkanswerwhichwhatwhenwherewhyhow-0123456789 \n\t";
  for (int k = 0; k < 3000; ++k) {
    std::string s(rng.between(0, 400), '\0');
    const bool structured = rng.bernoulli(0.5);
    for (char& c : s)
      c = structured ? alphabet[rng.below(alphabet.size())] : static_cast<char>(rng.below(256));
    const auto r = parse_cot(s);
    if (validate_format(s).valid) CHECK(extract_verdict(s));
  }
}
