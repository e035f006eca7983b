#include "avlab/cot.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>

namespace avlab {

namespace {

enum Tag { kThink, kAnswer, kWhich, kWhat, kWhen, kWhere, kWhy, kHow, kNumTags };

constexpr std::array<std::string_view, kNumTags> kTagNames = {
    "think", "answer", "which", "what", "when", "where", "why", "how"};

bool is_field(int tag) { return tag >= kWhich; }

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool blank(std::string_view s) { return trim(s).empty(); }

// Lines trimmed, empty lines dropped, remainder joined by single spaces.
std::string join_lines(std::string_view s) {
  std::string out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t nl = s.find('\n', pos);
    if (nl == std::string_view::npos) nl = s.size();
    const auto line = trim(s.substr(pos, nl - pos));
    if (!line.empty()) {
      if (!out.empty()) out += ' ';
      out += line;
    }
    pos = nl + 1;
  }
  return out;
}

std::vector<std::string> paragraphs(std::string_view s) {
  std::vector<std::string> out;
  std::string current;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t nl = s.find('\n', pos);
    if (nl == std::string_view::npos) nl = s.size();
    const auto line = trim(s.substr(pos, nl - pos));
    if (line.empty()) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      if (!current.empty()) current += ' ';
      current += line;
    }
    pos = nl + 1;
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

struct Token {
  int tag = -1;  // -1 for text
  bool closing = false;
  ByteSpan span;
};

std::vector<Token> lex(std::string_view text) {
  std::vector<Token> out;
  std::size_t text_begin = 0;
  std::size_t i = 0;
  auto flush_text = [&](std::size_t upto) {
    if (upto > text_begin) out.push_back(Token{-1, false, {text_begin, upto}});
  };
  while (i < text.size()) {
    if (text[i] != '<') {
      ++i;
      continue;
    }
    const bool closing = i + 1 < text.size() && text[i + 1] == '/';
    const std::size_t name_at = i + (closing ? 2 : 1);
    int matched = -1;
    for (int t = 0; t < kNumTags; ++t) {
      const auto name = kTagNames[t];
      if (text.compare(name_at, name.size(), name) == 0 && name_at + name.size() < text.size() &&
          text[name_at + name.size()] == '>') {
        matched = t;
        break;
      }
    }
    if (matched < 0) {
      ++i;
      continue;
    }
    flush_text(i);
    const std::size_t end = name_at + kTagNames[matched].size() + 1;
    out.push_back(Token{matched, closing, {i, end}});
    i = end;
    text_begin = end;
  }
  flush_text(text.size());
  return out;
}

std::string tag_text(int tag, bool closing = false) {
  return std::string(closing ? "</" : "<") + std::string(kTagNames[tag]) + ">";
}

std::optional<TemporalInterval> parse_when(std::string_view payload) {
  auto s = trim(payload);
  auto read_int = [&](int& value) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr == first) return false;
    s.remove_prefix(static_cast<std::size_t>(ptr - first));
    return true;
  };
  if (s.empty() || !std::isdigit(static_cast<unsigned char>(s.front()))) return std::nullopt;
  TemporalInterval iv;
  if (!read_int(iv.start)) return std::nullopt;
  s = trim(s);
  if (s.empty() || s.front() != '-') return std::nullopt;
  s.remove_prefix(1);
  s = trim(s);
  if (s.empty() || !std::isdigit(static_cast<unsigned char>(s.front()))) return std::nullopt;
  if (!read_int(iv.end)) return std::nullopt;
  if (!trim(s).empty() || !iv.valid()) return std::nullopt;
  return iv;
}

struct Section {
  bool seen = false;
  bool closed = false;
  ByteSpan open;
  ByteSpan content;
};

}  // namespace

ParseResult parse_cot(std::string_view text) {
  ParseResult result;
  auto& diags = result.diagnostics;
  auto add = [&](Severity s, std::string msg, ByteSpan span) {
    diags.push_back(Diagnostic{s, std::move(msg), span});
  };

  std::array<Section, kNumTags> sections{};
  std::vector<int> top_order;
  std::vector<int> field_order;
  struct Open {
    int tag;
    std::size_t content_begin;
  };
  std::vector<Open> stack;
  bool stray_reported = false;

  for (const Token& tok : lex(text)) {
    if (tok.tag < 0) {
      const bool structural = stack.empty() || stack.back().tag == kAnswer;
      if (structural && !stray_reported && !blank(text.substr(tok.span.begin, tok.span.end - tok.span.begin))) {
        add(Severity::Format, "stray text outside blocks", tok.span);
        stray_reported = true;
      }
      continue;
    }
    const std::string name(kTagNames[tok.tag]);
    if (!tok.closing) {
      if (sections[tok.tag].seen) {
        add(Severity::Error, "duplicate tag: " + name, tok.span);
        continue;
      }
      const int parent = stack.empty() ? -1 : stack.back().tag;
      const bool allowed = parent < 0 ? !is_field(tok.tag) : (parent == kAnswer && is_field(tok.tag));
      if (!allowed) {
        const std::string where =
            parent < 0 ? "outside answer" : "inside " + std::string(kTagNames[parent]);
        add(Severity::Error, "misnested tag: " + name + " " + where, tok.span);
        continue;
      }
      sections[tok.tag].seen = true;
      sections[tok.tag].open = tok.span;
      (parent < 0 ? top_order : field_order).push_back(tok.tag);
      stack.push_back(Open{tok.tag, tok.span.end});
      continue;
    }
    if (!stack.empty() && stack.back().tag == tok.tag) {
      auto& sec = sections[tok.tag];
      sec.closed = true;
      sec.content = ByteSpan{stack.back().content_begin, tok.span.begin};
      stack.pop_back();
      continue;
    }
    const auto deeper = std::find_if(stack.begin(), stack.end(),
                                     [&](const Open& o) { return o.tag == tok.tag; });
    if (deeper == stack.end()) {
      add(Severity::Error, "unexpected closing tag: " + name, tok.span);
      continue;
    }
    add(Severity::Error,
        "misnested closing tag: " + name + " while " + std::string(kTagNames[stack.back().tag]) + " is open",
        tok.span);
    stack.erase(deeper, stack.end());
  }
  for (auto it = stack.rbegin(); it != stack.rend(); ++it)
    add(Severity::Error, "unclosed tag: " + std::string(kTagNames[it->tag]), sections[it->tag].open);

  for (int t : {kThink, kAnswer, kWhich, kWhat})
    if (!sections[t].seen) add(Severity::Error, "missing tag: " + std::string(kTagNames[t]), {0, 0});

  if (top_order.size() == 2 && top_order[0] == kAnswer)
    add(Severity::Format, "non-canonical order: answer before think", sections[kAnswer].open);
  for (std::size_t i = 1; i < field_order.size(); ++i) {
    if (field_order[i] < field_order[i - 1]) {
      add(Severity::Format,
          "non-canonical order: " + std::string(kTagNames[field_order[i - 1]]) + " before " +
              std::string(kTagNames[field_order[i]]),
          sections[field_order[i]].open);
      break;
    }
  }

  auto content = [&](int t) {
    const auto& c = sections[t].content;
    return text.substr(c.begin, c.end - c.begin);
  };
  for (int t = 0; t < kNumTags; ++t) {
    if (sections[t].closed && blank(content(t)) && t != kAnswer)
      add(Severity::Error, "empty section: " + std::string(kTagNames[t]), sections[t].open);
  }

  const bool have_core = sections[kThink].closed && sections[kAnswer].closed &&
                         sections[kWhich].closed && sections[kWhat].closed;
  if (have_core) {
    AnswerSection ans;
    ans.which = join_lines(content(kWhich));
    ans.what = join_lines(content(kWhat));
    const bool normal = ans.which == kNormalAnswer;
    if (sections[kWhen].closed) {
      if (normal) {
        add(Severity::Error, "when forbidden for Normal", sections[kWhen].open);
      } else {
        ans.when = parse_when(content(kWhen));
        if (!ans.when)
          add(Severity::Error, "malformed when payload (expected start-end with start < end)",
              sections[kWhen].content);
      }
    } else if (!normal && !ans.which.empty() && !sections[kWhen].seen) {
      add(Severity::Error, "missing tag: when", sections[kAnswer].open);
    }
    if (!normal && !ans.which.empty() && !category_from_name(ans.which))
      add(Severity::Info, "unknown category: " + ans.which, sections[kWhich].content);
    auto optional_field = [&](int t) -> std::optional<std::string> {
      if (!sections[t].closed) return std::nullopt;
      return join_lines(content(t));
    };
    ans.where = optional_field(kWhere);
    ans.why = optional_field(kWhy);
    ans.how = optional_field(kHow);

    const auto steps = paragraphs(content(kThink));
    const std::size_t expected = normal ? 2 : 4;
    ThinkSection think;
    if (steps.size() != expected) {
      add(Severity::Error,
          "inconsistent variant: " + std::to_string(steps.size()) + " think steps for which=" +
              ans.which + " (expected " + std::to_string(expected) + ")",
          sections[kThink].content);
    } else if (normal) {
      think = SimplifiedThink{steps[0], steps[1]};
    } else {
      think = FullThink{steps[0], steps[1], steps[2], steps[3]};
    }
    const bool failed = std::any_of(diags.begin(), diags.end(),
                                    [](const Diagnostic& d) { return d.severity == Severity::Error; });
    if (!failed) result.doc = CoTDocument{std::move(think), std::move(ans)};
  }
  std::stable_sort(diags.begin(), diags.end(), [](const Diagnostic& a, const Diagnostic& b) {
    return a.span.begin < b.span.begin;
  });
  return result;
}

namespace {

void check_text(std::vector<std::string>& out, std::string_view field, std::string_view s) {
  if (s.empty()) {
    out.push_back(std::string(field) + " is empty");
    return;
  }
  if (is_space(s.front()) || is_space(s.back()))
    out.push_back(std::string(field) + " has surrounding whitespace");
  if (s.find_first_of("<>\n\r") != std::string_view::npos)
    out.push_back(std::string(field) + " contains markup characters or line breaks");
}

}  // namespace

std::vector<std::string> document_problems(const CoTDocument& doc) {
  std::vector<std::string> out;
  const auto& a = doc.answer;
  const bool normal = a.which == kNormalAnswer;
  if (const auto* full = std::get_if<FullThink>(&doc.think)) {
    if (normal) out.push_back("four-step think with a Normal answer");
    check_text(out, "perception_global", full->perception_global);
    check_text(out, "perception_local", full->perception_local);
    check_text(out, "cognition_shallow", full->cognition_shallow);
    check_text(out, "cognition_deep", full->cognition_deep);
  } else {
    const auto& simple = std::get<SimplifiedThink>(doc.think);
    if (!normal) out.push_back("two-step think with an abnormal answer");
    check_text(out, "perception", simple.perception);
    check_text(out, "cognition", simple.cognition);
  }
  check_text(out, "which", a.which);
  check_text(out, "what", a.what);
  if (normal && a.when) out.push_back("when forbidden for Normal");
  if (!normal && !a.when) out.push_back("when required for an abnormal answer");
  if (a.when && !a.when->valid()) out.push_back("when is not a valid interval");
  if (a.where) check_text(out, "where", *a.where);
  if (a.why) check_text(out, "why", *a.why);
  if (a.how) check_text(out, "how", *a.how);
  return out;
}

std::string serialize(const CoTDocument& doc) {
  std::string out = "<think>\n";
  auto step = [&](const std::string& s, bool last) {
    out += s;
    out += last ? "\n" : "\n\n";
  };
  if (const auto* full = std::get_if<FullThink>(&doc.think)) {
    step(full->perception_global, false);
    step(full->perception_local, false);
    step(full->cognition_shallow, false);
    step(full->cognition_deep, true);
  } else {
    const auto& simple = std::get<SimplifiedThink>(doc.think);
    step(simple.perception, false);
    step(simple.cognition, true);
  }
  out += "</think>\n<answer>\n";
  auto field = [&](int tag, const std::string& value) {
    out += tag_text(tag) + value + tag_text(tag, true) + "\n";
  };
  const auto& a = doc.answer;
  field(kWhich, a.which);
  field(kWhat, a.what);
  if (a.when) field(kWhen, std::to_string(a.when->start) + "-" + std::to_string(a.when->end));
  if (a.where) field(kWhere, *a.where);
  if (a.why) field(kWhy, *a.why);
  if (a.how) field(kHow, *a.how);
  out += "</answer>\n";
  return out;
}

FormatCheck validate_format(std::string_view text) {
  auto parsed = parse_cot(text);
  FormatCheck check;
  check.valid = parsed.ok() && std::none_of(parsed.diagnostics.begin(), parsed.diagnostics.end(),
                                            [](const Diagnostic& d) { return d.severity == Severity::Format; });
  check.diagnostics = std::move(parsed.diagnostics);
  return check;
}

std::optional<Verdict> extract_verdict(const CoTDocument& doc) {
  const auto& a = doc.answer;
  if (a.which.empty()) return std::nullopt;
  if (a.which == kNormalAnswer) return Verdict{Label::Normal, std::nullopt, std::nullopt};
  if (!a.when) return std::nullopt;
  return Verdict{Label::Abnormal, a.when, a.which};
}

std::optional<Verdict> extract_verdict(std::string_view text) {
  auto parsed = parse_cot(text);
  if (!parsed.doc) return std::nullopt;
  return extract_verdict(*parsed.doc);
}

int count_words(std::string_view text) {
  int n = 0;
  bool in_word = false;
  for (char c : text) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

int think_word_count(const CoTDocument& doc) {
  if (const auto* full = std::get_if<FullThink>(&doc.think))
    return count_words(full->perception_global) + count_words(full->perception_local) +
           count_words(full->cognition_shallow) + count_words(full->cognition_deep);
  const auto& simple = std::get<SimplifiedThink>(doc.think);
  return count_words(simple.perception) + count_words(simple.cognition);
}

std::string format_diagnostic(const Diagnostic& d) {
  const char* sev = d.severity == Severity::Error ? "error" : d.severity == Severity::Format ? "format" : "info";
  return std::string(sev) + " [" + std::to_string(d.span.begin) + "," + std::to_string(d.span.end) + "): " +
         d.message;
}

}  // namespace avlab
