#include <doctest.h>

#include <numeric>
#include <set>
#include <tuple>
#include <type_traits>

#include "avlab/corpus.hpp"
#include "support.hpp"

using namespace avlab;
using avlab::test::TempDir;

namespace {

std::vector<int> iota_frames(int n) {
  std::vector<int> f(n);
  std::iota(f.begin(), f.end(), 0);
  return f;
}

std::vector<int> range(int lo, int hi) {
  std::vector<int> f;
  for (int i = lo; i < hi; ++i) f.push_back(i);
  return f;
}

// Brute force over the frame sets covered by each interval.
double iou_by_frames(TemporalInterval a, TemporalInterval b) {
  std::set<int> sa, sb, u;
  for (int i = a.start; i < a.end; ++i) sa.insert(i);
  for (int i = b.start; i < b.end; ++i) sb.insert(i);
  int inter = 0;
  for (int x : sa) inter += sb.count(x);
  u = sa;
  u.insert(sb.begin(), sb.end());
  return u.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(u.size());
}

}  // namespace

// The RL stage only ever receives WeakVideo values: they carry no interval or category.
static_assert(!std::is_convertible_v<SyntheticVideo, WeakVideo>);
static_assert(std::is_same_v<decltype(WeakVideo::label), Label>);
static_assert(std::is_same_v<decltype(WeakVideo::frames), std::vector<int>>);
// Structured binding compiles only for exactly three members: id, frames, label.
[[maybe_unused]] static auto weak_members(const WeakVideo& w) {
  const auto& [id, frames, label] = w;
  return std::tuple<const std::string&, const std::vector<int>&, const Label&>(id, frames, label);
}

TEST_CASE("iou examples") {
  CHECK(iou({2, 6}, {2, 6}) == 1.0);
  CHECK(iou({2, 6}, {4, 8}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(iou({0, 2}, {5, 9}) == 0.0);
  CHECK(iou({0, 4}, {4, 8}) == 0.0);
}

TEST_CASE("iou is symmetric and matches frame-set brute force") {
  Rng rng(7);
  for (int k = 0; k < 2000; ++k) {
    const int s1 = rng.between(0, 30), s2 = rng.between(0, 30);
    const TemporalInterval a{s1, s1 + rng.between(1, 20)}, b{s2, s2 + rng.between(1, 20)};
    CHECK(iou(a, b) == iou(b, a));
    CHECK(std::abs(iou(a, b) - iou_by_frames(a, b)) < 1e-12);
    CHECK(iou(a, a) == 1.0);
  }
}

TEST_CASE("discard_segment examples") {
  const auto f = iota_frames(10);
  auto r = discard_segment(f, {3, 7});
  REQUIRE(r);
  std::vector<int> expect{0, 1, 2, 7, 8, 9};
  CHECK(*r == expect);
  CHECK_FALSE(discard_segment(f, {0, 10}));
  r = discard_segment(f, {8, 15});
  REQUIRE(r);
  CHECK(*r == range(0, 8));
  r = discard_segment(f, {-5, 2});
  REQUIRE(r);
  CHECK(*r == range(2, 10));
}

TEST_CASE("discard_segment keeps duration accounting") {
  Rng rng(3);
  for (int k = 0; k < 500; ++k) {
    const int d = rng.between(1, 40);
    const auto f = iota_frames(d);
    const int s = rng.between(-5, 45), e = s + rng.between(0, 30);
    const int cs = std::clamp(s, 0, d), ce = std::clamp(e, cs, d);
    const auto r = discard_segment(f, {s, e});
    if (ce - cs == d) {
      CHECK_FALSE(r);
    } else {
      REQUIRE(r);
      CHECK(static_cast<int>(r->size()) + (ce - cs) == d);
    }
  }
}

TEST_CASE("discard_end examples") {
  const auto f = iota_frames(16);
  CHECK(*discard_end(f, 0.25, TrimSide::Begin) == range(4, 16));
  CHECK(*discard_end(f, 0.25, TrimSide::End) == range(0, 12));
  CHECK_FALSE(discard_end(iota_frames(2), 0.999, TrimSide::Begin));
  CHECK_THROWS_AS(discard_end(f, 0.0, TrimSide::End), std::invalid_argument);
  CHECK_THROWS_AS(discard_end(f, 1.0, TrimSide::End), std::invalid_argument);
}

TEST_CASE("discard_random_end picks each side about half the time") {
  const auto f = iota_frames(16);
  Rng rng(11);
  int begin = 0;
  const int n = 4000;
  for (int k = 0; k < n; ++k) {
    const auto r = discard_random_end(f, 0.25, rng);
    REQUIRE(r);
    if (*r == range(4, 16)) ++begin;
    else CHECK(*r == range(0, 12));
  }
  CHECK(std::abs(begin / static_cast<double>(n) - 0.5) < 0.03);
  CHECK_FALSE(discard_random_end(iota_frames(2), 0.999, rng));
}

TEST_CASE("uniform_sample examples") {
  CHECK(uniform_sample(iota_frames(16), 16) == iota_frames(16));
  std::vector<int> even;
  for (int i = 0; i < 32; i += 2) even.push_back(i);
  CHECK(uniform_sample(iota_frames(32), 16) == even);
  std::vector<int> rep;
  for (int i = 0; i < 4; ++i) rep.insert(rep.end(), 4, i);
  CHECK(uniform_sample(iota_frames(4), 16) == rep);
  CHECK_THROWS(uniform_sample({}, 16));
}

TEST_CASE("raw and sampled timelines agree on which samples fall inside a span") {
  Rng rng(5);
  for (int k = 0; k < 1000; ++k) {
    const int d = rng.between(16, 120);
    const int s = rng.between(0, d - 1), e = rng.between(s + 1, d);
    const auto idx = uniform_sample(iota_frames(d), 16);
    const auto sampled = raw_to_sampled({s, e}, d, 16);
    std::vector<int> inside;
    for (int i = 0; i < 16; ++i)
      if (idx[i] >= s && idx[i] < e) inside.push_back(i);
    if (inside.empty()) {
      CHECK_FALSE(sampled);
    } else {
      REQUIRE(sampled);
      CHECK(sampled->start == inside.front());
      CHECK(sampled->end == inside.back() + 1);
      CHECK(static_cast<int>(inside.size()) == sampled->length());
    }
  }
}

TEST_CASE("generate_corpus is deterministic and honours the spec") {
  auto spec = avlab::test::small_spec(42, 200);
  const auto a = generate_corpus(spec);
  const auto b = generate_corpus(spec);
  CHECK(a == b);
  CHECK(corpus_to_jsonl(a) == corpus_to_jsonl(b));
  spec.seed = 43;
  CHECK(generate_corpus(spec) != a);

  int abnormal = 0;
  const VocabLayout layout(spec.vocab);
  for (const auto& v : a) {
    CHECK_NOTHROW(check_video(v));
    CHECK(v.duration() >= spec.min_duration);
    CHECK(v.duration() <= spec.max_duration);
    if (v.label == Label::Normal) {
      CHECK_FALSE(v.anomaly);
      CHECK_FALSE(v.category);
      for (int t : v.frames) CHECK_FALSE(layout.category_of(t));
      continue;
    }
    ++abnormal;
    REQUIRE(v.anomaly);
    REQUIRE(v.category);
    for (int f = 0; f < v.duration(); ++f) {
      const auto c = layout.category_of(v.frames[f]);
      if (f < v.anomaly->start || f >= v.anomaly->end) CHECK_FALSE(c);
      else if (c) CHECK(*c == *v.category);
    }
  }
  CHECK(abnormal == 100);
}

TEST_CASE("corpus spec validation names the field") {
  CorpusSpec s;
  s.abnormal_fraction = 1.5;
  try {
    s.validate();
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("abnormal_fraction") != std::string::npos);
  }
  s = CorpusSpec{};
  s.min_duration = 0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("corpus files round-trip") {
  TempDir dir("corpus");
  const auto c = generate_corpus(avlab::test::small_spec(9, 50));
  save_corpus(dir / "c.jsonl", c);
  CHECK(load_corpus(dir / "c.jsonl") == c);

  const auto w = to_weak(c);
  save_weak_corpus(dir / "w.jsonl", w);
  CHECK(load_weak_corpus(dir / "w.jsonl") == w);
  CHECK(load_weak_corpus(dir / "c.jsonl") == w);
  CHECK_THROWS_AS(load_corpus(dir / "w.jsonl"), MissingAnnotationError);

  auto shuffled = c;
  Rng rng(1);
  rng.shuffle(shuffled.begin(), shuffled.end());
  CHECK(corpus_to_jsonl(shuffled) == corpus_to_jsonl(c));
}

TEST_CASE("corpus parse errors are specific") {
  const auto text = corpus_to_jsonl(generate_corpus(avlab::test::small_spec(2, 3)));
  const auto truncated = text.substr(0, text.size() - 10);
  try {
    corpus_from_jsonl(truncated);
    FAIL("expected CorpusFormatError");
  } catch (const CorpusFormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(msg.find("byte offset") != std::string::npos);
  }
  try {
    corpus_from_jsonl(R"({"id":"a","frames":[1],"label":"Normal","colour":"red"})");
    FAIL("expected CorpusFormatError");
  } catch (const CorpusFormatError& e) {
    CHECK(std::string(e.what()).find("colour") != std::string::npos);
  }
  CHECK_THROWS_AS(corpus_from_jsonl(R"({"id":"a","frames":[1],"label":"Weird"})"), CorpusFormatError);
}

TEST_CASE("weak view exposes the label only") {
  const auto c = generate_corpus(avlab::test::small_spec(4, 20));
  for (const auto& v : c) {
    CHECK(weak_view(v) == v.label);
    const auto w = to_weak(v);
    CHECK(w.id == v.id);
    CHECK(w.frames == v.frames);
    CHECK(w.label == v.label);
  }
}
