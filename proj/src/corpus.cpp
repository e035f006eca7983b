#include "avlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace avlab {

using nlohmann::ordered_json;

std::string_view to_string(Label label) {
  return label == Label::Abnormal ? "Abnormal" : "Normal";
}

Label parse_label(std::string_view text) {
  if (text == "Abnormal") return Label::Abnormal;
  if (text == "Normal") return Label::Normal;
  throw std::invalid_argument("unknown label '" + std::string(text) + "'");
}

double iou(const TemporalInterval& a, const TemporalInterval& b) {
  const int inter = std::max(0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const int uni = a.length() + b.length() - inter;
  if (uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::optional<int> category_from_name(std::string_view name) {
  for (int c = 0; c < kNumCategories; ++c)
    if (kCategoryNames[c] == name) return c;
  return std::nullopt;
}

VocabLayout::VocabLayout(int vocab_size) : vocab(vocab_size) {
  if (vocab_size < 8) throw std::invalid_argument("vocabulary size must be at least 8");
  per_category = std::max(1, (3 * vocab_size / 4) / kNumCategories);
  background = vocab_size - kNumCategories * per_category;
}

std::optional<int> VocabLayout::category_of(int token) const {
  if (token < background || token >= vocab) return std::nullopt;
  return (token - background) / per_category;
}

Label weak_view(const SyntheticVideo& video) { return video.label; }

WeakVideo to_weak(const SyntheticVideo& video) {
  return WeakVideo{video.id, video.frames, weak_view(video)};
}

std::vector<WeakVideo> to_weak(std::span<const SyntheticVideo> corpus) {
  std::vector<WeakVideo> out;
  out.reserve(corpus.size());
  for (const auto& v : corpus) out.push_back(to_weak(v));
  return out;
}

void CorpusSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& what) {
    throw std::invalid_argument("corpus." + field + " " + what);
  };
  if (n_videos < 2) fail("n_videos", "must be at least 2");
  if (min_duration < 2) fail("min_duration", "must be at least 2");
  if (max_duration < min_duration) fail("max_duration", "must be >= min_duration");
  if (!(abnormal_fraction > 0.0 && abnormal_fraction < 1.0))
    fail("abnormal_fraction", "must lie in (0, 1)");
  if (vocab < 8) fail("vocab", "must be at least 8");
  if (bins < 1) fail("bins", "must be at least 1");
  double total = 0.0;
  for (double w : placement) {
    if (!(w >= 0.0) || !std::isfinite(w)) fail("placement", "weights must be finite and >= 0");
    total += w;
  }
  if (total <= 0.0) fail("placement", "weights must not all be zero");
  if (!(noise >= 0.0 && noise < 1.0)) fail("noise", "must lie in [0, 1)");
  if (!(min_anomaly_fraction > 0.0 && min_anomaly_fraction <= max_anomaly_fraction &&
        max_anomaly_fraction < 1.0))
    fail("min_anomaly_fraction", "and max_anomaly_fraction must satisfy 0 < min <= max < 1");
}

std::vector<SyntheticVideo> generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  const VocabLayout layout(spec.vocab);
  const Rng root(spec.seed);

  const int n = spec.n_videos;
  const int n_abnormal = std::clamp(
      static_cast<int>(std::lround(spec.abnormal_fraction * n)), 1, n - 1);
  std::vector<Label> labels(n, Label::Normal);
  std::fill(labels.begin(), labels.begin() + n_abnormal, Label::Abnormal);
  Rng label_rng = root.substream({1});
  label_rng.shuffle(labels.begin(), labels.end());

  std::vector<SyntheticVideo> corpus;
  corpus.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng rng = root.substream({2, static_cast<std::uint64_t>(i)});
    SyntheticVideo v;
    char id[32];
    std::snprintf(id, sizeof id, "v%05d", i);
    v.id = id;
    v.label = labels[i];
    const int duration = rng.between(spec.min_duration, spec.max_duration);
    v.frames.resize(duration);
    for (int& tok : v.frames) tok = static_cast<int>(rng.below(layout.background));

    if (v.label == Label::Abnormal) {
      const int category = static_cast<int>(rng.below(kNumCategories));
      const auto where = static_cast<Placement>(rng.categorical(spec.placement));
      const double frac = rng.uniform(spec.min_anomaly_fraction, spec.max_anomaly_fraction);
      const int len = std::clamp(static_cast<int>(std::lround(frac * duration)), 1, duration - 1);
      int start = 0;
      switch (where) {
        case Placement::Begin: start = 0; break;
        case Placement::End: start = duration - len; break;
        case Placement::Middle:
          start = duration - len >= 2 ? rng.between(1, duration - len - 1) : 0;
          break;
      }
      for (int f = start; f < start + len; ++f) {
        if (rng.bernoulli(spec.noise)) continue;
        v.frames[f] = layout.category_token(
            category, static_cast<int>(rng.below(layout.per_category)));
      }
      v.category = category;
      v.anomaly = TemporalInterval{start, start + len};
    }
    corpus.push_back(std::move(v));
  }
  return corpus;
}

void check_video(const SyntheticVideo& video) {
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument("video '" + video.id + "': " + what);
  };
  if (video.id.empty()) fail("empty id");
  if (video.frames.empty()) fail("no frames");
  for (int tok : video.frames)
    if (tok < 0) fail("negative frame token");
  const bool abnormal = video.label == Label::Abnormal;
  if (abnormal != video.anomaly.has_value()) fail("anomaly interval present iff label is Abnormal");
  if (abnormal != video.category.has_value()) fail("category present iff label is Abnormal");
  if (video.category && (*video.category < 0 || *video.category >= kNumCategories))
    fail("category out of range");
  if (video.anomaly && (!video.anomaly->valid() || video.anomaly->end > video.duration()))
    fail("anomaly interval outside the video");
}

Trimmed discard_segment(std::span<const int> frames, TemporalInterval segment) {
  const int duration = static_cast<int>(frames.size());
  const int start = std::clamp(segment.start, 0, duration);
  const int end = std::clamp(segment.end, start, duration);
  std::vector<int> out;
  out.reserve(duration - (end - start));
  out.insert(out.end(), frames.begin(), frames.begin() + start);
  out.insert(out.end(), frames.begin() + end, frames.end());
  if (out.empty()) return std::nullopt;
  return out;
}

Trimmed discard_end(std::span<const int> frames, double fraction, TrimSide side) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw std::invalid_argument("trim fraction must lie in (0, 1)");
  const int duration = static_cast<int>(frames.size());
  const int drop = static_cast<int>(std::ceil(fraction * duration));
  if (drop >= duration) return std::nullopt;
  if (side == TrimSide::Begin) return std::vector<int>(frames.begin() + drop, frames.end());
  return std::vector<int>(frames.begin(), frames.end() - drop);
}

Trimmed discard_random_end(std::span<const int> frames, double fraction, Rng& rng) {
  const TrimSide side = rng.bernoulli(0.5) ? TrimSide::Begin : TrimSide::End;
  return discard_end(frames, fraction, side);
}

std::vector<int> uniform_sample(std::span<const int> frames, int n) {
  if (frames.empty()) throw std::invalid_argument("uniform_sample: no frames");
  if (n < 1) throw std::invalid_argument("uniform_sample: n must be positive");
  const auto duration = static_cast<std::int64_t>(frames.size());
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) out[i] = frames[static_cast<std::size_t>(i * duration / n)];
  return out;
}

namespace {

// ceil(a * b / c) for nonnegative operands
int ceil_scaled(int a, int b, int c) {
  const std::int64_t num = static_cast<std::int64_t>(a) * b;
  return static_cast<int>((num + c - 1) / c);
}

}  // namespace

std::optional<TemporalInterval> raw_to_sampled(TemporalInterval raw, int duration, int n) {
  // Sample i shows raw frame floor(i * duration / n); keep the samples that
  // land inside the raw span.
  TemporalInterval s{ceil_scaled(raw.start, n, duration), ceil_scaled(raw.end, n, duration)};
  s.start = std::clamp(s.start, 0, n);
  s.end = std::clamp(s.end, 0, n);
  if (!s.valid()) return std::nullopt;
  return s;
}

TemporalInterval sampled_to_raw(TemporalInterval sampled, int duration, int n) {
  auto to_raw = [&](int i) {
    return static_cast<int>(static_cast<std::int64_t>(i) * duration / n);
  };
  return TemporalInterval{to_raw(sampled.start), to_raw(sampled.end)};
}

namespace {

ordered_json record_json(const std::string& id, const std::vector<int>& frames, Label label) {
  ordered_json j;
  j["id"] = id;
  j["frames"] = frames;
  j["label"] = std::string(to_string(label));
  return j;
}

struct RawRecord {
  std::string id;
  std::vector<int> frames;
  Label label = Label::Normal;
  std::optional<int> category;
  std::optional<TemporalInterval> anomaly;
  int line = 0;
};

[[noreturn]] void record_error(int line, const std::string& what) {
  throw CorpusFormatError("corpus line " + std::to_string(line) + ": " + what);
}

RawRecord parse_record(const ordered_json& j, int line) {
  if (!j.is_object()) record_error(line, "record is not an object");
  for (const auto& [key, _] : j.items()) {
    if (key != "id" && key != "frames" && key != "label" && key != "category" && key != "anomaly")
      record_error(line, "unknown field '" + key + "'");
  }
  RawRecord r;
  r.line = line;
  if (!j.contains("id") || !j["id"].is_string()) record_error(line, "missing or non-string field 'id'");
  r.id = j["id"].get<std::string>();
  if (!j.contains("frames") || !j["frames"].is_array())
    record_error(line, "missing or non-array field 'frames'");
  for (const auto& f : j["frames"]) {
    if (!f.is_number_integer() || f.get<long long>() < 0)
      record_error(line, "field 'frames' must hold nonnegative integers");
    r.frames.push_back(f.get<int>());
  }
  if (!j.contains("label") || !j["label"].is_string())
    record_error(line, "missing or non-string field 'label'");
  try {
    r.label = parse_label(j["label"].get<std::string>());
  } catch (const std::invalid_argument& e) {
    record_error(line, std::string("field 'label': ") + e.what());
  }
  if (j.contains("category")) {
    if (!j["category"].is_string()) record_error(line, "field 'category' must be a string");
    const auto name = j["category"].get<std::string>();
    r.category = category_from_name(name);
    if (!r.category) record_error(line, "field 'category': unknown category '" + name + "'");
  }
  if (j.contains("anomaly")) {
    const auto& a = j["anomaly"];
    if (!a.is_object()) record_error(line, "field 'anomaly' must be an object");
    for (const auto& [key, _] : a.items())
      if (key != "start" && key != "end") record_error(line, "unknown field 'anomaly." + key + "'");
    if (!a.contains("start") || !a.contains("end") || !a["start"].is_number_integer() ||
        !a["end"].is_number_integer())
      record_error(line, "field 'anomaly' needs integer 'start' and 'end'");
    r.anomaly = TemporalInterval{a["start"].get<int>(), a["end"].get<int>()};
  }
  return r;
}

std::vector<RawRecord> parse_records(std::string_view text) {
  std::vector<RawRecord> out;
  std::size_t offset = 0;
  int line = 0;
  while (offset < text.size()) {
    ++line;
    std::size_t nl = text.find('\n', offset);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view body = text.substr(offset, nl - offset);
    if (body.find_first_not_of(" \t\r") != std::string_view::npos) {
      ordered_json j;
      try {
        j = ordered_json::parse(body);
      } catch (const nlohmann::json::parse_error& e) {
        const std::size_t at = offset + (e.byte > 0 ? e.byte - 1 : 0);
        record_error(line, "parse error at byte offset " + std::to_string(at) + " (" + e.what() + ")");
      }
      out.push_back(parse_record(j, line));
    }
    offset = nl + 1;
  }
  return out;
}

}  // namespace

std::string corpus_to_jsonl(std::span<const SyntheticVideo> corpus) {
  std::vector<const SyntheticVideo*> order;
  for (const auto& v : corpus) order.push_back(&v);
  std::stable_sort(order.begin(), order.end(),
                   [](const auto* a, const auto* b) { return a->id < b->id; });
  std::string out;
  for (const auto* v : order) {
    auto j = record_json(v->id, v->frames, v->label);
    if (v->category) j["category"] = std::string(kCategoryNames.at(*v->category));
    if (v->anomaly) j["anomaly"] = ordered_json{{"start", v->anomaly->start}, {"end", v->anomaly->end}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string weak_corpus_to_jsonl(std::span<const WeakVideo> corpus) {
  std::vector<const WeakVideo*> order;
  for (const auto& v : corpus) order.push_back(&v);
  std::stable_sort(order.begin(), order.end(),
                   [](const auto* a, const auto* b) { return a->id < b->id; });
  std::string out;
  for (const auto* v : order) {
    out += record_json(v->id, v->frames, v->label).dump();
    out += '\n';
  }
  return out;
}

std::vector<SyntheticVideo> corpus_from_jsonl(std::string_view text) {
  std::vector<SyntheticVideo> out;
  for (auto& r : parse_records(text)) {
    if (r.label == Label::Abnormal && !r.anomaly)
      throw MissingAnnotationError("corpus line " + std::to_string(r.line) + ": abnormal video '" +
                                   r.id + "' has no anomaly interval (weak-labeled record)");
    SyntheticVideo v{std::move(r.id), std::move(r.frames), r.label, r.category, r.anomaly};
    try {
      check_video(v);
    } catch (const std::invalid_argument& e) {
      record_error(r.line, e.what());
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<WeakVideo> weak_corpus_from_jsonl(std::string_view text) {
  std::vector<WeakVideo> out;
  for (auto& r : parse_records(text)) {
    if (r.frames.empty()) record_error(r.line, "video '" + r.id + "' has no frames");
    out.push_back(WeakVideo{std::move(r.id), std::move(r.frames), r.label});
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

void save_corpus(const std::filesystem::path& path, std::span<const SyntheticVideo> corpus) {
  write_file(path, corpus_to_jsonl(corpus));
}

void save_weak_corpus(const std::filesystem::path& path, std::span<const WeakVideo> corpus) {
  write_file(path, weak_corpus_to_jsonl(corpus));
}

std::vector<SyntheticVideo> load_corpus(const std::filesystem::path& path) {
  return corpus_from_jsonl(read_file(path));
}

std::vector<WeakVideo> load_weak_corpus(const std::filesystem::path& path) {
  return weak_corpus_from_jsonl(read_file(path));
}

}  // namespace avlab
