#include "avlab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace avlab {

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double log_sum_exp(std::span<const double> xs) {
  const double m = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> xs) {
  const double lse = log_sum_exp(xs);
  std::vector<double> p(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) p[i] = std::exp(xs[i] - lse);
  return p;
}

std::vector<double> segment_scores(const PolicyParams& params, const Observation& obs) {
  std::vector<double> s(obs.span_features.size());
  for (std::size_t c = 0; c < s.size(); ++c) s[c] = dot(params.seg(), obs.span_features[c]);
  return s;
}

void add_histogram(std::span<const int> frames, int vocab, std::span<double> out) {
  if (frames.empty()) return;
  const double w = 1.0 / static_cast<double>(frames.size());
  for (int tok : frames) {
    if (tok < 0 || tok >= vocab) throw std::invalid_argument("frame token outside the vocabulary");
    out[tok] += w;
  }
}

std::size_t argmax(std::span<const double> xs) {
  return static_cast<std::size_t>(std::max_element(xs.begin(), xs.end()) - xs.begin());
}

}  // namespace

std::string_view to_string(ObservationMode mode) { return mode == ObservationMode::Prefix ? "prefix" : "full"; }

ObservationMode parse_observation_mode(std::string_view text) {
  if (text == "full") return ObservationMode::Full;
  if (text == "prefix") return ObservationMode::Prefix;
  throw std::invalid_argument("unknown observation mode '" + std::string(text) + "'");
}

std::string_view to_string(Verbosity v) {
  switch (v) {
    case Verbosity::Short: return "short";
    case Verbosity::Medium: return "medium";
    case Verbosity::Long: return "long";
  }
  return "medium";
}

void PolicyShape::validate() const {
  if (vocab < 8) throw std::invalid_argument("policy.vocab must be at least 8");
  if (bins < 1) throw std::invalid_argument("policy.bins must be at least 1");
  if (frames < bins) throw std::invalid_argument("policy.frames must be >= policy.bins");
  if (mode == ObservationMode::Prefix && (prefix < 1 || prefix > frames))
    throw std::invalid_argument("policy.prefix must lie in [1, policy.frames]");
}

PolicyParams::PolicyParams(PolicyShape shape) : shape_(shape) {
  shape_.validate();
  values_.assign(cls_size() + seg_size() + 2 * kNumVerbosity + 1, 0.0);
}

bool PolicyParams::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::vector<double> features_cls(std::span<const int> frames, int vocab, ObservationMode mode, int prefix) {
  if (frames.empty()) throw std::invalid_argument("features_cls: no frames");
  std::vector<double> phi(static_cast<std::size_t>(vocab) + 1, 0.0);
  auto window = frames;
  if (mode == ObservationMode::Prefix)
    window = frames.first(std::min<std::size_t>(frames.size(), static_cast<std::size_t>(prefix)));
  add_histogram(window, vocab, phi);
  phi[vocab] = 1.0;
  return phi;
}

std::vector<TemporalInterval> candidates(int duration, int bins) {
  if (bins < 1) throw std::invalid_argument("candidates: bins must be positive");
  if (duration < bins) throw std::invalid_argument("candidates: duration shorter than bin count");
  auto edge = [&](int k) { return static_cast<int>(static_cast<std::int64_t>(k) * duration / bins); };
  std::vector<TemporalInterval> out;
  out.reserve(static_cast<std::size_t>(bins) * (bins + 1) / 2);
  for (int i = 0; i < bins; ++i)
    for (int j = i; j < bins; ++j) out.push_back(TemporalInterval{edge(i), edge(j + 1)});
  return out;
}

std::vector<double> features_segment(std::span<const int> frames, int vocab, TemporalInterval span) {
  const int n = static_cast<int>(frames.size());
  std::vector<double> psi(2 * static_cast<std::size_t>(vocab) + 3, 0.0);
  std::span<double> inside(psi.data(), vocab);
  std::span<double> outside(psi.data() + vocab, vocab);
  add_histogram(frames.subspan(span.start, span.length()), vocab, inside);
  std::vector<int> rest(frames.begin(), frames.begin() + span.start);
  rest.insert(rest.end(), frames.begin() + span.end, frames.end());
  add_histogram(rest, vocab, outside);
  psi[2 * vocab] = static_cast<double>(span.start) / n;
  psi[2 * vocab + 1] = static_cast<double>(span.end) / n;
  psi[2 * vocab + 2] = 1.0;
  return psi;
}

void check_tokens(const PolicyShape& shape, std::span<const int> frames, std::string_view id) {
  for (int tok : frames)
    if (tok < 0 || tok >= shape.vocab)
      throw std::invalid_argument("video '" + std::string(id) + "': token " + std::to_string(tok) +
                                  " outside policy vocabulary of size " + std::to_string(shape.vocab));
}

Observation observe(const PolicyShape& shape, std::span<const int> raw_frames) {
  Observation obs;
  obs.frames = uniform_sample(raw_frames, shape.frames);
  obs.cls_features = features_cls(obs.frames, shape.vocab, shape.mode, shape.prefix);
  obs.spans = candidates(shape.frames, shape.bins);
  obs.span_features.reserve(obs.spans.size());
  for (const auto& s : obs.spans) obs.span_features.push_back(features_segment(obs.frames, shape.vocab, s));
  return obs;
}

double prob_abnormal(const PolicyParams& params, const Observation& obs) {
  return sigmoid(dot(params.cls(), obs.cls_features));
}

std::vector<double> segment_probs(const PolicyParams& params, const Observation& obs) {
  return softmax(segment_scores(params, obs));
}

std::vector<double> verbosity_probs(const PolicyParams& params, Label cls) { return softmax(params.len(cls)); }

double prob_wellformed(const PolicyParams& params) { return sigmoid(params.fmt()); }

int infer_category(const Observation& obs, int vocab, TemporalInterval span) {
  const VocabLayout layout(vocab);
  auto tally = [&](int begin, int end) {
    std::vector<int> counts(kNumCategories, 0);
    for (int i = begin; i < end; ++i)
      if (auto c = layout.category_of(obs.frames[i])) ++counts[*c];
    return counts;
  };
  auto counts = tally(span.start, span.end);
  if (std::all_of(counts.begin(), counts.end(), [](int c) { return c == 0; }))
    counts = tally(0, static_cast<int>(obs.frames.size()));
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

namespace {

// with_segment == false drops the segment factor, which marginalizes it out.
double logprob_impl(const PolicyParams& params, const Observation& obs, const DecisionTrace& trace,
                    bool with_segment) {
  const double z = dot(params.cls(), obs.cls_features);
  double lp = trace.cls == Label::Abnormal ? -softplus(-z) : -softplus(z);
  if (with_segment && trace.cls == Label::Abnormal) {
    if (!trace.segment || *trace.segment < 0 || *trace.segment >= static_cast<int>(obs.spans.size()))
      throw std::invalid_argument("logprob: abnormal trace needs a valid segment index");
    const auto s = segment_scores(params, obs);
    lp += s[*trace.segment] - log_sum_exp(s);
  }
  const auto row = params.len(trace.cls);
  lp += row[static_cast<int>(trace.verbosity)] - log_sum_exp(row);
  lp += trace.wellformed ? -softplus(-params.fmt()) : -softplus(params.fmt());
  return lp;
}

void accumulate_impl(const PolicyParams& params, const Observation& obs, const DecisionTrace& trace, double scale,
                     std::span<double> grad, bool with_segment) {
  if (grad.size() != params.size()) throw std::invalid_argument("gradient size mismatch");
  const double p_abn = prob_abnormal(params, obs);
  const double y = trace.cls == Label::Abnormal ? 1.0 : 0.0;
  auto g_cls = grad.subspan(params.cls_offset(), params.cls_size());
  for (std::size_t k = 0; k < g_cls.size(); ++k) g_cls[k] += scale * (y - p_abn) * obs.cls_features[k];

  if (with_segment && trace.cls == Label::Abnormal) {
    if (!trace.segment || *trace.segment < 0 || *trace.segment >= static_cast<int>(obs.spans.size()))
      throw std::invalid_argument("grad_logprob: abnormal trace needs a valid segment index");
    const auto probs = segment_probs(params, obs);
    auto g_seg = grad.subspan(params.seg_offset(), params.seg_size());
    const auto& chosen = obs.span_features[*trace.segment];
    for (std::size_t k = 0; k < g_seg.size(); ++k) g_seg[k] += scale * chosen[k];
    for (std::size_t c = 0; c < probs.size(); ++c) {
      const auto& f = obs.span_features[c];
      const double w = scale * probs[c];
      for (std::size_t k = 0; k < g_seg.size(); ++k) g_seg[k] -= w * f[k];
    }
  }

  const auto pv = verbosity_probs(params, trace.cls);
  const std::size_t row =
      params.len_offset() + (trace.cls == Label::Abnormal ? kNumVerbosity : 0);
  for (int v = 0; v < kNumVerbosity; ++v)
    grad[row + v] += scale * ((v == static_cast<int>(trace.verbosity) ? 1.0 : 0.0) - pv[v]);

  grad[params.fmt_offset()] += scale * ((trace.wellformed ? 1.0 : 0.0) - prob_wellformed(params));
}

}  // namespace

double logprob(const PolicyParams& params, const Observation& obs, const DecisionTrace& trace) {
  return logprob_impl(params, obs, trace, true);
}

void accumulate_grad_logprob(const PolicyParams& params, const Observation& obs, const DecisionTrace& trace,
                             double scale, std::span<double> grad) {
  accumulate_impl(params, obs, trace, scale, grad, true);
}

std::vector<double> grad_logprob(const PolicyParams& params, const Observation& obs, const DecisionTrace& trace) {
  std::vector<double> g(params.size(), 0.0);
  accumulate_grad_logprob(params, obs, trace, 1.0, g);
  return g;
}

Completion complete(const PolicyParams& params, const Observation& obs, Label cls, std::optional<int> segment,
                    Verbosity verbosity, bool wellformed) {
  Completion c;
  auto& t = c.trace;
  t.cls = cls;
  t.verbosity = verbosity;
  t.wellformed = wellformed;
  const double z = dot(params.cls(), obs.cls_features);
  t.cls_logp = cls == Label::Abnormal ? -softplus(-z) : -softplus(z);
  RenderRequest req;
  req.cls = cls;
  req.verbosity = verbosity;
  req.wellformed = wellformed;
  if (cls == Label::Abnormal) {
    if (!segment || *segment < 0 || *segment >= static_cast<int>(obs.spans.size()))
      throw std::invalid_argument("complete: abnormal decision needs a valid segment index");
    t.segment = segment;
    const auto s = segment_scores(params, obs);
    t.seg_logp = s[*segment] - log_sum_exp(s);
    req.interval = obs.spans[*segment];
    req.category = infer_category(obs, params.shape().vocab, req.interval);
  }
  const auto row = params.len(cls);
  t.len_logp = row[static_cast<int>(verbosity)] - log_sum_exp(row);
  t.fmt_logp = wellformed ? -softplus(-params.fmt()) : -softplus(params.fmt());
  auto doc = render_document(req);
  c.text = serialize(doc);
  if (wellformed) {
    c.doc = std::move(doc);
  } else {
    const auto at = c.text.rfind("</answer>");
    c.text.erase(at, std::string_view("</answer>\n").size());
  }
  return c;
}

Completion sample(const PolicyParams& params, const Observation& obs, Rng& rng) {
  const Label cls = rng.bernoulli(prob_abnormal(params, obs)) ? Label::Abnormal : Label::Normal;
  std::optional<int> segment;
  if (cls == Label::Abnormal) {
    const auto probs = segment_probs(params, obs);
    segment = static_cast<int>(rng.categorical(probs));
  }
  const auto pv = verbosity_probs(params, cls);
  const auto verbosity = static_cast<Verbosity>(rng.categorical(pv));
  const bool wellformed = rng.bernoulli(prob_wellformed(params));
  return complete(params, obs, cls, segment, verbosity, wellformed);
}

Completion greedy(const PolicyParams& params, const Observation& obs) {
  const Label cls = prob_abnormal(params, obs) > 0.5 ? Label::Abnormal : Label::Normal;
  std::optional<int> segment;
  if (cls == Label::Abnormal) segment = static_cast<int>(argmax(segment_probs(params, obs)));
  const auto verbosity = static_cast<Verbosity>(argmax(verbosity_probs(params, cls)));
  return complete(params, obs, cls, segment, verbosity, prob_wellformed(params) >= 0.5);
}

std::optional<TemporalInterval> sampled_ground_truth(const SyntheticVideo& video, int sampled_frames) {
  if (!video.anomaly) return std::nullopt;
  return raw_to_sampled(*video.anomaly, video.duration(), sampled_frames);
}

DecisionTrace sft_target(const PolicyParams& params, const Observation& obs, const SyntheticVideo& video) {
  DecisionTrace t;
  t.cls = video.label;
  t.verbosity = Verbosity::Medium;
  t.wellformed = true;
  if (video.label == Label::Abnormal) {
    const auto gt = sampled_ground_truth(video, params.shape().frames);
    int best = 0;
    double best_iou = -1.0;
    for (std::size_t c = 0; c < obs.spans.size(); ++c) {
      const double v = gt ? iou(obs.spans[c], *gt) : 0.0;
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(c);
      }
    }
    t.segment = best;
  }
  return t;
}

namespace {

struct SftItem {
  Observation obs;
  DecisionTrace target;
  bool with_segment = true;
};

std::vector<SftItem> sft_items(const PolicyParams& params, std::span<const SyntheticVideo> videos) {
  std::vector<SftItem> items;
  items.reserve(videos.size());
  for (const auto& v : videos) {
    if (v.label == Label::Abnormal && !v.anomaly)
      throw MissingAnnotationError("supervised fitting needs anomaly intervals; video '" + v.id +
                                   "' carries only a weak label");
    check_tokens(params.shape(), v.frames, v.id);
    SftItem item{observe(params.shape(), v.frames), {}};
    item.target = sft_target(params, item.obs, v);
    items.push_back(std::move(item));
  }
  return items;
}

std::vector<SftItem> weak_sft_items(const PolicyParams& params, std::span<const WeakVideo> videos) {
  std::vector<SftItem> items;
  items.reserve(videos.size());
  for (const auto& v : videos) {
    check_tokens(params.shape(), v.frames, v.id);
    SftItem item{observe(params.shape(), v.frames), {}, false};
    item.target.cls = v.label;
    items.push_back(std::move(item));
  }
  return items;
}

double mean_nll(const PolicyParams& params, const std::vector<SftItem>& items) {
  double s = 0.0;
  for (const auto& it : items) s -= logprob_impl(params, it.obs, it.target, it.with_segment);
  return s / static_cast<double>(items.size());
}

SftResult fit(const PolicyParams& init, const std::vector<SftItem>& items, const SftConfig& cfg) {
  if (cfg.steps < 0) throw std::invalid_argument("sft.steps must be >= 0");
  if (!(cfg.lr >= 0.0)) throw std::invalid_argument("sft.lr must be >= 0");
  SftResult result{init, {}};
  const double inv_n = 1.0 / static_cast<double>(items.size());
  std::vector<double> grad(init.size());
  for (int step = 0; step < cfg.steps; ++step) {
    result.nll.push_back(mean_nll(result.params, items));
    std::fill(grad.begin(), grad.end(), 0.0);
    for (const auto& it : items) accumulate_impl(result.params, it.obs, it.target, inv_n, grad, it.with_segment);
    auto w = result.params.values();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] += cfg.lr * grad[k];
    if (!result.params.all_finite())
      throw std::runtime_error("sft_fit: non-finite parameter after step " + std::to_string(step));
  }
  result.nll.push_back(mean_nll(result.params, items));
  return result;
}

}  // namespace

double sft_nll(const PolicyParams& params, std::span<const SyntheticVideo> videos) {
  if (videos.empty()) throw std::invalid_argument("sft_nll: no videos");
  return mean_nll(params, sft_items(params, videos));
}

SftResult sft_fit(const PolicyParams& init, std::span<const SyntheticVideo> videos, const SftConfig& cfg) {
  if (videos.empty()) throw std::invalid_argument("sft_fit: no videos");
  return fit(init, sft_items(init, videos), cfg);
}

SftResult sft_fit_weak(const PolicyParams& init, std::span<const WeakVideo> videos, const SftConfig& cfg) {
  if (videos.empty()) throw std::invalid_argument("sft_fit_weak: no videos");
  return fit(init, weak_sft_items(init, videos), cfg);
}

namespace {

constexpr std::string_view kCheckpointMagic = "avlab-policy-checkpoint";
constexpr int kCheckpointVersion = 1;

}  // namespace

std::string checkpoint_to_text(const PolicyParams& params) {
  std::ostringstream out;
  const auto& s = params.shape();
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "vocab " << s.vocab << '\n'
      << "bins " << s.bins << '\n'
      << "frames " << s.frames << '\n'
      << "mode " << to_string(s.mode) << '\n'
      << "prefix " << s.prefix << '\n';
  auto block = [&](std::string_view name, std::size_t offset, std::size_t size) {
    out << "block " << name << ' ' << size << '\n';
    char buf[40];
    for (std::size_t k = 0; k < size; ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", params.values()[offset + k]);
      out << (k ? " " : "") << buf;
    }
    out << '\n';
  };
  block("cls", params.cls_offset(), params.cls_size());
  block("seg", params.seg_offset(), params.seg_size());
  block("len", params.len_offset(), 2 * kNumVerbosity);
  block("fmt", params.fmt_offset(), 1);
  out << "end\n";
  return out.str();
}

PolicyParams checkpoint_from_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  auto fail = [](const std::string& what) -> void { throw std::runtime_error("checkpoint: " + what); };
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kCheckpointMagic) fail("missing header");
  if (version != kCheckpointVersion) fail("unsupported version " + std::to_string(version));
  PolicyShape shape;
  auto read_field = [&](std::string_view key, auto& value) {
    std::string k;
    if (!(in >> k) || k != key) fail("expected field '" + std::string(key) + "'");
    if (!(in >> value)) fail("bad value for '" + std::string(key) + "'");
  };
  std::string mode;
  read_field("vocab", shape.vocab);
  read_field("bins", shape.bins);
  read_field("frames", shape.frames);
  read_field("mode", mode);
  read_field("prefix", shape.prefix);
  shape.mode = parse_observation_mode(mode);
  PolicyParams params(shape);
  auto read_block = [&](std::string_view name, std::size_t offset, std::size_t size) {
    std::string kw, nm;
    std::size_t n = 0;
    if (!(in >> kw >> nm >> n) || kw != "block" || nm != name) fail("expected block '" + std::string(name) + "'");
    if (n != size)
      fail("block '" + std::string(name) + "' has " + std::to_string(n) + " values, expected " +
           std::to_string(size));
    for (std::size_t k = 0; k < size; ++k) {
      std::string tok;
      if (!(in >> tok)) fail("block '" + std::string(name) + "' truncated");
      try {
        params.values()[offset + k] = std::stod(tok);
      } catch (const std::exception&) {
        fail("bad number '" + tok + "' in block '" + std::string(name) + "'");
      }
    }
  };
  read_block("cls", params.cls_offset(), params.cls_size());
  read_block("seg", params.seg_offset(), params.seg_size());
  read_block("len", params.len_offset(), 2 * kNumVerbosity);
  read_block("fmt", params.fmt_offset(), 1);
  std::string end;
  if (!(in >> end) || end != "end") fail("missing end marker");
  if (!params.all_finite()) fail("non-finite parameter");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params) {
  write_file(path, checkpoint_to_text(params));
}

PolicyParams load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_text(read_file(path)); }

}  // namespace avlab
