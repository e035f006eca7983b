#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avlab/corpus.hpp"
#include "avlab/cot.hpp"
#include "avlab/rng.hpp"

namespace avlab {

enum class ObservationMode { Full, Prefix };

std::string_view to_string(ObservationMode mode);
ObservationMode parse_observation_mode(std::string_view text);

struct PolicyShape {
  int vocab = 8;
  int bins = 8;
  int frames = 16;  // every input is uniformly resampled to this many frames
  ObservationMode mode = ObservationMode::Full;
  int prefix = 4;  // frames visible to the classifier in Prefix mode

  void validate() const;
  bool operator==(const PolicyShape&) const = default;
};

enum class Verbosity { Short = 0, Medium = 1, Long = 2 };
inline constexpr int kNumVerbosity = 3;

std::string_view to_string(Verbosity v);

// Flat parameter vector split into four blocks:
//   cls  [vocab + 1]      classifier weights over the token histogram + bias
//   seg  [2*vocab + 3]    segment scorer over inside/outside histograms,
//                         normalized endpoints and bias
//   len  [2 * 3]          verbosity logits, one row per predicted class
//   fmt  [1]              well-formedness logit
class PolicyParams {
 public:
  explicit PolicyParams(PolicyShape shape);

  const PolicyShape& shape() const { return shape_; }

  std::size_t size() const { return values_.size(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::size_t cls_offset() const { return 0; }
  std::size_t seg_offset() const { return cls_size(); }
  std::size_t len_offset() const { return seg_offset() + seg_size(); }
  std::size_t fmt_offset() const { return len_offset() + 2 * kNumVerbosity; }
  std::size_t cls_size() const { return static_cast<std::size_t>(shape_.vocab) + 1; }
  std::size_t seg_size() const { return 2 * static_cast<std::size_t>(shape_.vocab) + 3; }

  std::span<double> cls() { return values().subspan(cls_offset(), cls_size()); }
  std::span<const double> cls() const { return values().subspan(cls_offset(), cls_size()); }
  std::span<double> seg() { return values().subspan(seg_offset(), seg_size()); }
  std::span<const double> seg() const { return values().subspan(seg_offset(), seg_size()); }
  std::span<double> len(Label cls) { return values().subspan(len_row(cls), kNumVerbosity); }
  std::span<const double> len(Label cls) const { return values().subspan(len_row(cls), kNumVerbosity); }
  double& fmt() { return values_[fmt_offset()]; }
  double fmt() const { return values_[fmt_offset()]; }

  bool all_finite() const;
  bool operator==(const PolicyParams&) const = default;

 private:
  std::size_t len_row(Label cls) const {
    return len_offset() + (cls == Label::Abnormal ? kNumVerbosity : 0);
  }

  PolicyShape shape_;
  std::vector<double> values_;
};

// Frozen reference copy; later updates to the source do not reach it.
inline PolicyParams snapshot(const PolicyParams& params) { return params; }

std::vector<double> features_cls(std::span<const int> frames, int vocab, ObservationMode mode, int prefix);

// All contiguous spans of `bins` equal bins over [0, duration).
std::vector<TemporalInterval> candidates(int duration, int bins);

std::vector<double> features_segment(std::span<const int> frames, int vocab, TemporalInterval span);

// Everything the policy reads from one input video: the resampled frames and
// the precomputed feature vectors.
struct Observation {
  std::vector<int> frames;
  std::vector<double> cls_features;
  std::vector<TemporalInterval> spans;
  std::vector<std::vector<double>> span_features;
};

Observation observe(const PolicyShape& shape, std::span<const int> raw_frames);

struct DecisionTrace {
  Label cls = Label::Normal;
  double cls_logp = 0.0;
  std::optional<int> segment;
  double seg_logp = 0.0;
  Verbosity verbosity = Verbosity::Medium;
  double len_logp = 0.0;
  bool wellformed = true;
  double fmt_logp = 0.0;

  double total_logp() const { return cls_logp + seg_logp + len_logp + fmt_logp; }
};

struct Completion {
  std::string text;
  DecisionTrace trace;
  std::optional<CoTDocument> doc;
};

double prob_abnormal(const PolicyParams& params, const Observation& obs);
std::vector<double> segment_probs(const PolicyParams& params, const Observation& obs);
std::vector<double> verbosity_probs(const PolicyParams& params, Label cls);
double prob_wellformed(const PolicyParams& params);

// Category reported for an abnormal answer: the dominant anomaly token
// family inside the chosen span. Deterministic, so it carries no probability.
int infer_category(const Observation& obs, int vocab, TemporalInterval span);

Completion sample(const PolicyParams& params, const Observation& obs, Rng& rng);
// Argmax at every decision.
Completion greedy(const PolicyParams& params, const Observation& obs);
// Builds the completion text for a fixed set of decisions; log-probs are
// filled in from `params`.
Completion complete(const PolicyParams& params, const Observation& obs, Label cls,
                    std::optional<int> segment, Verbosity verbosity, bool wellformed);

double logprob(const PolicyParams& params, const Observation& obs, const DecisionTrace& trace);

// Adds scale * d logprob / d params into `grad` (size params.size()).
void accumulate_grad_logprob(const PolicyParams& params, const Observation& obs,
                             const DecisionTrace& trace, double scale, std::span<double> grad);
std::vector<double> grad_logprob(const PolicyParams& params, const Observation& obs,
                                 const DecisionTrace& trace);

// Template word budgets for the think section.
struct LengthRange {
  int lo = 0;
  int hi = 0;
  bool contains(int words) const { return words >= lo && words <= hi; }
  bool operator==(const LengthRange&) const = default;
};

inline constexpr LengthRange kNormalLengthRange{140, 261};
inline constexpr LengthRange kAbnormalLengthRange{233, 456};

int think_budget(Label cls, Verbosity verbosity);

struct RenderRequest {
  Label cls = Label::Normal;
  int category = 0;             // ignored for Normal
  TemporalInterval interval{};  // sampled timeline; ignored for Normal
  Verbosity verbosity = Verbosity::Medium;
  bool wellformed = true;
};

CoTDocument render_document(const RenderRequest& req);
std::string render(const RenderRequest& req);

// Ground-truth rendering used as the reference text in evaluation.
std::string reference_text(const SyntheticVideo& video, int sampled_frames);
std::optional<TemporalInterval> sampled_ground_truth(const SyntheticVideo& video, int sampled_frames);

struct SftConfig {
  int steps = 500;
  double lr = 0.5;
};

struct SftResult {
  PolicyParams params;
  std::vector<double> nll;  // mean negative log-likelihood before each step, plus the final value
};

double sft_nll(const PolicyParams& params, std::span<const SyntheticVideo> videos);
SftResult sft_fit(const PolicyParams& init, std::span<const SyntheticVideo> videos, const SftConfig& cfg);
// Label-only variant: fits the class, verbosity and format heads and leaves
// the segment scorer untouched.
SftResult sft_fit_weak(const PolicyParams& init, std::span<const WeakVideo> videos, const SftConfig& cfg);

// Target decisions for supervised fitting.
DecisionTrace sft_target(const PolicyParams& params, const Observation& obs, const SyntheticVideo& video);

std::string checkpoint_to_text(const PolicyParams& params);
PolicyParams checkpoint_from_text(std::string_view text);
void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params);
PolicyParams load_checkpoint(const std::filesystem::path& path);

// Throws std::invalid_argument when a frame token falls outside the vocabulary.
void check_tokens(const PolicyShape& shape, std::span<const int> frames, std::string_view id);

}  // namespace avlab
