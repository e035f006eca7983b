#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "avlab/rng.hpp"

namespace avlab {

enum class Label { Normal, Abnormal };

std::string_view to_string(Label label);
Label parse_label(std::string_view text);

// Half-open frame span [start, end).
struct TemporalInterval {
  int start = 0;
  int end = 0;

  int length() const { return end - start; }
  bool valid() const { return start >= 0 && start < end; }
  bool operator==(const TemporalInterval&) const = default;
};

double iou(const TemporalInterval& a, const TemporalInterval& b);

// Fixed anomaly taxonomy. Indices are stable and used in corpus files.
inline constexpr int kNumCategories = 6;
inline constexpr std::array<std::string_view, kNumCategories> kCategoryNames = {
    "Fighting", "Robbery", "Collision", "Fire", "Flood", "Falling"};

std::optional<int> category_from_name(std::string_view name);

// Token vocabulary split: [0, background) is background, then one
// contiguous block of `per_category` tokens per anomaly category.
struct VocabLayout {
  int vocab = 0;
  int background = 0;
  int per_category = 0;

  explicit VocabLayout(int vocab_size);
  std::optional<int> category_of(int token) const;
  int category_token(int category, int offset) const {
    return background + category * per_category + offset;
  }
};

struct SyntheticVideo {
  std::string id;
  std::vector<int> frames;
  Label label = Label::Normal;
  std::optional<int> category;
  std::optional<TemporalInterval> anomaly;

  int duration() const { return static_cast<int>(frames.size()); }
  bool operator==(const SyntheticVideo&) const = default;
};

// What the RL stage is allowed to see: frames and the video-level label.
struct WeakVideo {
  std::string id;
  std::vector<int> frames;
  Label label = Label::Normal;

  bool operator==(const WeakVideo&) const = default;
};

Label weak_view(const SyntheticVideo& video);
WeakVideo to_weak(const SyntheticVideo& video);
std::vector<WeakVideo> to_weak(std::span<const SyntheticVideo> corpus);

enum class Placement { Begin, Middle, End };

struct CorpusSpec {
  int n_videos = 512;
  int min_duration = 32;
  int max_duration = 96;
  double abnormal_fraction = 0.5;
  int vocab = 8;
  int bins = 8;
  // Relative weights for begin / middle / end anomaly placement.
  std::array<double, 3> placement = {1.0, 1.0, 1.0};
  // Probability that a frame inside the anomaly carries a background token.
  double noise = 0.1;
  double min_anomaly_fraction = 0.3;
  double max_anomaly_fraction = 0.6;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

std::vector<SyntheticVideo> generate_corpus(const CorpusSpec& spec);

// Throws std::invalid_argument when the video violates its invariants.
void check_video(const SyntheticVideo& video);

// nullopt means the trim would leave no frames ("untrimmable").
using Trimmed = std::optional<std::vector<int>>;

Trimmed discard_segment(std::span<const int> frames, TemporalInterval segment);

enum class TrimSide { Begin, End };

Trimmed discard_end(std::span<const int> frames, double fraction, TrimSide side);
Trimmed discard_random_end(std::span<const int> frames, double fraction, Rng& rng);

std::vector<int> uniform_sample(std::span<const int> frames, int n);

// Maps between the raw frame timeline of a video with `duration` frames and
// the n-frame uniformly sampled timeline the policy observes.
std::optional<TemporalInterval> raw_to_sampled(TemporalInterval raw, int duration, int n);
TemporalInterval sampled_to_raw(TemporalInterval sampled, int duration, int n);

class CorpusFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when an abnormal record carries only a weak label.
class MissingAnnotationError : public CorpusFormatError {
 public:
  using CorpusFormatError::CorpusFormatError;
};

std::string corpus_to_jsonl(std::span<const SyntheticVideo> corpus);
std::string weak_corpus_to_jsonl(std::span<const WeakVideo> corpus);

std::vector<SyntheticVideo> corpus_from_jsonl(std::string_view text);
// Accepts fully annotated and weak-only records alike.
std::vector<WeakVideo> weak_corpus_from_jsonl(std::string_view text);

void save_corpus(const std::filesystem::path& path, std::span<const SyntheticVideo> corpus);
void save_weak_corpus(const std::filesystem::path& path, std::span<const WeakVideo> corpus);
std::vector<SyntheticVideo> load_corpus(const std::filesystem::path& path);
std::vector<WeakVideo> load_weak_corpus(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace avlab
