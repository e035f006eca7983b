#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "avlab/corpus.hpp"
#include "avlab/cot.hpp"

namespace avlab {

struct ClassificationMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when the corresponding denominator was zero and the value is 0 by convention.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
  bool operator==(const ClassificationMetrics&) const = default;
};

// Abnormal is the positive class. An unreadable prediction (nullopt) is
// always wrong and never counts as a positive.
ClassificationMetrics classification_metrics(std::span<const std::optional<Label>> predictions,
                                             std::span<const Label> labels);

inline constexpr std::array<double, 3> kDefaultIouThresholds = {0.3, 0.5, 0.7};

struct GroundingMetrics {
  double miou = 0.0;
  std::vector<double> thresholds;
  std::vector<double> recall_at;
  int n_abnormal = 0;
  bool operator==(const GroundingMetrics&) const = default;
};

// Only entries whose ground truth is present are scored; a Normal or
// unreadable prediction on those contributes IoU 0.
GroundingMetrics grounding_metrics(std::span<const std::optional<Verdict>> predictions,
                                   std::span<const std::optional<TemporalInterval>> ground_truth,
                                   std::span<const double> thresholds = kDefaultIouThresholds);

// Strips tag markup, case-folds ASCII and splits on whitespace.
std::vector<std::string> metric_tokens(std::string_view text);

double bleu_n(std::string_view candidate, std::string_view reference, int n = 2);
double bleu_n(std::span<const std::string> candidate, std::span<const std::string> reference, int n = 2);

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool degenerate = false;  // one side had no n-grams
};

RougeScore rouge_n(std::string_view candidate, std::string_view reference, int n);
RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, int n);
RougeScore rouge_l(std::string_view candidate, std::string_view reference);
RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);

// Unigram alignment by exact match, then by suffix-stripped stem; no synonyms.
inline constexpr double kMeteorAlpha = 0.9;
inline constexpr double kMeteorGamma = 0.5;
inline constexpr double kMeteorBeta = 3.0;

double meteor_lite(std::string_view candidate, std::string_view reference);
double meteor_lite(std::span<const std::string> candidate, std::span<const std::string> reference);
std::string meteor_stem(std::string_view token);

struct OutputRecord {
  std::string video_id;
  std::string text;
  bool operator==(const OutputRecord&) const = default;
};

std::string outputs_to_jsonl(std::span<const OutputRecord> records);
std::vector<OutputRecord> outputs_from_jsonl(std::string_view text);
void save_outputs(const std::filesystem::path& path, std::span<const OutputRecord> records);
std::vector<OutputRecord> load_outputs(const std::filesystem::path& path);

struct MetricsReport {
  int n_videos = 0;
  int n_abnormal = 0;
  int n_unreadable = 0;
  ClassificationMetrics classification;
  GroundingMetrics grounding;
  double bleu2 = 0.0;
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rouge_l = 0.0;
  double meteor_lite = 0.0;
  int text_degenerate = 0;  // pairs where a ROUGE score hit a zero denominator
  bool operator==(const MetricsReport&) const = default;
};

struct EvalOptions {
  int sampled_frames = 16;
  std::vector<double> thresholds{kDefaultIouThresholds.begin(), kDefaultIouThresholds.end()};
};

class EvaluationError : public std::runtime_error {
 public:
  EvaluationError(std::string message, std::vector<std::string> missing, std::vector<std::string> extra,
                  std::vector<std::string> duplicated);
  const std::vector<std::string>& missing() const { return missing_; }
  const std::vector<std::string>& extra() const { return extra_; }
  const std::vector<std::string>& duplicated() const { return duplicated_; }

 private:
  std::vector<std::string> missing_;
  std::vector<std::string> extra_;
  std::vector<std::string> duplicated_;
};

// Needs exactly one record per corpus video; otherwise throws EvaluationError
// listing the offending ids.
MetricsReport evaluate(std::span<const OutputRecord> outputs, std::span<const SyntheticVideo> corpus,
                       const EvalOptions& options = {});

std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(std::string_view text);
std::string report_table(const MetricsReport& report);

}  // namespace avlab
