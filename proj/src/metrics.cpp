#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <stdexcept>

#include "avlab/eval.hpp"

namespace avlab {

namespace {

double safe_div(double num, double den, bool& undefined) {
  if (den == 0.0) {
    undefined = true;
    return 0.0;
  }
  return num / den;
}

bool is_tag_at(std::string_view text, std::size_t pos, std::size_t& end) {
  std::size_t i = pos + 1;
  if (i < text.size() && text[i] == '/') ++i;
  const std::size_t name = i;
  while (i < text.size() && std::isalpha(static_cast<unsigned char>(text[i]))) ++i;
  if (i == name || i >= text.size() || text[i] != '>') return false;
  end = i + 1;
  return true;
}

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts ngrams(std::span<const std::string> tokens, int n) {
  NgramCounts out;
  if (static_cast<int>(tokens.size()) < n) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++out[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)];
  return out;
}

// Sum over candidate n-grams of min(count in candidate, count in reference).
int clipped_overlap(const NgramCounts& cand, const NgramCounts& ref) {
  int m = 0;
  for (const auto& [g, c] : cand) {
    const auto it = ref.find(g);
    if (it != ref.end()) m += std::min(c, it->second);
  }
  return m;
}

int total(std::size_t tokens, int n) { return std::max(0, static_cast<int>(tokens) - n + 1); }

RougeScore f_measure(double overlap, double cand_total, double ref_total) {
  RougeScore s;
  if (cand_total == 0.0 || ref_total == 0.0) {
    s.degenerate = true;
    return s;
  }
  s.precision = overlap / cand_total;
  s.recall = overlap / ref_total;
  if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

}  // namespace

ClassificationMetrics classification_metrics(std::span<const std::optional<Label>> predictions,
                                             std::span<const Label> labels) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("classification_metrics: " + std::to_string(predictions.size()) +
                                " predictions for " + std::to_string(labels.size()) + " labels");
  if (labels.empty()) throw std::invalid_argument("classification_metrics: no labels");
  int correct = 0, tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pos_pred = predictions[i] == Label::Abnormal;
    const bool pos_true = labels[i] == Label::Abnormal;
    correct += predictions[i] == labels[i];
    tp += pos_pred && pos_true;
    fp += pos_pred && !pos_true;
    fn += !pos_pred && pos_true;
  }
  ClassificationMetrics m;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  m.precision = safe_div(tp, tp + fp, m.precision_undefined);
  m.recall = safe_div(tp, tp + fn, m.recall_undefined);
  m.f1 = safe_div(2.0 * m.precision * m.recall, m.precision + m.recall, m.f1_undefined);
  return m;
}

GroundingMetrics grounding_metrics(std::span<const std::optional<Verdict>> predictions,
                                   std::span<const std::optional<TemporalInterval>> ground_truth,
                                   std::span<const double> thresholds) {
  if (predictions.size() != ground_truth.size())
    throw std::invalid_argument("grounding_metrics: prediction and ground-truth counts differ");
  GroundingMetrics g;
  g.thresholds.assign(thresholds.begin(), thresholds.end());
  g.recall_at.assign(thresholds.size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (!ground_truth[i]) continue;
    ++g.n_abnormal;
    const auto& p = predictions[i];
    double v = 0.0;
    if (p && p->prediction == Label::Abnormal && p->interval && p->interval->valid())
      v = iou(*p->interval, *ground_truth[i]);
    sum += v;
    for (std::size_t k = 0; k < thresholds.size(); ++k)
      if (v >= thresholds[k]) g.recall_at[k] += 1.0;
  }
  if (g.n_abnormal > 0) {
    g.miou = sum / g.n_abnormal;
    for (auto& r : g.recall_at) r /= g.n_abnormal;
  }
  return g;
}

std::vector<std::string> metric_tokens(std::string_view text) {
  std::string clean;
  clean.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    std::size_t end = 0;
    if (text[i] == '<' && is_tag_at(text, i, end)) {
      clean += ' ';
      i = end;
      continue;
    }
    clean += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
    ++i;
  }
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < clean.size()) {
    while (i < clean.size() && std::isspace(static_cast<unsigned char>(clean[i]))) ++i;
    const std::size_t start = i;
    while (i < clean.size() && !std::isspace(static_cast<unsigned char>(clean[i]))) ++i;
    if (i > start) out.emplace_back(clean.substr(start, i - start));
  }
  return out;
}

double bleu_n(std::span<const std::string> candidate, std::span<const std::string> reference, int n) {
  if (n < 1) throw std::invalid_argument("bleu_n: n must be at least 1");
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (int k = 1; k <= n; ++k) {
    const int denom = total(candidate.size(), k);
    const int m = clipped_overlap(ngrams(candidate, k), ngrams(reference, k));
    if (denom == 0 || m == 0) return 0.0;
    log_sum += std::log(static_cast<double>(m) / denom);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / n);
}

double bleu_n(std::string_view candidate, std::string_view reference, int n) {
  return bleu_n(metric_tokens(candidate), metric_tokens(reference), n);
}

RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, int n) {
  if (n < 1) throw std::invalid_argument("rouge_n: n must be at least 1");
  const auto cand = ngrams(candidate, n);
  const auto ref = ngrams(reference, n);
  return f_measure(clipped_overlap(cand, ref), total(candidate.size(), n), total(reference.size(), n));
}

RougeScore rouge_n(std::string_view candidate, std::string_view reference, int n) {
  return rouge_n(metric_tokens(candidate), metric_tokens(reference), n);
}

RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
  const std::size_t a = candidate.size(), b = reference.size();
  std::vector<int> prev(b + 1, 0), cur(b + 1, 0);
  for (std::size_t i = 1; i <= a; ++i) {
    for (std::size_t j = 1; j <= b; ++j)
      cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return f_measure(prev[b], static_cast<double>(a), static_cast<double>(b));
}

RougeScore rouge_l(std::string_view candidate, std::string_view reference) {
  return rouge_l(metric_tokens(candidate), metric_tokens(reference));
}

std::string meteor_stem(std::string_view token) {
  std::string s(token);
  while (!s.empty() && !std::isalnum(static_cast<unsigned char>(s.back()))) s.pop_back();
  static constexpr std::string_view kSuffixes[] = {"ing", "edly", "ed", "ly", "es", "s"};
  for (auto suf : kSuffixes) {
    if (s.size() >= suf.size() + 3 && s.compare(s.size() - suf.size(), suf.size(), suf) == 0) {
      s.resize(s.size() - suf.size());
      break;
    }
  }
  return s;
}

double meteor_lite(std::span<const std::string> candidate, std::span<const std::string> reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  // align[i] = reference position matched to candidate token i, or -1
  std::vector<int> align(candidate.size(), -1);
  std::vector<bool> used(reference.size(), false);
  auto stage = [&](auto&& key) {
    for (std::size_t i = 0; i < candidate.size(); ++i) {
      if (align[i] >= 0) continue;
      const auto k = key(candidate[i]);
      for (std::size_t j = 0; j < reference.size(); ++j) {
        if (!used[j] && key(reference[j]) == k) {
          align[i] = static_cast<int>(j);
          used[j] = true;
          break;
        }
      }
    }
  };
  stage([](const std::string& t) { return t; });
  stage([](const std::string& t) { return meteor_stem(t); });

  int matches = 0, chunks = 0, last = -2;
  for (int j : align) {
    if (j < 0) {
      last = -2;
      continue;
    }
    ++matches;
    if (j != last + 1) ++chunks;
    last = j;
  }
  if (matches == 0) return 0.0;
  const double p = static_cast<double>(matches) / candidate.size();
  const double r = static_cast<double>(matches) / reference.size();
  const double fmean = p * r / (kMeteorAlpha * p + (1.0 - kMeteorAlpha) * r);
  const double penalty = kMeteorGamma * std::pow(static_cast<double>(chunks) / matches, kMeteorBeta);
  return fmean * (1.0 - penalty);
}

double meteor_lite(std::string_view candidate, std::string_view reference) {
  return meteor_lite(metric_tokens(candidate), metric_tokens(reference));
}

}  // namespace avlab
