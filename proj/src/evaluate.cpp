#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include <json.hpp>

#include "avlab/eval.hpp"
#include "avlab/policy.hpp"

namespace avlab {

namespace {

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) {
    if (!out.empty()) out += ", ";
    out += id;
  }
  return out;
}

}  // namespace

EvaluationError::EvaluationError(std::string message, std::vector<std::string> missing,
                                 std::vector<std::string> extra, std::vector<std::string> duplicated)
    : std::runtime_error(std::move(message)),
      missing_(std::move(missing)),
      extra_(std::move(extra)),
      duplicated_(std::move(duplicated)) {}

std::string outputs_to_jsonl(std::span<const OutputRecord> records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["video_id"] = r.video_id;
    j["text"] = r.text;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<OutputRecord> outputs_from_jsonl(std::string_view text) {
  std::vector<OutputRecord> out;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("outputs line " + std::to_string(line_no) + ": parse error at byte offset " +
                               std::to_string(e.byte));
    }
    if (!j.is_object()) throw std::runtime_error("outputs line " + std::to_string(line_no) + ": not an object");
    for (const auto& [key, value] : j.items())
      if (key != "video_id" && key != "text")
        throw std::runtime_error("outputs line " + std::to_string(line_no) + ": unknown field '" + key + "'");
    if (!j.contains("video_id") || !j["video_id"].is_string() || !j.contains("text") || !j["text"].is_string())
      throw std::runtime_error("outputs line " + std::to_string(line_no) + ": needs string fields video_id and text");
    out.push_back({j["video_id"].get<std::string>(), j["text"].get<std::string>()});
  }
  return out;
}

void save_outputs(const std::filesystem::path& path, std::span<const OutputRecord> records) {
  write_file(path, outputs_to_jsonl(records));
}

std::vector<OutputRecord> load_outputs(const std::filesystem::path& path) {
  return outputs_from_jsonl(read_file(path));
}

MetricsReport evaluate(std::span<const OutputRecord> outputs, std::span<const SyntheticVideo> corpus,
                       const EvalOptions& options) {
  if (corpus.empty()) throw std::invalid_argument("evaluate: empty corpus");
  std::map<std::string, const SyntheticVideo*> by_id;
  for (const auto& v : corpus) by_id.emplace(v.id, &v);

  std::map<std::string, const OutputRecord*> records;
  std::vector<std::string> extra, duplicated, missing;
  for (const auto& r : outputs) {
    if (!by_id.count(r.video_id)) extra.push_back(r.video_id);
    else if (!records.emplace(r.video_id, &r).second) duplicated.push_back(r.video_id);
  }
  for (const auto& [id, v] : by_id)
    if (!records.count(id)) missing.push_back(id);
  if (!missing.empty() || !extra.empty() || !duplicated.empty()) {
    std::sort(extra.begin(), extra.end());
    std::sort(duplicated.begin(), duplicated.end());
    duplicated.erase(std::unique(duplicated.begin(), duplicated.end()), duplicated.end());
    std::string msg = "evaluate: outputs do not match the corpus";
    if (!missing.empty()) msg += "; missing ids: " + join_ids(missing);
    if (!extra.empty()) msg += "; unknown ids: " + join_ids(extra);
    if (!duplicated.empty()) msg += "; duplicated ids: " + join_ids(duplicated);
    throw EvaluationError(msg, missing, extra, duplicated);
  }

  // Iterate in id order so the result does not depend on record order.
  std::vector<std::optional<Label>> preds;
  std::vector<Label> labels;
  std::vector<std::optional<Verdict>> verdicts;
  std::vector<std::optional<TemporalInterval>> truth;
  MetricsReport rep;
  double bleu = 0.0, r1 = 0.0, r2 = 0.0, rl = 0.0, met = 0.0;
  for (const auto& [id, video] : by_id) {
    const auto& text = records.at(id)->text;
    const auto verdict = extract_verdict(text);
    verdicts.push_back(verdict);
    preds.push_back(verdict ? std::optional<Label>(verdict->prediction) : std::nullopt);
    labels.push_back(video->label);
    rep.n_unreadable += !verdict;
    if (video->label == Label::Abnormal) {
      const auto gt = sampled_ground_truth(*video, options.sampled_frames);
      if (!gt) throw std::invalid_argument("video '" + id + "': anomaly too short to survive sampling");
      truth.push_back(gt);
    } else {
      truth.push_back(std::nullopt);
    }

    const auto cand = metric_tokens(text);
    const auto ref = metric_tokens(reference_text(*video, options.sampled_frames));
    bleu += bleu_n(cand, ref, 2);
    const auto s1 = rouge_n(cand, ref, 1);
    const auto s2 = rouge_n(cand, ref, 2);
    const auto sl = rouge_l(cand, ref);
    r1 += s1.f1;
    r2 += s2.f1;
    rl += sl.f1;
    rep.text_degenerate += s1.degenerate || s2.degenerate || sl.degenerate;
    met += meteor_lite(cand, ref);
  }
  const double n = static_cast<double>(by_id.size());
  rep.n_videos = static_cast<int>(by_id.size());
  rep.classification = classification_metrics(preds, labels);
  rep.grounding = grounding_metrics(verdicts, truth, options.thresholds);
  rep.n_abnormal = rep.grounding.n_abnormal;
  rep.bleu2 = bleu / n;
  rep.rouge1 = r1 / n;
  rep.rouge2 = r2 / n;
  rep.rouge_l = rl / n;
  rep.meteor_lite = met / n;
  return rep;
}

std::string report_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["n_videos"] = r.n_videos;
  j["n_abnormal"] = r.n_abnormal;
  j["n_unreadable"] = r.n_unreadable;
  j["accuracy"] = r.classification.accuracy;
  j["precision"] = r.classification.precision;
  j["recall"] = r.classification.recall;
  j["f1"] = r.classification.f1;
  j["precision_undefined"] = r.classification.precision_undefined;
  j["recall_undefined"] = r.classification.recall_undefined;
  j["f1_undefined"] = r.classification.f1_undefined;
  j["miou"] = r.grounding.miou;
  auto& at = j["recall_at"] = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < r.grounding.thresholds.size(); ++k)
    at.push_back({{"threshold", r.grounding.thresholds[k]}, {"recall", r.grounding.recall_at[k]}});
  j["bleu2"] = r.bleu2;
  j["rouge1"] = r.rouge1;
  j["rouge2"] = r.rouge2;
  j["rougeL"] = r.rouge_l;
  j["meteor_lite"] = r.meteor_lite;
  j["text_degenerate"] = r.text_degenerate;
  return j.dump(2) + "\n";
}

MetricsReport report_from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  MetricsReport r;
  r.n_videos = j.at("n_videos").get<int>();
  r.n_abnormal = j.at("n_abnormal").get<int>();
  r.n_unreadable = j.at("n_unreadable").get<int>();
  r.classification.accuracy = j.at("accuracy").get<double>();
  r.classification.precision = j.at("precision").get<double>();
  r.classification.recall = j.at("recall").get<double>();
  r.classification.f1 = j.at("f1").get<double>();
  r.classification.precision_undefined = j.at("precision_undefined").get<bool>();
  r.classification.recall_undefined = j.at("recall_undefined").get<bool>();
  r.classification.f1_undefined = j.at("f1_undefined").get<bool>();
  r.grounding.miou = j.at("miou").get<double>();
  r.grounding.n_abnormal = r.n_abnormal;
  for (const auto& e : j.at("recall_at")) {
    r.grounding.thresholds.push_back(e.at("threshold").get<double>());
    r.grounding.recall_at.push_back(e.at("recall").get<double>());
  }
  r.bleu2 = j.at("bleu2").get<double>();
  r.rouge1 = j.at("rouge1").get<double>();
  r.rouge2 = j.at("rouge2").get<double>();
  r.rouge_l = j.at("rougeL").get<double>();
  r.meteor_lite = j.at("meteor_lite").get<double>();
  r.text_degenerate = j.at("text_degenerate").get<int>();
  return r;
}

std::string report_table(const MetricsReport& r) {
  std::ostringstream os;
  char buf[96];
  auto row = [&](const std::string& name, double v, bool flagged = false) {
    std::snprintf(buf, sizeof buf, "%-14s %8.4f%s\n", name.c_str(), v, flagged ? "  (undefined)" : "");
    os << buf;
  };
  std::snprintf(buf, sizeof buf, "videos %d  abnormal %d  unreadable %d\n", r.n_videos, r.n_abnormal,
                r.n_unreadable);
  os << buf;
  row("accuracy", r.classification.accuracy);
  row("precision", r.classification.precision, r.classification.precision_undefined);
  row("recall", r.classification.recall, r.classification.recall_undefined);
  row("f1", r.classification.f1, r.classification.f1_undefined);
  row("mIoU", r.grounding.miou);
  for (std::size_t k = 0; k < r.grounding.thresholds.size(); ++k) {
    std::snprintf(buf, sizeof buf, "R@%.2g", r.grounding.thresholds[k]);
    row(buf, r.grounding.recall_at[k]);
  }
  row("BLEU-2", r.bleu2);
  row("ROUGE-1", r.rouge1);
  row("ROUGE-2", r.rouge2);
  row("ROUGE-L", r.rouge_l);
  row("METEOR-lite", r.meteor_lite);
  return os.str();
}

}  // namespace avlab
