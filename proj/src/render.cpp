#include <array>
#include <string>
#include <vector>

#include "avlab/policy.hpp"

namespace avlab {

namespace {

// Lowercase noun phrase and a short event description per category.
constexpr std::array<std::string_view, kNumCategories> kEventNoun = {
    "fight", "robbery", "vehicle collision", "fire", "flood", "falling object"};
constexpr std::array<std::string_view, kNumCategories> kEventDescription = {
    "Two people exchange blows while bystanders step back.",
    "A person forcibly takes property from another person and runs away.",
    "Two vehicles crash into each other at the intersection.",
    "Flames and dense smoke spread across part of the scene.",
    "Water rises quickly and covers the ground of the scene.",
    "A heavy object drops from height onto the area below."};

std::string fill(std::string_view pattern, std::string_view noun, std::string_view span) {
  std::string out;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (pattern[i] == '$' && i + 1 < pattern.size()) {
      const char key = pattern[++i];
      if (key == 'N') out += noun;
      else if (key == 'S') out += span;
      continue;
    }
    out += pattern[i];
  }
  return out;
}

// Cycles through the sentence pool until the budget is reached, then cuts the
// paragraph to exactly `budget` words.
std::string paragraph(const std::vector<std::string_view>& pool, int budget, std::string_view noun,
                      std::string_view span) {
  std::vector<std::string> words;
  for (std::size_t k = 0; static_cast<int>(words.size()) < budget; ++k) {
    const std::string sentence = fill(pool[k % pool.size()], noun, span);
    std::size_t pos = 0;
    while (pos < sentence.size()) {
      const auto sp = sentence.find(' ', pos);
      const auto end = sp == std::string::npos ? sentence.size() : sp;
      if (end > pos) words.emplace_back(sentence.substr(pos, end - pos));
      pos = end + 1;
    }
  }
  words.resize(budget);
  if (words.back().back() != '.') words.back() += '.';
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

const std::vector<std::string_view> kNormalPerception = {
    "The video shows an ordinary scene with people and objects moving at a steady pace.",
    "Across all sampled frames the layout of the scene stays the same and nothing enters abruptly.",
    "Pedestrians walk along their usual paths and the background remains calm and well lit.",
    "No sudden motion, crowd gathering, smoke or debris can be seen at any point.",
    "The camera view is stable and the activity level is even from the first frame to the last."};

const std::vector<std::string_view> kNormalCognition = {
    "The observed behaviour matches what is expected for this kind of place.",
    "Every action in the clip has a plausible everyday explanation and no one appears to be at risk.",
    "Because the scene stays consistent over time there is no evidence of an abnormal event.",
    "The people involved act calmly and their interactions look cooperative and routine.",
    "Taken together these cues indicate a normal video without any anomaly."};

const std::vector<std::string_view> kGlobalPerception = {
    "The video shows a public scene that starts with ordinary activity and a stable background.",
    "People and objects move at a normal pace in the opening frames and the layout of the scene is clear.",
    "Over the course of the clip the overall atmosphere changes and attention is drawn to one part of the timeline.",
    "The global view suggests that something unusual related to a $N happens in the middle of otherwise routine activity."};

const std::vector<std::string_view> kLocalPerception = {
    "Looking closely at $S the frames show clear signs of a $N.",
    "Within this segment the motion pattern differs sharply from the surrounding frames.",
    "The visual cues of the $N are concentrated in this span and fade once it ends.",
    "Frames outside $S look like the normal background of the scene."};

const std::vector<std::string_view> kShallowCognition = {
    "The activity in $S is not consistent with the routine behaviour seen elsewhere in the video.",
    "A $N is a recognised type of anomalous event in public surveillance footage.",
    "The abrupt change in the scene marks the beginning of the abnormal event.",
    "These observations point to an anomaly of the $N kind."};

const std::vector<std::string_view> kDeepCognition = {
    "A $N of this kind can endanger the people nearby and damage property.",
    "The event breaks the normal order of the scene and would call for intervention by staff or emergency services.",
    "The surrounding frames provide context showing that the situation was calm before $S and that the disturbance is localized in time.",
    "Therefore the video should be classified as abnormal with the anomaly located in $S."};

}  // namespace

int think_budget(Label cls, Verbosity verbosity) {
  // short sits below the class range, medium inside it, long above it
  static constexpr int kNormal[kNumVerbosity] = {100, 200, 300};
  static constexpr int kAbnormal[kNumVerbosity] = {180, 340, 500};
  const int v = static_cast<int>(verbosity);
  return cls == Label::Abnormal ? kAbnormal[v] : kNormal[v];
}

CoTDocument render_document(const RenderRequest& req) {
  const int budget = think_budget(req.cls, req.verbosity);
  CoTDocument doc;
  if (req.cls == Label::Normal) {
    doc.think = SimplifiedThink{paragraph(kNormalPerception, budget / 2, "", ""),
                                paragraph(kNormalCognition, budget - budget / 2, "", "")};
    doc.answer.which = std::string(kNormalAnswer);
    doc.answer.what = "The video shows routine activity and no anomalous event occurs.";
    return doc;
  }
  const std::string_view noun = kEventNoun.at(req.category);
  const std::string span =
      "frames " + std::to_string(req.interval.start) + " to " + std::to_string(req.interval.end);
  const int quarter = budget / 4;
  doc.think = FullThink{paragraph(kGlobalPerception, quarter, noun, span),
                        paragraph(kLocalPerception, quarter, noun, span),
                        paragraph(kShallowCognition, quarter, noun, span),
                        paragraph(kDeepCognition, budget - 3 * quarter, noun, span)};
  auto& a = doc.answer;
  a.which = std::string(kCategoryNames.at(req.category));
  a.what = std::string(kEventDescription.at(req.category));
  a.when = req.interval;
  a.where = "The " + std::string(noun) + " takes place in the region of the frame where motion is concentrated.";
  a.why = "The " + std::string(noun) + " departs from the routine activity seen in the rest of the video.";
  a.how = "The " + std::string(noun) + " may cause injury or damage and calls for a prompt response.";
  return doc;
}

std::string render(const RenderRequest& req) {
  std::string text = serialize(render_document(req));
  if (!req.wellformed) {
    const auto at = text.rfind("</answer>");
    text.erase(at, std::string_view("</answer>\n").size());
  }
  return text;
}

std::string reference_text(const SyntheticVideo& video, int sampled_frames) {
  RenderRequest req;
  req.cls = video.label;
  req.verbosity = Verbosity::Medium;
  if (video.label == Label::Abnormal) {
    req.category = video.category.value_or(0);
    const auto gt = sampled_ground_truth(video, sampled_frames);
    if (!gt) throw std::invalid_argument("video '" + video.id + "': anomaly too short to survive sampling");
    req.interval = *gt;
  }
  return render(req);
}

}  // namespace avlab
