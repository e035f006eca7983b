#include "avlab/avagrpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace avlab {

void TrainConfig::validate() const {
  if (group_size < 2) throw std::invalid_argument("train.group_size must be at least 2");
  if (!(beta >= 0.0)) throw std::invalid_argument("train.beta must be >= 0");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("train.lr must be finite and >= 0");
  if (epochs < 1) throw std::invalid_argument("train.epochs must be at least 1");
  if (max_steps < 0) throw std::invalid_argument("train.max_steps must be >= 0");
  if (!(std_floor > 0.0)) throw std::invalid_argument("train.std_floor must be positive");
  if (!(trim_fraction > 0.0 && trim_fraction < 1.0))
    throw std::invalid_argument("train.trim_fraction must lie in (0, 1)");
  if (!(kl_clamp >= 0.0)) throw std::invalid_argument("train.kl_clamp must be >= 0");
  if (normal_length.lo > normal_length.hi) throw std::invalid_argument("train.normal_length is empty");
  if (abnormal_length.lo > abnormal_length.hi) throw std::invalid_argument("train.abnormal_length is empty");
}

double accuracy_reward(const std::optional<Verdict>& verdict, Label weak_label) {
  return verdict && verdict->prediction == weak_label ? kAccuracyReward : 0.0;
}

double format_reward(std::string_view text) { return validate_format(text).valid ? kFormatReward : 0.0; }

namespace {

double length_reward_doc(const CoTDocument& doc, Label cls, const TrainConfig& cfg) {
  const auto& range = cls == Label::Abnormal ? cfg.abnormal_length : cfg.normal_length;
  return range.contains(think_word_count(doc)) ? kLengthReward : 0.0;
}

std::optional<Verdict> verdict_of(const Completion& c) {
  if (c.doc) return extract_verdict(*c.doc);
  return extract_verdict(c.text);
}

}  // namespace

double length_reward(std::string_view text, std::optional<Label> keyed_class, const TrainConfig& cfg) {
  if (!keyed_class) return 0.0;
  const auto parsed = parse_cot(text);
  if (!parsed.doc) return 0.0;
  return length_reward_doc(*parsed.doc, *keyed_class, cfg);
}

double verification_reward_for(std::optional<Label> original, std::optional<Label> requeried) {
  if (!original || !requeried) return 0.0;
  if (*original == Label::Abnormal && *requeried == Label::Normal) return kVerifiedAbnormalReward;
  if (*original == Label::Normal && *requeried == Label::Abnormal) return kRefutedNormalReward;
  return 0.0;
}

VerificationResult verify(const PolicyParams& params, std::span<const int> raw_frames, const Completion& completion,
                          const TrainConfig& cfg, Rng& rng) {
  const auto p = verdict_of(completion);
  if (!p) return {0.0, Verification::Unextractable};
  const int duration = static_cast<int>(raw_frames.size());
  const int n = params.shape().frames;
  Trimmed trimmed;
  if (p->prediction == Label::Abnormal) {
    trimmed = discard_segment(raw_frames, sampled_to_raw(*p->interval, duration, n));
  } else {
    trimmed = discard_random_end(raw_frames, cfg.trim_fraction, rng);
  }
  if (!trimmed) return {0.0, Verification::Untrimmable};
  const Observation obs = observe(params.shape(), *trimmed);
  const Completion again = sample(params, obs, rng);
  const auto p2 = verdict_of(again);
  if (!p2) return {0.0, Verification::Unextractable};
  const double r = verification_reward_for(p->prediction, p2->prediction);
  if (r > 0.0) return {r, Verification::Confirmed};
  if (r < 0.0) return {r, Verification::Refuted};
  return {0.0, Verification::Unchanged};
}

double anomaly_verification_reward(const PolicyParams& params, std::span<const int> raw_frames,
                                   const Completion& completion, const TrainConfig& cfg, Rng& rng) {
  return verify(params, raw_frames, completion, cfg, rng).reward;
}

std::vector<double> advantages(std::span<const double> rewards, double std_floor) {
  if (rewards.size() < 2) throw std::invalid_argument("advantages: group needs at least two rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  const double denom = std::max(sd, std_floor);
  std::vector<double> a(rewards.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = (rewards[i] - mean) / denom;
  return a;
}

double kl_k3(double logp_policy, double logp_ref) {
  const double d = logp_ref - logp_policy;
  return std::max(0.0, std::expm1(d) - d);
}

double kl_penalty(const PolicyParams& params, const PolicyParams& ref, const Observation& obs,
                  const DecisionTrace& trace) {
  if (!(params.shape() == ref.shape())) throw std::invalid_argument("kl_penalty: reference shape mismatch");
  return kl_k3(logprob(params, obs, trace), logprob(ref, obs, trace));
}

namespace {

void check_group(const CompletionGroup& group, const PolicyParams& params, const PolicyParams& ref) {
  if (!(params.shape() == ref.shape())) throw std::invalid_argument("loss_and_grad: reference shape mismatch");
  const auto g = group.completions.size();
  if (g < 2 || group.advantages.size() != g)
    throw std::invalid_argument("loss_and_grad: group needs matching completions and advantages");
}

}  // namespace

LossGrad loss_and_grad(const CompletionGroup& group, const Observation& obs, const PolicyParams& params,
                       const PolicyParams& ref, const TrainConfig& cfg) {
  check_group(group, params, ref);
  const double inv_g = 1.0 / static_cast<double>(group.completions.size());
  LossGrad out{0.0, std::vector<double>(params.size(), 0.0)};
  for (std::size_t i = 0; i < group.completions.size(); ++i) {
    const auto& trace = group.completions[i].trace;
    const double lp = logprob(params, obs, trace);
    const double lp_ref = logprob(ref, obs, trace);
    const double d = lp_ref - lp;
    const double a = group.advantages[i];
    const double k3 = kl_k3(lp, lp_ref);
    const bool clamped = cfg.kl_clamp > 0.0 && k3 > cfg.kl_clamp;
    out.loss -= inv_g * (a - cfg.beta * (clamped ? cfg.kl_clamp : k3));
    // d/dtheta of (ratio * A - beta * k3) is (A - beta * (1 - e^d)) * grad logp
    const double coeff = a - (clamped ? 0.0 : cfg.beta * (-std::expm1(d)));
    accumulate_grad_logprob(params, obs, trace, -inv_g * coeff, out.grad);
  }
  return out;
}

double surrogate_loss(const CompletionGroup& group, const Observation& obs, const PolicyParams& params,
                      const PolicyParams& old_params, const PolicyParams& ref, const TrainConfig& cfg) {
  check_group(group, params, ref);
  const double inv_g = 1.0 / static_cast<double>(group.completions.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < group.completions.size(); ++i) {
    const auto& trace = group.completions[i].trace;
    const double lp = logprob(params, obs, trace);
    const double ratio = std::exp(lp - logprob(old_params, obs, trace));
    double k3 = kl_k3(lp, logprob(ref, obs, trace));
    if (cfg.kl_clamp > 0.0) k3 = std::min(k3, cfg.kl_clamp);
    loss -= inv_g * (ratio * group.advantages[i] - cfg.beta * k3);
  }
  return loss;
}

namespace {

struct ScoredGroup {
  CompletionGroup group;
  int confirmed = 0;
  int refuted = 0;
};

ScoredGroup score_group(const PolicyParams& params, const PolicyParams& ref, const WeakVideo& video,
                        const Observation& obs, const TrainConfig& cfg, Rng& rng) {
  ScoredGroup out;
  auto& g = out.group;
  g.video_id = video.id;
  const auto n = static_cast<std::size_t>(cfg.group_size);
  std::vector<double> totals(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng sample_rng = rng.substream({i, 0});
    g.completions.push_back(sample(params, obs, sample_rng));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = g.completions[i];
    const auto verdict = verdict_of(c);
    RewardBreakdown r;
    r.acc = accuracy_reward(verdict, video.label);
    r.fmt = format_reward(c.text);
    if (cfg.use_ano) {
      Rng verify_rng = rng.substream({i, 1});
      const auto v = verify(params, video.frames, c, cfg, verify_rng);
      r.ano = v.reward;
      out.confirmed += v.outcome == Verification::Confirmed;
      out.refuted += v.outcome == Verification::Refuted;
    }
    if (cfg.use_len) {
      std::optional<Label> key;
      if (cfg.length_key == LengthKey::WeakLabel) key = video.label;
      else if (verdict) key = verdict->prediction;
      if (key && c.doc) r.len = length_reward_doc(*c.doc, *key, cfg);
      else if (key) r.len = length_reward(c.text, key, cfg);
    }
    g.rewards.push_back(r);
    totals[i] = r.total();
    g.kl.push_back(kl_k3(c.trace.total_logp(), logprob(ref, obs, c.trace)));
  }
  g.advantages = advantages(totals, cfg.std_floor);
  return out;
}

}  // namespace

CompletionGroup build_group(const PolicyParams& params, const PolicyParams& ref, const WeakVideo& video,
                            const Observation& obs, const TrainConfig& cfg, Rng& rng) {
  return score_group(params, ref, video, obs, cfg, rng).group;
}

TrainResult train(const PolicyParams& init, std::span<const WeakVideo> corpus, const TrainConfig& cfg,
                  const StepCallback& on_step) {
  cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  for (const auto& v : corpus) check_tokens(init.shape(), v.frames, v.id);
  if (!init.all_finite()) throw std::runtime_error("train: non-finite parameter in the initial policy");

  TrainResult result{init, {}};
  const PolicyParams ref = snapshot(init);
  const Rng root(cfg.seed);
  const long n = static_cast<long>(corpus.size());
  const long total_steps = cfg.max_steps > 0 ? cfg.max_steps : static_cast<long>(cfg.epochs) * n;

  for (long step = 0; step < total_steps; ++step) {
    const WeakVideo& video = corpus[static_cast<std::size_t>(step % n)];
    const Observation obs = observe(result.params.shape(), video.frames);
    Rng rng = root.substream({static_cast<std::uint64_t>(step)});
    const auto scored = score_group(result.params, ref, video, obs, cfg, rng);
    const auto& g = scored.group;
    const auto lg = loss_and_grad(g, obs, result.params, ref, cfg);
    auto w = result.params.values();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= cfg.lr * lg.grad[k];
    if (!result.params.all_finite())
      throw std::runtime_error("train: non-finite parameter after step " + std::to_string(step));

    TrainStepLog e;
    e.step = step;
    e.video_id = video.id;
    const double inv = 1.0 / static_cast<double>(g.rewards.size());
    for (std::size_t i = 0; i < g.rewards.size(); ++i) {
      const auto& r = g.rewards[i];
      e.mean_total += inv * r.total();
      e.mean_acc += inv * r.acc;
      e.mean_fmt += inv * r.fmt;
      e.mean_ano += inv * r.ano;
      e.mean_len += inv * r.len;
      e.mean_kl += inv * g.kl[i];
      e.mean_words += inv * think_budget(g.completions[i].trace.cls, g.completions[i].trace.verbosity);
    }
    double var = 0.0;
    for (const auto& r : g.rewards) var += inv * (r.total() - e.mean_total) * (r.total() - e.mean_total);
    e.std_total = std::sqrt(var);
    e.ano_confirmed = scored.confirmed;
    e.ano_refuted = scored.refuted;
    result.log.push_back(e);
    if (on_step) on_step(e, result.params);
  }
  return result;
}

std::string step_log_to_json(const TrainStepLog& e) {
  nlohmann::ordered_json j;
  j["step"] = e.step;
  j["video_id"] = e.video_id;
  j["mean_total"] = e.mean_total;
  j["std_total"] = e.std_total;
  j["mean_acc"] = e.mean_acc;
  j["mean_fmt"] = e.mean_fmt;
  j["mean_ano"] = e.mean_ano;
  j["mean_len"] = e.mean_len;
  j["mean_kl"] = e.mean_kl;
  j["mean_words"] = e.mean_words;
  j["ano_confirmed"] = e.ano_confirmed;
  j["ano_refuted"] = e.ano_refuted;
  return j.dump();
}

TrainStepLog step_log_from_json(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  TrainStepLog e;
  e.step = j.at("step").get<long>();
  e.video_id = j.at("video_id").get<std::string>();
  e.mean_total = j.at("mean_total").get<double>();
  e.std_total = j.at("std_total").get<double>();
  e.mean_acc = j.at("mean_acc").get<double>();
  e.mean_fmt = j.at("mean_fmt").get<double>();
  e.mean_ano = j.at("mean_ano").get<double>();
  e.mean_len = j.at("mean_len").get<double>();
  e.mean_kl = j.at("mean_kl").get<double>();
  e.mean_words = j.at("mean_words").get<double>();
  e.ano_confirmed = j.value("ano_confirmed", 0);
  e.ano_refuted = j.value("ano_refuted", 0);
  return e;
}

}  // namespace avlab
