#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "avlab/corpus.hpp"
#include "avlab/cot.hpp"
#include "avlab/policy.hpp"
#include "avlab/rng.hpp"

namespace avlab {

// Reward values per component.
inline constexpr double kAccuracyReward = 1.0;
inline constexpr double kFormatReward = 1.0;
inline constexpr double kVerifiedAbnormalReward = 0.5;
inline constexpr double kRefutedNormalReward = -0.2;
inline constexpr double kLengthReward = 0.2;

struct RewardBreakdown {
  double acc = 0.0;
  double fmt = 0.0;
  double ano = 0.0;
  double len = 0.0;

  double total() const { return acc + fmt + ano + len; }
};

// Which class selects the length range.
enum class LengthKey { Predicted, WeakLabel };

struct TrainConfig {
  int group_size = 4;
  double beta = 0.04;
  double lr = 1e-6;
  int epochs = 1;
  // Stop after this many group updates; 0 runs every epoch to completion.
  long max_steps = 0;
  double std_floor = 1e-8;
  double trim_fraction = 0.25;
  // Per-sample KL estimates above this value are held constant (no gradient);
  // 0 disables the clamp.
  double kl_clamp = 10.0;
  LengthRange normal_length = kNormalLengthRange;
  LengthRange abnormal_length = kAbnormalLengthRange;
  // Parsed and kept for the record; the single-update objective never clips.
  double clip_eps = 0.2;
  bool use_ano = true;
  bool use_len = true;
  LengthKey length_key = LengthKey::Predicted;
  std::uint64_t seed = 0;

  void validate() const;
};

double accuracy_reward(const std::optional<Verdict>& verdict, Label weak_label);
double format_reward(std::string_view text);
double length_reward(std::string_view text, std::optional<Label> keyed_class, const TrainConfig& cfg);

enum class Verification {
  Confirmed,      // abnormal answer, trimmed video judged normal: +0.5
  Refuted,        // normal answer, trimmed video judged abnormal: -0.2
  Unchanged,      // the re-query agreed with the original answer
  Unextractable,  // original or re-queried answer could not be read
  Untrimmable,    // the trim would leave no frames
};

struct VerificationResult {
  double reward = 0.0;
  Verification outcome = Verification::Unextractable;
};

// Trims the raw video according to the completion's own answer and re-queries
// the current policy on the trimmed clip. Reads only the frames.
VerificationResult verify(const PolicyParams& params, std::span<const int> raw_frames, const Completion& completion,
                          const TrainConfig& cfg, Rng& rng);

double anomaly_verification_reward(const PolicyParams& params, std::span<const int> raw_frames,
                                   const Completion& completion, const TrainConfig& cfg, Rng& rng);

// Reward from the (p, p~) pair alone; nullopt stands for an unreadable answer.
double verification_reward_for(std::optional<Label> original, std::optional<Label> requeried);

// (r - mean) / max(std, floor) with population standard deviation.
std::vector<double> advantages(std::span<const double> rewards, double std_floor);

// Per-sample estimator exp(d) - d - 1 with d = logp_ref - logp_policy.
double kl_k3(double logp_policy, double logp_ref);
double kl_penalty(const PolicyParams& params, const PolicyParams& ref, const Observation& obs,
                  const DecisionTrace& trace);

struct CompletionGroup {
  std::string video_id;
  std::vector<Completion> completions;
  std::vector<RewardBreakdown> rewards;
  std::vector<double> advantages;
  std::vector<double> kl;
};

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

// Single-update surrogate -(1/G) sum_i (ratio_i A_i - beta k3_i) at ratio 1.
LossGrad loss_and_grad(const CompletionGroup& group, const Observation& obs, const PolicyParams& params,
                       const PolicyParams& ref, const TrainConfig& cfg);

// Surrogate value with the importance ratio measured against `old_params`;
// its gradient at params == old_params is what loss_and_grad returns.
double surrogate_loss(const CompletionGroup& group, const Observation& obs, const PolicyParams& params,
                      const PolicyParams& old_params, const PolicyParams& ref, const TrainConfig& cfg);

// Samples G completions, scores them and fills advantages and KL estimates.
CompletionGroup build_group(const PolicyParams& params, const PolicyParams& ref, const WeakVideo& video,
                            const Observation& obs, const TrainConfig& cfg, Rng& rng);

struct TrainStepLog {
  long step = 0;
  std::string video_id;
  double mean_total = 0.0;
  double std_total = 0.0;
  double mean_acc = 0.0;
  double mean_fmt = 0.0;
  double mean_ano = 0.0;
  double mean_len = 0.0;
  double mean_kl = 0.0;
  double mean_words = 0.0;
  int ano_confirmed = 0;
  int ano_refuted = 0;

  bool operator==(const TrainStepLog&) const = default;
};

struct TrainResult {
  PolicyParams params;
  std::vector<TrainStepLog> log;
};

using StepCallback = std::function<void(const TrainStepLog&, const PolicyParams&)>;

// The trainer sees weak labels only.
TrainResult train(const PolicyParams& init, std::span<const WeakVideo> corpus, const TrainConfig& cfg,
                  const StepCallback& on_step = {});

std::string step_log_to_json(const TrainStepLog& entry);
TrainStepLog step_log_from_json(std::string_view line);

}  // namespace avlab
