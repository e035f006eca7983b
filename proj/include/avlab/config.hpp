#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "avlab/avagrpo.hpp"
#include "avlab/corpus.hpp"
#include "avlab/eval.hpp"
#include "avlab/policy.hpp"

namespace avlab {

inline constexpr std::string_view kToolName = "avlab";
inline constexpr std::string_view kToolVersion = "0.1.0";

std::string tool_identifier();

struct JudgeSettings {
  std::string base_url;
  std::string path = "/v1/chat/completions";
  std::string model = "judge";
  int max_attempts = 3;
  int backoff_ms = 200;
  int timeout_s = 30;
  int concurrency = 4;
};

// Everything a run needs besides file paths. The seed always comes from the
// command line.
struct RunConfig {
  CorpusSpec corpus;
  ObservationMode mode = ObservationMode::Full;
  int prefix = 4;
  int frames = 16;
  SftConfig sft;
  TrainConfig train;
  long ckpt_every = 0;
  std::vector<double> thresholds{kDefaultIouThresholds.begin(), kDefaultIouThresholds.end()};
  JudgeSettings judge;
  std::uint64_t seed = 0;

  // Vocabulary and bins come from the corpus section.
  PolicyShape policy_shape() const;
  EvalOptions eval_options() const;
  void validate() const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Applies the INI text on top of the defaults. Unknown sections or keys and
// malformed values raise ConfigError naming "section.key".
RunConfig config_from_ini(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
// Fully resolved snapshot; config_from_ini(config_to_ini(c)) reproduces c.
std::string config_to_ini(const RunConfig& config);

}  // namespace avlab
