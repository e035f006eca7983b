#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace avlab {

enum class JudgeAspect { Reasonability, Detail, Consistency };
inline constexpr JudgeAspect kJudgeAspects[] = {JudgeAspect::Reasonability, JudgeAspect::Detail,
                                                JudgeAspect::Consistency};

std::string_view to_string(JudgeAspect aspect);

struct JudgeScore {
  double reasonability = 0.0;
  double detail = 0.0;
  double consistency = 0.0;
  bool operator==(const JudgeScore&) const = default;
};

// Network failure after all retries, or a non-success HTTP status.
class JudgeTransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The endpoint answered but the reply is not a usable score.
class JudgeReplyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct JudgeConfig {
  std::string base_url;  // e.g. http://127.0.0.1:8080
  std::string path = "/v1/chat/completions";
  std::string model = "judge";
  std::string api_key;
  int max_attempts = 3;
  int backoff_ms = 200;  // doubled after every failed attempt
  int timeout_s = 30;
  int concurrency = 4;

  void validate() const;
};

// Reads JUDGE_API_KEY; empty when unset.
std::string judge_api_key_from_env();

std::string judge_prompt(JudgeAspect aspect, std::string_view answer, std::string_view reference);

// Extracts the score from the message content of a chat-completion reply.
// Throws JudgeReplyError when no number is present or it lies outside [0, 1].
double parse_judge_score(std::string_view content);
// Same, starting from the raw response body.
double parse_judge_response(std::string_view body);

class JudgeClient {
 public:
  explicit JudgeClient(JudgeConfig config);
  double score(JudgeAspect aspect, std::string_view answer, std::string_view reference) const;
  JudgeScore judge(std::string_view answer, std::string_view reference) const;
  const JudgeConfig& config() const { return config_; }

 private:
  JudgeConfig config_;
};

struct JudgeItem {
  std::string video_id;
  std::string answer;
  std::string reference;
};

struct JudgeReport {
  std::vector<std::string> video_ids;
  std::vector<std::optional<JudgeScore>> scores;  // same order as the input items
  std::vector<std::string> errors;                // "video_id: message", input order
  JudgeScore mean;                                // over scored items only
  int n_scored = 0;
  bool complete = false;
};

// Scores every item with at most config.concurrency requests in flight.
// Failures are recorded per item; the report is then marked incomplete.
JudgeReport judge_all(std::span<const JudgeItem> items, const JudgeConfig& config);

std::string judge_report_to_json(const JudgeReport& report);

// Local chat-completion endpoint for tests. The handler maps the prompt to the
// reply content; returning nullopt makes the server answer HTTP 500.
class MockJudgeServer {
 public:
  using Handler = std::function<std::optional<std::string>(const std::string& prompt)>;

  explicit MockJudgeServer(Handler handler);
  ~MockJudgeServer();
  MockJudgeServer(const MockJudgeServer&) = delete;
  MockJudgeServer& operator=(const MockJudgeServer&) = delete;

  std::string base_url() const;
  int requests() const;
  // Authorization header of the most recent request.
  std::string last_authorization() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace avlab
