#include "avlab/judge.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <regex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace avlab {

namespace {

constexpr std::string_view kRubric[] = {
    // Reasonability
    "Rate the reasonability of the answer: is the causal chain from what is observed to the "
    "conclusion coherent and logically valid, and does it avoid contradictions?",
    // Detail
    "Rate the level of detail of the answer: does it describe the event, its timing, its location "
    "and its consequences with specific and relevant information?",
    // Consistency
    "Rate the consistency of the answer with the reference: does it agree with the reference "
    "about whether an anomaly occurs, which kind it is and when it happens?",
};

bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

std::string_view to_string(JudgeAspect aspect) {
  switch (aspect) {
    case JudgeAspect::Reasonability: return "reasonability";
    case JudgeAspect::Detail: return "detail";
    case JudgeAspect::Consistency: return "consistency";
  }
  return "?";
}

void JudgeConfig::validate() const {
  if (base_url.empty()) throw std::invalid_argument("judge.base_url is required");
  if (base_url.rfind("http://", 0) != 0) {
    if (base_url.rfind("https://", 0) == 0)
      throw std::invalid_argument("judge.base_url: https is not supported by this build; use an http endpoint");
    throw std::invalid_argument("judge.base_url must start with http://");
  }
  if (max_attempts < 1) throw std::invalid_argument("judge.max_attempts must be at least 1");
  if (backoff_ms < 0) throw std::invalid_argument("judge.backoff_ms must be >= 0");
  if (timeout_s < 1) throw std::invalid_argument("judge.timeout_s must be at least 1");
  if (concurrency < 1) throw std::invalid_argument("judge.concurrency must be at least 1");
}

std::string judge_api_key_from_env() {
  const char* v = std::getenv("JUDGE_API_KEY");
  return v ? std::string(v) : std::string();
}

std::string judge_prompt(JudgeAspect aspect, std::string_view answer, std::string_view reference) {
  std::string p(kRubric[static_cast<int>(aspect)]);
  p += "\nReply with a single number between 0 and 1, where 0 is the worst and 1 is the best.\n\n";
  p += "Reference:\n";
  p += reference;
  p += "\n\nAnswer:\n";
  p += answer;
  p += '\n';
  return p;
}

double parse_judge_score(std::string_view content) {
  static const std::regex number(R"([-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?)");
  const std::string s(content);
  std::smatch m;
  if (!std::regex_search(s, m, number)) throw JudgeReplyError("judge reply contains no number: '" + s + "'");
  const double v = std::strtod(m.str(0).c_str(), nullptr);
  if (!std::isfinite(v) || v < 0.0 || v > 1.0)
    throw JudgeReplyError("judge score " + m.str(0) + " outside [0, 1]");
  return v;
}

double parse_judge_response(std::string_view body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error&) {
    throw JudgeReplyError("judge response is not JSON");
  }
  const auto* content = j.is_object() && j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()
                            ? &j["choices"][0]
                            : nullptr;
  if (!content || !content->contains("message") || !(*content)["message"].contains("content") ||
      !(*content)["message"]["content"].is_string())
    throw JudgeReplyError("judge response lacks choices[0].message.content");
  return parse_judge_score((*content)["message"]["content"].get<std::string>());
}

JudgeClient::JudgeClient(JudgeConfig config) : config_(std::move(config)) { config_.validate(); }

double JudgeClient::score(JudgeAspect aspect, std::string_view answer, std::string_view reference) const {
  nlohmann::ordered_json req;
  req["model"] = config_.model;
  req["temperature"] = 0;
  req["messages"] = nlohmann::ordered_json::array(
      {{{"role", "system"}, {"content", "You are a strict evaluator of video anomaly reasoning."}},
       {{"role", "user"}, {"content", judge_prompt(aspect, answer, reference)}}});
  const std::string body = req.dump();

  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  std::string last_error;
  int delay = config_.backoff_ms;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    if (attempt > 1) {
      std::this_thread::sleep_for(std::chrono::milliseconds(delay));
      delay *= 2;
    }
    httplib::Client cli(config_.base_url);
    cli.set_connection_timeout(config_.timeout_s, 0);
    cli.set_read_timeout(config_.timeout_s, 0);
    auto res = cli.Post(config_.path, headers, body, "application/json");
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 200) return parse_judge_response(res->body);
    last_error = "HTTP status " + std::to_string(res->status);
    if (!retryable_status(res->status)) break;
  }
  throw JudgeTransportError("judge endpoint " + config_.base_url + ": " + last_error + " after " +
                            std::to_string(config_.max_attempts) + " attempt(s)");
}

JudgeScore JudgeClient::judge(std::string_view answer, std::string_view reference) const {
  JudgeScore s;
  s.reasonability = score(JudgeAspect::Reasonability, answer, reference);
  s.detail = score(JudgeAspect::Detail, answer, reference);
  s.consistency = score(JudgeAspect::Consistency, answer, reference);
  return s;
}

JudgeReport judge_all(std::span<const JudgeItem> items, const JudgeConfig& config) {
  const JudgeClient client(config);
  const std::size_t n = items.size();
  std::vector<std::optional<JudgeScore>> scores(n);
  std::vector<std::string> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        scores[i] = client.judge(items[i].answer, items[i].reference);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(config.concurrency), std::max<std::size_t>(n, 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  JudgeReport rep;
  for (std::size_t i = 0; i < n; ++i) {
    rep.video_ids.push_back(items[i].video_id);
    rep.scores.push_back(scores[i]);
    if (!scores[i]) {
      rep.errors.push_back(items[i].video_id + ": " + errors[i]);
      continue;
    }
    ++rep.n_scored;
    rep.mean.reasonability += scores[i]->reasonability;
    rep.mean.detail += scores[i]->detail;
    rep.mean.consistency += scores[i]->consistency;
  }
  if (rep.n_scored > 0) {
    rep.mean.reasonability /= rep.n_scored;
    rep.mean.detail /= rep.n_scored;
    rep.mean.consistency /= rep.n_scored;
  }
  rep.complete = rep.errors.empty();
  return rep;
}

std::string judge_report_to_json(const JudgeReport& r) {
  nlohmann::ordered_json j;
  j["complete"] = r.complete;
  j["n_items"] = r.video_ids.size();
  j["n_scored"] = r.n_scored;
  j["mean"] = {{"reasonability", r.mean.reasonability},
               {"detail", r.mean.detail},
               {"consistency", r.mean.consistency}};
  auto& items = j["items"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.video_ids.size(); ++i) {
    nlohmann::ordered_json e;
    e["video_id"] = r.video_ids[i];
    if (r.scores[i]) {
      e["reasonability"] = r.scores[i]->reasonability;
      e["detail"] = r.scores[i]->detail;
      e["consistency"] = r.scores[i]->consistency;
    } else {
      e["scored"] = false;
    }
    items.push_back(e);
  }
  j["errors"] = r.errors;
  return j.dump(2) + "\n";
}

struct MockJudgeServer::Impl {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> requests{0};
  mutable std::mutex mu;
  std::string authorization;
};

MockJudgeServer::MockJudgeServer(Handler handler) : impl_(std::make_unique<Impl>()) {
  impl_->server.Post(".*", [this, handler](const httplib::Request& req, httplib::Response& res) {
    ++impl_->requests;
    {
      std::lock_guard<std::mutex> lock(impl_->mu);
      impl_->authorization = req.get_header_value("Authorization");
    }
    std::string prompt;
    try {
      const auto j = nlohmann::json::parse(req.body);
      prompt = j.at("messages").back().at("content").get<std::string>();
    } catch (const std::exception&) {
      res.status = 400;
      return;
    }
    const auto reply = handler(prompt);
    if (!reply) {
      res.status = 500;
      return;
    }
    nlohmann::json out;
    out["choices"] = nlohmann::json::array({{{"index", 0}, {"message", {{"role", "assistant"}, {"content", *reply}}}}});
    res.set_content(out.dump(), "application/json");
  });
  impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
  if (impl_->port <= 0) throw std::runtime_error("mock judge: cannot bind a local port");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

MockJudgeServer::~MockJudgeServer() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string MockJudgeServer::base_url() const { return "http://127.0.0.1:" + std::to_string(impl_->port); }

int MockJudgeServer::requests() const { return impl_->requests.load(); }

std::string MockJudgeServer::last_authorization() const {
  std::lock_guard<std::mutex> lock(impl_->mu);
  return impl_->authorization;
}

}  // namespace avlab
