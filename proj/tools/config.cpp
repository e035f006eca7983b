#include "avlab/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace avlab {

namespace {

namespace pt = boost::property_tree;

struct Field {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

[[noreturn]] void bad(const std::string& name, const std::string& value, const std::string& why) {
  throw ConfigError("config " + name + " = '" + value + "': " + why);
}

std::string trim(std::string_view s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string_view::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return std::string(s.substr(a, b - a + 1));
}

template <class T>
T parse_number(const std::string& name, const std::string& raw) {
  const std::string v = trim(raw);
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) bad(name, raw, "not a valid number");
  return out;
}

bool parse_bool(const std::string& name, const std::string& raw) {
  const std::string v = trim(raw);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad(name, raw, "expected true or false");
}

std::vector<std::string> split_list(const std::string& raw) {
  std::vector<std::string> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

// Shortest text that reads back to the same double.
std::string fmt_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt_list(const std::vector<double>& xs) {
  std::string out;
  for (double x : xs) {
    if (!out.empty()) out += ", ";
    out += fmt_double(x);
  }
  return out;
}

// Registry of every configurable value; reading and the snapshot share it so
// the two cannot drift apart.
const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto add_int = [&](std::string sec, std::string key, auto member) {
      const std::string name = sec + "." + key;
      f.push_back({sec, key,
                   [=](RunConfig& c, const std::string& v) {
                     member(c) = parse_number<std::remove_reference_t<decltype(member(c))>>(name, v);
                   },
                   [=](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }});
    };
    auto add_double = [&](std::string sec, std::string key, auto member) {
      const std::string name = sec + "." + key;
      f.push_back({sec, key, [=](RunConfig& c, const std::string& v) { member(c) = parse_number<double>(name, v); },
                   [=](const RunConfig& c) { return fmt_double(member(const_cast<RunConfig&>(c))); }});
    };
    auto add_bool = [&](std::string sec, std::string key, auto member) {
      const std::string name = sec + "." + key;
      f.push_back({sec, key, [=](RunConfig& c, const std::string& v) { member(c) = parse_bool(name, v); },
                   [=](const RunConfig& c) {
                     return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false");
                   }});
    };
    auto add_string = [&](std::string sec, std::string key, auto member) {
      f.push_back({sec, key, [=](RunConfig& c, const std::string& v) { member(c) = trim(v); },
                   [=](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); }});
    };
    auto add_range = [&](std::string sec, std::string key, auto member) {
      const std::string name = sec + "." + key;
      f.push_back({sec, key,
                   [=](RunConfig& c, const std::string& v) {
                     const auto parts = split_list(v);
                     if (parts.size() != 2) bad(name, v, "expected 'lo, hi'");
                     member(c) = LengthRange{parse_number<int>(name, parts[0]), parse_number<int>(name, parts[1])};
                   },
                   [=](const RunConfig& c) {
                     const auto& r = member(const_cast<RunConfig&>(c));
                     return std::to_string(r.lo) + ", " + std::to_string(r.hi);
                   }});
    };

    add_int("corpus", "n_videos", [](RunConfig& c) -> int& { return c.corpus.n_videos; });
    add_int("corpus", "min_duration", [](RunConfig& c) -> int& { return c.corpus.min_duration; });
    add_int("corpus", "max_duration", [](RunConfig& c) -> int& { return c.corpus.max_duration; });
    add_double("corpus", "abnormal_fraction", [](RunConfig& c) -> double& { return c.corpus.abnormal_fraction; });
    add_int("corpus", "vocab", [](RunConfig& c) -> int& { return c.corpus.vocab; });
    add_int("corpus", "bins", [](RunConfig& c) -> int& { return c.corpus.bins; });
    add_double("corpus", "placement_begin", [](RunConfig& c) -> double& { return c.corpus.placement[0]; });
    add_double("corpus", "placement_middle", [](RunConfig& c) -> double& { return c.corpus.placement[1]; });
    add_double("corpus", "placement_end", [](RunConfig& c) -> double& { return c.corpus.placement[2]; });
    add_double("corpus", "noise", [](RunConfig& c) -> double& { return c.corpus.noise; });
    add_double("corpus", "min_anomaly_fraction",
               [](RunConfig& c) -> double& { return c.corpus.min_anomaly_fraction; });
    add_double("corpus", "max_anomaly_fraction",
               [](RunConfig& c) -> double& { return c.corpus.max_anomaly_fraction; });

    f.push_back({"policy", "mode",
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.mode = parse_observation_mode(trim(v));
                   } catch (const std::exception&) {
                     bad("policy.mode", v, "expected full or prefix");
                   }
                 },
                 [](const RunConfig& c) { return std::string(to_string(c.mode)); }});
    add_int("policy", "prefix", [](RunConfig& c) -> int& { return c.prefix; });
    add_int("policy", "frames", [](RunConfig& c) -> int& { return c.frames; });

    add_int("sft", "steps", [](RunConfig& c) -> int& { return c.sft.steps; });
    add_double("sft", "lr", [](RunConfig& c) -> double& { return c.sft.lr; });

    add_int("train", "group_size", [](RunConfig& c) -> int& { return c.train.group_size; });
    add_double("train", "beta", [](RunConfig& c) -> double& { return c.train.beta; });
    add_double("train", "lr", [](RunConfig& c) -> double& { return c.train.lr; });
    add_int("train", "epochs", [](RunConfig& c) -> int& { return c.train.epochs; });
    add_int("train", "max_steps", [](RunConfig& c) -> long& { return c.train.max_steps; });
    add_double("train", "std_floor", [](RunConfig& c) -> double& { return c.train.std_floor; });
    add_double("train", "trim_fraction", [](RunConfig& c) -> double& { return c.train.trim_fraction; });
    add_double("train", "kl_clamp", [](RunConfig& c) -> double& { return c.train.kl_clamp; });
    add_range("train", "normal_length", [](RunConfig& c) -> LengthRange& { return c.train.normal_length; });
    add_range("train", "abnormal_length", [](RunConfig& c) -> LengthRange& { return c.train.abnormal_length; });
    add_double("train", "clip_eps", [](RunConfig& c) -> double& { return c.train.clip_eps; });
    add_bool("train", "use_ano", [](RunConfig& c) -> bool& { return c.train.use_ano; });
    add_bool("train", "use_len", [](RunConfig& c) -> bool& { return c.train.use_len; });
    f.push_back({"train", "length_key",
                 [](RunConfig& c, const std::string& v) {
                   const auto t = trim(v);
                   if (t == "predicted") c.train.length_key = LengthKey::Predicted;
                   else if (t == "weak_label") c.train.length_key = LengthKey::WeakLabel;
                   else bad("train.length_key", v, "expected predicted or weak_label");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.train.length_key == LengthKey::Predicted ? "predicted" : "weak_label");
                 }});
    add_int("train", "ckpt_every", [](RunConfig& c) -> long& { return c.ckpt_every; });

    f.push_back({"eval", "thresholds",
                 [](RunConfig& c, const std::string& v) {
                   c.thresholds.clear();
                   for (const auto& p : split_list(v)) c.thresholds.push_back(parse_number<double>("eval.thresholds", p));
                 },
                 [](const RunConfig& c) { return fmt_list(c.thresholds); }});

    add_int("run", "seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; });

    add_string("judge", "base_url", [](RunConfig& c) -> std::string& { return c.judge.base_url; });
    add_string("judge", "path", [](RunConfig& c) -> std::string& { return c.judge.path; });
    add_string("judge", "model", [](RunConfig& c) -> std::string& { return c.judge.model; });
    add_int("judge", "max_attempts", [](RunConfig& c) -> int& { return c.judge.max_attempts; });
    add_int("judge", "backoff_ms", [](RunConfig& c) -> int& { return c.judge.backoff_ms; });
    add_int("judge", "timeout_s", [](RunConfig& c) -> int& { return c.judge.timeout_s; });
    add_int("judge", "concurrency", [](RunConfig& c) -> int& { return c.judge.concurrency; });
    return f;
  }();
  return table;
}

}  // namespace

std::string tool_identifier() { return std::string(kToolName) + " " + std::string(kToolVersion); }

PolicyShape RunConfig::policy_shape() const {
  PolicyShape s;
  s.vocab = corpus.vocab;
  s.bins = corpus.bins;
  s.frames = frames;
  s.mode = mode;
  s.prefix = prefix;
  return s;
}

EvalOptions RunConfig::eval_options() const {
  EvalOptions o;
  o.sampled_frames = frames;
  o.thresholds = thresholds;
  return o;
}

void RunConfig::validate() const {
  try {
    corpus.validate();
    policy_shape().validate();
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config ") + e.what());
  }
  if (sft.steps < 0) throw ConfigError("config sft.steps must be >= 0");
  if (!(sft.lr >= 0.0)) throw ConfigError("config sft.lr must be >= 0");
  if (ckpt_every < 0) throw ConfigError("config train.ckpt_every must be >= 0");
  if (thresholds.empty()) throw ConfigError("config eval.thresholds must not be empty");
  for (double t : thresholds)
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("config eval.thresholds must lie in [0, 1]");
  if (judge.max_attempts < 1) throw ConfigError("config judge.max_attempts must be at least 1");
  if (judge.concurrency < 1) throw ConfigError("config judge.concurrency must be at least 1");
}

RunConfig config_from_ini(std::string_view text) {
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key '" + section + "' must sit inside a section");
    for (const auto& [key, value] : body) {
      const auto& table = fields();
      const auto it = std::find_if(table.begin(), table.end(),
                                   [&](const Field& f) { return f.section == section && f.key == key; });
      if (it == table.end()) throw ConfigError("config " + section + "." + key + ": unknown key");
      it->set(c, value.data());
    }
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return config_from_ini(text);
}

std::string config_to_ini(const RunConfig& c) {
  std::string out;
  std::string current;
  for (const auto& f : fields()) {
    if (f.section != current) {
      if (!current.empty()) out += '\n';
      out += "[" + f.section + "]\n";
      current = f.section;
    }
    out += f.key + " = " + f.get(c) + "\n";
  }
  return out;
}

}  // namespace avlab
