#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "avlab/avagrpo.hpp"
#include "avlab/cli.hpp"
#include "avlab/config.hpp"
#include "avlab/eval.hpp"
#include "avlab/judge.hpp"

namespace avlab {

namespace {

namespace fs = std::filesystem;

class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Writes every message to the console stream and to the run's log file.
class RunLog {
 public:
  RunLog(std::ostream& console, const fs::path& file) : console_(console) {
    if (!file.empty()) file_.open(file, std::ios::trunc);
  }
  template <class T>
  RunLog& operator<<(const T& v) {
    console_ << v;
    if (file_) file_ << v;
    return *this;
  }

 private:
  std::ostream& console_;
  std::ofstream file_;
};

struct Globals {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig c = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
  c.seed = g.seed;
  c.corpus.seed = g.seed;
  c.train.seed = g.seed;
  return c;
}

// Creates the run directory with its config snapshot and tool identifier.
fs::path prepare_run_dir(const Globals& g, const RunConfig& c) {
  if (g.out_dir.empty()) throw CommandError("--out is required for this command");
  const fs::path dir(g.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw CommandError("cannot create run directory '" + g.out_dir + "'");
  write_file(dir / "config.ini", config_to_ini(c));
  write_file(dir / "VERSION", tool_identifier() + "\n");
  return dir;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// FNV-1a, used only to identify files in logs.
std::string content_hash(std::string_view data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return hex64(h);
}

double greedy_accuracy(const PolicyParams& params, std::span<const SyntheticVideo> videos) {
  int ok = 0;
  for (const auto& v : videos) {
    check_tokens(params.shape(), v.frames, v.id);
    ok += greedy(params, observe(params.shape(), v.frames)).trace.cls == v.label;
  }
  return videos.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(videos.size());
}

std::vector<SyntheticVideo> load_annotated(const std::string& path, std::string_view purpose) {
  try {
    return load_corpus(path);
  } catch (const MissingAnnotationError& e) {
    throw CommandError(std::string(purpose) + " needs a fully annotated corpus; '" + path +
                       "' carries weak labels only (" + e.what() + ")");
  }
}

void check_shape(const PolicyShape& shape, std::span<const WeakVideo> videos) {
  for (const auto& v : videos) check_tokens(shape, v.frames, v.id);
}

// ---- gen-corpus ------------------------------------------------------------

int cmd_gen_corpus(const Globals& g, bool weak, const std::string& file, std::ostream& out) {
  const RunConfig c = resolve_config(g);
  c.validate();
  const auto dir = prepare_run_dir(g, c);
  RunLog log(out, dir / "gen-corpus.log");
  const auto corpus = generate_corpus(c.corpus);
  const auto path = dir / file;
  if (weak) save_weak_corpus(path, to_weak(corpus));
  else save_corpus(path, corpus);

  int abnormal = 0;
  std::array<int, 3> placement{};
  std::map<int, int> hist;
  for (const auto& v : corpus) {
    hist[(v.duration() / 16) * 16]++;
    if (v.label != Label::Abnormal) continue;
    ++abnormal;
    if (v.anomaly->start == 0) placement[0]++;
    else if (v.anomaly->end == v.duration()) placement[2]++;
    else placement[1]++;
  }
  const int n = static_cast<int>(corpus.size());
  char buf[160];
  std::snprintf(buf, sizeof buf, "wrote %d videos to %s%s\n", n, path.string().c_str(), weak ? " (weak labels)" : "");
  log << buf;
  std::snprintf(buf, sizeof buf, "labels: normal %d, abnormal %d (fraction %.4f, requested %.4f)\n", n - abnormal,
                abnormal, static_cast<double>(abnormal) / n, c.corpus.abnormal_fraction);
  log << buf;
  std::snprintf(buf, sizeof buf, "anomaly placement: begin %d, middle %d, end %d\n", placement[0], placement[1],
                placement[2]);
  log << buf;
  log << "duration histogram:\n";
  for (const auto& [lo, count] : hist) {
    std::snprintf(buf, sizeof buf, "  [%3d, %3d) %5d\n", lo, lo + 16, count);
    log << buf;
  }
  return 0;
}

// ---- sft -------------------------------------------------------------------

int cmd_sft(const Globals& g, const std::string& corpus_path, const std::string& heldout_path,
            const std::string& init_path, std::ostream& out) {
  const RunConfig c = resolve_config(g);
  c.validate();
  const auto videos = load_annotated(corpus_path, "sft");
  std::vector<SyntheticVideo> heldout;
  if (!heldout_path.empty()) heldout = load_annotated(heldout_path, "held-out evaluation");
  const auto dir = prepare_run_dir(g, c);
  RunLog log(out, dir / "sft.log");

  const PolicyParams init = init_path.empty() ? PolicyParams(c.policy_shape()) : load_checkpoint(init_path);
  for (const auto& v : videos) check_tokens(init.shape(), v.frames, v.id);
  const auto result = sft_fit(init, videos, c.sft);
  save_checkpoint(dir / "policy.ckpt", result.params);

  std::string fit_log;
  for (std::size_t k = 0; k < result.nll.size(); ++k) {
    nlohmann::ordered_json j;
    j["step"] = k;
    j["nll"] = result.nll[k];
    fit_log += j.dump() + "\n";
  }
  write_file(dir / "sft_log.jsonl", fit_log);

  char buf[160];
  std::snprintf(buf, sizeof buf, "sft: %d steps, nll %.6f -> %.6f\n", c.sft.steps, result.nll.front(),
                result.nll.back());
  log << buf;
  std::snprintf(buf, sizeof buf, "train accuracy %.4f\n", greedy_accuracy(result.params, videos));
  log << buf;
  if (!heldout.empty()) {
    std::snprintf(buf, sizeof buf, "held-out accuracy %.4f\n", greedy_accuracy(result.params, heldout));
    log << buf;
  }
  log << "checkpoint " << (dir / "policy.ckpt").string() << "\n";
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string corpus;
  std::string init;
  std::vector<std::string> ablations;
  long ckpt_every = -1;
  long steps = -1;
};

int cmd_train(const Globals& g, const TrainArgs& a, std::ostream& out) {
  RunConfig c = resolve_config(g);
  for (const auto& ab : a.ablations) {
    if (ab == "no-ano") c.train.use_ano = false;
    else if (ab == "no-len") c.train.use_len = false;
    else throw CommandError("--reward-ablation: unknown value '" + ab + "' (expected no-ano or no-len)");
  }
  if (a.ckpt_every >= 0) c.ckpt_every = a.ckpt_every;
  if (a.steps >= 0) c.train.max_steps = a.steps;
  c.validate();
  const auto corpus = load_weak_corpus(a.corpus);
  const PolicyParams init = a.init.empty() ? PolicyParams(c.policy_shape()) : load_checkpoint(a.init);
  check_shape(init.shape(), corpus);
  const auto dir = prepare_run_dir(g, c);
  RunLog log(out, dir / "train.log");

  std::ofstream train_log(dir / "train_log.jsonl", std::ios::trunc);
  nlohmann::ordered_json header;
  header["type"] = "header";
  header["tool"] = tool_identifier();
  header["seed"] = g.seed;
  header["corpus"] = a.corpus;
  header["corpus_hash"] = content_hash(read_file(a.corpus));
  header["init"] = a.init.empty() ? "scratch" : a.init;
  header["init_hash"] = content_hash(checkpoint_to_text(init));
  header["use_ano"] = c.train.use_ano;
  header["use_len"] = c.train.use_len;
  train_log << header.dump() << "\n";

  char buf[200];
  long every = c.ckpt_every;
  const auto result = train(init, corpus, c.train, [&](const TrainStepLog& e, const PolicyParams& p) {
    train_log << step_log_to_json(e) << "\n";
    if (every > 0 && (e.step + 1) % every == 0)
      save_checkpoint(dir / ("ckpt_step" + std::to_string(e.step + 1) + ".ckpt"), p);
  });
  save_checkpoint(dir / "policy.ckpt", result.params);

  const auto& lg = result.log;
  const std::size_t w = std::max<std::size_t>(1, lg.size() / 10);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < w; ++i) {
    first += lg[i].mean_total / w;
    last += lg[lg.size() - 1 - i].mean_total / w;
  }
  std::snprintf(buf, sizeof buf, "train: %zu steps, mean reward first 10%% %.4f, last 10%% %.4f\n", lg.size(), first,
                last);
  log << buf;
  log << "checkpoint " << (dir / "policy.ckpt").string() << "\n";
  return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string corpus;
  std::string outputs;
  bool stochastic = false;
  bool oracle = false;
};

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
  const RunConfig c = resolve_config(g);
  c.validate();
  const int sources = !a.ckpt.empty() + !a.outputs.empty() + a.oracle;
  if (sources != 1) throw CommandError("eval needs exactly one of --ckpt, --outputs or --reference-oracle");
  const auto corpus = load_annotated(a.corpus, "eval");
  auto options = c.eval_options();

  std::vector<OutputRecord> outputs;
  if (!a.outputs.empty()) {
    outputs = load_outputs(a.outputs);
  } else if (a.oracle) {
    for (const auto& v : corpus) outputs.push_back({v.id, reference_text(v, options.sampled_frames)});
  } else {
    const auto params = load_checkpoint(a.ckpt);
    options.sampled_frames = params.shape().frames;
    const Rng root(g.seed);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto& v = corpus[i];
      check_tokens(params.shape(), v.frames, v.id);
      const auto obs = observe(params.shape(), v.frames);
      if (a.stochastic) {
        Rng rng = root.substream({static_cast<std::uint64_t>(i)});
        outputs.push_back({v.id, sample(params, obs, rng).text});
      } else {
        outputs.push_back({v.id, greedy(params, obs).text});
      }
    }
  }
  const auto report = evaluate(outputs, corpus, options);
  const auto dir = prepare_run_dir(g, c);
  RunLog log(out, dir / "eval.log");
  if (a.outputs.empty()) save_outputs(dir / "outputs.jsonl", outputs);
  write_file(dir / "report.json", report_to_json(report));
  const auto table = report_table(report);
  write_file(dir / "report.txt", table);
  log << table;
  return 0;
}

// ---- parse -----------------------------------------------------------------

struct ParseRecord {
  std::string label;
  std::string text;
};

std::vector<ParseRecord> split_records(const std::string& data, const std::string& format, const std::string& path) {
  std::string fmt = format;
  if (fmt == "auto") fmt = fs::path(path).extension() == ".jsonl" ? "jsonl" : "text";
  std::vector<ParseRecord> out;
  if (fmt == "jsonl") {
    const auto recs = outputs_from_jsonl(data);
    for (std::size_t i = 0; i < recs.size(); ++i)
      out.push_back({"record " + std::to_string(i + 1) + " (" + recs[i].video_id + ")", recs[i].text});
    return out;
  }
  if (fmt != "text") throw CommandError("--format must be auto, jsonl or text");
  // Plain text: a blank line followed by a line opening <think> starts a new record.
  std::istringstream in(data);
  std::string line, cur;
  bool prev_blank = true;
  auto flush = [&] {
    while (!cur.empty() && (cur.back() == '\n' || cur.back() == '\r' || cur.back() == ' ')) cur.pop_back();
    if (!cur.empty()) out.push_back({"record " + std::to_string(out.size() + 1), cur + "\n"});
    cur.clear();
  };
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    const bool blank = first == std::string::npos;
    if (!blank && prev_blank && line.compare(first, 7, "<think>") == 0) flush();
    if (!blank || !cur.empty()) cur += line + "\n";
    prev_blank = blank;
  }
  flush();
  return out;
}

int cmd_parse(const Globals& g, const std::string& file, const std::string& format, std::ostream& out,
              std::ostream& err) {
  std::string data;
  try {
    data = read_file(file);
  } catch (const std::exception& e) {
    throw CommandError(std::string("parse: ") + e.what());
  }
  fs::path log_path;
  if (!g.out_dir.empty()) {
    const RunConfig c = resolve_config(g);
    log_path = prepare_run_dir(g, c) / "parse.log";
  }
  RunLog log(out, log_path);
  const auto records = split_records(data, format, file);
  if (records.empty()) {
    err << "warning: " << file << " contains no records\n";
    return 0;
  }
  int malformed = 0;
  for (const auto& r : records) {
    const auto check = validate_format(r.text);
    if (check.valid) {
      log << r.label << ": ok";
      for (const auto& d : check.diagnostics) log << "\n  " << format_diagnostic(d);
      log << "\n";
      continue;
    }
    ++malformed;
    log << r.label << ": malformed\n";
    for (const auto& d : check.diagnostics) log << "  " << format_diagnostic(d) << "\n";
  }
  log << records.size() << " record(s), " << malformed << " malformed\n";
  return malformed > 0 ? 1 : 0;
}

// ---- judge -----------------------------------------------------------------

int cmd_judge(const Globals& g, const std::string& outputs_path, const std::string& corpus_path,
              const std::string& base_url, std::ostream& out) {
  RunConfig c = resolve_config(g);
  if (!base_url.empty()) c.judge.base_url = base_url;
  c.validate();
  JudgeConfig jc;
  jc.base_url = c.judge.base_url;
  jc.path = c.judge.path;
  jc.model = c.judge.model;
  jc.max_attempts = c.judge.max_attempts;
  jc.backoff_ms = c.judge.backoff_ms;
  jc.timeout_s = c.judge.timeout_s;
  jc.concurrency = c.judge.concurrency;
  jc.api_key = judge_api_key_from_env();
  jc.validate();

  const auto corpus = load_annotated(corpus_path, "judge");
  const auto outputs = load_outputs(outputs_path);
  std::map<std::string, const SyntheticVideo*> by_id;
  for (const auto& v : corpus) by_id.emplace(v.id, &v);
  std::vector<JudgeItem> items;
  for (const auto& o : outputs) {
    const auto it = by_id.find(o.video_id);
    if (it == by_id.end()) throw CommandError("judge: output id '" + o.video_id + "' is not in the corpus");
    items.push_back({o.video_id, o.text, reference_text(*it->second, c.frames)});
  }
  const auto dir = prepare_run_dir(g, c);
  RunLog log(out, dir / "judge.log");
  const auto report = judge_all(items, jc);
  write_file(dir / "judge_report.json", judge_report_to_json(report));
  char buf[200];
  std::snprintf(buf, sizeof buf, "judged %d/%zu: reasonability %.4f detail %.4f consistency %.4f%s\n",
                report.n_scored, items.size(), report.mean.reasonability, report.mean.detail,
                report.mean.consistency, report.complete ? "" : " (incomplete)");
  log << buf;
  for (const auto& e : report.errors) log << "  " << e << "\n";
  return report.complete ? 0 : 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Synthetic video-anomaly reasoning lab: corpus, supervised pre-fit, group-relative RL, evaluation",
               std::string(kToolName)};
  app.set_version_flag("--version", tool_identifier());
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "INI config file with [corpus] [policy] [sft] [train] [eval] [judge]")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Random seed (required)")->required();
  app.add_option("--out", g.out_dir, "Run directory for artifacts, config snapshot and logs");

  bool weak = false;
  std::string corpus_file = "corpus.jsonl";
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic corpus");
  gen->add_flag("--weak", weak, "Write weak-label records only (no intervals or categories)");
  gen->add_option("--file", corpus_file, "Corpus file name inside the run directory")->capture_default_str();

  std::string sft_corpus, sft_heldout, sft_init;
  auto* sft = app.add_subcommand("sft", "Supervised pre-fit on a fully annotated corpus");
  sft->add_option("--corpus", sft_corpus, "Annotated corpus")->required()->check(CLI::ExistingFile);
  sft->add_option("--heldout", sft_heldout, "Annotated held-out corpus for an accuracy printout")
      ->check(CLI::ExistingFile);
  sft->add_option("--init", sft_init, "Start from this checkpoint instead of zeros")->check(CLI::ExistingFile);

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Group-relative policy optimization on weak labels");
  tr->add_option("--corpus", ta.corpus, "Corpus (weak labels are enough)")->required()->check(CLI::ExistingFile);
  tr->add_option("--init", ta.init, "Initial checkpoint, e.g. from sft")->check(CLI::ExistingFile);
  tr->add_option("--reward-ablation", ta.ablations, "Disable reward terms: no-ano, no-len")->delimiter(',');
  tr->add_option("--ckpt-every", ta.ckpt_every, "Write a checkpoint every N steps");
  tr->add_option("--steps", ta.steps, "Number of group updates (overrides train.max_steps)");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Decode a test corpus and compute all metrics");
  ev->add_option("--ckpt", ea.ckpt, "Policy checkpoint")->check(CLI::ExistingFile);
  ev->add_option("--corpus", ea.corpus, "Annotated test corpus")->required()->check(CLI::ExistingFile);
  ev->add_option("--outputs", ea.outputs, "Score an existing outputs file instead of decoding")
      ->check(CLI::ExistingFile);
  ev->add_flag("--stochastic", ea.stochastic, "Sample instead of greedy decoding");
  ev->add_flag("--reference-oracle", ea.oracle, "Score the reference renderings themselves");

  std::string parse_file, parse_format = "auto";
  auto* pa = app.add_subcommand("parse", "Check structured answers and print diagnostics");
  pa->add_option("file", parse_file, "Outputs file (.jsonl) or blank-line separated text documents")->required();
  pa->add_option("--format", parse_format, "auto, jsonl or text")->capture_default_str();

  std::string judge_outputs, judge_corpus, judge_url;
  auto* ju = app.add_subcommand("judge", "Score outputs with an external chat-completion judge");
  ju->add_option("--outputs", judge_outputs, "Outputs file")->required()->check(CLI::ExistingFile);
  ju->add_option("--corpus", judge_corpus, "Annotated corpus for the reference answers")
      ->required()
      ->check(CLI::ExistingFile);
  ju->add_option("--base-url", judge_url, "Endpoint base URL (overrides judge.base_url)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_corpus(g, weak, corpus_file, out);
    if (*sft) return cmd_sft(g, sft_corpus, sft_heldout, sft_init, out);
    if (*tr) return cmd_train(g, ta, out);
    if (*ev) return cmd_eval(g, ea, out);
    if (*pa) return cmd_parse(g, parse_file, parse_format, out, err);
    if (*ju) return cmd_judge(g, judge_outputs, judge_corpus, judge_url, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace avlab
