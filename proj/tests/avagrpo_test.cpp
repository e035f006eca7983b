#include <doctest.h>

#include <limits>
#include <type_traits>

#include "avlab/avagrpo.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace avlab;

// Verification and training receive frames and weak labels only.
static_assert(std::is_same_v<decltype(&verify),
                             VerificationResult (*)(const PolicyParams&, std::span<const int>, const Completion&,
                                                    const TrainConfig&, Rng&)>);
static_assert(std::is_same_v<decltype(&train), TrainResult (*)(const PolicyParams&, std::span<const WeakVideo>,
                                                               const TrainConfig&, const StepCallback&)>);
static_assert(!std::is_convertible_v<std::span<const SyntheticVideo>, std::span<const WeakVideo>>);

namespace {

PolicyParams random_params(const PolicyShape& shape, Rng& rng, double scale = 1.0) {
  PolicyParams p(shape);
  for (double& v : p.values()) v = rng.uniform(-scale, scale);
  return p;
}

std::string words(int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s += i ? " w" : "w";
  return s;
}

std::string doc_with_think_words(Label cls, int total) {
  CoTDocument d;
  if (cls == Label::Normal) {
    d.think = SimplifiedThink{words(total / 2), words(total - total / 2)};
    d.answer.which = "Normal";
  } else {
    const int q = total / 4;
    d.think = FullThink{words(q), words(q), words(q), words(total - 3 * q)};
    d.answer.which = "Fire";
    d.answer.when = TemporalInterval{1, 4};
  }
  d.answer.what = "event";
  return serialize(d);
}

// Policy that always answers `cls` with a well-formed document.
PolicyParams forced(const PolicyShape& shape, Label cls) {
  PolicyParams p(shape);
  p.cls()[shape.vocab] = cls == Label::Abnormal ? 60.0 : -60.0;
  p.fmt() = 60.0;
  return p;
}

CompletionGroup group_with_advantages(const PolicyParams& params, const Observation& obs, Rng& rng, int g) {
  CompletionGroup group;
  std::vector<double> r;
  for (int i = 0; i < g; ++i) {
    group.completions.push_back(sample(params, obs, rng));
    r.push_back(rng.uniform(-0.2, 2.7));
  }
  group.advantages = advantages(r, 1e-8);
  return group;
}

}  // namespace

TEST_CASE("reward constants") {
  CHECK(kAccuracyReward == 1.0);
  CHECK(kFormatReward == 1.0);
  CHECK(kVerifiedAbnormalReward == 0.5);
  CHECK(kRefutedNormalReward == -0.2);
  CHECK(kLengthReward == 0.2);
  CHECK(kNormalLengthRange == LengthRange{140, 261});
  CHECK(kAbnormalLengthRange == LengthRange{233, 456});
  const TrainConfig cfg;
  CHECK(cfg.group_size == 4);
  CHECK(cfg.beta == 0.04);
  CHECK(cfg.lr == 1e-6);
  CHECK(cfg.epochs == 1);
  CHECK(cfg.std_floor == 1e-8);
  CHECK(cfg.trim_fraction == 0.25);
}

TEST_CASE("accuracy and format rewards") {
  const Verdict abn{Label::Abnormal, TemporalInterval{1, 3}, std::string("Fire")};
  const Verdict nor{Label::Normal, std::nullopt, std::nullopt};
  CHECK(accuracy_reward(abn, Label::Abnormal) == 1.0);
  CHECK(accuracy_reward(nor, Label::Abnormal) == 0.0);
  CHECK(accuracy_reward(nor, Label::Normal) == 1.0);
  CHECK(accuracy_reward(std::nullopt, Label::Normal) == 0.0);

  const auto text = doc_with_think_words(Label::Abnormal, 300);
  CHECK(format_reward(text) == 1.0);
  auto broken = text;
  broken.erase(broken.find("</answer>"));
  CHECK(format_reward(broken) == 0.0);
  auto reordered = text;
  const std::string which = "<which>Fire</which>\n";
  reordered.erase(reordered.find(which), which.size());
  reordered.insert(reordered.find("</answer>"), which);
  CHECK(parse_cot(reordered).ok());
  CHECK(format_reward(reordered) == 0.0);
}

TEST_CASE("length reward keys on the class and uses closed bounds") {
  const TrainConfig cfg;
  CHECK(length_reward(doc_with_think_words(Label::Normal, 200), Label::Normal, cfg) == 0.2);
  CHECK(length_reward(doc_with_think_words(Label::Abnormal, 200), Label::Abnormal, cfg) == 0.0);
  CHECK(length_reward(doc_with_think_words(Label::Abnormal, 456), Label::Abnormal, cfg) == 0.2);
  CHECK(length_reward(doc_with_think_words(Label::Abnormal, 457), Label::Abnormal, cfg) == 0.0);
  CHECK(length_reward(doc_with_think_words(Label::Normal, 140), Label::Normal, cfg) == 0.2);
  CHECK(length_reward(doc_with_think_words(Label::Normal, 139), Label::Normal, cfg) == 0.0);
  CHECK(length_reward(doc_with_think_words(Label::Normal, 261), Label::Normal, cfg) == 0.2);
  CHECK(length_reward("garbage", Label::Normal, cfg) == 0.0);
  CHECK(length_reward(doc_with_think_words(Label::Normal, 200), std::nullopt, cfg) == 0.0);
}

TEST_CASE("verification reward table") {
  using L = std::optional<Label>;
  CHECK(verification_reward_for(L(Label::Abnormal), L(Label::Normal)) == 0.5);
  CHECK(verification_reward_for(L(Label::Normal), L(Label::Abnormal)) == -0.2);
  CHECK(verification_reward_for(L(Label::Abnormal), L(Label::Abnormal)) == 0.0);
  CHECK(verification_reward_for(L(Label::Normal), L(Label::Normal)) == 0.0);
  CHECK(verification_reward_for(std::nullopt, L(Label::Normal)) == 0.0);
  CHECK(verification_reward_for(L(Label::Abnormal), std::nullopt) == 0.0);
}

TEST_CASE("verification trims according to the completion and re-queries the policy") {
  const PolicyShape shape;
  const TrainConfig cfg;
  Rng rng(1);
  const auto frames = test::random_frames(rng, shape.vocab, 40, 60);
  const auto obs = observe(shape, frames);
  const auto says_normal = forced(shape, Label::Normal);
  const auto says_abnormal = forced(shape, Label::Abnormal);
  const auto abn = complete(says_abnormal, obs, Label::Abnormal, 2, Verbosity::Medium, true);
  const auto nor = complete(says_abnormal, obs, Label::Normal, std::nullopt, Verbosity::Medium, true);

  auto r = verify(says_normal, frames, abn, cfg, rng);
  CHECK(r.reward == 0.5);
  CHECK(r.outcome == Verification::Confirmed);
  r = verify(says_abnormal, frames, abn, cfg, rng);
  CHECK(r.reward == 0.0);
  CHECK(r.outcome == Verification::Unchanged);
  r = verify(says_abnormal, frames, nor, cfg, rng);
  CHECK(r.reward == -0.2);
  CHECK(r.outcome == Verification::Refuted);
  CHECK(anomaly_verification_reward(says_normal, frames, nor, cfg, rng) == 0.0);

  const auto malformed = complete(says_abnormal, obs, Label::Abnormal, 2, Verbosity::Medium, false);
  CHECK(verify(says_normal, frames, malformed, cfg, rng).outcome == Verification::Unextractable);

  std::optional<int> whole;
  for (std::size_t c = 0; c < obs.spans.size(); ++c)
    if (obs.spans[c] == TemporalInterval{0, shape.frames}) whole = static_cast<int>(c);
  REQUIRE(whole);
  const auto everything = complete(says_abnormal, obs, Label::Abnormal, whole, Verbosity::Medium, true);
  r = verify(says_normal, frames, everything, cfg, rng);
  CHECK(r.reward == 0.0);
  CHECK(r.outcome == Verification::Untrimmable);

  auto broken_requery = says_normal;
  broken_requery.fmt() = -60.0;
  CHECK(verify(broken_requery, frames, abn, cfg, rng).outcome == Verification::Unextractable);
}

TEST_CASE("verification removes the predicted segment from the raw timeline") {
  // The anomaly occupies the second half; a policy that sees no anomaly tokens
  // answers Normal, otherwise Abnormal.
  PolicyShape shape;
  const VocabLayout layout(shape.vocab);
  std::vector<int> frames(64, 0);
  for (int i = 32; i < 64; ++i) frames[i] = layout.category_token(1, 0);
  PolicyParams p(shape);
  p.cls()[shape.vocab] = -30.0;
  for (int t = layout.background; t < shape.vocab; ++t) p.cls()[t] = 1000.0;
  p.fmt() = 60.0;
  const auto obs = observe(shape, frames);
  const TrainConfig cfg;
  Rng rng(2);
  for (std::size_t c = 0; c < obs.spans.size(); ++c) {
    const auto comp = complete(p, obs, Label::Abnormal, static_cast<int>(c), Verbosity::Medium, true);
    const auto r = verify(p, frames, comp, cfg, rng);
    const bool covers = obs.spans[c].start <= 8 && obs.spans[c].end >= 16;
    if (obs.spans[c] == TemporalInterval{0, 16}) CHECK(r.outcome == Verification::Untrimmable);
    else CHECK(r.reward == (covers ? 0.5 : 0.0));
  }
}

TEST_CASE("advantages") {
  const std::vector<double> a = advantages(std::vector<double>{1, 0, 1, 0}, 1e-8);
  CHECK(a == std::vector<double>{1, -1, 1, -1});
  CHECK(advantages(std::vector<double>{1, 1, 1, 1}, 1e-8) == std::vector<double>{0, 0, 0, 0});
  const std::vector<double> r{2.7, 1.0, 0.5, 0.2};
  const double mean = (2.7 + 1.0 + 0.5 + 0.2) / 4.0;
  const double sd = std::sqrt(((2.7 - mean) * (2.7 - mean) + (1.0 - mean) * (1.0 - mean) +
                               (0.5 - mean) * (0.5 - mean) + (0.2 - mean) * (0.2 - mean)) /
                              4.0);
  const auto b = advantages(r, 1e-8);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(b[i] - (r[i] - mean) / sd) < 1e-12);
  CHECK_THROWS(advantages(std::vector<double>{1.0}, 1e-8));
}

TEST_CASE("advantage properties") {
  Rng rng(3);
  for (int k = 0; k < 2000; ++k) {
    const int g = rng.between(2, 8);
    std::vector<double> r(g);
    for (double& x : r) x = rng.uniform(-0.2, 2.7);
    const auto a = advantages(r, 1e-8);
    std::vector<double> shifted = r;
    const double c = rng.uniform(-5, 5);
    for (double& x : shifted) x += c;
    const auto as = advantages(shifted, 1e-8);
    for (int i = 0; i < g; ++i) {
      CHECK(std::abs(as[i] - a[i]) < 1e-9);
      for (int j = 0; j < g; ++j)
        if (r[i] < r[j]) CHECK(a[i] < a[j]);
    }
  }
}

TEST_CASE("k3 estimator") {
  CHECK(kl_k3(-1.3, -1.3) == 0.0);
  Rng rng(4);
  for (int k = 0; k < 10000; ++k) {
    const double a = rng.uniform(-30, 0), b = rng.uniform(-30, 0);
    CHECK(kl_k3(a, b) >= 0.0);
    const double d = b - a;
    CHECK(test::rel_err(kl_k3(a, b), std::exp(d) - d - 1.0) < 1e-9);
  }
  const PolicyShape shape;
  const auto params = random_params(shape, rng);
  const auto obs = observe(shape, test::random_frames(rng, shape.vocab, 16, 40));
  const auto t = sample(params, obs, rng).trace;
  CHECK(kl_penalty(params, snapshot(params), obs, t) == 0.0);
  PolicyShape other = shape;
  other.bins = 4;
  CHECK_THROWS(kl_penalty(params, PolicyParams(other), obs, t));
}

TEST_CASE("Monte Carlo k3 matches exact KL on an enumerable instance") {
  PolicyShape shape;
  shape.bins = 2;
  Rng rng(5);
  const auto params = random_params(shape, rng, 0.8);
  auto ref = params;
  for (double& v : ref.values()) v += rng.uniform(-0.5, 0.5);
  const auto obs = observe(shape, test::random_frames(rng, shape.vocab, 16, 30));
  const int n = 100000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double k = kl_penalty(params, ref, obs, sample(params, obs, rng).trace);
    s += k;
    s2 += k * k;
  }
  const double mean = s / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  const double exact = test::exact_kl(params, ref, obs);
  CHECK(exact > 0.0);
  CHECK(std::abs(mean - exact) <= 3.0 * se);
}

TEST_CASE("loss gradient") {
  Rng rng(6);
  const PolicyShape shape;
  const auto params = random_params(shape, rng);
  const auto obs = observe(shape, test::random_frames(rng, shape.vocab, 16, 40));
  TrainConfig cfg;

  SUBCASE("zero advantages and beta give zero gradient") {
    auto group = group_with_advantages(params, obs, rng, 4);
    std::fill(group.advantages.begin(), group.advantages.end(), 0.0);
    cfg.beta = 0.0;
    auto ref = params;
    ref.values()[0] += 1.0;
    for (double g : loss_and_grad(group, obs, params, ref, cfg).grad) CHECK(g == 0.0);
  }
  SUBCASE("beta zero is REINFORCE with baseline") {
    cfg.beta = 0.0;
    const auto group = group_with_advantages(params, obs, rng, 4);
    const auto lg = loss_and_grad(group, obs, params, params, cfg);
    std::vector<double> expect(params.size(), 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto g = grad_logprob(params, obs, group.completions[i].trace);
      for (std::size_t k = 0; k < g.size(); ++k) expect[k] -= 0.25 * group.advantages[i] * g[k];
    }
    for (std::size_t k = 0; k < expect.size(); ++k) CHECK(std::abs(lg.grad[k] - expect[k]) < 1e-12);
  }
  SUBCASE("KL term is stationary at the reference") {
    const auto group = group_with_advantages(params, obs, rng, 4);
    cfg.beta = 0.0;
    const auto without = loss_and_grad(group, obs, params, params, cfg);
    cfg.beta = 0.04;
    const auto with = loss_and_grad(group, obs, params, params, cfg);
    for (std::size_t k = 0; k < with.grad.size(); ++k) CHECK(std::abs(with.grad[k] - without.grad[k]) < 1e-15);
  }
  SUBCASE("dimension mismatch") {
    const auto group = group_with_advantages(params, obs, rng, 4);
    PolicyShape other = shape;
    other.bins = 3;
    CHECK_THROWS(loss_and_grad(group, obs, params, PolicyParams(other), cfg));
  }
}

TEST_CASE("loss gradient matches finite differences of the surrogate") {
  Rng rng(7);
  int checked = 0;
  for (int k = 0; k < 25; ++k) {
    PolicyShape shape;
    shape.bins = 2 + static_cast<int>(rng.below(5));
    auto params = random_params(shape, rng);
    auto ref = params;
    for (double& v : ref.values()) v += rng.uniform(-0.3, 0.3);
    const auto obs = observe(shape, test::random_frames(rng, shape.vocab, 16, 40));
    TrainConfig cfg;
    cfg.beta = k % 2 ? 0.0 : rng.uniform(0.01, 0.5);
    const auto group = group_with_advantages(params, obs, rng, rng.between(2, 6));
    const auto old = params;
    const auto lg = loss_and_grad(group, obs, params, ref, cfg);
    CHECK(std::abs(lg.loss - surrogate_loss(group, obs, params, old, ref, cfg)) < 1e-12);
    const double h = 1e-5;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double keep = params.values()[i];
      params.values()[i] = keep + h;
      const double up = surrogate_loss(group, obs, params, old, ref, cfg);
      params.values()[i] = keep - h;
      const double down = surrogate_loss(group, obs, params, old, ref, cfg);
      params.values()[i] = keep;
      CHECK(test::rel_err(lg.grad[i], (up - down) / (2 * h)) < 1e-6);
      ++checked;
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("KL clamp freezes runaway samples") {
  const PolicyShape shape;
  Rng rng(8);
  const auto ref = random_params(shape, rng);
  auto params = ref;
  params.fmt() -= 25.0;
  const auto obs = observe(shape, test::random_frames(rng, shape.vocab, 16, 40));
  CompletionGroup group;
  group.completions.push_back(complete(params, obs, Label::Normal, std::nullopt, Verbosity::Short, true));
  group.completions.push_back(complete(params, obs, Label::Normal, std::nullopt, Verbosity::Short, true));
  group.advantages = {0.0, 0.0};
  TrainConfig cfg;
  CHECK(kl_penalty(params, ref, obs, group.completions[0].trace) > cfg.kl_clamp);
  for (double g : loss_and_grad(group, obs, params, ref, cfg).grad) CHECK(g == 0.0);
  CHECK(loss_and_grad(group, obs, params, ref, cfg).loss == doctest::Approx(cfg.beta * cfg.kl_clamp));
  cfg.kl_clamp = 0.0;
  const auto unclamped = loss_and_grad(group, obs, params, ref, cfg);
  CHECK(std::any_of(unclamped.grad.begin(), unclamped.grad.end(), [](double g) { return g != 0.0; }));
}

TEST_CASE("one beta-zero step raises the best completion's probability") {
  Rng rng(9);
  const PolicyShape shape;
  int checked = 0;
  for (int k = 0; k < 50; ++k) {
    const auto params = random_params(shape, rng);
    const auto obs = observe(shape, test::random_frames(rng, shape.vocab, 16, 40));
    auto group = group_with_advantages(params, obs, rng, 4);
    TrainConfig cfg;
    cfg.beta = 0.0;
    const auto best = static_cast<std::size_t>(
        std::max_element(group.advantages.begin(), group.advantages.end()) - group.advantages.begin());
    if (group.advantages[best] <= 0.0) continue;
    const auto lg = loss_and_grad(group, obs, params, params, cfg);
    auto next = params;
    for (std::size_t i = 0; i < next.size(); ++i) next.values()[i] -= 1e-4 * lg.grad[i];
    const auto& t = group.completions[best].trace;
    const auto& tr = group.completions;
    bool duplicate_of_worse = false;
    for (std::size_t j = 0; j < tr.size(); ++j)
      if (j != best && tr[j].text == tr[best].text && tr[j].trace.segment == t.segment) duplicate_of_worse = true;
    if (duplicate_of_worse) continue;
    CHECK(logprob(next, obs, t) > logprob(params, obs, t));
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("reward components stay in their value sets") {
  PolicyShape shape;
  Rng rng(10);
  const auto corpus = to_weak(generate_corpus(test::small_spec(11, 40)));
  TrainConfig cfg;
  for (int k = 0; k < 200; ++k) {
    const auto params = random_params(shape, rng, 2.0);
    const auto& v = corpus[k % corpus.size()];
    const auto obs = observe(shape, v.frames);
    const auto g = build_group(params, params, v, obs, cfg, rng);
    REQUIRE(g.rewards.size() == 4u);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& r = g.rewards[i];
      CHECK((r.acc == 0.0 || r.acc == 1.0));
      CHECK((r.fmt == 0.0 || r.fmt == 1.0));
      CHECK((r.ano == 0.0 || r.ano == 0.5 || r.ano == -0.2));
      CHECK((r.len == 0.0 || r.len == 0.2));
      CHECK(r.total() >= -0.2);
      CHECK(r.total() <= 2.7);
      CHECK(g.kl[i] == 0.0);
    }
    double mean = 0.0;
    for (double a : g.advantages) mean += a / 4.0;
    CHECK(std::abs(mean) < 1e-9);
  }
}

TEST_CASE("training loop") {
  const auto corpus = to_weak(generate_corpus(test::small_spec(12, 32)));
  const PolicyParams init = sft_fit_weak(PolicyParams(PolicyShape{}), corpus, {50, 0.5}).params;
  TrainConfig cfg;
  cfg.lr = 0.5;
  cfg.seed = 3;
  cfg.max_steps = 80;

  const auto a = train(init, corpus, cfg);
  const auto b = train(init, corpus, cfg);
  CHECK(a.log == b.log);
  CHECK(a.params == b.params);
  CHECK(a.log.size() == 80u);
  CHECK(a.params != init);
  for (const auto& e : a.log) CHECK(step_log_from_json(step_log_to_json(e)) == e);

  auto other = cfg;
  other.seed = 4;
  CHECK(train(init, corpus, other).log != a.log);

  auto frozen = cfg;
  frozen.lr = 0.0;
  const auto f = train(init, corpus, frozen);
  CHECK(f.params == init);
  for (const auto& e : f.log) CHECK(e.mean_kl == 0.0);

  auto no_ano = cfg;
  no_ano.use_ano = false;
  for (const auto& e : train(init, corpus, no_ano).log) {
    CHECK(e.mean_ano == 0.0);
    CHECK(e.ano_confirmed + e.ano_refuted == 0);
  }

  auto epochs = cfg;
  epochs.max_steps = 0;
  epochs.epochs = 2;
  CHECK(train(init, corpus, epochs).log.size() == 64u);

  int calls = 0;
  train(init, corpus, cfg, [&](const TrainStepLog& e, const PolicyParams&) { CHECK(e.step == calls++); });
  CHECK(calls == 80);

  CHECK_THROWS(train(init, std::span<const WeakVideo>{}, cfg));
  auto bad = init;
  bad.values()[0] = std::nan("");
  CHECK_THROWS(train(bad, corpus, cfg));
  // A huge step saturates the policy; training must never hand back non-finite values.
  auto huge = cfg;
  huge.lr = std::numeric_limits<double>::max();
  huge.beta = 0.0;
  try {
    CHECK(train(init, corpus, huge).params.all_finite());
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("non-finite parameter after step") != std::string::npos);
  }
  auto invalid = cfg;
  invalid.group_size = 1;
  CHECK_THROWS_AS(train(init, corpus, invalid), std::invalid_argument);
}

TEST_CASE("logged word counts match the rendered think sections") {
  for (Label cls : {Label::Normal, Label::Abnormal})
    for (int v = 0; v < kNumVerbosity; ++v) {
      RenderRequest req;
      req.cls = cls;
      req.verbosity = static_cast<Verbosity>(v);
      req.interval = {0, 4};
      CHECK(think_word_count(render_document(req)) == think_budget(cls, req.verbosity));
    }
}
