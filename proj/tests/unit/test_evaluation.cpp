#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>

#include "doctest.h"
#include "skillmoo/error.hpp"
#include "skillmoo/evaluation.hpp"
#include "skillmoo/llm_client.hpp"
#include "support/fixtures.hpp"
#include "support/stub_server.hpp"

using namespace skillmoo;
using fixture::bundle;

namespace {

SimLandscape xy_landscape() {
  SimLandscape l;
  l.relevant_keywords = {{"x", 0.6}, {"y", 0.4}};
  l.reference_length = 100;
  return l;
}

SkillBundle body_bundle(const std::string& body) { return bundle({Skill{"s", "n", "d", body}}); }

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::Io;
}

TaskSpec verifier_task(const fixture::TempDir& ws, const std::string& script, double timeout_s = 30) {
  fixture::write_file(ws / "verify.sh", script);
  TaskSpec t;
  t.task_id = "verified";
  t.tests_total = 40;
  t.timeout_s = timeout_s;
  t.verifier = VerifierConfig{"sh {workspace}/verify.sh {bundle}", ws.path()};
  return t;
}

}  // namespace

TEST_CASE("sim pass rate examples") {
  auto l = xy_landscape();
  CHECK(sim_evaluate(body_bundle("x"), l, 10, 1).pass_rate == doctest::Approx(0.6));
  CHECK(sim_evaluate(body_bundle("x y"), l, 10, 1).pass_rate == 1.0);
  CHECK(sim_evaluate(body_bundle("nothing relevant"), l, 10, 1).pass_rate == 0.0);
  // punctuation and case do not hide a keyword
  CHECK(sim_evaluate(body_bundle("Use X, then (y)."), l, 10, 1).pass_rate == 1.0);
}

TEST_CASE("distractor penalty lowers the raw score linearly") {
  SimLandscape l = xy_landscape();
  l.distractor_penalty = 0.5;
  l.reference_length = 5;  // "n d x y pad" is exactly five tokens
  auto base = body_bundle("x y pad");
  REQUIRE(base.token_estimate() == 5);
  CHECK(sim_raw_score(base, l) == doctest::Approx(1.0));
  // growing the bundle to 2 * L_ref tokens lowers raw by beta
  auto doubled = body_bundle("x y pad q1 q2 q3 q4 q5");
  REQUIRE(doubled.token_estimate() == 10);
  CHECK(sim_raw_score(doubled, l) == doctest::Approx(0.5));
  // adding 2 * L_ref extra tokens lowers raw by 2 * beta
  auto tripled = body_bundle("x y pad q1 q2 q3 q4 q5 q6 q7 q8 q9 q10");
  CHECK(sim_raw_score(tripled, l) == doctest::Approx(0.0));
}

TEST_CASE("sim evaluation follows the landscape formula") {
  std::mt19937_64 rng(3);
  const std::vector<std::string> vocab{"csv", "schema", "dedupe", "timezone", "git", "docker", "plot", "review"};
  SimLandscape l;
  l.relevant_keywords = {{"csv", 0.3}, {"schema", 0.25}, {"dedupe", 0.25}, {"timezone", 0.2}};
  l.distractor_penalty = 0.2;
  l.reference_length = 12;
  l.cost_base = 0.01;
  l.cost_per_token = 0.002;
  l.runtime_base = 5;
  l.runtime_per_token = 0.25;
  for (int t = 0; t < 200; ++t) {
    std::string body;
    std::set<std::string> present;
    const int n = 1 + static_cast<int>(rng() % 30);
    for (int i = 0; i < n; ++i) {
      const auto& w = vocab[rng() % vocab.size()];
      body += w + " ";
      present.insert(w);
    }
    auto b = bundle({Skill{"s", "name", "desc", body}});
    const double tokens = n + 2;
    double raw = 0;
    for (const auto& [k, w] : l.relevant_keywords) raw += present.count(k) ? w : 0.0;
    raw -= 0.2 * std::max(0.0, tokens - 12) / 12;
    const int expected_passed = static_cast<int>(std::lround(std::clamp(raw, 0.0, 1.0) * 40));
    auto r = sim_evaluate(b, l, 40, 99);
    CHECK(r.tests_passed == expected_passed);
    CHECK(r.cost_usd == doctest::Approx(0.01 + 0.002 * tokens));
    CHECK(r.runtime_s == doctest::Approx(5 + 0.25 * tokens));
    CHECK_NOTHROW(r.check_invariants());
    CHECK(r.pass_rate * 40 == doctest::Approx(std::round(r.pass_rate * 40)));
  }
}

TEST_CASE("sim traces name the failing tests and uncovered keywords") {
  auto l = xy_landscape();
  auto r = sim_evaluate(body_bundle("x"), l, 10, 1);
  REQUIRE(r.error_traces.size() == 4);
  for (const auto& t : r.error_traces) CHECK(t.find("missing guidance for 'y'") != std::string::npos);
  CHECK(r.error_traces[0].rfind("test_", 0) == 0);
  CHECK(sim_evaluate(body_bundle("x y"), l, 10, 1).error_traces.empty());
}

TEST_CASE("sim evaluation is deterministic and noise stays bounded") {
  auto l = xy_landscape();
  l.noise_amplitude = 0.05;
  auto b = body_bundle("x");
  auto r1 = sim_evaluate(b, l, 40, 5);
  auto r2 = sim_evaluate(b, l, 40, 5);
  CHECK(r1 == r2);
  CHECK(nlohmann::json(r1).dump() == nlohmann::json(r2).dump());
  bool varied = false;
  for (std::uint64_t s = 0; s < 50; ++s) {
    auto r = sim_evaluate(b, l, 40, s);
    CHECK(std::abs(r.pass_rate - 0.6) <= 0.05 + 1e-12);
    varied |= r.pass_rate != r1.pass_rate;
  }
  CHECK(varied);
}

TEST_CASE("removing a non-keyword token never hurts either objective") {
  std::mt19937_64 rng(41);
  const std::vector<std::string> vocab{"x", "y", "z", "w", "v", "filler"};
  SimLandscape l;
  l.relevant_keywords = {{"x", 0.5}, {"y", 0.3}, {"z", 0.2}};
  l.distractor_penalty = 0.3;
  l.reference_length = 8;
  l.cost_per_token = 0.01;
  for (int t = 0; t < 300; ++t) {
    std::vector<std::string> words;
    for (int i = 0, n = 2 + static_cast<int>(rng() % 20); i < n; ++i) words.push_back(vocab[rng() % vocab.size()]);
    std::vector<std::size_t> removable;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (!l.relevant_keywords.count(words[i])) removable.push_back(i);
    }
    if (removable.empty()) continue;
    auto join = [](const std::vector<std::string>& ws) {
      std::string s;
      for (const auto& w : ws) s += w + " ";
      return s;
    };
    auto before = sim_evaluate(body_bundle(join(words)), l, 40, 0);
    words.erase(words.begin() + static_cast<std::ptrdiff_t>(removable[rng() % removable.size()]));
    auto after = sim_evaluate(body_bundle(join(words)), l, 40, 0);
    CHECK(after.pass_rate >= before.pass_rate);
    CHECK(after.cost_usd <= before.cost_usd);
  }
}

TEST_CASE("landscape and task validation") {
  auto l = xy_landscape();
  CHECK_NOTHROW(l.validate());
  l.relevant_keywords["x"] = 0.7;
  CHECK(kind_of([&] { l.validate(); }) == ErrorKind::InvalidTask);
  l = xy_landscape();
  l.noise_amplitude = 0.06;
  CHECK(kind_of([&] { l.validate(); }) == ErrorKind::InvalidTask);
  l = xy_landscape();
  l.relevant_keywords = {{"Upper", 1.0}};
  CHECK(kind_of([&] { l.validate(); }) == ErrorKind::InvalidTask);

  TaskSpec t;
  t.tests_total = 0;
  CHECK(kind_of([&] { t.validate(); }) == ErrorKind::InvalidTask);
  t.tests_total = 40;
  t.timeout_s = 0;
  CHECK(kind_of([&] { t.validate(); }) == ErrorKind::InvalidTask);
}

TEST_CASE("task files load with defaults") {
  auto t = load_task(fixture::sim_task());
  CHECK(t.task_id == "csv-cleanup");
  CHECK(t.tests_total == 40);
  CHECK(t.timeout_s == 900);
  REQUIRE(t.sim);
  CHECK(t.sim->relevant_keywords.size() == 4);

  fixture::TempDir tmp;
  fixture::write_file(tmp / "t.json", R"({"task_id": "v", "verifier": {"command": "true", "workspace": "ws"}})");
  auto v = load_task(tmp / "t.json");
  CHECK(v.tests_total == 40);
  CHECK(v.timeout_s == 900);
  CHECK(v.verifier->workspace == tmp / "ws");
  fixture::write_file(tmp / "bad.json", "{");
  CHECK(kind_of([&] { load_task(tmp / "bad.json"); }) == ErrorKind::InvalidTask);
}

TEST_CASE("evaluation result counts") {
  auto r = EvaluationResult::from_counts(37, 40);
  CHECK(r.pass_rate == 0.925);
  r.error_traces = {"t1: a", "t2: b", "t3: c"};
  CHECK_NOTHROW(r.check_invariants());
  r.error_traces.pop_back();
  CHECK(r.error_traces.size() == 2);  // still non-empty, so the invariant holds
  CHECK_NOTHROW(r.check_invariants());
  r.error_traces.clear();
  CHECK_THROWS_AS(r.check_invariants(), Error);
  auto full = EvaluationResult::from_counts(40, 40);
  CHECK_NOTHROW(full.check_invariants());
  full.error_traces = {"spurious"};
  CHECK_THROWS_AS(full.check_invariants(), Error);
  auto back = nlohmann::json(r).get<EvaluationResult>();
  CHECK(back.pass_rate == r.pass_rate);
}

TEST_CASE("verifier report parsing") {
  auto rep = parse_verifier_report("a\tpass\tok\nb\tfail\twrong answer\n# comment\n#cost_usd\t0.25\n\nc\tfail\n");
  CHECK(rep.passed == 1);
  CHECK(rep.failed == 2);
  CHECK(rep.failures == std::vector<std::string>{"b: wrong answer", "c: failed"});
  CHECK(rep.cost_usd == 0.25);
  CHECK_FALSE(rep.runtime_s);
  CHECK(kind_of([] { parse_verifier_report("a\tmaybe\tx\n"); }) == ErrorKind::VerifierCrash);
  CHECK(kind_of([] { parse_verifier_report("just text\n"); }) == ErrorKind::VerifierCrash);
}

TEST_CASE("verifier with 18 of 40 passing") {
  fixture::TempDir ws;
  auto task = verifier_task(ws,
                            "test -f \"$1/manifest.json\" || exit 9\n"
                            "out=\"$2\"\n"
                            "for i in $(seq 1 18); do printf 't%02d\\tpass\\tok\\n' $i >> \"$out\"; done\n"
                            "for i in $(seq 19 40); do printf 't%02d\\tfail\\tmismatch\\n' $i >> \"$out\"; done\n"
                            "printf '#cost_usd\\t0.125\\n' >> \"$out\"\n");
  auto r = run_verifier(body_bundle("x"), task);
  CHECK(r.pass_rate == 0.45);
  CHECK(r.tests_passed == 18);
  CHECK(r.error_traces.size() == 22);
  CHECK(r.error_traces[0] == "t19: mismatch");
  CHECK(r.cost_usd == 0.125);
  CHECK_FALSE(r.timed_out);
  CHECK_NOTHROW(r.check_invariants());
}

TEST_CASE("verifier timeout keeps partial results") {
  fixture::TempDir ws;
  auto task = verifier_task(ws,
                            "for i in 1 2 3 4 5; do printf 't%d\\tpass\\tok\\n' $i >> \"$2\"; done\n"
                            "sleep 30\n",
                            0.5);
  auto r = run_verifier(body_bundle("x"), task);
  CHECK(r.timed_out);
  CHECK(r.tests_passed == 5);
  CHECK(r.pass_rate == 5.0 / 40);
  CHECK(r.runtime_s < 10);
  CHECK(r.error_traces.back().find("timed out") != std::string::npos);

  fixture::TempDir ws2;
  auto silent = verifier_task(ws2, "sleep 30\n", 0.3);
  auto r2 = run_verifier(body_bundle("x"), silent);
  CHECK(r2.timed_out);
  CHECK(r2.pass_rate == 0.0);
  CHECK_NOTHROW(r2.check_invariants());
}

TEST_CASE("verifier crashes") {
  fixture::TempDir ws;
  auto empty = verifier_task(ws, ": > \"$2\"\n");
  CHECK(kind_of([&] { run_verifier(body_bundle("x"), empty); }) == ErrorKind::VerifierCrash);

  fixture::TempDir ws2;
  auto failing = verifier_task(ws2, "exit 4\n");
  CHECK(kind_of([&] { run_verifier(body_bundle("x"), failing); }) == ErrorKind::VerifierCrash);

  fixture::TempDir ws3;
  auto too_many = verifier_task(ws3, "for i in $(seq 1 41); do printf 't%d\\tpass\\n' $i >> \"$2\"; done\n");
  CHECK(kind_of([&] { run_verifier(body_bundle("x"), too_many); }) == ErrorKind::VerifierCrash);
}

TEST_CASE("unreported tests count as failures") {
  fixture::TempDir ws;
  auto task = verifier_task(ws, "printf 'a\\tpass\\n' > \"$2\"\n");
  auto r = run_verifier(body_bundle("x"), task);
  CHECK(r.tests_passed == 1);
  CHECK(r.error_traces.size() == 1);
  CHECK(r.error_traces[0].find("39 test(s) without a result") == 0);
}

TEST_CASE("llm solver writes the reply and judges it with the verifier") {
  stub::Server server;
  server.push({200, stub::completion("answer: 42", std::make_pair(200L, 100L)), 0});
  ModelConfig cfg;
  cfg.base_url = server.base_url();
  cfg.model_name = "stub-model";
  cfg.price_per_1k_input = 0.001;
  cfg.price_per_1k_output = 0.002;
  auto client = std::make_shared<ChatClient>(cfg);

  fixture::TempDir ws;
  auto task = verifier_task(ws, "");
  task.description = "Answer the question.";
  task.tests_total = 2;
  task.verifier->command = "sh {workspace}/verify.sh {solution}";
  fixture::write_file(ws / "verify.sh",
                      "if grep -q 42 \"$1\"; then printf 'a\\tpass\\n' > \"$2\"; else printf 'a\\tfail\\n' > \"$2\"; fi\n"
                      "printf 'b\\tfail\\tunsolved\\n' >> \"$2\"\n");
  LlmSolverEvaluator solver(client);
  auto r = solver.evaluate(body_bundle("use x"), task, 0);
  CHECK(r.tests_passed == 1);
  CHECK(r.cost_usd == doctest::Approx(0.0004));
  auto sent = nlohmann::json::parse(server.requests().at(0));
  CHECK(sent["messages"][0]["role"] == "system");
  CHECK(sent["messages"][0]["content"].get<std::string>().find("use x") != std::string::npos);
  CHECK(sent["messages"][1]["content"] == "Answer the question.");
}
