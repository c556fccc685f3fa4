#include "skillmoo/evaluation.hpp"

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "skillmoo/error.hpp"
#include "skillmoo/llm_client.hpp"
#include "skillmoo/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace skillmoo {

// ---- task -----------------------------------------------------------------

void SimLandscape::validate() const {
  if (relevant_keywords.empty()) throw Error(ErrorKind::InvalidTask, "landscape has no relevant keywords");
  double sum = 0.0;
  for (const auto& [kw, w] : relevant_keywords) {
    if (w < 0) throw Error(ErrorKind::InvalidTask, "negative weight for keyword '" + kw + "'");
    if (normalize_word(kw) != kw) {
      throw Error(ErrorKind::InvalidTask, "keyword '" + kw + "' must be a single lowercase word");
    }
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorKind::InvalidTask, "keyword weights sum to " + std::to_string(sum));
  if (distractor_penalty < 0) throw Error(ErrorKind::InvalidTask, "distractor_penalty must be nonnegative");
  if (reference_length < 1) throw Error(ErrorKind::InvalidTask, "reference_length must be positive");
  if (cost_base < 0 || cost_per_token < 0 || runtime_base < 0 || runtime_per_token < 0) {
    throw Error(ErrorKind::InvalidTask, "cost and runtime coefficients must be nonnegative");
  }
  if (noise_amplitude < 0 || noise_amplitude > 0.05) throw Error(ErrorKind::InvalidTask, "noise_amplitude must lie in [0, 0.05]");
}

void TaskSpec::validate() const {
  if (tests_total < 1) throw Error(ErrorKind::InvalidTask, "tests_total must be at least 1");
  if (!(timeout_s > 0)) throw Error(ErrorKind::InvalidTask, "timeout_s must be positive");
  if (sim) sim->validate();
}

void to_json(json& j, const SimLandscape& l) {
  j = json{{"relevant_keywords", l.relevant_keywords},
           {"distractor_penalty", l.distractor_penalty},
           {"reference_length", l.reference_length},
           {"cost_base", l.cost_base},
           {"cost_per_token", l.cost_per_token},
           {"runtime_base", l.runtime_base},
           {"runtime_per_token", l.runtime_per_token},
           {"noise_amplitude", l.noise_amplitude},
           {"rng_seed", l.rng_seed}};
}

void from_json(const json& j, SimLandscape& l) {
  l.relevant_keywords = j.at("relevant_keywords").get<std::map<std::string, double>>();
  l.distractor_penalty = j.value("distractor_penalty", 0.0);
  l.reference_length = j.value("reference_length", 1L);
  l.cost_base = j.value("cost_base", 0.0);
  l.cost_per_token = j.value("cost_per_token", 0.0);
  l.runtime_base = j.value("runtime_base", 0.0);
  l.runtime_per_token = j.value("runtime_per_token", 0.0);
  l.noise_amplitude = j.value("noise_amplitude", 0.0);
  l.rng_seed = j.value("rng_seed", std::uint64_t{0});
}

void to_json(json& j, const TaskSpec& t) {
  j = json{{"task_id", t.task_id}, {"description", t.description}, {"tests_total", t.tests_total}, {"timeout_s", t.timeout_s}};
  if (t.sim) j["sim"] = *t.sim;
  if (t.verifier) j["verifier"] = json{{"command", t.verifier->command}, {"workspace", t.verifier->workspace.string()}};
}

void from_json(const json& j, TaskSpec& t) {
  t.task_id = j.at("task_id").get<std::string>();
  t.description = j.value("description", std::string{});
  t.tests_total = j.value("tests_total", 40);
  t.timeout_s = j.value("timeout_s", 900.0);
  if (j.contains("sim")) t.sim = j["sim"].get<SimLandscape>();
  if (j.contains("verifier")) {
    const auto& v = j["verifier"];
    t.verifier = VerifierConfig{v.at("command").get<std::string>(), v.value("workspace", std::string{"."})};
  }
}

TaskSpec load_task(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidTask, "cannot read task file " + path.string());
  TaskSpec task;
  try {
    task = json::parse(in).get<TaskSpec>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidTask, path.string() + ": " + e.what());
  }
  if (task.verifier && task.verifier->workspace.is_relative()) {
    task.verifier->workspace = path.parent_path() / task.verifier->workspace;
  }
  task.validate();
  return task;
}

// ---- results --------------------------------------------------------------

EvaluationResult EvaluationResult::from_counts(int passed, int total) {
  EvaluationResult r;
  r.tests_passed = passed;
  r.tests_total = total;
  r.pass_rate = static_cast<double>(passed) / static_cast<double>(total);
  return r;
}

void EvaluationResult::check_invariants() const {
  if (tests_total < 1 || tests_passed < 0 || tests_passed > tests_total) {
    throw Error(ErrorKind::InvalidArgument, "test counts out of range");
  }
  if (pass_rate != static_cast<double>(tests_passed) / static_cast<double>(tests_total)) {
    throw Error(ErrorKind::InvalidArgument, "pass_rate does not equal tests_passed / tests_total");
  }
  if (error_traces.empty() != (tests_passed == tests_total)) {
    throw Error(ErrorKind::InvalidArgument, "error traces must be present exactly when tests fail");
  }
  if (cost_usd < 0 || runtime_s < 0) throw Error(ErrorKind::InvalidArgument, "negative cost or runtime");
}

void to_json(json& j, const EvaluationResult& r) {
  j = json{{"pass_rate", r.pass_rate}, {"tests_passed", r.tests_passed}, {"tests_total", r.tests_total},
           {"cost_usd", r.cost_usd},   {"runtime_s", r.runtime_s},       {"error_traces", r.error_traces},
           {"timed_out", r.timed_out}};
}

void from_json(const json& j, EvaluationResult& r) {
  r = EvaluationResult::from_counts(j.at("tests_passed").get<int>(), j.at("tests_total").get<int>());
  r.cost_usd = j.value("cost_usd", 0.0);
  r.runtime_s = j.value("runtime_s", 0.0);
  r.error_traces = j.value("error_traces", std::vector<std::string>{});
  r.timed_out = j.value("timed_out", false);
}

// ---- simulated evaluator ----------------------------------------------------

namespace {

std::unordered_set<std::string> word_set(const std::string& text) {
  std::unordered_set<std::string> words;
  for (auto tok : split_tokens(text)) {
    auto w = normalize_word(tok);
    if (!w.empty()) words.insert(std::move(w));
  }
  return words;
}

// Assigns each test to a keyword in proportion to the weights (largest remainder).
std::vector<std::string> allocate_tests(const std::map<std::string, double>& weights, int tests_total) {
  struct Share {
    std::string keyword;
    int seats;
    double remainder;
  };
  std::vector<Share> shares;
  int used = 0;
  for (const auto& [kw, w] : weights) {
    double exact = w * tests_total;
    int seats = static_cast<int>(std::floor(exact));
    shares.push_back({kw, seats, exact - seats});
    used += seats;
  }
  std::vector<std::size_t> by_remainder(shares.size());
  for (std::size_t i = 0; i < shares.size(); ++i) by_remainder[i] = i;
  std::stable_sort(by_remainder.begin(), by_remainder.end(),
                   [&](std::size_t a, std::size_t b) { return shares[a].remainder > shares[b].remainder; });
  for (std::size_t i = 0; used < tests_total; i = (i + 1) % by_remainder.size(), ++used) {
    ++shares[by_remainder[i]].seats;
  }
  std::vector<std::string> owner;
  owner.reserve(static_cast<std::size_t>(tests_total));
  for (const auto& s : shares) owner.insert(owner.end(), static_cast<std::size_t>(s.seats), s.keyword);
  owner.resize(static_cast<std::size_t>(tests_total));
  return owner;
}

std::string test_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "test_%03zu", i + 1);
  return buf;
}

}  // namespace

double sim_raw_score(const SkillBundle& bundle, const SimLandscape& landscape) {
  auto words = word_set(bundle.text());
  double covered = 0.0;
  for (const auto& [kw, w] : landscape.relevant_keywords) {
    if (words.count(kw)) covered += w;
  }
  const double tokens = static_cast<double>(bundle.token_estimate());
  const double lref = static_cast<double>(landscape.reference_length);
  return covered - landscape.distractor_penalty * std::max(0.0, tokens - lref) / lref;
}

EvaluationResult sim_evaluate(const SkillBundle& bundle, const SimLandscape& landscape, int tests_total,
                              std::uint64_t run_seed) {
  const double noise =
      unit_interval_signed(derive_seed(run_seed ^ landscape.rng_seed, "sim-noise", bundle.content_hash()));
  const double raw = sim_raw_score(bundle, landscape) + noise * landscape.noise_amplitude;
  const int passed = static_cast<int>(std::lround(std::clamp(raw, 0.0, 1.0) * tests_total));

  auto result = EvaluationResult::from_counts(passed, tests_total);
  const double tokens = static_cast<double>(bundle.token_estimate());
  result.cost_usd = landscape.cost_base + landscape.cost_per_token * tokens;
  result.runtime_s = landscape.runtime_base + landscape.runtime_per_token * tokens;

  // Failing tests: those probing uncovered keywords first, then the rest.
  const auto words = word_set(bundle.text());
  const auto owner = allocate_tests(landscape.relevant_keywords, tests_total);
  const long excess = std::max<long>(0, static_cast<long>(tokens) - landscape.reference_length);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < owner.size(); ++i) {
    if (!words.count(owner[i])) order.push_back(i);
  }
  for (std::size_t i = 0; i < owner.size(); ++i) {
    if (words.count(owner[i])) order.push_back(i);
  }
  const auto failing = static_cast<std::size_t>(tests_total - passed);
  for (std::size_t f = 0; f < failing; ++f) {
    const auto i = order[f];
    const auto& kw = owner[i];
    std::string msg;
    if (!words.count(kw)) {
      msg = "missing guidance for '" + kw + "'";
    } else if (excess > 0) {
      msg = "guidance for '" + kw + "' diluted by " + std::to_string(excess) + " excess tokens";
    } else {
      msg = "intermittent failure on '" + kw + "'";
    }
    result.error_traces.push_back(test_name(i) + ": " + msg);
  }
  return result;
}

EvaluationResult SimEvaluator::evaluate(const SkillBundle& bundle, const TaskSpec& task, std::uint64_t run_seed) const {
  if (!task.sim) throw Error(ErrorKind::InvalidTask, "task '" + task.task_id + "' has no sim landscape");
  return sim_evaluate(bundle, *task.sim, task.tests_total, run_seed);
}

// ---- verifier -------------------------------------------------------------

VerifierReport parse_verifier_report(std::string_view text) {
  VerifierReport report;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    // test_id, status, message (the message may itself contain tabs)
    std::vector<std::string_view> fields;
    auto t1 = line.find('\t');
    fields.push_back(line.substr(0, t1));
    if (t1 != std::string_view::npos) {
      auto t2 = line.find('\t', t1 + 1);
      fields.push_back(line.substr(t1 + 1, t2 == std::string_view::npos ? std::string_view::npos : t2 - t1 - 1));
      if (t2 != std::string_view::npos) fields.push_back(line.substr(t2 + 1));
    }

    if (line.front() == '#') {
      if (fields.size() >= 2 && (fields[0] == "#cost_usd" || fields[0] == "#runtime_s")) {
        try {
          double v = std::stod(std::string(fields[1]));
          (fields[0] == "#cost_usd" ? report.cost_usd : report.runtime_s) = v;
        } catch (const std::exception&) {
          throw Error(ErrorKind::VerifierCrash, "bad metadata value on report line " + std::to_string(line_no));
        }
      }
      continue;
    }
    if (fields.size() < 2 || (fields[1] != "pass" && fields[1] != "fail")) {
      throw Error(ErrorKind::VerifierCrash, "malformed report line " + std::to_string(line_no));
    }
    if (fields[1] == "pass") {
      ++report.passed;
    } else {
      ++report.failed;
      std::string trace(fields[0]);
      trace += ": ";
      trace += fields.size() > 2 ? std::string(fields[2]) : std::string("failed");
      report.failures.push_back(std::move(trace));
    }
  }
  return report;
}

ProcessOutcome run_shell(const std::string& command, double timeout_s) {
  ProcessOutcome outcome;
  const auto start = std::chrono::steady_clock::now();
  pid_t pid = fork();
  if (pid < 0) throw Error(ErrorKind::VerifierCrash, "fork failed");
  if (pid == 0) {
    setpgid(0, 0);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  setpgid(pid, pid);
  int status = 0;
  while (true) {
    pid_t r = waitpid(pid, &status, WNOHANG);
    outcome.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (r == pid) break;
    if (r < 0) throw Error(ErrorKind::VerifierCrash, "waitpid failed");
    if (outcome.elapsed_s >= timeout_s) {
      kill(-pid, SIGKILL);
      waitpid(pid, &status, 0);
      outcome.timed_out = true;
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  if (!outcome.timed_out) {
    outcome.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  }
  return outcome;
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (auto p = s.find(from); p != std::string::npos; p = s.find(from, p + to.size())) s.replace(p, from.size(), to);
}

fs::path scratch_dir(const SkillBundle& bundle, const TaskSpec& task) {
  auto dir = task.verifier->workspace / ".skillmoo" / (bundle.bundle_id + "-" + hex64(bundle.content_hash()).substr(0, 8));
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

EvaluationResult run_verifier(const SkillBundle& bundle, const TaskSpec& task, const fs::path& solution) {
  if (!task.verifier || task.verifier->command.empty()) {
    throw Error(ErrorKind::InvalidTask, "task '" + task.task_id + "' has no verifier command");
  }
  const auto scratch = scratch_dir(bundle, task);
  const auto bundle_dir = scratch / "bundle";
  const auto report_path = scratch / "report.tsv";
  fs::remove_all(bundle_dir);
  fs::remove(report_path);
  store_bundle(bundle, bundle_dir);

  std::string cmd = task.verifier->command;
  replace_all(cmd, "{bundle}", shell_quote(bundle_dir.string()));
  replace_all(cmd, "{workspace}", shell_quote(task.verifier->workspace.string()));
  replace_all(cmd, "{solution}", shell_quote(solution.string()));
  cmd += " " + shell_quote(report_path.string());

  const auto outcome = run_shell(cmd, task.timeout_s);
  const bool have_report = fs::is_regular_file(report_path) && fs::file_size(report_path) > 0;

  VerifierReport report;
  if (have_report) {
    report = parse_verifier_report(slurp(report_path));
  } else if (!outcome.timed_out) {
    throw Error(ErrorKind::VerifierCrash, "verifier exited with code " + std::to_string(outcome.exit_code) +
                                              " and wrote no report");
  }

  const int reported = report.passed + report.failed;
  if (reported > task.tests_total) {
    throw Error(ErrorKind::VerifierCrash, "report lists " + std::to_string(reported) + " tests but the task has " +
                                              std::to_string(task.tests_total));
  }
  if (have_report && reported == 0 && !outcome.timed_out) {
    throw Error(ErrorKind::VerifierCrash, "verifier report has no test records");
  }

  auto result = EvaluationResult::from_counts(report.passed, task.tests_total);
  result.error_traces = std::move(report.failures);
  if (reported < task.tests_total) {
    std::string why = outcome.timed_out ? "verifier timed out after " + std::to_string(task.timeout_s) + " s"
                                        : std::string("not reported");
    result.error_traces.push_back(std::to_string(task.tests_total - reported) + " test(s) without a result: " + why);
  }
  result.timed_out = outcome.timed_out;
  result.cost_usd = report.cost_usd.value_or(0.0);
  result.runtime_s = report.runtime_s.value_or(outcome.elapsed_s);
  return result;
}

EvaluationResult VerifierEvaluator::evaluate(const SkillBundle& bundle, const TaskSpec& task, std::uint64_t) const {
  return run_verifier(bundle, task);
}

// ---- LLM solver -------------------------------------------------------------

EvaluationResult LlmSolverEvaluator::evaluate(const SkillBundle& bundle, const TaskSpec& task, std::uint64_t) const {
  if (!task.verifier) throw Error(ErrorKind::InvalidTask, "the llm evaluator needs a verifier to judge solutions");

  std::string system = "You are a software engineering agent. The following skills are available:\n";
  for (const auto& s : bundle.skills) {
    system += "\n## " + s.name + "\n" + s.description + "\n\n" + s.body + "\n";
  }
  std::vector<ChatMessage> messages{{"system", system}, {"user", task.description}};

  ChatReply reply;
  try {
    reply = client_->chat(messages);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Timeout) throw;
    auto result = EvaluationResult::from_counts(0, task.tests_total);
    result.timed_out = true;
    result.runtime_s = client_->config().request_timeout_s;
    result.error_traces.push_back(std::string("solver timed out: ") + e.what());
    return result;
  }

  const auto solution = scratch_dir(bundle, task) / "solution.md";
  {
    std::ofstream out(solution, std::ios::binary | std::ios::trunc);
    out << reply.text;
  }
  auto result = run_verifier(bundle, task, solution);
  result.cost_usd += reply.usage.cost_usd();
  result.runtime_s += reply.usage.latency_s;
  return result;
}

}  // namespace skillmoo
