#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "skillmoo/bundle.hpp"

namespace skillmoo {

class ChatClient;

/// Synthetic task landscape. Pass rate rewards covering the relevant
/// keywords and penalizes bundle length beyond the reference length.
struct SimLandscape {
  std::map<std::string, double> relevant_keywords;  // keyword -> weight, weights sum to 1
  double distractor_penalty = 0.0;                   // beta
  long reference_length = 1;                         // L_ref, tokens
  double cost_base = 0.0;
  double cost_per_token = 0.0;
  double runtime_base = 0.0;
  double runtime_per_token = 0.0;
  double noise_amplitude = 0.0;  // in [0, 0.05]
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct VerifierConfig {
  // Shell command; "{bundle}", "{workspace}" and "{solution}" are substituted,
  // and the report path is appended as the final argument.
  std::string command;
  std::filesystem::path workspace;
};

struct TaskSpec {
  std::string task_id;
  std::string description;
  int tests_total = 40;
  double timeout_s = 900.0;
  std::optional<SimLandscape> sim;
  std::optional<VerifierConfig> verifier;

  void validate() const;
};

TaskSpec load_task(const std::filesystem::path& path);
void to_json(nlohmann::json& j, const SimLandscape& l);
void from_json(const nlohmann::json& j, SimLandscape& l);
void to_json(nlohmann::json& j, const TaskSpec& t);
void from_json(const nlohmann::json& j, TaskSpec& t);

struct EvaluationResult {
  double pass_rate = 0.0;
  int tests_passed = 0;
  int tests_total = 1;
  double cost_usd = 0.0;
  double runtime_s = 0.0;
  std::vector<std::string> error_traces;
  bool timed_out = false;

  /// Sets tests_passed/tests_total and the derived pass_rate together.
  static EvaluationResult from_counts(int passed, int total);
  void check_invariants() const;

  friend bool operator==(const EvaluationResult&, const EvaluationResult&) = default;
};

void to_json(nlohmann::json& j, const EvaluationResult& r);
void from_json(const nlohmann::json& j, EvaluationResult& r);

/// Maps a bundle to pass rate, cost, runtime and failure traces.
/// Implementations keep no mutable state beyond their configuration.
class Evaluator {
public:
  virtual ~Evaluator() = default;
  virtual EvaluationResult evaluate(const SkillBundle& bundle, const TaskSpec& task,
                                    std::uint64_t run_seed) const = 0;
  virtual std::string name() const = 0;
};

/// Deterministic evaluation against the task's SimLandscape.
EvaluationResult sim_evaluate(const SkillBundle& bundle, const SimLandscape& landscape, int tests_total,
                              std::uint64_t run_seed);

/// Unclamped, unrounded pass score before the noise term.
double sim_raw_score(const SkillBundle& bundle, const SimLandscape& landscape);

class SimEvaluator final : public Evaluator {
public:
  EvaluationResult evaluate(const SkillBundle& bundle, const TaskSpec& task, std::uint64_t run_seed) const override;
  std::string name() const override { return "sim"; }
};

/// Parses `test_id<TAB>pass|fail<TAB>message` records. Lines starting with
/// '#' are comments, except `#cost_usd<TAB>x` and `#runtime_s<TAB>x`, which
/// override the reported cost and runtime.
struct VerifierReport {
  int passed = 0;
  int failed = 0;
  std::vector<std::string> failures;
  std::optional<double> cost_usd;
  std::optional<double> runtime_s;
};
VerifierReport parse_verifier_report(std::string_view text);

struct ProcessOutcome {
  int exit_code = -1;
  bool timed_out = false;
  double elapsed_s = 0.0;
};

/// Runs `command` under /bin/sh in its own process group, killing the group
/// once `timeout_s` elapses.
ProcessOutcome run_shell(const std::string& command, double timeout_s);

/// Stores the bundle under the workspace, runs the verifier command and
/// aggregates its report. `solution` fills the "{solution}" placeholder.
EvaluationResult run_verifier(const SkillBundle& bundle, const TaskSpec& task,
                              const std::filesystem::path& solution = {});

class VerifierEvaluator final : public Evaluator {
public:
  EvaluationResult evaluate(const SkillBundle& bundle, const TaskSpec& task, std::uint64_t run_seed) const override;
  std::string name() const override { return "verifier"; }
};

/// Solver agent: sends the bundle and task to a chat model, writes the reply
/// into the workspace, then judges it with the task verifier. Cost is the
/// model spend; runtime is request latency plus verifier time.
class LlmSolverEvaluator final : public Evaluator {
public:
  explicit LlmSolverEvaluator(std::shared_ptr<ChatClient> client) : client_(std::move(client)) {}
  EvaluationResult evaluate(const SkillBundle& bundle, const TaskSpec& task, std::uint64_t run_seed) const override;
  std::string name() const override { return "llm"; }

private:
  std::shared_ptr<ChatClient> client_;
};

}  // namespace skillmoo
