#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "skillmoo/bundle.hpp"
#include "skillmoo/evaluation.hpp"
#include "skillmoo/moo.hpp"
#include "skillmoo/proposer.hpp"

namespace skillmoo {

enum class CandidateStatus { Accepted, RejectedGuard };
std::string_view to_string(CandidateStatus status);

struct Candidate {
  std::string id;
  SkillBundle bundle;
  EvaluationResult result;
  ObjectiveVector objective;
  int generation = 0;
  long arrival_index = 0;
  CandidateStatus status = CandidateStatus::Accepted;
  std::optional<std::string> parent_id;
};

/// Append-only candidate store with the Pareto front of accepted members.
class Archive {
public:
  /// Appends and recomputes the front. Returns the new arrival index.
  long append(Candidate candidate);

  const std::vector<Candidate>& candidates() const { return candidates_; }
  std::size_t size() const { return candidates_.size(); }
  bool empty() const { return candidates_.empty(); }
  const Candidate& at(std::size_t i) const { return candidates_.at(i); }
  const Candidate* find(std::string_view id) const;

  /// Accepted candidates still eligible as parents (all of them unless trimmed).
  std::vector<std::size_t> pool() const;
  /// Indices of the non-dominated members of pool(), in arrival order.
  const std::vector<std::size_t>& pareto_front() const { return front_; }

  /// Restricts pool() to the NSGA-II survivors when it exceeds `cap`.
  /// Returns the ids removed from the pool.
  std::vector<std::string> trim_pool(std::size_t cap);

private:
  void recompute_front();

  std::vector<Candidate> candidates_;
  std::vector<bool> in_pool_;
  std::vector<std::size_t> front_;
};

/// REJECTED_GUARD iff the child's pass rate is more than `threshold` below the parent's.
CandidateStatus guard(const Candidate& parent, const EvaluationResult& child, double threshold);

/// Best accepted front member by (max pass, min cost, min runtime, min arrival).
const Candidate& select_parent(const Archive& archive);
const Candidate& final_selection(const Archive& archive);

enum class ParentPolicy { Best, Chain };

struct SearchConfig {
  int generations = 5;  // generation 0 seed evaluation plus generations - 1 edit steps
  int population = 1;
  double guard_drop_threshold = 0.05;
  std::uint64_t seed = 0;
  ParentPolicy parent_policy = ParentPolicy::Best;
  std::optional<std::size_t> archive_cap;
  int jobs = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const SearchConfig& c);

/// Receives every event and accepted/rejected candidate as the run goes.
class RunSink {
public:
  virtual ~RunSink() = default;
  virtual void event(const nlohmann::json& ev) = 0;
  virtual void candidate(const Candidate& c) = 0;
};

struct GenerationStat {
  int generation = 0;
  double hypervolume = 0.0;
  double best_pass = 0.0;
  double best_cost = 0.0;
  std::size_t front_size = 0;
  int accepted = 0;
  int rejected = 0;
};

struct RunRecord {
  Archive archive;
  std::string final_id;
  OptimizerSkill optimizer_skill;
  std::vector<nlohmann::json> events;
  int proposal_count = 0;
  double opt_cost_usd = 0.0;     // generations >= 1: child evaluations plus proposals
  double opt_runtime_s = 0.0;
  double cost_ceiling = 1.0;     // kCostReferenceMargin x max cost over archived candidates
  std::vector<GenerationStat> trajectory;

  const Candidate& final_candidate() const { return *archive.find(final_id); }
};

struct RunOptions {
  bool canonical_timestamps = false;
  OptimizerSkill optimizer_skill = default_optimizer_skill();
};

/// Default HV cost reference sits this far beyond the largest observed cost,
/// so the costliest front point still encloses some area.
inline constexpr double kCostReferenceMargin = 1.1;

inline constexpr std::string_view kCanonicalTimestamp = "1970-01-01T00:00:00.000Z";

/// The generation loop: evaluate the seed, then for each later generation
/// pick a parent, propose edits, evaluate children, apply the guard and
/// archive them. Finishes with the final lexicographic selection.
RunRecord run_search(const TaskSpec& task, const SkillBundle& seed_bundle, const SearchConfig& config,
                     const Evaluator& evaluator, const Proposer& proposer, RunSink* sink = nullptr,
                     const RunOptions& options = {});

/// Hypervolume of the accepted front restricted to generations <= max_generation.
double archive_hypervolume(const Archive& archive, int max_generation, double cost_ceiling);

/// Rewrites every "ts" field to kCanonicalTimestamp, line by line.
std::string canonicalize_events(std::string_view jsonl);

}  // namespace skillmoo
