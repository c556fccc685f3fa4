#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "skillmoo/bundle.hpp"

namespace skillmoo {

class ChatClient;

/// Prompt text that steers edit proposals; versioned per generation.
struct OptimizerSkill {
  int version = 0;
  std::string text;
};

OptimizerSkill default_optimizer_skill();

/// Maximum number of history notes kept in the optimizer skill.
inline constexpr std::size_t kOptimizerHistoryLimit = 20;

/// Appends `note` under the "## Edit history" heading, keeping only the most
/// recent kOptimizerHistoryLimit notes.
std::string append_history_note(std::string_view skill_text, std::string_view note);

struct FailureEvidence {
  std::vector<std::string> error_traces;
  double pass_rate = 0.0;
  int tests_passed = 0;
  int tests_total = 0;
  double cost_usd = 0.0;
  double runtime_s = 0.0;
  int generation = 0;
  // Earlier bundles on the parent's lineage, nearest first.
  std::vector<SkillBundle> ancestors;
};

struct EditProposal {
  EditOp op;
  std::string rationale;
  std::optional<std::string> optimizer_skill_update;
  // Spend incurred producing this proposal (not part of the wire format).
  double cost_usd = 0.0;
  double latency_s = 0.0;

  friend bool operator==(const EditProposal&, const EditProposal&) = default;
};

class Proposer {
public:
  virtual ~Proposer() = default;
  /// Returns a proposal whose op already validates against `parent`.
  virtual EditProposal propose(const OptimizerSkill& skill, const SkillBundle& parent,
                               const FailureEvidence& evidence, std::uint64_t rng_seed) const = 0;
  virtual std::string name() const = 0;
};

/// Words the failure traces point at: quoted terms when present, otherwise
/// every content word.
std::set<std::string> evidence_keywords(const std::vector<std::string>& traces);

/// Number of the skill's words that appear in `keywords`.
std::size_t evidence_hits(const Skill& skill, const std::set<std::string>& keywords);

/// First floor(n/2) whitespace tokens of `body`, original spacing kept.
std::string truncate_to_first_half(std::string_view body);

struct RuleProposerConfig {
  // Draw weights, in order PRUNE, REWRITE, REORDER, SUBSTITUTE.
  std::array<double, 4> weights{0.55, 0.15, 0.15, 0.15};
};

/// Deterministic heuristic proposer with a pruning bias.
class RuleProposer final : public Proposer {
public:
  explicit RuleProposer(RuleProposerConfig config = {}) : config_(config) {}
  EditProposal propose(const OptimizerSkill& skill, const SkillBundle& parent, const FailureEvidence& evidence,
                       std::uint64_t rng_seed) const override;
  std::string name() const override { return "rule"; }

private:
  RuleProposerConfig config_;
};

// ---- wire protocol ----------------------------------------------------------

/// Renders the ```proposal fenced block (see PROTOCOL.md).
std::string render_proposal(const EditProposal& proposal);

/// Extracts the first ```proposal block. Throws ParseError.
EditProposal parse_proposal(std::string_view text);

std::string default_prompt_template();
std::string operations_help();
std::string render_bundle_for_prompt(const SkillBundle& bundle);
std::string render_evidence(const FailureEvidence& evidence);

/// Substitutes {{optimizer_skill}}, {{bundle_render}}, {{evidence}} and {{operations_help}}.
std::string render_prompt(std::string_view templ, const OptimizerSkill& skill, const SkillBundle& bundle,
                          const FailureEvidence& evidence);

/// Chat-model proposer: one request, one validating retry.
class LlmProposer final : public Proposer {
public:
  LlmProposer(std::shared_ptr<ChatClient> client, std::string prompt_template = default_prompt_template());
  EditProposal propose(const OptimizerSkill& skill, const SkillBundle& parent, const FailureEvidence& evidence,
                       std::uint64_t rng_seed) const override;
  std::string name() const override { return "llm"; }

private:
  std::shared_ptr<ChatClient> client_;
  std::string template_;
};

}  // namespace skillmoo
