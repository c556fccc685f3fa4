#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace skillmoo {

/// One skill: a named block of instruction text.
struct Skill {
  std::string skill_id;
  std::string name;
  std::string description;
  std::string body;

  /// Whitespace-delimited token count over name, description and body.
  std::size_t token_estimate() const;

  /// Ordered (name, description, body) equality; skill_id is not compared.
  bool content_equal(const Skill& other) const;

  friend bool operator==(const Skill&, const Skill&) = default;
};

enum class EditKind { Prune, Substitute, Reorder, Rewrite, Expand };

std::string_view to_string(EditKind kind);
std::optional<EditKind> parse_edit_kind(std::string_view text);

/// A single bundle operation.
///
/// PRUNE and REWRITE name one target. SUBSTITUTE names one target and
/// carries one replacement skill in `payload`. REORDER carries the full
/// new id order in `order`. EXPAND carries new skills in `payload` and no
/// targets. REWRITE takes the body of `payload[0]`.
struct EditOp {
  EditKind kind = EditKind::Prune;
  std::vector<std::string> targets;
  std::vector<Skill> payload;
  std::vector<std::string> order;
  std::string description;

  friend bool operator==(const EditOp&, const EditOp&) = default;
};

struct Lineage {
  std::string parent_id;
  int generation = 0;
  EditOp op;

  friend bool operator==(const Lineage&, const Lineage&) = default;
};

struct SkillBundle {
  std::string bundle_id;
  std::vector<Skill> skills;
  std::optional<Lineage> lineage;

  int generation() const { return lineage ? lineage->generation : 0; }
  const Skill* find(std::string_view skill_id) const;
  std::size_t token_estimate() const;

  /// All skill text concatenated in bundle order.
  std::string text() const;

  /// Compares ordered (name, description, body) triples; ids and lineage ignored.
  bool content_equal(const SkillBundle& other) const;

  /// Stable hash of the ordered skill content.
  std::uint64_t content_hash() const;
};

struct ApplyOptions {
  std::optional<std::string> child_id;
  bool allow_empty = false;
};

/// Checks `op` against `bundle` and throws Error on any violation.
void validate_edit(const SkillBundle& bundle, const EditOp& op, bool allow_empty = false);

/// Returns the edited child; `bundle` is left untouched.
SkillBundle apply_edit(const SkillBundle& bundle, const EditOp& op, const ApplyOptions& options = {});

/// Ops that turn `parent` into a bundle content-equal to `child` when applied
/// in order: EXPAND, PRUNE, SUBSTITUTE (same id, changed name or description),
/// REWRITE (body only), REORDER.
std::vector<EditOp> diff_bundles(const SkillBundle& parent, const SkillBundle& child);

// On-disk format: manifest.json plus one <skill_id>/SKILL.md per skill.
SkillBundle load_bundle(const std::filesystem::path& dir);
void store_bundle(const SkillBundle& bundle, const std::filesystem::path& dir);

Skill parse_skill_md(std::string_view text, std::string skill_id);
std::string render_skill_md(const Skill& skill);

void to_json(nlohmann::json& j, const Skill& s);
void from_json(const nlohmann::json& j, Skill& s);
void to_json(nlohmann::json& j, const EditOp& op);
void from_json(const nlohmann::json& j, EditOp& op);

}  // namespace skillmoo
