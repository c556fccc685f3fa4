#include "skillmoo/bundle.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "skillmoo/error.hpp"
#include "skillmoo/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace skillmoo {

std::size_t Skill::token_estimate() const {
  return count_tokens(name) + count_tokens(description) + count_tokens(body);
}

bool Skill::content_equal(const Skill& other) const {
  return name == other.name && description == other.description && body == other.body;
}

std::string_view to_string(EditKind kind) {
  switch (kind) {
    case EditKind::Prune: return "PRUNE";
    case EditKind::Substitute: return "SUBSTITUTE";
    case EditKind::Reorder: return "REORDER";
    case EditKind::Rewrite: return "REWRITE";
    case EditKind::Expand: return "EXPAND";
  }
  return "?";
}

std::optional<EditKind> parse_edit_kind(std::string_view text) {
  std::string upper;
  for (char c : text) upper.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  for (auto k : {EditKind::Prune, EditKind::Substitute, EditKind::Reorder, EditKind::Rewrite,
                 EditKind::Expand}) {
    if (upper == to_string(k)) return k;
  }
  return std::nullopt;
}

const Skill* SkillBundle::find(std::string_view skill_id) const {
  auto it = std::find_if(skills.begin(), skills.end(),
                         [&](const Skill& s) { return s.skill_id == skill_id; });
  return it == skills.end() ? nullptr : &*it;
}

std::size_t SkillBundle::token_estimate() const {
  std::size_t n = 0;
  for (const auto& s : skills) n += s.token_estimate();
  return n;
}

std::string SkillBundle::text() const {
  std::string out;
  for (const auto& s : skills) {
    out += s.name;
    out += '\n';
    out += s.description;
    out += '\n';
    out += s.body;
    out += '\n';
  }
  return out;
}

bool SkillBundle::content_equal(const SkillBundle& other) const {
  return std::equal(skills.begin(), skills.end(), other.skills.begin(), other.skills.end(),
                    [](const Skill& a, const Skill& b) { return a.content_equal(b); });
}

std::uint64_t SkillBundle::content_hash() const {
  std::uint64_t h = fnv1a64("bundle");
  for (const auto& s : skills) {
    // Length prefixes keep field boundaries unambiguous.
    for (const std::string* field : {&s.name, &s.description, &s.body}) {
      h = fnv1a64(std::to_string(field->size()) + ":", h);
      h = fnv1a64(*field, h);
    }
  }
  return h;
}

namespace {

bool valid_skill_id(std::string_view id) {
  if (id.empty() || id == "." || id == "..") return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  });
}

std::size_t index_of(const SkillBundle& bundle, const std::string& id) {
  for (std::size_t i = 0; i < bundle.skills.size(); ++i) {
    if (bundle.skills[i].skill_id == id) return i;
  }
  throw Error(ErrorKind::UnknownTarget, "skill '" + id + "' is not in bundle '" + bundle.bundle_id + "'");
}

void require_single_target(const EditOp& op) {
  if (op.targets.size() != 1) {
    throw Error(ErrorKind::InvalidEdit, std::string(to_string(op.kind)) + " needs exactly one target, got " +
                                            std::to_string(op.targets.size()));
  }
}

}  // namespace

void validate_edit(const SkillBundle& bundle, const EditOp& op, bool allow_empty) {
  std::unordered_set<std::string> ids;
  for (const auto& s : bundle.skills) ids.insert(s.skill_id);

  switch (op.kind) {
    case EditKind::Prune: {
      require_single_target(op);
      index_of(bundle, op.targets[0]);
      if (bundle.skills.size() == 1 && !allow_empty) {
        throw Error(ErrorKind::EmptyResult, "pruning '" + op.targets[0] + "' would leave an empty bundle");
      }
      break;
    }
    case EditKind::Rewrite: {
      require_single_target(op);
      index_of(bundle, op.targets[0]);
      if (op.payload.size() != 1) throw Error(ErrorKind::InvalidEdit, "REWRITE needs one payload skill carrying the new body");
      break;
    }
    case EditKind::Substitute: {
      require_single_target(op);
      index_of(bundle, op.targets[0]);
      if (op.payload.size() != 1) throw Error(ErrorKind::InvalidEdit, "SUBSTITUTE needs exactly one payload skill");
      const auto& repl = op.payload[0].skill_id;
      if (!repl.empty()) {
        if (!valid_skill_id(repl)) throw Error(ErrorKind::InvalidEdit, "invalid skill id '" + repl + "'");
        if (repl != op.targets[0] && ids.count(repl)) {
          throw Error(ErrorKind::DuplicateSkillId, "replacement id '" + repl + "' already in bundle");
        }
      }
      break;
    }
    case EditKind::Reorder: {
      if (op.order.size() != bundle.skills.size()) {
        throw Error(ErrorKind::InvalidPermutation, "REORDER lists " + std::to_string(op.order.size()) +
                                                       " ids for a bundle of " + std::to_string(bundle.skills.size()));
      }
      std::unordered_set<std::string> seen;
      for (const auto& id : op.order) {
        if (!ids.count(id) || !seen.insert(id).second) {
          throw Error(ErrorKind::InvalidPermutation, "REORDER payload is not a permutation (at '" + id + "')");
        }
      }
      break;
    }
    case EditKind::Expand: {
      if (!op.targets.empty()) throw Error(ErrorKind::InvalidEdit, "EXPAND takes no targets");
      if (op.payload.empty()) throw Error(ErrorKind::InvalidEdit, "EXPAND needs at least one new skill");
      for (const auto& s : op.payload) {
        if (!valid_skill_id(s.skill_id)) throw Error(ErrorKind::InvalidEdit, "invalid skill id '" + s.skill_id + "'");
        if (!ids.insert(s.skill_id).second) {
          throw Error(ErrorKind::DuplicateSkillId, "skill id '" + s.skill_id + "' already in bundle");
        }
      }
      break;
    }
  }
}

SkillBundle apply_edit(const SkillBundle& bundle, const EditOp& op, const ApplyOptions& options) {
  validate_edit(bundle, op, options.allow_empty);

  SkillBundle child;
  child.skills = bundle.skills;
  switch (op.kind) {
    case EditKind::Prune:
      child.skills.erase(child.skills.begin() + static_cast<std::ptrdiff_t>(index_of(bundle, op.targets[0])));
      break;
    case EditKind::Rewrite:
      child.skills[index_of(bundle, op.targets[0])].body = op.payload[0].body;
      break;
    case EditKind::Substitute: {
      auto i = index_of(bundle, op.targets[0]);
      Skill repl = op.payload[0];
      if (repl.skill_id.empty()) repl.skill_id = op.targets[0];
      child.skills[i] = std::move(repl);
      break;
    }
    case EditKind::Reorder: {
      std::vector<Skill> reordered;
      reordered.reserve(op.order.size());
      for (const auto& id : op.order) reordered.push_back(bundle.skills[index_of(bundle, id)]);
      child.skills = std::move(reordered);
      break;
    }
    case EditKind::Expand:
      child.skills.insert(child.skills.end(), op.payload.begin(), op.payload.end());
      break;
  }

  if (options.child_id) {
    child.bundle_id = *options.child_id;
  } else {
    child.bundle_id = "b-" + hex64(fnv1a64(json(op).dump(), fnv1a64(bundle.bundle_id)));
  }
  child.lineage = Lineage{bundle.bundle_id, bundle.generation() + 1, op};
  return child;
}

std::vector<EditOp> diff_bundles(const SkillBundle& parent, const SkillBundle& child) {
  std::vector<EditOp> ops;
  std::unordered_map<std::string, const Skill*> child_by_id;
  for (const auto& s : child.skills) child_by_id[s.skill_id] = &s;

  std::vector<std::string> order_after;  // parent ids that survive, then appended ids
  EditOp expand{EditKind::Expand, {}, {}, {}, "add skills"};
  for (const auto& s : child.skills) {
    if (!parent.find(s.skill_id)) expand.payload.push_back(s);
  }
  if (!expand.payload.empty()) ops.push_back(expand);

  for (const auto& s : parent.skills) {
    if (!child_by_id.count(s.skill_id)) {
      ops.push_back(EditOp{EditKind::Prune, {s.skill_id}, {}, {}, "remove skill"});
    } else {
      order_after.push_back(s.skill_id);
    }
  }

  for (const auto& s : parent.skills) {
    auto it = child_by_id.find(s.skill_id);
    if (it == child_by_id.end()) continue;
    const Skill& c = *it->second;
    if (c.name != s.name || c.description != s.description) {
      ops.push_back(EditOp{EditKind::Substitute, {s.skill_id}, {c}, {}, "replace skill"});
    } else if (c.body != s.body) {
      Skill body_only;
      body_only.body = c.body;
      ops.push_back(EditOp{EditKind::Rewrite, {s.skill_id}, {body_only}, {}, "rewrite skill body"});
    }
  }

  for (const auto& s : expand.payload) order_after.push_back(s.skill_id);
  std::vector<std::string> target_order;
  for (const auto& s : child.skills) target_order.push_back(s.skill_id);
  if (order_after != target_order) {
    ops.push_back(EditOp{EditKind::Reorder, {}, {}, target_order, "reorder skills"});
  }
  return ops;
}

// ---- SKILL.md -------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// Reads one line starting at `pos`; advances past the newline. Strips a trailing '\r'.
std::optional<std::string_view> next_line(std::string_view text, std::size_t& pos) {
  if (pos >= text.size()) return std::nullopt;
  auto nl = text.find('\n', pos);
  std::string_view line = nl == std::string_view::npos ? text.substr(pos) : text.substr(pos, nl - pos);
  pos = nl == std::string_view::npos ? text.size() : nl + 1;
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, std::string_view content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + p.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

}  // namespace

Skill parse_skill_md(std::string_view text, std::string skill_id) {
  std::size_t pos = 0;
  auto first = next_line(text, pos);
  if (!first || trim(*first) != "---") {
    throw Error(ErrorKind::MalformedManifest, "SKILL.md for '" + skill_id + "' lacks a '---' frontmatter block");
  }
  Skill skill;
  skill.skill_id = std::move(skill_id);
  bool closed = false;
  bool have_name = false;
  while (auto line = next_line(text, pos)) {
    if (trim(*line) == "---") {
      closed = true;
      break;
    }
    auto colon = line->find(':');
    if (colon == std::string_view::npos) continue;
    auto key = trim(line->substr(0, colon));
    auto value = trim(line->substr(colon + 1));
    if (key == "name") {
      skill.name = value;
      have_name = true;
    } else if (key == "description") {
      skill.description = value;
    }
  }
  if (!closed) throw Error(ErrorKind::MalformedManifest, "unterminated frontmatter in SKILL.md for '" + skill.skill_id + "'");
  if (!have_name) throw Error(ErrorKind::MalformedManifest, "SKILL.md for '" + skill.skill_id + "' has no name");
  skill.body = std::string(text.substr(pos));
  return skill;
}

std::string render_skill_md(const Skill& skill) {
  for (const std::string* field : {&skill.name, &skill.description}) {
    if (field->find('\n') != std::string::npos) {
      throw Error(ErrorKind::InvalidArgument, "skill '" + skill.skill_id + "' has a multi-line name or description");
    }
  }
  return "---\nname: " + skill.name + "\ndescription: " + skill.description + "\n---\n" + skill.body;
}

SkillBundle load_bundle(const fs::path& dir) {
  auto manifest_path = dir / "manifest.json";
  if (!fs::is_regular_file(manifest_path)) {
    throw Error(ErrorKind::MalformedManifest, "no manifest.json in " + dir.string());
  }
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::MalformedManifest, manifest_path.string() + ": " + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("skills") || !manifest["skills"].is_array()) {
    throw Error(ErrorKind::MalformedManifest, manifest_path.string() + ": expected {\"bundle_id\", \"skills\": [...]}");
  }

  SkillBundle bundle;
  if (manifest.contains("bundle_id") && manifest["bundle_id"].is_string()) {
    bundle.bundle_id = manifest["bundle_id"].get<std::string>();
  } else {
    bundle.bundle_id = dir.filename().string();
  }

  std::set<std::string> seen;
  for (const auto& entry : manifest["skills"]) {
    if (!entry.is_string()) throw Error(ErrorKind::MalformedManifest, "skills entries must be strings");
    auto id = entry.get<std::string>();
    if (!valid_skill_id(id)) throw Error(ErrorKind::MalformedManifest, "invalid skill directory name '" + id + "'");
    if (!seen.insert(id).second) throw Error(ErrorKind::DuplicateSkillId, "manifest lists '" + id + "' twice");
    auto skill_md = dir / id / "SKILL.md";
    if (!fs::is_regular_file(skill_md)) {
      throw Error(ErrorKind::MissingSkillFile, skill_md.string() + " does not exist");
    }
    bundle.skills.push_back(parse_skill_md(read_file(skill_md), id));
  }
  return bundle;
}

void store_bundle(const SkillBundle& bundle, const fs::path& dir) {
  std::set<std::string> seen;
  json ids = json::array();
  for (const auto& s : bundle.skills) {
    if (!valid_skill_id(s.skill_id)) throw Error(ErrorKind::InvalidArgument, "invalid skill id '" + s.skill_id + "'");
    if (!seen.insert(s.skill_id).second) throw Error(ErrorKind::DuplicateSkillId, "duplicate skill id '" + s.skill_id + "'");
    ids.push_back(s.skill_id);
  }
  fs::create_directories(dir);
  for (const auto& s : bundle.skills) {
    fs::create_directories(dir / s.skill_id);
    write_file(dir / s.skill_id / "SKILL.md", render_skill_md(s));
  }
  json manifest{{"bundle_id", bundle.bundle_id}, {"skills", ids}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

// ---- JSON -----------------------------------------------------------------

void to_json(json& j, const Skill& s) {
  j = json{{"skill_id", s.skill_id}, {"name", s.name}, {"description", s.description}, {"body", s.body}};
}

void from_json(const json& j, Skill& s) {
  s.skill_id = j.value("skill_id", std::string{});
  s.name = j.value("name", std::string{});
  s.description = j.value("description", std::string{});
  s.body = j.value("body", std::string{});
}

void to_json(json& j, const EditOp& op) {
  j = json{{"kind", to_string(op.kind)},
           {"targets", op.targets},
           {"payload", op.payload},
           {"order", op.order},
           {"description", op.description}};
}

void from_json(const json& j, EditOp& op) {
  auto kind = parse_edit_kind(j.at("kind").get<std::string>());
  if (!kind) throw Error(ErrorKind::InvalidEdit, "unknown edit kind " + j.at("kind").dump());
  op.kind = *kind;
  op.targets = j.value("targets", std::vector<std::string>{});
  op.payload = j.value("payload", std::vector<Skill>{});
  op.order = j.value("order", std::vector<std::string>{});
  op.description = j.value("description", std::string{});
}

}  // namespace skillmoo
