#include "skillmoo/proposer.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <sstream>

#include "json.hpp"
#include "skillmoo/error.hpp"
#include "skillmoo/llm_client.hpp"
#include "skillmoo/util.hpp"

using nlohmann::json;

namespace skillmoo {

namespace {
constexpr std::string_view kHistoryHeading = "## Edit history";
}

OptimizerSkill default_optimizer_skill() {
  return OptimizerSkill{0,
                        "# Skill optimizer\n"
                        "Improve the bundle's test pass rate first and its inference cost second.\n"
                        "Prefer removing guidance the failures never touch over adding new text.\n"
                        "Replace a skill only when the failures show it is misaligned with the task.\n"
                        "Propose exactly one operation per step.\n"
                        "\n"
                        "## Edit history\n"};
}

std::string append_history_note(std::string_view skill_text, std::string_view note) {
  std::string head;
  std::vector<std::string> history;
  auto at = skill_text.find(kHistoryHeading);
  if (at == std::string_view::npos) {
    head = std::string(skill_text);
    if (!head.empty() && head.back() != '\n') head += '\n';
    if (!head.empty()) head += '\n';
  } else {
    head = std::string(skill_text.substr(0, at));
    std::istringstream rest{std::string(skill_text.substr(at + kHistoryHeading.size()))};
    for (std::string line; std::getline(rest, line);) {
      if (!line.empty()) history.push_back(line);
    }
  }
  history.push_back("- " + std::string(note));
  if (history.size() > kOptimizerHistoryLimit) {
    history.erase(history.begin(), history.end() - static_cast<std::ptrdiff_t>(kOptimizerHistoryLimit));
  }
  std::string out = head + std::string(kHistoryHeading) + "\n";
  for (const auto& h : history) out += h + "\n";
  return out;
}

// ---- evidence ---------------------------------------------------------------

std::set<std::string> evidence_keywords(const std::vector<std::string>& traces) {
  static const std::set<std::string> kStop = {
      "the",    "and",    "for",     "with",    "from",     "that",    "this",     "was",   "were",  "not",
      "but",    "are",    "has",     "have",    "had",      "its",     "into",     "than",  "test",  "tests",
      "fail",   "failed", "failure", "failing", "error",    "errors",  "expected", "got",   "missing",
      "guidance", "diluted", "excess", "tokens", "intermittent", "without", "result", "reported", "timed",
      "out",    "after",  "verifier", "assert", "assertion"};

  std::set<std::string> quoted;
  for (const auto& t : traces) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      char q = t[i];
      if (q != '\'' && q != '"' && q != '`') continue;
      // Only an opening quote that starts a word.
      if (i > 0 && std::isalnum(static_cast<unsigned char>(t[i - 1]))) continue;
      auto close = t.find(q, i + 1);
      if (close == std::string::npos) break;
      for (auto tok : split_tokens(std::string_view(t).substr(i + 1, close - i - 1))) {
        auto w = normalize_word(tok);
        if (!w.empty()) quoted.insert(std::move(w));
      }
      i = close;
    }
  }
  if (!quoted.empty()) return quoted;

  std::set<std::string> words;
  for (const auto& t : traces) {
    for (auto tok : split_tokens(t)) {
      auto w = normalize_word(tok);
      if (w.size() < 3 || kStop.count(w)) continue;
      if (std::all_of(w.begin(), w.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)) || c == '_'; })) {
        continue;
      }
      if (w.rfind("test_", 0) == 0) continue;
      words.insert(std::move(w));
    }
  }
  return words;
}

std::size_t evidence_hits(const Skill& skill, const std::set<std::string>& keywords) {
  std::size_t hits = 0;
  for (const std::string* field : {&skill.name, &skill.description, &skill.body}) {
    for (auto tok : split_tokens(*field)) {
      if (keywords.count(normalize_word(tok))) ++hits;
    }
  }
  return hits;
}

std::string truncate_to_first_half(std::string_view body) {
  auto tokens = split_tokens(body);
  std::size_t keep = tokens.size() / 2;
  if (keep == 0) return "";
  const auto& last = tokens[keep - 1];
  auto end = static_cast<std::size_t>(last.data() - body.data()) + last.size();
  return std::string(body.substr(0, end));
}

// ---- rule proposer ----------------------------------------------------------

namespace {

struct Relevance {
  std::size_t index;
  std::size_t hits;
  std::size_t tokens;
};

std::vector<Relevance> relevance_table(const SkillBundle& bundle, const std::set<std::string>& keywords) {
  std::vector<Relevance> table;
  for (std::size_t i = 0; i < bundle.skills.size(); ++i) {
    table.push_back({i, evidence_hits(bundle.skills[i], keywords), bundle.skills[i].token_estimate()});
  }
  return table;
}

// Least relevant first: fewest hits per token, then longest, then earliest.
std::vector<Relevance> least_relevant_first(std::vector<Relevance> table) {
  std::stable_sort(table.begin(), table.end(), [](const Relevance& a, const Relevance& b) {
    // hits_a / max(1,tok_a) < hits_b / max(1,tok_b) without division
    auto lhs = a.hits * std::max<std::size_t>(1, b.tokens);
    auto rhs = b.hits * std::max<std::size_t>(1, a.tokens);
    if (lhs != rhs) return lhs < rhs;
    return a.tokens > b.tokens;
  });
  return table;
}

const Skill* lineage_version(const Skill& current, const FailureEvidence& evidence) {
  for (const auto& ancestor : evidence.ancestors) {
    if (const Skill* old = ancestor.find(current.skill_id); old && !old->content_equal(current)) return old;
  }
  return nullptr;
}

std::optional<EditProposal> try_kind(EditKind kind, const SkillBundle& parent, const FailureEvidence& evidence,
                                     const std::set<std::string>& keywords) {
  const auto table = relevance_table(parent, keywords);
  const auto ranked = least_relevant_first(table);
  EditProposal p;
  p.op.kind = kind;

  switch (kind) {
    case EditKind::Prune: {
      if (parent.skills.size() < 2) return std::nullopt;
      const auto& r = ranked.front();
      const auto& s = parent.skills[r.index];
      p.op.targets = {s.skill_id};
      p.op.description = "Bundle pruning (remove skill blocks)";
      p.rationale = "skill '" + s.skill_id + "' has the fewest evidence hits per token (" + std::to_string(r.hits) +
                    " hits / " + std::to_string(r.tokens) + " tokens)";
      return p;
    }
    case EditKind::Rewrite: {
      for (const auto& r : ranked) {
        const auto& s = parent.skills[r.index];
        if (count_tokens(s.body) < 2) continue;
        Skill body_only;
        body_only.body = truncate_to_first_half(s.body);
        p.op.targets = {s.skill_id};
        p.op.payload = {body_only};
        p.op.description = "Rewrite skill body (truncate to first half)";
        p.rationale = "halve the least relevant body of '" + s.skill_id + "' (" + std::to_string(r.hits) + " hits / " +
                      std::to_string(r.tokens) + " tokens)";
        return p;
      }
      return std::nullopt;
    }
    case EditKind::Reorder: {
      if (parent.skills.size() < 2) return std::nullopt;
      auto best = std::max_element(table.begin(), table.end(),
                                   [](const Relevance& a, const Relevance& b) { return a.hits < b.hits; });
      if (best->hits == 0 || best->index == 0) return std::nullopt;
      const auto& s = parent.skills[best->index];
      p.op.order.push_back(s.skill_id);
      for (const auto& other : parent.skills) {
        if (other.skill_id != s.skill_id) p.op.order.push_back(other.skill_id);
      }
      p.op.description = "Bundle reorder (most relevant skill first)";
      p.rationale = "'" + s.skill_id + "' matches the most evidence keywords (" + std::to_string(best->hits) + ")";
      return p;
    }
    case EditKind::Substitute: {
      for (const auto& r : ranked) {
        const auto& s = parent.skills[r.index];
        if (const Skill* old = lineage_version(s, evidence)) {
          p.op.targets = {s.skill_id};
          p.op.payload = {*old};
          p.op.description = "Bundle substitution (swap skill blocks)";
          p.rationale = "restore the earlier version of '" + s.skill_id + "' from the lineage";
          return p;
        }
      }
      return std::nullopt;
    }
    case EditKind::Expand:
      return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace

EditProposal RuleProposer::propose(const OptimizerSkill& skill, const SkillBundle& parent,
                                   const FailureEvidence& evidence, std::uint64_t rng_seed) const {
  if (parent.skills.empty()) throw Error(ErrorKind::NoValidOperation, "parent bundle has no skills");

  static constexpr std::array<EditKind, 4> kKinds{EditKind::Prune, EditKind::Rewrite, EditKind::Reorder,
                                                  EditKind::Substitute};
  std::mt19937_64 rng(rng_seed);
  double total = 0.0;
  for (double w : config_.weights) total += w;
  // Raw engine output keeps the draw identical across standard libraries.
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * total;
  std::size_t drawn = 0;
  for (double acc = config_.weights[0]; drawn + 1 < kKinds.size() && u >= acc; acc += config_.weights[++drawn]) {
  }

  const auto keywords = evidence_keywords(evidence.error_traces);
  std::vector<EditKind> attempts{kKinds[drawn], EditKind::Rewrite, EditKind::Prune, EditKind::Reorder,
                                 EditKind::Substitute};
  for (auto kind : attempts) {
    auto proposal = try_kind(kind, parent, evidence, keywords);
    if (!proposal) continue;
    validate_edit(parent, proposal->op);
    std::string note = "gen " + std::to_string(evidence.generation) + ": " + std::string(to_string(kind));
    if (!proposal->op.targets.empty()) note += " " + proposal->op.targets.front();
    note += " (" + proposal->rationale + ")";
    proposal->optimizer_skill_update = append_history_note(skill.text, note);
    return *proposal;
  }
  throw Error(ErrorKind::NoValidOperation, "no operation applies to bundle '" + parent.bundle_id + "'");
}

// ---- wire protocol ----------------------------------------------------------

std::string render_proposal(const EditProposal& proposal) {
  const auto& op = proposal.op;
  json block{{"operation", to_string(op.kind)}, {"targets", op.targets}};
  if (op.kind == EditKind::Reorder) {
    block["payload"] = op.order;
  } else {
    block["payload"] = op.payload;
  }
  block["description"] = op.description;
  block["rationale"] = proposal.rationale;
  if (proposal.optimizer_skill_update) block["optimizer_skill_update"] = *proposal.optimizer_skill_update;
  return "```proposal\n" + block.dump(2) + "\n```\n";
}

namespace {

std::string slugify(std::string_view name) {
  std::string out;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!out.empty() && out.back() != '-') {
      out.push_back('-');
    }
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out.empty() ? "skill" : out;
}

Skill skill_from_payload(const json& j, std::size_t offset) {
  Skill s;
  if (j.is_string()) {
    s.body = j.get<std::string>();
    return s;
  }
  if (!j.is_object()) throw ParseError(offset, "payload skills must be objects with name/description/body");
  for (const char* key : {"skill_id", "name", "description", "body"}) {
    if (j.contains(key) && !j[key].is_string()) throw ParseError(offset, std::string("payload '") + key + "' must be a string");
  }
  s.skill_id = j.value("skill_id", std::string{});
  s.name = j.value("name", std::string{});
  s.description = j.value("description", std::string{});
  s.body = j.value("body", std::string{});
  return s;
}

std::string default_description(EditKind kind) {
  switch (kind) {
    case EditKind::Prune: return "Bundle pruning (remove skill blocks)";
    case EditKind::Substitute: return "Bundle substitution (swap skill blocks)";
    case EditKind::Reorder: return "Bundle reorder";
    case EditKind::Rewrite: return "Rewrite skill body";
    case EditKind::Expand: return "Bundle expansion (add skill blocks)";
  }
  return "";
}

}  // namespace

EditProposal parse_proposal(std::string_view text) {
  // Opening fence: a line consisting of ``` followed by the label "proposal".
  std::size_t search = 0;
  std::size_t fence = std::string_view::npos;
  while ((search = text.find("```", search)) != std::string_view::npos) {
    bool at_line_start = search == 0 || text[search - 1] == '\n';
    auto eol = text.find('\n', search);
    auto label = text.substr(search + 3, (eol == std::string_view::npos ? text.size() : eol) - search - 3);
    while (!label.empty() && std::isspace(static_cast<unsigned char>(label.back()))) label.remove_suffix(1);
    while (!label.empty() && std::isspace(static_cast<unsigned char>(label.front()))) label.remove_prefix(1);
    if (at_line_start && label == "proposal") {
      fence = search;
      break;
    }
    search += 3;
  }
  if (fence == std::string_view::npos) throw ParseError(0, "no ```proposal fenced block found");

  auto content_start = text.find('\n', fence);
  if (content_start == std::string_view::npos) throw ParseError(fence, "proposal block is not terminated");
  ++content_start;
  std::size_t content_end = std::string_view::npos;
  for (std::size_t pos = content_start; pos < text.size();) {
    if (text.compare(pos, 3, "```") == 0) {
      content_end = pos;
      break;
    }
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  if (content_end == std::string_view::npos) throw ParseError(fence, "proposal block is not terminated");

  auto content = text.substr(content_start, content_end - content_start);
  json block;
  try {
    block = json::parse(content);
  } catch (const json::parse_error& e) {
    auto at = content_start + (e.byte > 0 ? e.byte - 1 : 0);
    throw ParseError(at, std::string("proposal block is not valid JSON: ") + e.what());
  }
  if (!block.is_object()) throw ParseError(content_start, "proposal block must be a JSON object");
  if (!block.contains("operation")) throw ParseError(content_start, "missing 'operation' key");
  if (!block["operation"].is_string()) throw ParseError(content_start, "'operation' must be a string");
  auto kind = parse_edit_kind(block["operation"].get<std::string>());
  if (!kind) throw ParseError(content_start, "unknown operation '" + block["operation"].get<std::string>() + "'");

  EditProposal p;
  p.op.kind = *kind;
  if (block.contains("targets")) {
    const auto& t = block["targets"];
    if (t.is_string()) {
      p.op.targets = {t.get<std::string>()};
    } else if (t.is_array() && std::all_of(t.begin(), t.end(), [](const json& x) { return x.is_string(); })) {
      p.op.targets = t.get<std::vector<std::string>>();
    } else {
      throw ParseError(content_start, "'targets' must be a string or a list of strings");
    }
  }

  const json payload = block.value("payload", json());
  if (*kind == EditKind::Reorder) {
    if (!payload.is_array() || !std::all_of(payload.begin(), payload.end(), [](const json& x) { return x.is_string(); })) {
      throw ParseError(content_start, "REORDER payload must be the list of skill ids in their new order");
    }
    p.op.order = payload.get<std::vector<std::string>>();
  } else if (!payload.is_null()) {
    if (payload.is_array()) {
      for (const auto& item : payload) p.op.payload.push_back(skill_from_payload(item, content_start));
    } else {
      p.op.payload.push_back(skill_from_payload(payload, content_start));
    }
  }
  if (*kind == EditKind::Expand) {
    for (auto& s : p.op.payload) {
      if (s.skill_id.empty()) s.skill_id = slugify(s.name);
    }
  }

  for (const char* key : {"rationale", "description", "optimizer_skill_update"}) {
    if (block.contains(key) && !block[key].is_string()) {
      throw ParseError(content_start, std::string("'") + key + "' must be a string");
    }
  }
  p.rationale = block.value("rationale", std::string{});
  p.op.description = block.contains("description") ? block["description"].get<std::string>() : default_description(*kind);
  if (block.contains("optimizer_skill_update")) p.optimizer_skill_update = block["optimizer_skill_update"].get<std::string>();
  return p;
}

// ---- prompts ----------------------------------------------------------------

std::string default_prompt_template() {
  return R"TPL(You are the skill optimizer agent. A solver agent ran a coding task with the
skill bundle below and was judged by an automatic test suite. Propose one edit
to the bundle that raises the pass rate, or keeps it while lowering cost.

# Optimizer skill
{{optimizer_skill}}

# Current bundle
{{bundle_render}}

# Failure evidence
{{evidence}}

# Operations
{{operations_help}}

Reply with exactly one fenced block labeled `proposal` that contains a JSON
object, for example:

```proposal
{
  "operation": "PRUNE",
  "targets": ["skill-id"],
  "payload": [],
  "description": "Bundle pruning (remove skill blocks)",
  "rationale": "why this edit addresses the failures",
  "optimizer_skill_update": "full revised optimizer skill text (optional)"
}
```
)TPL";
}

std::string operations_help() {
  return "- PRUNE: remove one skill. targets = [id], payload = [].\n"
         "- SUBSTITUTE: replace one skill. targets = [id], payload = [{\"skill_id\", \"name\", \"description\", \"body\"}].\n"
         "- REORDER: change skill order. targets = [], payload = every skill id in the new order.\n"
         "- REWRITE: replace one skill's body. targets = [id], payload = [{\"body\": \"...\"}].\n"
         "- EXPAND: append new skills. targets = [], payload = [{\"skill_id\", \"name\", \"description\", \"body\"}, ...].\n";
}

std::string render_bundle_for_prompt(const SkillBundle& bundle) {
  std::string out;
  for (const auto& s : bundle.skills) {
    out += "## skill_id: " + s.skill_id + "\n";
    out += "name: " + s.name + "\n";
    out += "description: " + s.description + "\n";
    out += "tokens: " + std::to_string(s.token_estimate()) + "\n";
    out += s.body;
    if (!s.body.empty() && s.body.back() != '\n') out += '\n';
    out += '\n';
  }
  if (bundle.skills.empty()) out = "(empty bundle)\n";
  return out;
}

std::string render_evidence(const FailureEvidence& evidence) {
  constexpr std::size_t kMaxTraces = 40;
  std::ostringstream out;
  out << "generation: " << evidence.generation << "\n";
  out << "pass_rate: " << evidence.pass_rate << " (" << evidence.tests_passed << "/" << evidence.tests_total << ")\n";
  out << "cost_usd: " << evidence.cost_usd << "\n";
  out << "runtime_s: " << evidence.runtime_s << "\n";
  out << "failures:\n";
  for (std::size_t i = 0; i < evidence.error_traces.size() && i < kMaxTraces; ++i) {
    out << "- " << evidence.error_traces[i] << "\n";
  }
  if (evidence.error_traces.size() > kMaxTraces) {
    out << "- ... " << (evidence.error_traces.size() - kMaxTraces) << " more\n";
  }
  if (evidence.error_traces.empty()) out << "- none\n";
  return out.str();
}

std::string render_prompt(std::string_view templ, const OptimizerSkill& skill, const SkillBundle& bundle,
                          const FailureEvidence& evidence) {
  const std::pair<std::string_view, std::string> fills[] = {
      {"{{optimizer_skill}}", skill.text},
      {"{{bundle_render}}", render_bundle_for_prompt(bundle)},
      {"{{evidence}}", render_evidence(evidence)},
      {"{{operations_help}}", operations_help()},
  };
  std::string out;
  std::size_t pos = 0;
  while (pos < templ.size()) {
    auto open = templ.find("{{", pos);
    if (open == std::string_view::npos) break;
    bool matched = false;
    for (const auto& [key, value] : fills) {
      if (templ.compare(open, key.size(), key) == 0) {
        out.append(templ.substr(pos, open - pos));
        out += value;
        pos = open + key.size();
        matched = true;
        break;
      }
    }
    if (!matched) {
      out.append(templ.substr(pos, open + 2 - pos));
      pos = open + 2;
    }
  }
  out.append(templ.substr(pos));
  return out;
}

// ---- LLM proposer -------------------------------------------------------------

LlmProposer::LlmProposer(std::shared_ptr<ChatClient> client, std::string prompt_template)
    : client_(std::move(client)), template_(std::move(prompt_template)) {}

EditProposal LlmProposer::propose(const OptimizerSkill& skill, const SkillBundle& parent,
                                  const FailureEvidence& evidence, std::uint64_t) const {
  std::vector<ChatMessage> messages{{"user", render_prompt(template_, skill, parent, evidence)}};
  double cost = 0.0;
  double latency = 0.0;
  std::string last_error;
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto reply = client_->chat(messages);
    cost += reply.usage.cost_usd();
    latency += reply.usage.latency_s;
    try {
      auto proposal = parse_proposal(reply.text);
      validate_edit(parent, proposal.op);
      proposal.cost_usd = cost;
      proposal.latency_s = latency;
      return proposal;
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::EndpointError || e.kind() == ErrorKind::Timeout) throw;
      last_error = e.what();
      messages.push_back({"assistant", reply.text});
      messages.push_back({"user", "Your proposal could not be applied: " + last_error +
                                      "\nReply again with exactly one corrected ```proposal block."});
    }
  }
  throw Error(ErrorKind::ProposerFailure, "no usable proposal after retry (cost " + std::to_string(cost) +
                                              " USD): " + last_error);
}

}  // namespace skillmoo
