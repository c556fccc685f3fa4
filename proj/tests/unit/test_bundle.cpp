#include <functional>
#include <random>

#include "doctest.h"
#include "skillmoo/bundle.hpp"
#include "skillmoo/error.hpp"
#include "support/fixtures.hpp"

using namespace skillmoo;
using fixture::bundle;
using fixture::skill;

namespace {

std::vector<std::string> ids(const SkillBundle& b) {
  std::vector<std::string> out;
  for (const auto& s : b.skills) out.push_back(s.skill_id);
  return out;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::Io;
}

SkillBundle abc() { return bundle({skill("A", "alpha text"), skill("B", "beta text here"), skill("C", "gamma")}); }

// Independent word count: runs of non-space characters.
std::size_t words(const std::string& s) {
  std::size_t n = 0;
  bool in = false;
  for (char c : s) {
    bool sp = c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\v' || c == '\f';
    if (!sp && !in) ++n;
    in = !sp;
  }
  return n;
}

}  // namespace

TEST_CASE("prune removes the target in place") {
  auto parent = abc();
  auto child = apply_edit(parent, EditOp{EditKind::Prune, {"B"}, {}, {}, "drop B"});
  CHECK(ids(child) == std::vector<std::string>{"A", "C"});
  CHECK(ids(parent) == std::vector<std::string>{"A", "B", "C"});
  REQUIRE(child.lineage);
  CHECK(child.lineage->parent_id == "b0");
  CHECK(child.lineage->generation == 1);
  CHECK(child.lineage->op.targets == std::vector<std::string>{"B"});
  CHECK(child.bundle_id != parent.bundle_id);
}

TEST_CASE("reorder applies the permutation") {
  auto parent = bundle({skill("A", "a"), skill("B", "b")});
  EditOp op{EditKind::Reorder, {}, {}, {"B", "A"}, ""};
  CHECK(ids(apply_edit(parent, op)) == std::vector<std::string>{"B", "A"});
}

TEST_CASE("substitute replaces in place and token estimate follows the replacement") {
  auto parent = bundle({skill("A", "one two three")});
  Skill replacement{"", "A prime", "a fresh take on the skill", "four five six seven eight"};
  auto child = apply_edit(parent, EditOp{EditKind::Substitute, {"A"}, {replacement}, {}, ""});
  REQUIRE(child.skills.size() == 1);
  CHECK(child.skills[0].skill_id == "A");
  CHECK(child.skills[0].body == replacement.body);
  const std::size_t expected = words(replacement.name) + words(replacement.description) + words(replacement.body);
  CHECK(expected == 2 + 6 + 5);
  CHECK(child.skills[0].token_estimate() == expected);
  CHECK(child.token_estimate() == expected);
}

TEST_CASE("rewrite replaces only the body; expand appends") {
  auto parent = abc();
  Skill body_only;
  body_only.body = "shorter";
  auto rewritten = apply_edit(parent, EditOp{EditKind::Rewrite, {"B"}, {body_only}, {}, ""});
  CHECK(rewritten.skills[1].body == "shorter");
  CHECK(rewritten.skills[1].name == "B");
  CHECK(rewritten.skills[1].description == "about B");

  auto expanded = apply_edit(parent, EditOp{EditKind::Expand, {}, {skill("D", "new"), skill("E", "newer")}, {}, ""});
  CHECK(ids(expanded) == std::vector<std::string>{"A", "B", "C", "D", "E"});
}

TEST_CASE("edit validation errors") {
  auto parent = abc();
  CHECK(kind_of([&] { apply_edit(parent, EditOp{EditKind::Prune, {"Z"}, {}, {}, ""}); }) == ErrorKind::UnknownTarget);
  CHECK(kind_of([&] { apply_edit(parent, EditOp{EditKind::Reorder, {}, {}, {"A", "B"}, ""}); }) ==
        ErrorKind::InvalidPermutation);
  CHECK(kind_of([&] { apply_edit(parent, EditOp{EditKind::Reorder, {}, {}, {"A", "A", "B"}, ""}); }) ==
        ErrorKind::InvalidPermutation);
  CHECK(kind_of([&] { apply_edit(parent, EditOp{EditKind::Prune, {"A", "B"}, {}, {}, ""}); }) == ErrorKind::InvalidEdit);
  CHECK(kind_of([&] { apply_edit(parent, EditOp{EditKind::Expand, {}, {skill("A", "dup")}, {}, ""}); }) ==
        ErrorKind::DuplicateSkillId);
  CHECK(kind_of([&] { apply_edit(parent, EditOp{EditKind::Expand, {"A"}, {skill("D", "x")}, {}, ""}); }) ==
        ErrorKind::InvalidEdit);
  CHECK(kind_of([&] { apply_edit(parent, EditOp{EditKind::Substitute, {"A"}, {}, {}, ""}); }) == ErrorKind::InvalidEdit);

  auto single = bundle({skill("A", "only")});
  CHECK(kind_of([&] { apply_edit(single, EditOp{EditKind::Prune, {"A"}, {}, {}, ""}); }) == ErrorKind::EmptyResult);
  auto empty = apply_edit(single, EditOp{EditKind::Prune, {"A"}, {}, {}, ""}, ApplyOptions{std::nullopt, true});
  CHECK(empty.skills.empty());
}

TEST_CASE("child ids are deterministic and lineage chains to generation 0") {
  auto parent = abc();
  EditOp op{EditKind::Prune, {"C"}, {}, {}, ""};
  CHECK(apply_edit(parent, op).bundle_id == apply_edit(parent, op).bundle_id);
  CHECK(apply_edit(parent, op, ApplyOptions{"kid", false}).bundle_id == "kid");

  auto g1 = apply_edit(parent, op);
  auto g2 = apply_edit(g1, EditOp{EditKind::Prune, {"B"}, {}, {}, ""});
  CHECK(g2.generation() == 2);
  CHECK(g2.lineage->parent_id == g1.bundle_id);
  CHECK(g1.lineage->parent_id == parent.bundle_id);
  CHECK(parent.generation() == 0);
}

TEST_CASE("diff examples") {
  auto p = abc();
  auto c = bundle({skill("A", "alpha text"), skill("C", "gamma")});
  auto ops = diff_bundles(p, c);
  REQUIRE(ops.size() == 1);
  CHECK(ops[0].kind == EditKind::Prune);
  CHECK(ops[0].targets == std::vector<std::string>{"B"});
  CHECK(diff_bundles(p, p).empty());
}

TEST_CASE("diff then apply reproduces the child for random edit sequences") {
  std::mt19937_64 rng(20240611);
  int next_id = 0;
  auto fresh = [&] { return "s" + std::to_string(next_id++); };
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  const std::vector<std::string> vocab{"alpha", "beta", "gamma", "delta", "keep", "drop", "csv", "schema"};
  auto text = [&](int n) {
    std::string s;
    for (int i = 0; i < n; ++i) s += (i ? " " : "") + vocab[pick(vocab.size())];
    return s;
  };

  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Skill> skills;
    const auto n = 1 + pick(6);
    for (std::size_t i = 0; i < n; ++i) skills.push_back(Skill{fresh(), text(2), text(3), text(1 + static_cast<int>(pick(8)))});
    const auto parent = bundle(skills, "p");
    SkillBundle child = parent;
    const auto steps = 1 + pick(4);
    for (std::size_t s = 0; s < steps; ++s) {
      EditOp op;
      switch (pick(5)) {
        case 0:
          if (child.skills.size() < 2) continue;
          op = EditOp{EditKind::Prune, {child.skills[pick(child.skills.size())].skill_id}, {}, {}, ""};
          break;
        case 1: {
          Skill repl{"", text(2), text(3), text(4)};
          op = EditOp{EditKind::Substitute, {child.skills[pick(child.skills.size())].skill_id}, {repl}, {}, ""};
          break;
        }
        case 2: {
          Skill b;
          b.body = text(static_cast<int>(pick(5)));
          op = EditOp{EditKind::Rewrite, {child.skills[pick(child.skills.size())].skill_id}, {b}, {}, ""};
          break;
        }
        case 3: {
          std::vector<std::string> order = ids(child);
          std::shuffle(order.begin(), order.end(), rng);
          op = EditOp{EditKind::Reorder, {}, {}, order, ""};
          break;
        }
        default:
          op = EditOp{EditKind::Expand, {}, {Skill{fresh(), text(1), text(2), text(3)}}, {}, ""};
          break;
      }
      child = apply_edit(child, op);
    }

    SkillBundle replay = parent;
    for (const auto& op : diff_bundles(parent, child)) replay = apply_edit(replay, op);
    INFO("trial " << trial);
    CHECK(replay.content_equal(child));
    CHECK(ids(replay) == ids(child));
  }
}

TEST_CASE("apply_edit leaves its input untouched") {
  const auto parent = abc();
  const auto copy = parent;
  (void)apply_edit(parent, EditOp{EditKind::Prune, {"A"}, {}, {}, ""});
  (void)apply_edit(parent, EditOp{EditKind::Reorder, {}, {}, {"C", "B", "A"}, ""});
  CHECK(parent.skills == copy.skills);
  CHECK(parent.bundle_id == copy.bundle_id);
  CHECK_FALSE(parent.lineage.has_value());
}

TEST_CASE("content equality ignores ids and lineage") {
  auto a = abc();
  auto b = abc();
  b.bundle_id = "other";
  b.skills[0].skill_id = "renamed";
  CHECK(a.content_equal(b));
  CHECK(a.content_hash() == b.content_hash());
  b.skills[0].body += "!";
  CHECK_FALSE(a.content_equal(b));
  CHECK(a.content_hash() != b.content_hash());
}

TEST_CASE("store then load round-trips skills byte-exactly") {
  fixture::TempDir tmp;
  auto b = bundle({Skill{"first", "First: skill", "Does one thing.", "Line one.\n\n  indented line\ntrailing"},
                   Skill{"second", "Second", "", "body with\ttabs\n"},
                   Skill{"third", "Third", "desc", ""}},
                  "stored");
  store_bundle(b, tmp / "bundle");
  auto loaded = load_bundle(tmp / "bundle");
  CHECK(loaded.bundle_id == "stored");
  CHECK(loaded.skills == b.skills);
}

TEST_CASE("load errors") {
  fixture::TempDir tmp;
  auto root = tmp.path();
  fixture::write_file(root / "m1" / "manifest.json", R"({"bundle_id": "x", "skills": ["missing"]})");
  CHECK(kind_of([&] { load_bundle(root / "m1"); }) == ErrorKind::MissingSkillFile);

  fixture::write_file(root / "m2" / "manifest.json", R"({"bundle_id": "x", "skills": ["a", "a"]})");
  fixture::write_file(root / "m2" / "a" / "SKILL.md", "---\nname: a\ndescription: d\n---\nbody");
  CHECK(kind_of([&] { load_bundle(root / "m2"); }) == ErrorKind::DuplicateSkillId);

  fixture::write_file(root / "m3" / "manifest.json", R"({"bundle_id": 3})");
  CHECK(kind_of([&] { load_bundle(root / "m3"); }) == ErrorKind::MalformedManifest);

  fixture::write_file(root / "m4" / "manifest.json", "not json");
  CHECK(kind_of([&] { load_bundle(root / "m4"); }) == ErrorKind::MalformedManifest);

  CHECK(kind_of([&] { load_bundle(root / "nowhere"); }) == ErrorKind::MalformedManifest);

  fixture::write_file(root / "m5" / "manifest.json", R"({"bundle_id": "x", "skills": ["a"]})");
  fixture::write_file(root / "m5" / "a" / "SKILL.md", "no frontmatter");
  CHECK(kind_of([&] { load_bundle(root / "m5"); }) == ErrorKind::MalformedManifest);
}

TEST_CASE("the shipped eight-skill bundle loads in manifest order") {
  auto b = load_bundle(fixture::bundle8());
  CHECK(b.skills.size() == 8);
  CHECK(b.skills.front().skill_id == "csv-ingest");
  CHECK(b.skills.back().skill_id == "code-review");
  CHECK(b.skills[2].name == "Schema check");
}

TEST_CASE("edit ops round-trip through JSON") {
  EditOp op{EditKind::Substitute, {"A"}, {Skill{"A2", "n", "d", "b"}}, {}, "swap it"};
  auto back = nlohmann::json(op).get<EditOp>();
  CHECK(back == op);
  EditOp reorder{EditKind::Reorder, {}, {}, {"B", "A"}, "swap order"};
  CHECK(nlohmann::json(reorder).get<EditOp>() == reorder);
  for (auto k : {EditKind::Prune, EditKind::Substitute, EditKind::Reorder, EditKind::Rewrite, EditKind::Expand}) {
    CHECK(parse_edit_kind(to_string(k)) == k);
  }
  CHECK_FALSE(parse_edit_kind("SPLICE").has_value());
}
