#include "skillmoo/run_store.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <sstream>

#include "skillmoo/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace skillmoo {

namespace {

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + p.string());
  out << text;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Io, p.string() + ": " + e.what());
  }
}

}  // namespace

RunWriter::RunWriter(fs::path dir) : dir_(std::move(dir)) {
  if (fs::exists(dir_) && !(fs::is_directory(dir_) && fs::is_empty(dir_))) {
    throw Error(ErrorKind::Config, "refusing to overwrite non-empty output " + dir_.string());
  }
  fs::create_directories(dir_ / "candidates");
  events_.open(dir_ / "events.jsonl", std::ios::binary | std::ios::trunc);
  if (!events_) throw Error(ErrorKind::Io, "cannot write " + (dir_ / "events.jsonl").string());
}

void RunWriter::write_run_json(const json& run) { write_text(dir_ / "run.json", run.dump(2) + "\n"); }

void RunWriter::event(const json& ev) {
  events_ << ev.dump() << '\n';
  events_.flush();
}

void RunWriter::candidate(const Candidate& c) {
  auto dir = dir_ / "candidates" / c.id;
  store_bundle(c.bundle, dir / "bundle");
  json meta{{"id", c.id},
            {"bundle_id", c.bundle.bundle_id},
            {"generation", c.generation},
            {"arrival_index", c.arrival_index},
            {"status", to_string(c.status)},
            {"parent_id", c.parent_id ? json(*c.parent_id) : json(nullptr)},
            {"result", c.result},
            {"objective", {{"neg_pass", c.objective.neg_pass}, {"cost", c.objective.cost}}}};
  if (c.bundle.lineage) meta["op"] = c.bundle.lineage->op;
  write_text(dir / "candidate.json", meta.dump(2) + "\n");
}

json front_json(const RunRecord& record) {
  auto member = [](const Candidate& c) {
    return json{{"id", c.id},
                {"generation", c.generation},
                {"skills", c.bundle.skills.size()},
                {"pass_rate", c.result.pass_rate},
                {"tests_passed", c.result.tests_passed},
                {"tests_total", c.result.tests_total},
                {"cost_usd", c.result.cost_usd},
                {"runtime_s", c.result.runtime_s}};
  };
  json front = json::array();
  for (auto i : record.archive.pareto_front()) front.push_back(member(record.archive.at(i)));
  json trajectory = json::array();
  for (const auto& t : record.trajectory) {
    trajectory.push_back({{"generation", t.generation},
                          {"hypervolume", t.hypervolume},
                          {"best_pass_rate", t.best_pass},
                          {"best_cost_usd", t.best_cost},
                          {"front_size", t.front_size},
                          {"accepted", t.accepted},
                          {"rejected", t.rejected}});
  }
  return json{{"final", member(record.final_candidate())},
              {"seed", member(record.archive.at(0))},
              {"front", front},
              {"cost_ceiling", record.cost_ceiling},
              {"overhead", {{"cost_usd", record.opt_cost_usd}, {"runtime_s", record.opt_runtime_s}}},
              {"proposals", record.proposal_count},
              {"optimizer_skill_version", record.optimizer_skill.version},
              {"trajectory", trajectory}};
}

void RunWriter::write_front(const RunRecord& record) { write_text(dir_ / "front.json", front_json(record).dump(2) + "\n"); }

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::vector<json> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::Io, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

LoadedRun load_run(const fs::path& dir) {
  LoadedRun run;
  run.dir = dir;
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, dir.string() + " is not a run directory");
  run.run = fs::exists(dir / "run.json") ? read_json(dir / "run.json") : json::object();
  run.front = read_json(dir / "front.json");
  run.events = read_jsonl(dir / "events.jsonl");
  return run;
}

std::string LoadedRun::label() const { return run.value("label", std::string("skillmoo")); }

namespace {
EvaluationResult member_result(const json& m) {
  auto r = EvaluationResult::from_counts(m.at("tests_passed").get<int>(), m.at("tests_total").get<int>());
  r.cost_usd = m.at("cost_usd").get<double>();
  r.runtime_s = m.at("runtime_s").get<double>();
  return r;
}
}  // namespace

EvaluationResult LoadedRun::seed_result() const {
  for (const auto& ev : events) {
    if (ev.value("type", "") == "seed_eval") return ev.at("result").get<EvaluationResult>();
  }
  throw Error(ErrorKind::MissingBaseline, dir.string() + " has no seed evaluation");
}

EvaluationResult LoadedRun::final_result() const { return member_result(front.at("final")); }

std::vector<FrontMember> LoadedRun::front_members() const {
  std::vector<FrontMember> out;
  for (const auto& m : front.at("front")) out.push_back({m.at("id").get<std::string>(), member_result(m)});
  return out;
}

double LoadedRun::opt_cost_usd() const { return front.at("overhead").at("cost_usd").get<double>(); }
double LoadedRun::opt_runtime_s() const { return front.at("overhead").at("runtime_s").get<double>(); }

std::vector<fs::path> expand_glob(const std::string& pattern) {
  if (pattern.find_first_of("*?[") == std::string::npos) return {fs::path(pattern)};
  fs::path p(pattern);
  fs::path parent = p.parent_path().empty() ? fs::path(".") : p.parent_path();
  const std::string leaf = p.filename().string();
  std::vector<fs::path> out;
  if (!fs::is_directory(parent)) return out;
  for (const auto& entry : fs::directory_iterator(parent)) {
    if (fnmatch(leaf.c_str(), entry.path().filename().c_str(), 0) == 0) {
      out.push_back(p.parent_path().empty() ? entry.path().filename() : entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace skillmoo
