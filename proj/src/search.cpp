#include "skillmoo/search.hpp"

#include <algorithm>
#include <cstdio>
#include <future>
#include <sstream>

#include "skillmoo/error.hpp"
#include "skillmoo/util.hpp"

using nlohmann::json;

namespace skillmoo {

std::string_view to_string(CandidateStatus status) {
  return status == CandidateStatus::Accepted ? "ACCEPTED" : "REJECTED_GUARD";
}

// ---- archive ----------------------------------------------------------------

long Archive::append(Candidate candidate) {
  candidate.arrival_index = static_cast<long>(candidates_.size());
  in_pool_.push_back(candidate.status == CandidateStatus::Accepted);
  candidates_.push_back(std::move(candidate));
  recompute_front();
  return candidates_.back().arrival_index;
}

const Candidate* Archive::find(std::string_view id) const {
  for (const auto& c : candidates_) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

std::vector<std::size_t> Archive::pool() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < candidates_.size(); ++i) {
    if (in_pool_[i]) out.push_back(i);
  }
  return out;
}

void Archive::recompute_front() {
  auto members = pool();
  std::vector<ObjectiveVector> pts;
  for (auto i : members) pts.push_back(candidates_[i].objective);
  auto fa = nondominated_sort(pts);
  front_.clear();
  for (std::size_t m = 0; m < members.size(); ++m) {
    if (fa.front[m] == 0) front_.push_back(members[m]);
  }
}

std::vector<std::string> Archive::trim_pool(std::size_t cap) {
  auto members = pool();
  std::vector<std::string> removed;
  if (members.size() <= cap) return removed;
  std::vector<SelectionEntry> entries;
  for (auto i : members) entries.push_back({candidates_[i].objective, candidates_[i].arrival_index});
  auto keep = nsga2_select(entries, cap);
  std::vector<bool> kept(members.size(), false);
  for (auto k : keep) kept[k] = true;
  for (std::size_t m = 0; m < members.size(); ++m) {
    if (!kept[m]) {
      in_pool_[members[m]] = false;
      removed.push_back(candidates_[members[m]].id);
    }
  }
  recompute_front();
  return removed;
}

CandidateStatus guard(const Candidate& parent, const EvaluationResult& child, double threshold) {
  // Pass rates are k/n fractions; the slack absorbs rounding in the subtraction
  // so a drop of exactly `threshold` is accepted.
  constexpr double kSlack = 1e-9;
  const double drop = parent.result.pass_rate - child.pass_rate;
  return drop > threshold + kSlack ? CandidateStatus::RejectedGuard : CandidateStatus::Accepted;
}

namespace {

bool lexicographically_better(const Candidate& a, const Candidate& b) {
  if (a.result.pass_rate != b.result.pass_rate) return a.result.pass_rate > b.result.pass_rate;
  if (a.result.cost_usd != b.result.cost_usd) return a.result.cost_usd < b.result.cost_usd;
  if (a.result.runtime_s != b.result.runtime_s) return a.result.runtime_s < b.result.runtime_s;
  return a.arrival_index < b.arrival_index;
}

}  // namespace

const Candidate& select_parent(const Archive& archive) {
  const auto& front = archive.pareto_front();
  if (front.empty()) throw Error(ErrorKind::InvalidArgument, "archive has no accepted candidates");
  const Candidate* best = &archive.at(front.front());
  for (auto i : front) {
    if (lexicographically_better(archive.at(i), *best)) best = &archive.at(i);
  }
  return *best;
}

const Candidate& final_selection(const Archive& archive) { return select_parent(archive); }

void SearchConfig::validate() const {
  if (generations < 1) throw Error(ErrorKind::Config, "generations must be at least 1");
  if (population < 1) throw Error(ErrorKind::Config, "population must be at least 1");
  if (guard_drop_threshold < 0) throw Error(ErrorKind::Config, "guard threshold must be nonnegative");
  if (archive_cap && *archive_cap < 1) throw Error(ErrorKind::Config, "archive cap must be at least 1");
  if (jobs < 1) throw Error(ErrorKind::Config, "jobs must be at least 1");
}

void to_json(json& j, const SearchConfig& c) {
  j = json{{"generations", c.generations},
           {"population", c.population},
           {"guard_drop_threshold", c.guard_drop_threshold},
           {"seed", c.seed},
           {"parent_policy", c.parent_policy == ParentPolicy::Best ? "best" : "chain"},
           {"archive_cap", c.archive_cap ? json(*c.archive_cap) : json(nullptr)},
           {"jobs", c.jobs}};
}

double archive_hypervolume(const Archive& archive, int max_generation, double cost_ceiling) {
  std::vector<std::size_t> members;
  for (auto i : archive.pool()) {
    if (archive.at(i).generation <= max_generation) members.push_back(i);
  }
  std::vector<HvPoint> pts;
  for (auto i : members) pts.push_back({archive.at(i).result.pass_rate, archive.at(i).result.cost_usd});
  return hypervolume_2d(pts, cost_ceiling).value;
}

std::string canonicalize_events(std::string_view jsonl) {
  std::string out;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    auto nl = jsonl.find('\n', pos);
    auto line = jsonl.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? jsonl.size() : nl + 1;
    if (line.empty()) continue;
    auto ev = json::parse(line);
    if (ev.contains("ts")) ev["ts"] = kCanonicalTimestamp;
    out += ev.dump();
    out += '\n';
  }
  return out;
}

// ---- the loop -----------------------------------------------------------------

namespace {

std::string candidate_id(long arrival) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "c%04ld", arrival);
  return buf;
}

json objective_json(const ObjectiveVector& o) { return json{{"neg_pass", o.neg_pass}, {"cost", o.cost}}; }

json front_ids(const Archive& archive) {
  json ids = json::array();
  for (auto i : archive.pareto_front()) ids.push_back(archive.at(i).id);
  return ids;
}

bool skippable_proposal_error(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ProposerFailure:
    case ErrorKind::NoValidOperation:
    case ErrorKind::ParseError:
    case ErrorKind::Timeout:
    case ErrorKind::UnknownTarget:
    case ErrorKind::InvalidPermutation:
    case ErrorKind::InvalidEdit:
    case ErrorKind::EmptyResult:
    case ErrorKind::DuplicateSkillId:
      return true;
    default:
      return false;
  }
}

class Loop {
public:
  Loop(const TaskSpec& task, const SearchConfig& config, const Evaluator& evaluator, const Proposer& proposer,
       RunSink* sink, const RunOptions& options)
      : task_(task), config_(config), evaluator_(evaluator), proposer_(proposer), sink_(sink), options_(options) {
    record_.optimizer_skill = options.optimizer_skill;
  }

  RunRecord run(const SkillBundle& seed_bundle) {
    seed_generation(seed_bundle);
    for (int g = 1; g < config_.generations; ++g) generation(g);

    const auto& final = final_selection(record_.archive);
    record_.final_id = final.id;
    emit({{"type", "final_selection"},
          {"generation", config_.generations - 1},
          {"candidate_id", final.id},
          {"pass_rate", final.result.pass_rate},
          {"cost_usd", final.result.cost_usd},
          {"runtime_s", final.result.runtime_s},
          {"front", front_ids(record_.archive)}});

    finish_trajectory();
    return std::move(record_);
  }

private:
  void emit(json ev) {
    json full{{"seq", seq_++}, {"ts", options_.canonical_timestamps ? std::string(kCanonicalTimestamp) : utc_timestamp()}};
    full.update(ev);
    if (sink_) sink_->event(full);
    record_.events.push_back(std::move(full));
  }

  void store(const Candidate& c) {
    if (sink_) sink_->candidate(c);
  }

  EvaluationResult evaluate(const SkillBundle& bundle, long arrival) const {
    auto result = evaluator_.evaluate(bundle, task_, derive_seed(config_.seed, "evaluate", static_cast<std::uint64_t>(arrival)));
    result.check_invariants();
    return result;
  }

  void seed_generation(const SkillBundle& seed_bundle) {
    Candidate seed;
    seed.id = candidate_id(0);
    seed.bundle = seed_bundle;
    seed.bundle.lineage.reset();
    seed.result = evaluate(seed.bundle, 0);
    seed.objective = ObjectiveVector::from(seed.result.pass_rate, seed.result.cost_usd);
    seed.generation = 0;
    seed.status = CandidateStatus::Accepted;
    record_.archive.append(seed);
    const auto& stored = record_.archive.candidates().back();
    emit({{"type", "seed_eval"},
          {"generation", 0},
          {"candidate_id", stored.id},
          {"bundle_id", stored.bundle.bundle_id},
          {"skills", stored.bundle.skills.size()},
          {"tokens", stored.bundle.token_estimate()},
          {"result", stored.result},
          {"objective", objective_json(stored.objective)},
          {"front", front_ids(record_.archive)}});
    store(stored);
    gen_stats_.push_back(GenerationStat{0, 0, 0, 0, 0, 1, 0});
  }

  const Candidate& choose_parent() const {
    if (config_.parent_policy == ParentPolicy::Chain) {
      auto pool = record_.archive.pool();
      return record_.archive.at(pool.back());
    }
    return select_parent(record_.archive);
  }

  FailureEvidence evidence_for(const Candidate& parent, int generation) const {
    FailureEvidence ev;
    ev.error_traces = parent.result.error_traces;
    ev.pass_rate = parent.result.pass_rate;
    ev.tests_passed = parent.result.tests_passed;
    ev.tests_total = parent.result.tests_total;
    ev.cost_usd = parent.result.cost_usd;
    ev.runtime_s = parent.result.runtime_s;
    ev.generation = generation;
    for (auto pid = parent.parent_id; pid;) {
      const Candidate* a = record_.archive.find(*pid);
      if (!a) break;
      ev.ancestors.push_back(a->bundle);
      pid = a->parent_id;
    }
    return ev;
  }

  struct Slot {
    int index;
    EditProposal proposal;
    SkillBundle child;
    long arrival;
  };

  void generation(int g) {
    const Candidate parent = choose_parent();
    const auto evidence = evidence_for(parent, g);
    const auto proposer_seed = derive_seed(config_.seed, "propose", static_cast<std::uint64_t>(g));

    std::vector<Slot> slots;
    std::optional<std::string> skill_update;
    for (int s = 0; s < config_.population; ++s) {
      const long arrival = static_cast<long>(record_.archive.size() + slots.size());
      try {
        auto proposal = proposer_.propose(record_.optimizer_skill, parent.bundle, evidence,
                                          derive_seed(proposer_seed, "slot", static_cast<std::uint64_t>(s)));
        auto child = apply_edit(parent.bundle, proposal.op, ApplyOptions{candidate_id(arrival), false});
        ++record_.proposal_count;
        record_.opt_cost_usd += proposal.cost_usd;
        record_.opt_runtime_s += proposal.latency_s;
        emit({{"type", "proposal"},
              {"generation", g},
              {"slot", s},
              {"parent_id", parent.id},
              {"candidate_id", candidate_id(arrival)},
              {"optimizer_skill_version", record_.optimizer_skill.version},
              {"op", proposal.op},
              {"rationale", proposal.rationale},
              {"cost_usd", proposal.cost_usd},
              {"latency_s", proposal.latency_s}});
        if (proposal.optimizer_skill_update) skill_update = proposal.optimizer_skill_update;
        slots.push_back(Slot{s, std::move(proposal), std::move(child), arrival});
      } catch (const Error& e) {
        if (!skippable_proposal_error(e.kind())) throw;
        emit({{"type", "proposal_failed"}, {"generation", g}, {"slot", s}, {"parent_id", parent.id}, {"error", e.what()}});
      }
    }

    auto results = evaluate_all(slots);

    GenerationStat stat;
    stat.generation = g;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      auto& slot = slots[i];
      Candidate child;
      child.id = candidate_id(slot.arrival);
      child.bundle = std::move(slot.child);
      child.result = std::move(results[i]);
      child.objective = ObjectiveVector::from(child.result.pass_rate, child.result.cost_usd);
      child.generation = g;
      child.parent_id = parent.id;
      child.status = guard(parent, child.result, config_.guard_drop_threshold);
      record_.opt_cost_usd += child.result.cost_usd;
      record_.opt_runtime_s += child.result.runtime_s;
      record_.archive.append(child);
      const auto& stored = record_.archive.candidates().back();
      (stored.status == CandidateStatus::Accepted ? stat.accepted : stat.rejected)++;

      emit({{"type", "child_eval"},
            {"generation", g},
            {"slot", slot.index},
            {"candidate_id", stored.id},
            {"parent_id", parent.id},
            {"skills", stored.bundle.skills.size()},
            {"tokens", stored.bundle.token_estimate()},
            {"result", stored.result},
            {"objective", objective_json(stored.objective)}});
      json decision{{"type", "guard_decision"},
                    {"generation", g},
                    {"candidate_id", stored.id},
                    {"parent_id", parent.id},
                    {"parent_pass_rate", parent.result.pass_rate},
                    {"child_pass_rate", stored.result.pass_rate},
                    {"threshold", config_.guard_drop_threshold},
                    {"status", to_string(stored.status)}};
      if (config_.archive_cap) {
        auto trimmed = record_.archive.trim_pool(*config_.archive_cap);
        if (!trimmed.empty()) decision["trimmed"] = trimmed;
      }
      decision["front"] = front_ids(record_.archive);
      emit(std::move(decision));
      store(stored);
    }

    if (skill_update) {
      record_.optimizer_skill.version += 1;
      record_.optimizer_skill.text = *skill_update;
      emit({{"type", "optimizer_skill_update"},
            {"generation", g},
            {"version", record_.optimizer_skill.version},
            {"text", record_.optimizer_skill.text}});
    }
    gen_stats_.push_back(stat);
  }

  std::vector<EvaluationResult> evaluate_all(const std::vector<Slot>& slots) const {
    std::vector<EvaluationResult> results(slots.size());
    if (config_.jobs <= 1 || slots.size() <= 1) {
      for (std::size_t i = 0; i < slots.size(); ++i) results[i] = evaluate(slots[i].child, slots[i].arrival);
      return results;
    }
    // Bounded fan-out; results are consumed in slot order regardless of completion order.
    for (std::size_t start = 0; start < slots.size(); start += static_cast<std::size_t>(config_.jobs)) {
      const auto end = std::min(slots.size(), start + static_cast<std::size_t>(config_.jobs));
      std::vector<std::future<EvaluationResult>> pending;
      for (auto i = start; i < end; ++i) {
        pending.push_back(std::async(std::launch::async, [this, &slots, i] { return evaluate(slots[i].child, slots[i].arrival); }));
      }
      for (auto i = start; i < end; ++i) results[i] = pending[i - start].get();
    }
    return results;
  }

  void finish_trajectory() {
    double ceiling = 0.0;
    for (const auto& c : record_.archive.candidates()) ceiling = std::max(ceiling, c.result.cost_usd);
    record_.cost_ceiling = ceiling > 0.0 ? kCostReferenceMargin * ceiling : 1.0;
    for (auto stat : gen_stats_) {
      stat.hypervolume = archive_hypervolume(record_.archive, stat.generation, record_.cost_ceiling);
      std::vector<std::size_t> members;
      for (auto i : record_.archive.pool()) {
        if (record_.archive.at(i).generation <= stat.generation) members.push_back(i);
      }
      std::vector<ObjectiveVector> pts;
      for (auto i : members) pts.push_back(record_.archive.at(i).objective);
      auto fa = nondominated_sort(pts);
      const Candidate* best = nullptr;
      stat.front_size = 0;
      for (std::size_t m = 0; m < members.size(); ++m) {
        if (fa.front[m] != 0) continue;
        ++stat.front_size;
        const auto& c = record_.archive.at(members[m]);
        if (!best || lexicographically_better(c, *best)) best = &c;
      }
      if (best) {
        stat.best_pass = best->result.pass_rate;
        stat.best_cost = best->result.cost_usd;
      }
      record_.trajectory.push_back(stat);
    }
  }

  const TaskSpec& task_;
  const SearchConfig& config_;
  const Evaluator& evaluator_;
  const Proposer& proposer_;
  RunSink* sink_;
  const RunOptions& options_;
  RunRecord record_;
  std::vector<GenerationStat> gen_stats_;
  long seq_ = 0;
};

}  // namespace

RunRecord run_search(const TaskSpec& task, const SkillBundle& seed_bundle, const SearchConfig& config,
                     const Evaluator& evaluator, const Proposer& proposer, RunSink* sink, const RunOptions& options) {
  config.validate();
  task.validate();
  Loop loop(task, config, evaluator, proposer, sink, options);
  return loop.run(seed_bundle);
}

}  // namespace skillmoo
