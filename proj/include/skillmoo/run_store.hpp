#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "skillmoo/search.hpp"

namespace skillmoo {

/// Writes a run directory:
///   run.json         effective configuration, seeds and versions
///   events.jsonl     one JSON record per event
///   candidates/<id>/ stored bundle plus candidate.json
///   front.json       final Pareto front, final selection, overhead, trajectory
class RunWriter final : public RunSink {
public:
  /// Refuses an existing non-empty directory.
  explicit RunWriter(std::filesystem::path dir);

  void write_run_json(const nlohmann::json& run);
  void event(const nlohmann::json& ev) override;
  void candidate(const Candidate& c) override;
  void write_front(const RunRecord& record);

  const std::filesystem::path& dir() const { return dir_; }

private:
  std::filesystem::path dir_;
  std::ofstream events_;
};

nlohmann::json front_json(const RunRecord& record);

struct FrontMember {
  std::string id;
  EvaluationResult result;
};

/// A run directory read back for reporting.
struct LoadedRun {
  std::filesystem::path dir;
  nlohmann::json run;    // run.json
  nlohmann::json front;  // front.json
  std::vector<nlohmann::json> events;

  std::string label() const;
  EvaluationResult seed_result() const;
  EvaluationResult final_result() const;
  std::vector<FrontMember> front_members() const;
  double opt_cost_usd() const;
  double opt_runtime_s() const;
};

LoadedRun load_run(const std::filesystem::path& dir);

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

/// Expands '*' and '?' in the final path component; a plain existing path
/// yields itself. Results are sorted.
std::vector<std::filesystem::path> expand_glob(const std::string& pattern);

}  // namespace skillmoo
