#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "skillmoo/evaluation.hpp"

namespace skillmoo {

struct MetricSummary {
  double mean = 0.0;
  double sd = 0.0;  // sample SD (n - 1); 0 when n == 1
  std::size_t n = 0;
};

MetricSummary summarize(std::span<const double> values);

/// "0.97±0.00" style rendering.
std::string format_mean_sd(const MetricSummary& s, int decimals);

/// Final metrics of repeated runs of one method.
struct RunSet {
  std::string label;
  std::vector<double> pass_rate;
  std::vector<double> cost_usd;
  std::vector<double> runtime_s;
};

struct ScottKnottConfig {
  double alpha = 0.05;
  double negligible_effect = 0.2;  // Cohen's |d| below this merges adjacent clusters
  bool log1p_transform = false;
};

struct RankAssignment {
  std::vector<std::string> labels;  // best first
  std::vector<int> ranks;           // parallel to labels, 1 = best
  std::vector<double> means;        // parallel to labels, untransformed

  int rank_of(const std::string& label) const;
};

double chi_square_quantile(double probability, double degrees_of_freedom);

/// Scott-Knott clustering of group means followed by merging of adjacent
/// clusters whose effect size is negligible. Groups need >= 2 observations.
RankAssignment scott_knott_esd(const std::vector<std::pair<std::string, std::vector<double>>>& groups,
                               const ScottKnottConfig& config = {});

/// Pooled-SD Cohen's d of a minus b.
double cohens_d(std::span<const double> a, std::span<const double> b);

struct EfficiencyReport {
  double opt_cost_usd = 0.0;
  double opt_runtime_s = 0.0;
  double hv_base = 0.0;
  double hv_new = 0.0;
  double delta_hv_pct = 0.0;
  std::optional<double> cost_per_hv_pct;  // absent when there is no HV gain
};

/// Throws ZeroBaseline when hv_base is 0.
EfficiencyReport efficiency_report(double opt_cost_usd, double opt_runtime_s, double hv_base, double hv_new);

/// opt_cost / delta_hv_pct; throws InvalidArgument unless delta_hv_pct > 0.
double cost_per_hv_percent(double opt_cost_usd, double delta_hv_pct);

/// One logged edit: the proposer's description and its child's evaluation.
struct EditRecord {
  std::string description;
  EvaluationResult child;
  std::optional<EvaluationResult> baseline;  // overrides the table-wide baseline
};

struct PatternRow {
  std::string description;  // normalized
  int edits = 0;
  int pass_improved = 0;
  int cost_reduced = 0;
  int time_reduced = 0;
};

/// Lowercase, punctuation removed, whitespace collapsed.
std::string normalize_description(std::string_view text);

/// Groups edits by normalized description and counts improvements over the
/// baseline. Rows are ordered by edit count, then description.
std::vector<PatternRow> pattern_table(std::span<const EditRecord> edits, const EvaluationResult* baseline);

/// Pairs proposal and child_eval events from one events.jsonl stream.
std::vector<EditRecord> edit_records_from_events(const std::vector<nlohmann::json>& events);

}  // namespace skillmoo
