#include "skillmoo/analysis.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <numeric>

#include "skillmoo/error.hpp"
#include "skillmoo/moo.hpp"

using nlohmann::json;

namespace skillmoo {

MetricSummary summarize(std::span<const double> values) {
  MetricSummary s;
  s.n = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

std::string format_mean_sd(const MetricSummary& s, int decimals) {
  char buf[64];
  // Avoid printing "-0.00".
  double mean = std::abs(s.mean) < 0.5 * std::pow(10.0, -decimals) ? 0.0 : s.mean;
  std::snprintf(buf, sizeof buf, "%.*f±%.*f", decimals, mean, decimals, s.sd);
  return buf;
}

int RankAssignment::rank_of(const std::string& label) const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) return ranks[i];
  }
  throw Error(ErrorKind::InvalidArgument, "no group labeled '" + label + "'");
}

double chi_square_quantile(double probability, double degrees_of_freedom) {
  boost::math::chi_squared dist(degrees_of_freedom);
  return boost::math::quantile(dist, probability);
}

double cohens_d(std::span<const double> a, std::span<const double> b) {
  auto sa = summarize(a);
  auto sb = summarize(b);
  const double dof = static_cast<double>(sa.n + sb.n) - 2.0;
  const double pooled =
      dof > 0 ? std::sqrt(((sa.n - 1.0) * sa.sd * sa.sd + (sb.n - 1.0) * sb.sd * sb.sd) / dof) : 0.0;
  const double diff = sa.mean - sb.mean;
  if (pooled == 0.0) {
    if (diff == 0.0) return 0.0;
    return diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  }
  return diff / pooled;
}

namespace {

struct Group {
  std::string label;
  std::vector<double> values;  // transformed
  double mean = 0.0;           // transformed
  double raw_mean = 0.0;
};

struct SplitContext {
  const std::vector<Group>& groups;
  double mean_variance;  // MSE / n, variance of a group mean
  double error_dof;
  double alpha;
};

// Classic Scott-Knott on group means over [lo, hi); appends cluster end indices.
void split_recursive(const SplitContext& ctx, std::size_t lo, std::size_t hi, std::vector<std::size_t>& cuts) {
  const std::size_t k = hi - lo;
  if (k < 2) return;

  double total = 0.0;
  for (std::size_t i = lo; i < hi; ++i) total += ctx.groups[i].mean;
  const double grand = total / static_cast<double>(k);

  double best_b = -1.0;
  std::size_t best_split = lo + 1;
  double left = 0.0;
  for (std::size_t s = lo + 1; s < hi; ++s) {
    left += ctx.groups[s - 1].mean;
    const double k1 = static_cast<double>(s - lo);
    const double k2 = static_cast<double>(hi - s);
    const double right = total - left;
    const double b = left * left / k1 + right * right / k2 - total * total / static_cast<double>(k);
    if (b > best_b) {
      best_b = b;
      best_split = s;
    }
  }

  double spread = 0.0;
  for (std::size_t i = lo; i < hi; ++i) spread += (ctx.groups[i].mean - grand) * (ctx.groups[i].mean - grand);
  const double sigma2 = (spread + ctx.error_dof * ctx.mean_variance) / (static_cast<double>(k) + ctx.error_dof);
  if (!(sigma2 > 0.0) || best_b <= 0.0) return;

  constexpr double pi = std::numbers::pi;
  const double lambda = pi / (2.0 * (pi - 2.0)) * best_b / sigma2;
  const double dof = static_cast<double>(k) / (pi - 2.0);
  if (lambda <= chi_square_quantile(1.0 - ctx.alpha, dof)) return;

  split_recursive(ctx, lo, best_split, cuts);
  cuts.push_back(best_split);
  split_recursive(ctx, best_split, hi, cuts);
}

}  // namespace

RankAssignment scott_knott_esd(const std::vector<std::pair<std::string, std::vector<double>>>& input,
                               const ScottKnottConfig& config) {
  if (input.empty()) throw Error(ErrorKind::InvalidArgument, "scott_knott_esd needs at least one group");
  std::vector<Group> groups;
  for (const auto& [label, values] : input) {
    if (values.size() < 2) throw Error(ErrorKind::InvalidArgument, "group '" + label + "' has fewer than 2 observations");
    Group g;
    g.label = label;
    for (double v : values) g.values.push_back(config.log1p_transform ? std::log1p(v) : v);
    g.mean = summarize(g.values).mean;
    g.raw_mean = summarize(values).mean;
    groups.push_back(std::move(g));
  }
  std::stable_sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) { return a.mean > b.mean; });

  RankAssignment out;
  for (const auto& g : groups) {
    out.labels.push_back(g.label);
    out.means.push_back(g.raw_mean);
  }

  // Pooled within-group variance over every group.
  double sse = 0.0;
  std::size_t n_total = 0;
  double inv_n_sum = 0.0;
  for (const auto& g : groups) {
    for (double v : g.values) sse += (v - g.mean) * (v - g.mean);
    n_total += g.values.size();
    inv_n_sum += 1.0 / static_cast<double>(g.values.size());
  }
  const double error_dof = static_cast<double>(n_total - groups.size());
  const double mse = error_dof > 0 ? sse / error_dof : 0.0;
  const double harmonic_n = static_cast<double>(groups.size()) / inv_n_sum;

  const bool all_equal_means = std::all_of(groups.begin(), groups.end(),
                                           [&](const Group& g) { return g.mean == groups.front().mean; });
  if (mse == 0.0 && all_equal_means) {
    // DegenerateVariance: nothing to separate.
    out.ranks.assign(groups.size(), 1);
    return out;
  }

  SplitContext ctx{groups, mse / harmonic_n, error_dof, config.alpha};
  std::vector<std::size_t> cuts;
  split_recursive(ctx, 0, groups.size(), cuts);
  cuts.push_back(groups.size());

  // Clusters as [begin, end) ranges, then merge negligible neighbours.
  std::vector<std::pair<std::size_t, std::size_t>> clusters;
  std::size_t begin = 0;
  for (auto end : cuts) {
    clusters.emplace_back(begin, end);
    begin = end;
  }
  auto pooled = [&](std::pair<std::size_t, std::size_t> c) {
    std::vector<double> v;
    for (std::size_t i = c.first; i < c.second; ++i) v.insert(v.end(), groups[i].values.begin(), groups[i].values.end());
    return v;
  };
  std::vector<std::pair<std::size_t, std::size_t>> merged{clusters.front()};
  for (std::size_t c = 1; c < clusters.size(); ++c) {
    auto a = pooled(merged.back());
    auto b = pooled(clusters[c]);
    if (std::abs(cohens_d(a, b)) < config.negligible_effect) {
      merged.back().second = clusters[c].second;
    } else {
      merged.push_back(clusters[c]);
    }
  }

  out.ranks.assign(groups.size(), 0);
  for (std::size_t r = 0; r < merged.size(); ++r) {
    for (std::size_t i = merged[r].first; i < merged[r].second; ++i) out.ranks[i] = static_cast<int>(r + 1);
  }
  return out;
}

double cost_per_hv_percent(double opt_cost_usd, double delta_hv_pct) {
  if (!(delta_hv_pct > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "Cost/dHV% is undefined without a positive HV gain");
  }
  return opt_cost_usd / delta_hv_pct;
}

EfficiencyReport efficiency_report(double opt_cost_usd, double opt_runtime_s, double hv_base, double hv_new) {
  EfficiencyReport r;
  r.opt_cost_usd = opt_cost_usd;
  r.opt_runtime_s = opt_runtime_s;
  r.hv_base = hv_base;
  r.hv_new = hv_new;
  r.delta_hv_pct = delta_hv_percent(hv_base, hv_new);
  if (r.delta_hv_pct > 0.0) r.cost_per_hv_pct = cost_per_hv_percent(opt_cost_usd, r.delta_hv_pct);
  return r;
}

std::string normalize_description(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    auto uc = static_cast<unsigned char>(c);
    if (std::ispunct(uc)) continue;
    if (std::isspace(uc)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(uc)));
  }
  return out;
}

std::vector<PatternRow> pattern_table(std::span<const EditRecord> edits, const EvaluationResult* baseline) {
  std::map<std::string, PatternRow> rows;
  for (const auto& e : edits) {
    const EvaluationResult* base = e.baseline ? &*e.baseline : baseline;
    if (!base) throw Error(ErrorKind::MissingBaseline, "no baseline evaluation for edit '" + e.description + "'");
    auto key = normalize_description(e.description);
    auto& row = rows[key];
    row.description = key;
    ++row.edits;
    if (e.child.pass_rate > base->pass_rate) ++row.pass_improved;
    if (e.child.cost_usd < base->cost_usd) ++row.cost_reduced;
    if (e.child.runtime_s < base->runtime_s) ++row.time_reduced;
  }
  std::vector<PatternRow> out;
  for (auto& [_, row] : rows) out.push_back(row);
  std::stable_sort(out.begin(), out.end(), [](const PatternRow& a, const PatternRow& b) { return a.edits > b.edits; });
  return out;
}

std::vector<EditRecord> edit_records_from_events(const std::vector<json>& events) {
  std::map<std::string, std::string> description_of;  // candidate id -> description
  for (const auto& ev : events) {
    if (ev.value("type", "") == "proposal") {
      description_of[ev.at("candidate_id").get<std::string>()] = ev.at("op").value("description", "");
    }
  }
  std::vector<EditRecord> out;
  for (const auto& ev : events) {
    if (ev.value("type", "") != "child_eval") continue;
    auto id = ev.at("candidate_id").get<std::string>();
    auto it = description_of.find(id);
    if (it == description_of.end()) continue;
    out.push_back(EditRecord{it->second, ev.at("result").get<EvaluationResult>(), std::nullopt});
  }
  return out;
}

}  // namespace skillmoo
