#include <algorithm>
#include <random>

#include "doctest.h"
#include "skillmoo/analysis.hpp"
#include "skillmoo/error.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace skillmoo;

namespace {

using Groups = std::vector<std::pair<std::string, std::vector<double>>>;

std::vector<double> normal(double mean, double sd, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(mean, sd);
  std::vector<double> v;
  for (int i = 0; i < n; ++i) v.push_back(d(rng));
  return v;
}

}  // namespace

TEST_CASE("summary statistics and formatting") {
  std::vector<double> v{1, 2, 3};
  auto s = summarize(v);
  CHECK(s.mean == 2.0);
  CHECK(s.sd == 1.0);
  CHECK(s.n == 3);
  std::vector<double> one{0.5};
  CHECK(summarize(one).sd == 0.0);
  CHECK(format_mean_sd({0.97, 0.001, 5}, 2) == "0.97±0.00");
  CHECK(format_mean_sd({-0.001, 0.0, 5}, 2) == "0.00±0.00");
  CHECK(format_mean_sd({612.44, 214.2, 5}, 1) == "612.4±214.2");
}

TEST_CASE("chi-square quantiles") {
  CHECK(chi_square_quantile(0.95, 1) == doctest::Approx(3.841459).epsilon(1e-6));
  CHECK(chi_square_quantile(0.95, 2) == doctest::Approx(5.991465).epsilon(1e-6));
}

TEST_CASE("Cohen's d") {
  std::vector<double> a{1, 2, 3}, b{2, 3, 4};
  CHECK(cohens_d(a, b) == doctest::Approx(-1.0));
  CHECK(cohens_d(a, a) == 0.0);
}

TEST_CASE("identical groups share rank 1") {
  std::vector<double> same{0.5, 0.5, 0.5};
  auto r = scott_knott_esd({{"a", same}, {"b", same}, {"c", same}});
  CHECK(r.ranks == std::vector<int>{1, 1, 1});
  auto noisy = normal(0.5, 0.05, 10, 1);
  r = scott_knott_esd({{"a", noisy}, {"b", noisy}});
  CHECK(r.ranks == std::vector<int>{1, 1});
}

TEST_CASE("well separated groups split, in agreement with a permutation test") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto hi = normal(0.9, 0.01, 10, seed);
    auto lo = normal(0.1, 0.01, 10, seed + 100);
    auto r = scott_knott_esd({{"lo", lo}, {"hi", hi}});
    CHECK(r.labels == std::vector<std::string>{"hi", "lo"});
    CHECK(r.ranks == std::vector<int>{1, 2});
    CHECK(oracle::permutation_p_value(hi, lo, 2000, seed) < 0.05);
  }
}

TEST_CASE("winner over a tie reproduces ranks 1, 2, 2") {
  int matches = 0;
  for (std::uint64_t draw = 0; draw < 10; ++draw) {
    auto groups = synthetic::winner_and_tie(draw);
    auto r = scott_knott_esd(groups);
    if (r.rank_of("optimized") == 1 && r.rank_of("original") == 2 && r.rank_of("none") == 2) ++matches;
  }
  CHECK(matches >= 9);
}

TEST_CASE("ranks are invariant under positive affine transforms and group order") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 30; ++t) {
    Groups g;
    for (int i = 0; i < 4; ++i) g.emplace_back("g" + std::to_string(i), normal(0.2 * (i % 3), 0.1, 8, rng()));
    auto base = scott_knott_esd(g);
    Groups scaled = g;
    for (auto& [_, v] : scaled) {
      for (auto& x : v) x = 3.5 * x + 7.0;
    }
    Groups shuffled = g;
    std::reverse(shuffled.begin(), shuffled.end());
    auto a = scott_knott_esd(scaled);
    auto b = scott_knott_esd(shuffled);
    for (const auto& label : base.labels) {
      CHECK(a.rank_of(label) == base.rank_of(label));
      CHECK(b.rank_of(label) == base.rank_of(label));
    }
    // ranks are contiguous and non-decreasing down the mean order
    CHECK(base.ranks.front() == 1);
    for (std::size_t i = 1; i < base.ranks.size(); ++i) {
      CHECK(base.ranks[i] - base.ranks[i - 1] >= 0);
      CHECK(base.ranks[i] - base.ranks[i - 1] <= 1);
      CHECK(base.means[i] <= base.means[i - 1]);
    }
  }
}

TEST_CASE("Scott-Knott input checks") {
  CHECK_THROWS_AS(scott_knott_esd({}), Error);
  CHECK_THROWS_AS(scott_knott_esd({{"a", {1.0}}}), Error);
  auto r = scott_knott_esd({{"a", {1.0, 2.0}}});
  CHECK(r.ranks == std::vector<int>{1});
  CHECK_THROWS_AS(r.rank_of("zzz"), Error);
}

TEST_CASE("efficiency report reproduces the published ratios") {
  auto t2 = efficiency_report(1.8611, 1545.08, 0.0056, 0.0296);
  CHECK(t2.delta_hv_pct == doctest::Approx(428.571).epsilon(1e-5));
  REQUIRE(t2.cost_per_hv_pct);
  CHECK(*t2.cost_per_hv_pct == doctest::Approx(0.0043).epsilon(0.02));

  auto t1 = efficiency_report(2.2676, 2305.00, 0.0081, 0.1783);
  REQUIRE(t1.cost_per_hv_pct);
  CHECK(*t1.cost_per_hv_pct >= 0.0010);
  CHECK(*t1.cost_per_hv_pct <= 0.0012);

  auto t3 = efficiency_report(1.7641, 867.40, 0.0078, 0.0311);
  CHECK(std::abs(*t3.cost_per_hv_pct - 0.0059) <= 0.0002);

  auto flat = efficiency_report(1.0, 1.0, 0.2, 0.2);
  CHECK(flat.delta_hv_pct == 0.0);
  CHECK_FALSE(flat.cost_per_hv_pct);

  try {
    efficiency_report(1.0, 1.0, 0.0, 0.2);
    FAIL("expected ZeroBaseline");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ZeroBaseline);
  }
  CHECK_THROWS_AS(cost_per_hv_percent(1.0, 0.0), Error);
}

TEST_CASE("description normalization") {
  CHECK(normalize_description("Bundle pruning (remove skill blocks)") == "bundle pruning remove skill blocks");
  CHECK(normalize_description("  BUNDLE   pruning: (remove skill blocks) ") == "bundle pruning remove skill blocks");
  CHECK(normalize_description("Explicit remove_skill") == "explicit removeskill");
  CHECK(normalize_description("").empty());
}

TEST_CASE("pattern table counts improvements against the baseline") {
  auto records = edit_records_from_events(synthetic::pruning_log());
  REQUIRE(records.size() == 9);
  auto base = synthetic::pruning_baseline();
  auto rows = pattern_table(records, &base);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].description == "bundle pruning remove skill blocks");
  CHECK(rows[0].edits == 7);
  CHECK(rows[0].pass_improved == 5);
  CHECK(rows[0].cost_reduced == 7);
  CHECK(rows[0].time_reduced == 4);
  // ties on edit count fall back to description order
  CHECK(rows[1].description == "bundle expansion add skill blocks");
  CHECK(rows[2].description == "bundle reorder");
  // unchanged metrics are not improvements
  CHECK(rows[2].pass_improved == 0);
  CHECK(rows[2].cost_reduced == 0);
  CHECK(rows[2].time_reduced == 0);
}

TEST_CASE("pattern table is invariant to edit order") {
  auto records = edit_records_from_events(synthetic::pruning_log());
  auto base = synthetic::pruning_baseline();
  auto reference = pattern_table(records, &base);
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    std::shuffle(records.begin(), records.end(), rng);
    auto rows = pattern_table(records, &base);
    REQUIRE(rows.size() == reference.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(rows[i].description == reference[i].description);
      CHECK(rows[i].edits == reference[i].edits);
      CHECK(rows[i].pass_improved == reference[i].pass_improved);
      CHECK(rows[i].cost_reduced == reference[i].cost_reduced);
      CHECK(rows[i].time_reduced == reference[i].time_reduced);
    }
  }
}

TEST_CASE("pattern table baselines") {
  auto records = edit_records_from_events(synthetic::pruning_log());
  try {
    pattern_table(records, nullptr);
    FAIL("expected MissingBaseline");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingBaseline);
  }
  // per-edit baselines override the table-wide one
  for (auto& r : records) r.baseline = synthetic::result(1.0, 0.0, 0.0);
  auto rows = pattern_table(records, nullptr);
  for (const auto& row : rows) {
    CHECK(row.pass_improved == 0);
    CHECK(row.cost_reduced == 0);
  }
}

TEST_CASE("edit records skip children without a proposal") {
  auto events = synthetic::pruning_log();
  events.push_back({{"type", "child_eval"}, {"candidate_id", "orphan"}, {"result", synthetic::result(1, 0, 0)}});
  events.push_back({{"type", "seed_eval"}, {"candidate_id", "c0"}, {"result", synthetic::result(0, 0, 0)}});
  CHECK(edit_records_from_events(events).size() == 9);
}
