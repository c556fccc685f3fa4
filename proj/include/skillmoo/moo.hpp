#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace skillmoo {

/// Minimization vector [-pass, cost].
struct ObjectiveVector {
  double neg_pass = 0.0;
  double cost = 0.0;

  static ObjectiveVector from(double pass_rate, double cost_usd) { return {-pass_rate, cost_usd}; }
  double pass() const { return -neg_pass; }

  friend bool operator==(const ObjectiveVector&, const ObjectiveVector&) = default;
};

/// a is no worse in both objectives and strictly better in at least one.
bool dominates(const ObjectiveVector& a, const ObjectiveVector& b);

struct FrontAssignment {
  std::vector<int> front;        // per input point, 0 = non-dominated
  std::vector<double> crowding;  // per input point, computed within its own front
  int front_count = 0;

  /// Input indices in front f, in input order.
  std::vector<std::size_t> members(int f) const;
};

FrontAssignment nondominated_sort(std::span<const ObjectiveVector> points);

/// Deb's crowding distance for points on one front. Extremes of each
/// objective get +inf (ties in sort order resolved by input position), and
/// zero-range objectives add nothing to interior points.
std::vector<double> crowding_distance(std::span<const ObjectiveVector> front);

struct SelectionEntry {
  ObjectiveVector objective;
  long arrival_index = 0;
};

/// NSGA-II survivor selection. Returns the chosen positions into
/// `candidates`, best first: ascending front, then descending crowding
/// distance, then ascending arrival_index.
std::vector<std::size_t> nsga2_select(std::span<const SelectionEntry> candidates, std::size_t k);

struct HvPoint {
  double pass = 0.0;  // in [0, 1] after normalization
  double cost = 0.0;  // raw cost
};

struct HypervolumeResult {
  double value = 0.0;
  double ref_pass = 0.0;
  double ref_cost = 1.0;  // normalized
  double cost_ceiling = 1.0;
};

/// Area dominated by `front` in the unit box with pass maximized and
/// cost/cost_ceiling (clipped at 1) minimized; reference point (0, 1).
/// `tests_total` > 0 divides pass values first (raw passed-test counts);
/// pass 0 means the values are already rates.
HypervolumeResult hypervolume_2d(std::span<const HvPoint> front, double cost_ceiling, int tests_total = 0);

/// 100 * (hv_new - hv_base) / hv_base. Throws ZeroBaseline when hv_base <= 0.
double delta_hv_percent(double hv_base, double hv_new);

}  // namespace skillmoo
