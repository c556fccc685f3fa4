#include "skillmoo/moo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "skillmoo/error.hpp"

namespace skillmoo {

bool dominates(const ObjectiveVector& a, const ObjectiveVector& b) {
  return a.neg_pass <= b.neg_pass && a.cost <= b.cost && (a.neg_pass < b.neg_pass || a.cost < b.cost);
}

std::vector<std::size_t> FrontAssignment::members(int f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < front.size(); ++i) {
    if (front[i] == f) out.push_back(i);
  }
  return out;
}

FrontAssignment nondominated_sort(std::span<const ObjectiveVector> points) {
  const std::size_t n = points.size();
  FrontAssignment result;
  result.front.assign(n, -1);
  result.crowding.assign(n, 0.0);

  // Deb's bookkeeping: who each point dominates, and how many dominate it.
  std::vector<std::vector<std::size_t>> dominated(n);
  std::vector<std::size_t> dominator_count(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (dominates(points[i], points[j])) {
        dominated[i].push_back(j);
        ++dominator_count[j];
      } else if (dominates(points[j], points[i])) {
        dominated[j].push_back(i);
        ++dominator_count[i];
      }
    }
  }

  std::vector<std::size_t> current;
  for (std::size_t i = 0; i < n; ++i) {
    if (dominator_count[i] == 0) current.push_back(i);
  }
  int f = 0;
  while (!current.empty()) {
    std::vector<std::size_t> next;
    for (auto i : current) {
      result.front[i] = f;
      for (auto j : dominated[i]) {
        if (--dominator_count[j] == 0) next.push_back(j);
      }
    }
    std::sort(next.begin(), next.end());
    current = std::move(next);
    ++f;
  }
  result.front_count = f;

  for (int k = 0; k < f; ++k) {
    auto idx = result.members(k);
    std::vector<ObjectiveVector> pts;
    pts.reserve(idx.size());
    for (auto i : idx) pts.push_back(points[i]);
    auto cd = crowding_distance(pts);
    for (std::size_t m = 0; m < idx.size(); ++m) result.crowding[idx[m]] = cd[m];
  }
  return result;
}

std::vector<double> crowding_distance(std::span<const ObjectiveVector> front) {
  const std::size_t n = front.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(n, 0.0);
  if (n <= 2) {
    std::fill(dist.begin(), dist.end(), inf);
    return dist;
  }

  auto accumulate = [&](auto value_of) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return value_of(front[a]) < value_of(front[b]); });
    dist[order.front()] = inf;
    dist[order.back()] = inf;
    double lo = value_of(front[order.front()]);
    double hi = value_of(front[order.back()]);
    double range = hi - lo;
    if (range <= 0.0) return;
    for (std::size_t m = 1; m + 1 < n; ++m) {
      dist[order[m]] += (value_of(front[order[m + 1]]) - value_of(front[order[m - 1]])) / range;
    }
  };
  accumulate([](const ObjectiveVector& v) { return v.neg_pass; });
  accumulate([](const ObjectiveVector& v) { return v.cost; });
  return dist;
}

std::vector<std::size_t> nsga2_select(std::span<const SelectionEntry> candidates, std::size_t k) {
  if (k > candidates.size()) {
    throw Error(ErrorKind::InvalidArgument, "cannot select " + std::to_string(k) + " of " +
                                                std::to_string(candidates.size()) + " candidates");
  }
  std::vector<ObjectiveVector> pts;
  pts.reserve(candidates.size());
  for (const auto& c : candidates) pts.push_back(c.objective);
  auto fa = nondominated_sort(pts);

  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (fa.front[a] != fa.front[b]) return fa.front[a] < fa.front[b];
    if (fa.crowding[a] != fa.crowding[b]) return fa.crowding[a] > fa.crowding[b];
    if (candidates[a].arrival_index != candidates[b].arrival_index) {
      return candidates[a].arrival_index < candidates[b].arrival_index;
    }
    return a < b;
  });
  order.resize(k);
  return order;
}

HypervolumeResult hypervolume_2d(std::span<const HvPoint> front, double cost_ceiling, int tests_total) {
  if (!(cost_ceiling > 0.0)) throw Error(ErrorKind::InvalidArgument, "cost_ceiling must be positive");
  HypervolumeResult result;
  result.cost_ceiling = cost_ceiling;

  std::vector<HvPoint> pts;
  pts.reserve(front.size());
  for (const auto& p : front) {
    double pass = tests_total > 0 ? p.pass / tests_total : p.pass;
    pass = std::clamp(pass, 0.0, 1.0);
    double cost = std::clamp(p.cost / cost_ceiling, 0.0, 1.0);
    pts.push_back({pass, cost});
  }
  // Pass descending, cost ascending; then keep the staircase of strictly
  // improving cost, which drops dominated points and duplicates.
  std::sort(pts.begin(), pts.end(), [](const HvPoint& a, const HvPoint& b) {
    return a.pass != b.pass ? a.pass > b.pass : a.cost < b.cost;
  });
  std::vector<HvPoint> stairs;
  for (const auto& p : pts) {
    if (stairs.empty() || p.cost < stairs.back().cost) stairs.push_back(p);
  }
  double hv = 0.0;
  for (std::size_t i = 0; i < stairs.size(); ++i) {
    double next_pass = i + 1 < stairs.size() ? stairs[i + 1].pass : 0.0;
    hv += (stairs[i].pass - next_pass) * (1.0 - stairs[i].cost);
  }
  result.value = hv;
  return result;
}

double delta_hv_percent(double hv_base, double hv_new) {
  if (!(hv_base > 0.0)) throw Error(ErrorKind::ZeroBaseline, "baseline hypervolume is zero");
  return 100.0 * (hv_new - hv_base) / hv_base;
}

}  // namespace skillmoo
