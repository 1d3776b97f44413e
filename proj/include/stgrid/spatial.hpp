#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "stgrid/core.hpp"

namespace stgrid {

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
};

// Great-circle distance in kilometres (mean Earth radius).
inline double haversine_km(const GeoPoint& a, const GeoPoint& b) {
  constexpr double kEarthRadiusKm = 6371.0088;
  constexpr double deg = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * deg;
  const double dlon = (b.lon - a.lon) * deg;
  const double s1 = std::sin(dlat / 2), s2 = std::sin(dlon / 2);
  const double h = s1 * s1 + std::cos(a.lat * deg) * std::cos(b.lat * deg) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

// ---------------------------------------------------------------------------
// Agglomerative clustering (average linkage, great-circle distance)
// ---------------------------------------------------------------------------

struct ClusterModel {
  std::size_t k = 0;
  std::map<std::string, std::size_t> assignments;  // sensor_id -> cluster index
  std::vector<GeoPoint> centroids;                 // arithmetic mean of member coords
  std::vector<std::vector<std::size_t>> members;   // point indices per cluster
};

// Bottom-up merging until k clusters remain. The pair with the smallest
// average pairwise distance merges first; exact ties break on the smallest
// lexicographic (member-id, member-id) label pair, so results are identical
// across platforms. Cluster indices are ordered by smallest member id.
inline ClusterModel agglomerative_cluster(const std::vector<std::string>& ids,
                                          const std::vector<GeoPoint>& points, std::size_t k) {
  const std::size_t n = ids.size();
  if (points.size() != n) throw Error("agglomerative_cluster: ids/points length mismatch");
  if (k == 0 || n < k)
    throw Error("agglomerative_cluster: need at least k=" + std::to_string(k) + " points, got " +
                std::to_string(n));

  std::vector<std::vector<std::size_t>> clusters(n);
  std::vector<std::string> labels(n);  // smallest member id per cluster
  for (std::size_t i = 0; i < n; ++i) {
    clusters[i] = {i};
    labels[i] = ids[i];
  }

  auto avg_linkage = [&](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    double sum = 0.0;
    for (std::size_t i : a)
      for (std::size_t j : b) sum += haversine_km(points[i], points[j]);
    return sum / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
  };

  while (clusters.size() > k) {
    std::size_t best_a = 0, best_b = 1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < clusters.size(); ++a) {
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        double d = avg_linkage(clusters[a], clusters[b]);
        if (d < best_d) {
          best_d = d;
          best_a = a;
          best_b = b;
        } else if (d == best_d) {
          auto key = [&](std::size_t x, std::size_t y) {
            return std::minmax(labels[x], labels[y]);
          };
          if (key(a, b) < key(best_a, best_b)) {
            best_a = a;
            best_b = b;
          }
        }
      }
    }
    auto& dst = clusters[best_a];
    dst.insert(dst.end(), clusters[best_b].begin(), clusters[best_b].end());
    labels[best_a] = std::min(labels[best_a], labels[best_b]);
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(best_b));
    labels.erase(labels.begin() + static_cast<std::ptrdiff_t>(best_b));
  }

  std::vector<std::size_t> order(clusters.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return labels[a] < labels[b]; });

  ClusterModel model;
  model.k = k;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    auto mem = clusters[order[rank]];
    std::sort(mem.begin(), mem.end());
    GeoPoint c{0.0, 0.0};
    for (std::size_t i : mem) {
      model.assignments[ids[i]] = rank;
      c.lat += points[i].lat;
      c.lon += points[i].lon;
    }
    c.lat /= static_cast<double>(mem.size());
    c.lon /= static_cast<double>(mem.size());
    model.centroids.push_back(c);
    model.members.push_back(std::move(mem));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Node subset selection
// ---------------------------------------------------------------------------

struct SubsetPlan {
  std::size_t K = 0;
  std::vector<std::string> selected;               // priority order
  std::map<std::string, std::string> provenance;   // sensor_id -> reason tag
};

namespace detail {

// Farthest-point step: the unselected point maximizing the minimum distance
// to the selected set; ties break on the smallest sensor id.
inline std::size_t farthest_point(const std::vector<std::string>& ids,
                                  const std::vector<GeoPoint>& points,
                                  const std::vector<bool>& taken) {
  std::size_t best = ids.size();
  double best_d = -1.0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (taken[i]) continue;
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < ids.size(); ++j)
      if (taken[j]) dmin = std::min(dmin, haversine_km(points[i], points[j]));
    if (dmin > best_d || (dmin == best_d && best < ids.size() && ids[i] < ids[best])) {
      best_d = dmin;
      best = i;
    }
  }
  return best;
}

inline std::size_t nearest_unselected(const GeoPoint& target, const std::vector<std::string>& ids,
                                      const std::vector<GeoPoint>& points,
                                      const std::vector<bool>& taken) {
  std::size_t best = ids.size();
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (taken[i]) continue;
    double d = haversine_km(points[i], target);
    if (d < best_d || (d == best_d && best < ids.size() && ids[i] < ids[best])) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

}  // namespace detail

// Chooses K sensors by a fixed priority ordering, so plans for different K
// are nested prefixes of one canonical sequence:
//   1. one centroid-nearest sensor per cluster              [centroid-nearest]
//   2. up to three dispersion picks (farthest-point)        [dispersion]
//   3. expansion picks: repeatedly merge the two clusters
//      with nearest centroids and take the two sensors
//      closest to each merged centroid                      [merge-expansion]
//   4. any remainder by farthest-point sampling             [dispersion]
// Strict mode enforces the benchmark grid (K in {8,16,25}, 5 clusters);
// otherwise any K <= network size is allowed.
inline SubsetPlan select_subset(const ClusterModel& model, const std::vector<std::string>& ids,
                                const std::vector<GeoPoint>& points, std::size_t K,
                                bool strict = false) {
  const std::size_t n = ids.size();
  if (points.size() != n) throw Error("select_subset: ids/points length mismatch");
  if (K == 0 || K > n)
    throw Error("select_subset: K=" + std::to_string(K) + " outside network size " +
                std::to_string(n));
  if (strict) {
    if (K != 8 && K != 16 && K != 25)
      throw Error("select_subset: strict mode requires K in {8,16,25}, got " + std::to_string(K));
    if (model.k != 5)
      throw Error("select_subset: strict mode requires a 5-cluster model, got k=" +
                  std::to_string(model.k));
  }

  SubsetPlan plan;
  plan.K = K;
  std::vector<bool> taken(n, false);
  auto take = [&](std::size_t i, const char* tag) {
    taken[i] = true;
    plan.selected.push_back(ids[i]);
    plan.provenance[ids[i]] = tag;
  };

  // 1. centroid-nearest, one per cluster in cluster-index order
  for (std::size_t c = 0; c < model.centroids.size() && plan.selected.size() < K; ++c) {
    std::size_t best = n;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i : model.members[c]) {
      if (taken[i]) continue;
      double d = haversine_km(points[i], model.centroids[c]);
      if (d < best_d || (d == best_d && best < n && ids[i] < ids[best])) {
        best_d = d;
        best = i;
      }
    }
    if (best < n) take(best, "centroid-nearest");
  }

  // 2. dispersion picks up to |clusters| + 3
  const std::size_t dispersion_goal = std::min(K, model.centroids.size() + 3);
  while (plan.selected.size() < dispersion_goal) {
    std::size_t i = detail::farthest_point(ids, points, taken);
    if (i >= n) break;
    take(i, "dispersion");
  }

  // 3. merge-expansion: coalesce nearest-centroid cluster pairs, pulling the
  //    two sensors closest to each merged centroid
  std::vector<GeoPoint> cents = model.centroids;
  std::vector<std::vector<std::size_t>> mems = model.members;
  while (plan.selected.size() < K && cents.size() > 1) {
    std::size_t ma = 0, mb = 1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < cents.size(); ++a)
      for (std::size_t b = a + 1; b < cents.size(); ++b) {
        double d = haversine_km(cents[a], cents[b]);
        if (d < best_d) {
          best_d = d;
          ma = a;
          mb = b;
        }
      }
    auto& dst = mems[ma];
    dst.insert(dst.end(), mems[mb].begin(), mems[mb].end());
    GeoPoint c{0.0, 0.0};
    for (std::size_t i : dst) {
      c.lat += points[i].lat;
      c.lon += points[i].lon;
    }
    c.lat /= static_cast<double>(dst.size());
    c.lon /= static_cast<double>(dst.size());
    cents[ma] = c;
    cents.erase(cents.begin() + static_cast<std::ptrdiff_t>(mb));
    mems.erase(mems.begin() + static_cast<std::ptrdiff_t>(mb));
    for (int pick = 0; pick < 2 && plan.selected.size() < K; ++pick) {
      std::size_t i = detail::nearest_unselected(c, ids, points, taken);
      if (i >= n) break;
      take(i, "merge-expansion");
    }
  }

  // 4. fallback: farthest-point sampling for anything still missing
  while (plan.selected.size() < K) {
    std::size_t i = detail::farthest_point(ids, points, taken);
    if (i >= n) break;
    take(i, "dispersion");
  }
  return plan;
}

inline nlohmann::json subset_to_json(const SubsetPlan& plan) {
  nlohmann::json j;
  j["K"] = plan.K;
  j["sensors"] = plan.selected;
  j["provenance"] = plan.provenance;
  return j;
}

}  // namespace stgrid
