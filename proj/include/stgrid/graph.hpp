#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stgrid/core.hpp"
#include "stgrid/timeseries.hpp"

namespace stgrid {

// ---------------------------------------------------------------------------
// Pearson correlation
// ---------------------------------------------------------------------------

struct CorrelationMatrix {
  std::size_t n = 0;
  Mat rho;  // |pearson|, symmetric, unit diagonal
  std::vector<std::size_t> zero_variance_nodes;
};

// Absolute Pearson correlation between node rows. Rows with zero variance get
// zero correlation to every other node (flagged) and a unit diagonal.
inline CorrelationMatrix pearson_abs(const Mat& values) {
  const std::size_t N = values.rows, T = values.cols;
  if (N == 0 || T < 2) throw Error("pearson_abs: need at least 1 node and 2 timesteps");

  std::vector<double> mean(N, 0.0), sd(N, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t t = 0; t < T; ++t) mean[i] += values.at(i, t);
    mean[i] /= static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t) {
      double d = values.at(i, t) - mean[i];
      sd[i] += d * d;
    }
    sd[i] = std::sqrt(sd[i] / static_cast<double>(T));
  }

  CorrelationMatrix cm;
  cm.n = N;
  cm.rho = Mat(N, N);
  for (std::size_t i = 0; i < N; ++i) {
    if (sd[i] == 0.0) cm.zero_variance_nodes.push_back(i);
    cm.rho.at(i, i) = 1.0;
  }
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = i + 1; j < N; ++j) {
      double r = 0.0;
      if (sd[i] > 0.0 && sd[j] > 0.0) {
        double cov = 0.0;
        for (std::size_t t = 0; t < T; ++t)
          cov += (values.at(i, t) - mean[i]) * (values.at(j, t) - mean[j]);
        cov /= static_cast<double>(T);
        r = std::fabs(cov / (sd[i] * sd[j]));
        if (r > 1.0) r = 1.0;  // clamp numerical overshoot
      }
      cm.rho.at(i, j) = r;
      cm.rho.at(j, i) = r;
    }
  }
  return cm;
}

inline CorrelationMatrix pearson_abs(const AlignedPanel& panel) {
  return pearson_abs(panel.values);
}

// ---------------------------------------------------------------------------
// Redundancy-controlled thresholding
// ---------------------------------------------------------------------------

// Correlation threshold for a redundancy percentage p in [0, 100].
// Let U be the ascending multiset of upper-triangle |rho| values. p = 100
// keeps everything (theta = min U); p = 0 keeps nothing (theta = max U, and
// the graph is built empty); otherwise theta is the nearest-rank lower
// quantile at (100 - p)%, i.e. U[max(1, round((100-p)/100 * |U|))] 1-indexed.
inline double threshold_from_redundancy(const CorrelationMatrix& cm, int redundancy_pct) {
  if (redundancy_pct < 0 || redundancy_pct > 100)
    throw Error("threshold_from_redundancy: p must be in [0, 100], got " +
                std::to_string(redundancy_pct));
  if (cm.n < 2) throw Error("threshold_from_redundancy: need at least 2 nodes");

  std::vector<double> u;
  u.reserve(cm.n * (cm.n - 1) / 2);
  for (std::size_t i = 0; i < cm.n; ++i)
    for (std::size_t j = i + 1; j < cm.n; ++j) u.push_back(cm.rho.at(i, j));
  std::sort(u.begin(), u.end());

  if (redundancy_pct == 100) return u.front();
  if (redundancy_pct == 0) return u.back();
  const double m = static_cast<double>(u.size());
  long rank = std::lround((100.0 - redundancy_pct) / 100.0 * m);
  if (rank < 1) rank = 1;
  if (rank > static_cast<long>(u.size())) rank = static_cast<long>(u.size());
  return u[static_cast<std::size_t>(rank) - 1];
}

// ---------------------------------------------------------------------------
// Graph construction
// ---------------------------------------------------------------------------

// Undirected weighted graph over sensor nodes. adjacency(i,j) holds the
// retained |rho| weight (zero diagonal, symmetric).
struct WeightedGraph {
  std::size_t n = 0;
  Mat adjacency;
  int redundancy_pct = 0;
  double threshold = 0.0;

  std::size_t edge_count() const {
    std::size_t e = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (adjacency.at(i, j) > 0.0) ++e;
    return e;
  }
};

// Keeps edges with |rho| >= theta (inclusive). p = 0 always yields the empty
// graph regardless of ties at the maximum.
inline WeightedGraph build_graph(const CorrelationMatrix& cm, int redundancy_pct) {
  WeightedGraph g;
  g.n = cm.n;
  g.redundancy_pct = redundancy_pct;
  g.threshold = threshold_from_redundancy(cm, redundancy_pct);
  g.adjacency = Mat(cm.n, cm.n);
  if (redundancy_pct == 0) return g;
  for (std::size_t i = 0; i < cm.n; ++i)
    for (std::size_t j = i + 1; j < cm.n; ++j)
      if (cm.rho.at(i, j) >= g.threshold) {
        g.adjacency.at(i, j) = cm.rho.at(i, j);
        g.adjacency.at(j, i) = cm.rho.at(i, j);
      }
  return g;
}

// ---------------------------------------------------------------------------
// Symmetric renormalization
// ---------------------------------------------------------------------------

struct NormalizedAdjacency {
  std::size_t n = 0;
  Mat a_hat;  // D^{-1/2} (A + I) D^{-1/2}
};

inline NormalizedAdjacency normalize_adjacency(const WeightedGraph& g) {
  NormalizedAdjacency na;
  na.n = g.n;
  na.a_hat = Mat(g.n, g.n);
  std::vector<double> dinv(g.n);
  for (std::size_t i = 0; i < g.n; ++i) {
    double d = 1.0;  // self-loop
    for (std::size_t j = 0; j < g.n; ++j)
      if (j != i) d += g.adjacency.at(i, j);
    dinv[i] = 1.0 / std::sqrt(d);
  }
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t j = 0; j < g.n; ++j) {
      double a = (i == j) ? 1.0 : g.adjacency.at(i, j);
      if (a != 0.0) na.a_hat.at(i, j) = dinv[i] * a * dinv[j];
    }
  return na;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

inline nlohmann::json graph_to_json(const WeightedGraph& g) {
  nlohmann::json j;
  j["n"] = g.n;
  j["p"] = g.redundancy_pct;
  j["theta"] = g.threshold;
  auto edges = nlohmann::json::array();
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t k = i + 1; k < g.n; ++k)
      if (g.adjacency.at(i, k) > 0.0)
        edges.push_back({i, k, g.adjacency.at(i, k)});
  j["edges"] = std::move(edges);
  return j;
}

// Square matrix as CSV with node ids on the header row and first column.
inline void export_heatmap_csv(const Mat& m, const std::vector<std::string>& ids,
                               const std::string& path) {
  if (m.rows != m.cols || m.rows != ids.size())
    throw Error("export_heatmap_csv: matrix/id shape mismatch");
  std::ofstream out(path);
  if (!out) throw Error("export_heatmap_csv: cannot open " + path);
  out << "node";
  for (const auto& id : ids) out << ',' << id;
  out << '\n';
  for (std::size_t i = 0; i < m.rows; ++i) {
    out << ids[i];
    for (std::size_t j = 0; j < m.cols; ++j) out << ',' << m.at(i, j);
    out << '\n';
  }
}

}  // namespace stgrid
