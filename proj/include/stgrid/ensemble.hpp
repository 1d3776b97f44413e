#pragma once

// Spatializing univariate forecasters: correlation-weighted neighbor blending
// plus the line-delimited JSON adapter protocol for external processes.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "stgrid/core.hpp"
#include "stgrid/graph.hpp"
#include "stgrid/proc.hpp"

namespace stgrid {

// ---------------------------------------------------------------------------
// Blending
// ---------------------------------------------------------------------------

struct BlendConfig {
  int k = 3;           // neighbors per target node
  double alpha = 0.6;  // weight on the target's own forecast
  bool permissive = false;  // allows k = 0 (identity blend)
};

struct BlendResult {
  Mat output;
  std::vector<std::size_t> passthrough_nodes;  // all-zero similarity, left unblended
};

// output_i = alpha * f_i + (1 - alpha) * sum_j w_j f_j over the top-k
// neighbors by |rho| (ties to the lower node index), with w_j normalized
// over the selected neighbors. A node whose selected similarities are all
// zero passes through unblended and is flagged. Each horizon step blends
// independently.
inline BlendResult blend(const Mat& forecasts, const CorrelationMatrix& corr,
                         const BlendConfig& cfg) {
  const std::size_t N = forecasts.rows, H = forecasts.cols;
  if (corr.n != N)
    throw Error("blend: forecasts for " + std::to_string(N) + " nodes, correlations for " +
                std::to_string(corr.n));
  if (!all_finite(forecasts)) throw Error("blend: non-finite forecast values");
  if (cfg.alpha < 0.0 || cfg.alpha > 1.0)
    throw Error("blend: alpha must be in [0, 1], got " + std::to_string(cfg.alpha));
  if (cfg.k == 0 && cfg.permissive) return {forecasts, {}};
  if (cfg.k < 1 || static_cast<std::size_t>(cfg.k) > N - 1)
    throw Error("blend: k must be in [1, N-1], got " + std::to_string(cfg.k));

  BlendResult res;
  res.output = Mat(N, H);
  std::vector<std::size_t> cand;
  for (std::size_t i = 0; i < N; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < N; ++j)
      if (j != i) cand.push_back(j);
    std::sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
      const double ra = corr.rho.at(i, a), rb = corr.rho.at(i, b);
      if (ra != rb) return ra > rb;
      return a < b;
    });
    cand.resize(static_cast<std::size_t>(cfg.k));

    double wsum = 0.0;
    for (std::size_t j : cand) wsum += corr.rho.at(i, j);
    if (wsum == 0.0) {
      for (std::size_t h = 0; h < H; ++h) res.output.at(i, h) = forecasts.at(i, h);
      res.passthrough_nodes.push_back(i);
      continue;
    }
    for (std::size_t h = 0; h < H; ++h) {
      double nb = 0.0;
      for (std::size_t j : cand) nb += (corr.rho.at(i, j) / wsum) * forecasts.at(j, h);
      res.output.at(i, h) = cfg.alpha * forecasts.at(i, h) + (1.0 - cfg.alpha) * nb;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// External forecaster adapter (protocol v1)
// ---------------------------------------------------------------------------
// One UTF-8 JSON object per line on each stream. Request:
//   {"series_id": "...", "context": [...], "horizon": H, "freq_minutes": f}
// Response: {"forecast": [...H values...]} with an optional echoed
// "series_id" that must match when present.

struct ExternalForecasterHandle {
  std::vector<std::string> argv;
  double timeout_s = 30.0;
  int protocol_version = 1;
};

// One request/response round-trip per node over a running process; assembles
// the per-node forecasts into an N x H matrix. Throws on timeout, malformed
// JSON, or a wrong-length forecast; callers map that to a failed grid cell.
inline Mat per_node_forecast(LineProcess& proc, const std::vector<std::string>& ids,
                             const Mat& context, int horizon, int freq_minutes) {
  const std::size_t N = context.rows, C = context.cols;
  if (ids.size() != N) throw Error("per_node_forecast: id/context row mismatch");
  if (horizon < 1) throw Error("per_node_forecast: horizon must be >= 1");

  Mat out(N, static_cast<std::size_t>(horizon));
  for (std::size_t i = 0; i < N; ++i) {
    nlohmann::json req;
    req["series_id"] = ids[i];
    auto ctx = nlohmann::json::array();
    for (std::size_t t = 0; t < C; ++t) ctx.push_back(context.at(i, t));
    req["context"] = std::move(ctx);
    req["horizon"] = horizon;
    req["freq_minutes"] = freq_minutes;
    proc.send_line(req.dump());

    const std::string line = proc.read_line();
    nlohmann::json resp = nlohmann::json::parse(line, nullptr, false);
    if (resp.is_discarded() || !resp.is_object())
      throw Error("adapter protocol: malformed response line for series " + ids[i]);
    if (resp.contains("series_id") && resp["series_id"] != ids[i])
      throw Error("adapter protocol: response for series '" +
                  resp["series_id"].dump() + "' while awaiting '" + ids[i] + "'");
    if (!resp.contains("forecast") || !resp["forecast"].is_array())
      throw Error("adapter protocol: response missing 'forecast' array for series " + ids[i]);
    const auto& fc = resp["forecast"];
    if (static_cast<int>(fc.size()) != horizon)
      throw Error("adapter protocol: forecast length " + std::to_string(fc.size()) +
                  " != horizon " + std::to_string(horizon) + " for series " + ids[i]);
    for (int h = 0; h < horizon; ++h) {
      if (!fc[static_cast<std::size_t>(h)].is_number())
        throw Error("adapter protocol: non-numeric forecast entry for series " + ids[i]);
      const double v = fc[static_cast<std::size_t>(h)].get<double>();
      if (!std::isfinite(v))
        throw Error("adapter protocol: non-finite forecast value for series " + ids[i]);
      out.at(i, static_cast<std::size_t>(h)) = v;
    }
  }
  return out;
}

// Convenience wrapper that spawns the process for a single panel context.
inline Mat per_node_forecast(const ExternalForecasterHandle& handle,
                             const std::vector<std::string>& ids, const Mat& context, int horizon,
                             int freq_minutes) {
  LineProcess proc(handle.argv, handle.timeout_s);
  return per_node_forecast(proc, ids, context, horizon, freq_minutes);
}

}  // namespace stgrid
