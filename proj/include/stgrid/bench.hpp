#pragma once

// Benchmark engine: metrics, synthetic panel generation, key-value config,
// the (rate x K x p x model x seed) grid runner with a worker pool, and
// report emission (results.csv, table_pivot.csv, per-cell JSON, adjacency
// heatmaps).

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <numbers>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "stgrid/core.hpp"
#include "stgrid/csv.hpp"
#include "stgrid/ensemble.hpp"
#include "stgrid/graph.hpp"
#include "stgrid/models.hpp"
#include "stgrid/rng.hpp"
#include "stgrid/spatial.hpp"
#include "stgrid/timeseries.hpp"

namespace stgrid {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct EvalMetrics {
  double mae = 0.0;
  double rmse = 0.0;
};

// Single global mean over all windows, nodes and horizon steps. Window
// counts are equal across nodes, so this coincides with a node-average.
inline EvalMetrics mae_rmse(const std::vector<Mat>& pred, const std::vector<Mat>& truth) {
  if (pred.empty() || pred.size() != truth.size())
    throw Error("mae_rmse: need equal, non-zero window counts (" + std::to_string(pred.size()) +
                " vs " + std::to_string(truth.size()) + ")");
  double abs_sum = 0.0, sq_sum = 0.0;
  std::size_t count = 0;
  for (std::size_t w = 0; w < pred.size(); ++w) {
    if (!pred[w].same_shape(truth[w]))
      throw Error("mae_rmse: window " + std::to_string(w) + " shape mismatch " +
                  shape_str(pred[w].rows, pred[w].cols) + " vs " +
                  shape_str(truth[w].rows, truth[w].cols));
    if (!all_finite(pred[w]) || !all_finite(truth[w]))
      throw Error("mae_rmse: non-finite values in window " + std::to_string(w));
    for (std::size_t i = 0; i < pred[w].data.size(); ++i) {
      const double e = pred[w].data[i] - truth[w].data[i];
      abs_sum += std::fabs(e);
      sq_sum += e * e;
      ++count;
    }
  }
  if (count == 0) throw Error("mae_rmse: empty windows");
  return {abs_sum / static_cast<double>(count), std::sqrt(sq_sum / static_cast<double>(count))};
}

// ---------------------------------------------------------------------------
// Synthetic panels
// ---------------------------------------------------------------------------

// T_i(t) = mean_i + A sin(2 pi t / 24h + phi_i) + s_i(t) + eps_i(t), where s
// is a zero-mean field with cross-sensor covariance exp(-d_ij / l), AR(1) in
// time (coefficient 0.95), and eps is independent noise. Deterministic per
// seed; sigma = 0 and l = inf are legal degenerate settings.
struct SyntheticSpec {
  std::size_t sensors = 25;
  int days = 9;
  int base_rate_minutes = 5;
  double diurnal_amp = 3.0;
  double phase_spread = 0.0;  // fraction of a full cycle of per-sensor phase jitter
  double mean_level = 15.0;
  double mean_spread = 10.0;
  double length_scale_km = 2.0;
  double noise_sigma = 0.5;
  double spatial_amp = 1.5;
  double area_km = 10.0;
  uint64_t seed = 1;
};

inline constexpr int64_t kSyntheticOrigin = 1704067200;  // 2024-01-01T00:00:00Z
inline constexpr double kAr1Coeff = 0.95;

inline std::vector<SensorSeries> gen_synthetic(const SyntheticSpec& spec) {
  if (spec.sensors < 1 || spec.days < 1) throw Error("gen_synthetic: need sensors and days >= 1");
  if (!is_supported_rate(spec.base_rate_minutes))
    throw Error("gen_synthetic: unsupported base rate " + std::to_string(spec.base_rate_minutes));
  if (!(spec.length_scale_km > 0.0)) throw Error("gen_synthetic: length scale must be positive");
  if (spec.noise_sigma < 0.0) throw Error("gen_synthetic: noise sigma must be non-negative");
  if (spec.spatial_amp < 0.0 || spec.diurnal_amp < 0.0)
    throw Error("gen_synthetic: amplitudes must be non-negative");
  if (!(spec.area_km > 0.0)) throw Error("gen_synthetic: area must be positive");

  const std::size_t N = spec.sensors;
  const int64_t step = static_cast<int64_t>(spec.base_rate_minutes) * 60;
  const std::size_t T = static_cast<std::size_t>(spec.days) * 86400 / static_cast<std::size_t>(step);

  Rng rng(spec.seed);

  // sensor sites: uniform in an area_km square, mapped to lat/lon near a
  // reference point; ids are zero-padded so lexicographic order is numeric
  constexpr double lat0 = 40.0, lon0 = -105.0;
  const double km_per_deg_lat = 110.574;
  const double km_per_deg_lon = 111.320 * std::cos(lat0 * std::numbers::pi / 180.0);
  std::vector<SensorSeries> series(N);
  std::vector<GeoPoint> sites(N);
  int width = 2;
  for (std::size_t v = N; v >= 100; v /= 10) ++width;
  for (std::size_t i = 0; i < N; ++i) {
    const double x = rng.uniform() * spec.area_km;
    const double y = rng.uniform() * spec.area_km;
    sites[i] = {lat0 + y / km_per_deg_lat, lon0 + x / km_per_deg_lon};
    char buf[32];
    std::snprintf(buf, sizeof(buf), "s%0*zu", width, i + 1);
    series[i].sensor_id = buf;
    series[i].latitude = sites[i].lat;
    series[i].longitude = sites[i].lon;
    series[i].timestamps.reserve(T);
    series[i].values.reserve(T);
  }
  std::vector<double> mean(N), phase(N);
  for (std::size_t i = 0; i < N; ++i)
    mean[i] = spec.mean_level + spec.mean_spread * (rng.uniform() - 0.5);
  for (std::size_t i = 0; i < N; ++i)
    phase[i] = spec.phase_spread * 2.0 * std::numbers::pi * rng.uniform();

  // Cholesky factor of the spatial covariance (jitter for the rank-deficient
  // all-ones limit)
  ad::detail::EMat sigma(N, N);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j)
      sigma(i, j) = std::exp(-haversine_km(sites[i], sites[j]) / spec.length_scale_km);
  ad::detail::EMat chol;
  double jitter = 1e-12;
  for (;; jitter *= 10.0) {
    ad::detail::EMat s = sigma;
    for (std::size_t i = 0; i < N; ++i) s(i, i) += jitter;
    Eigen::LLT<ad::detail::EMat> llt(s);
    if (llt.info() == Eigen::Success) {
      chol = llt.matrixL();
      break;
    }
    if (jitter > 1e-6) throw Error("gen_synthetic: spatial covariance is not factorizable");
  }

  std::vector<double> s(N, 0.0), eta(N), mixed(N);
  const double innov = std::sqrt(1.0 - kAr1Coeff * kAr1Coeff);
  for (std::size_t k = 0; k < T; ++k) {
    for (std::size_t i = 0; i < N; ++i) eta[i] = rng.gaussian();
    for (std::size_t i = 0; i < N; ++i) {
      double v = 0.0;
      for (std::size_t j = 0; j <= i; ++j) v += chol(i, j) * eta[j];
      mixed[i] = v;
    }
    for (std::size_t i = 0; i < N; ++i)
      s[i] = (k == 0) ? mixed[i] : kAr1Coeff * s[i] + innov * mixed[i];

    const int64_t t = kSyntheticOrigin + static_cast<int64_t>(k) * step;
    const double day_angle =
        2.0 * std::numbers::pi * static_cast<double>(t - kSyntheticOrigin) / 86400.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double noise = spec.noise_sigma > 0.0 ? spec.noise_sigma * rng.gaussian() : 0.0;
      series[i].timestamps.push_back(t);
      series[i].values.push_back(mean[i] + spec.diurnal_amp * std::sin(day_angle + phase[i]) +
                                 spec.spatial_amp * s[i] + noise);
    }
  }
  return series;
}

inline void write_panel_csv(const std::vector<SensorSeries>& series, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("write_panel_csv: cannot open " + path);
  out << "timestamp,sensor_id,value\n";
  char buf[64];
  for (const auto& s : series)
    for (std::size_t k = 0; k < s.timestamps.size(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", s.values[k]);
      out << s.timestamps[k] << ',' << s.sensor_id << ',' << buf << '\n';
    }
}

inline void write_sensor_metadata(const std::vector<SensorSeries>& series,
                                  const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("write_sensor_metadata: cannot open " + path);
  out << "sensor_id,lat,lon\n";
  char buf[80];
  for (const auto& s : series) {
    std::snprintf(buf, sizeof(buf), "%.12g,%.12g", s.latitude, s.longitude);
    out << s.sensor_id << ',' << buf << '\n';
  }
}

// ---------------------------------------------------------------------------
// Key-value config
// ---------------------------------------------------------------------------

// Plain text: one `key = value` per line, '#' starts a comment.
inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::size_t pos = 0;
  int lineno = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    std::string line = text.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
    pos = (eol == std::string::npos) ? text.size() + 1 : eol + 1;
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error("config line " + std::to_string(lineno) + ": expected key = value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

namespace detail {

class ConfigView {
 public:
  explicit ConfigView(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  std::string str(const std::string& key, const std::string& dflt) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : it->second;
  }
  double num(const std::string& key, double dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
      return std::stod(it->second);
    } catch (...) {
      throw Error("config: key '" + key + "' is not a number: " + it->second);
    }
  }
  int64_t integer(const std::string& key, int64_t dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
      return std::stoll(it->second);
    } catch (...) {
      throw Error("config: key '" + key + "' is not an integer: " + it->second);
    }
  }
  bool flag(const std::string& key, bool dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    const std::string& v = it->second;
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw Error("config: key '" + key + "' is not a boolean: " + v);
  }
  std::vector<std::string> list(const std::string& key, const std::string& dflt) const {
    std::vector<std::string> out;
    std::string v = str(key, dflt);
    std::string cur;
    for (char c : v + ",") {
      if (c == ',') {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    return out;
  }
  template <class T>
  std::vector<T> num_list(const std::string& key, const std::string& dflt) const {
    std::vector<T> out;
    for (const auto& s : list(key, dflt)) {
      try {
        out.push_back(static_cast<T>(std::stoll(s)));
      } catch (...) {
        throw Error("config: key '" + key + "' has a non-numeric entry: " + s);
      }
    }
    return out;
  }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace detail

struct RunConfig {
  std::vector<int> rates{5, 15, 30, 45, 60};
  std::vector<std::size_t> nodes{8, 16, 25};
  std::vector<int> redundancies{0, 20, 60, 100};
  std::vector<ModelKind> models{ModelKind::VAR, ModelKind::GRU, ModelKind::TRANSFORMER,
                                ModelKind::GRUGCN, ModelKind::TGCN};
  std::vector<uint64_t> seeds{1, 2, 3};
  SplitSpec split;
  int stride = 1;
  int hidden = 64;
  int layers = 2;
  nn::TrainConfig train;
  BlendConfig blend;
  std::string external_cmd;
  double external_timeout_s = 30.0;
  bool strict_nodes = false;
  bool save_models = false;
  SyntheticSpec synth;

  static RunConfig from_map(const std::map<std::string, std::string>& kv) {
    detail::ConfigView v(kv);
    RunConfig c;
    c.rates = v.num_list<int>("rates", "5,15,30,45,60");
    c.nodes = v.num_list<std::size_t>("nodes", "8,16,25");
    c.redundancies = v.num_list<int>("redundancy", "0,20,60,100");
    c.models.clear();
    for (const auto& m : v.list("models", "var,gru,transformer,grugcn,tgcn"))
      c.models.push_back(kind_from_string(m));
    c.seeds = v.num_list<uint64_t>("seeds", "1,2,3");
    c.split.train_days = static_cast<int>(v.integer("train_days", 5));
    c.split.val_days = static_cast<int>(v.integer("val_days", 2));
    c.split.test_days = static_cast<int>(v.integer("test_days", 2));
    c.stride = static_cast<int>(v.integer("stride", 1));
    c.hidden = static_cast<int>(v.integer("hidden", 64));
    c.layers = static_cast<int>(v.integer("layers", 2));
    c.train.max_epochs = static_cast<int>(v.integer("max_epochs", 100));
    c.train.patience = static_cast<int>(v.integer("patience", 10));
    c.train.batch_size = static_cast<int>(v.integer("batch_size", 64));
    c.train.lr = v.num("lr", 1e-3);
    c.blend.k = static_cast<int>(v.integer("blend_k", 3));
    c.blend.alpha = v.num("blend_alpha", 0.6);
    c.external_cmd = v.str("external_cmd", "");
    c.external_timeout_s = v.num("external_timeout_s", 30.0);
    c.strict_nodes = v.flag("strict_nodes", false);
    c.save_models = v.flag("save_models", false);
    c.synth.sensors = static_cast<std::size_t>(v.integer("synth_sensors", 25));
    c.synth.days = static_cast<int>(v.integer("synth_days", 9));
    c.synth.base_rate_minutes = static_cast<int>(v.integer("synth_base_rate", 5));
    c.synth.diurnal_amp = v.num("synth_diurnal_amp", 3.0);
    c.synth.phase_spread = v.num("synth_phase_spread", 0.0);
    c.synth.mean_level = v.num("synth_mean_level", 15.0);
    c.synth.mean_spread = v.num("synth_mean_spread", 10.0);
    c.synth.length_scale_km = v.num("synth_length_scale_km", 2.0);
    c.synth.noise_sigma = v.num("synth_noise_sigma", 0.5);
    c.synth.spatial_amp = v.num("synth_spatial_amp", 1.5);
    c.synth.area_km = v.num("synth_area_km", 10.0);
    c.synth.seed = static_cast<uint64_t>(v.integer("synth_seed", 1));
    c.validate();
    return c;
  }

  static RunConfig from_file(const std::string& path) {
    return from_map(parse_config_file(path));
  }

  void validate() const {
    if (rates.empty() || nodes.empty() || redundancies.empty() || models.empty() || seeds.empty())
      throw Error("config: every grid axis must be non-empty");
    for (int r : rates)
      if (!is_supported_rate(r)) throw Error("config: unsupported rate " + std::to_string(r));
    for (int p : redundancies)
      if (p < 0 || p > 100) throw Error("config: redundancy outside [0,100]");
    for (std::size_t k : nodes)
      if (k < 1) throw Error("config: node counts must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Grid runner
// ---------------------------------------------------------------------------

struct EvalRecord {
  ModelKind kind = ModelKind::VAR;
  int rate = 0;
  std::size_t K = 0;
  int p = -1;  // -1 = not applicable (non-graph model)
  uint64_t seed = 0;
  bool ok = false;
  double mae = std::numeric_limits<double>::quiet_NaN();
  double rmse = std::numeric_limits<double>::quiet_NaN();
  std::size_t train_windows = 0;
  std::size_t test_windows = 0;
  std::string note;
  // diagnostics for the per-cell JSON
  int epochs_run = 0;
  double best_val_mae = std::numeric_limits<double>::quiet_NaN();
  double theta = std::numeric_limits<double>::quiet_NaN();
  std::size_t edges = 0;
  int var_lag = 0;
  double fit_seconds = 0.0;
  double infer_seconds = 0.0;
};

struct GridResult {
  std::vector<EvalRecord> records;
  bool any_failed = false;
};

using WindowProvider = std::function<WindowSet()>;

struct CellEval {
  EvalMetrics metrics;
  std::size_t windows = 0;
};

// Stage boundary for the leakage guarantee: fitting happens strictly before
// the provider is first invoked, so test data that the provider cannot reach
// during fit provably never influenced the weights.
inline CellEval evaluate_forecaster(Forecaster& fc, const WindowProvider& test_provider,
                                    const NodeStats& stats) {
  WindowSet test = test_provider();
  if (test.count() == 0) throw Error("evaluate_forecaster: no test windows");
  std::vector<Mat> preds, truths;
  preds.reserve(test.count());
  truths.reserve(test.count());
  for (std::size_t w = 0; w < test.count(); ++w) {
    Mat ctx = test.context(w);
    Mat pred = fc.predict(ctx);
    Mat truth = test.target(w);
    denormalize(pred, stats);
    denormalize(truth, stats);
    preds.push_back(std::move(pred));
    truths.push_back(std::move(truth));
  }
  return {mae_rmse(preds, truths), test.count()};
}

namespace detail {

struct Cell {
  int rate = 0;
  std::size_t K = 0;
  ModelKind kind = ModelKind::VAR;
  int p = -1;
  uint64_t seed = 0;
};

inline std::vector<Cell> enumerate_cells(const RunConfig& cfg) {
  std::vector<Cell> cells;
  for (int rate : cfg.rates)
    for (std::size_t K : cfg.nodes)
      for (ModelKind kind : cfg.models) {
        const std::vector<int> ps =
            is_graph_model(kind) ? cfg.redundancies : std::vector<int>{-1};
        for (int p : ps)
          for (uint64_t seed : cfg.seeds) cells.push_back({rate, K, kind, p, seed});
      }
  return cells;
}

inline uint64_t cell_seed(const Cell& c) {
  uint64_t s = mix_seed(c.seed, static_cast<uint64_t>(c.rate));
  s = mix_seed(s, static_cast<uint64_t>(c.K));
  s = mix_seed(s, static_cast<uint64_t>(c.p + 1));
  return mix_seed(s, static_cast<uint64_t>(c.kind));
}

inline AlignedPanel subset_panel(const AlignedPanel& full, std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end());
  AlignedPanel out;
  out.rate_minutes = full.rate_minutes;
  out.start = full.start;
  out.sensor_ids = ids;
  out.values = Mat(ids.size(), full.steps());
  out.mask.assign(ids.size() * full.steps(), 0);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    auto it = std::find(full.sensor_ids.begin(), full.sensor_ids.end(), ids[r]);
    if (it == full.sensor_ids.end())
      throw Error("subset_panel: sensor " + ids[r] + " missing from panel");
    const std::size_t src = static_cast<std::size_t>(it - full.sensor_ids.begin());
    for (std::size_t t = 0; t < full.steps(); ++t) {
      out.values.at(r, t) = full.values.at(src, t);
      out.mask[r * full.steps() + t] = full.mask[src * full.steps() + t];
    }
  }
  return out;
}

inline std::string cell_tag(const EvalRecord& r) {
  std::string p = r.p < 0 ? "na" : std::to_string(r.p);
  return std::string(kind_name(r.kind)) + "_f" + std::to_string(r.rate) + "_K" +
         std::to_string(r.K) + "_p" + p + "_s" + std::to_string(r.seed);
}

inline std::string csv_quote(const std::string& s) {
  std::string t;
  t.push_back('"');
  for (char c : s) {
    if (c == '"') t += "\"\"";
    else if (c == '\n' || c == '\r') t.push_back(' ');
    else t.push_back(c);
  }
  t.push_back('"');
  return t;
}

inline std::string fmt_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline std::string record_row(const EvalRecord& r) {
  std::string p = r.p < 0 ? "-" : std::to_string(r.p);
  char times[64];
  std::snprintf(times, sizeof(times), "%.3f,%.3f", r.fit_seconds, r.infer_seconds);
  return std::string(kind_name(r.kind)) + "," + std::to_string(r.rate) + "," +
         std::to_string(r.K) + "," + p + "," + std::to_string(r.seed) + "," +
         (r.ok ? "ok" : "fail") + "," + (r.ok ? fmt_metric(r.mae) : "") + "," +
         (r.ok ? fmt_metric(r.rmse) : "") + "," + std::to_string(r.train_windows) + "," +
         std::to_string(r.test_windows) + "," + csv_quote(r.note) + "," + times;
}

inline constexpr const char* kResultsHeader =
    "model,rate_minutes,K,p,seed,status,mae,rmse,train_windows,test_windows,note,"
    "fit_seconds,infer_seconds";

}  // namespace detail

// Everything cells share: the ingested series, per-rate panels, per-K plans.
class GridData {
 public:
  GridData(const RunConfig& cfg, std::vector<SensorSeries> series) : series_(std::move(series)) {
    if (series_.empty()) throw Error("grid: no sensors in data source");
    std::sort(series_.begin(), series_.end(),
              [](const SensorSeries& a, const SensorSeries& b) { return a.sensor_id < b.sensor_id; });
    for (const auto& s : series_) {
      ids_.push_back(s.sensor_id);
      sites_.push_back({s.latitude, s.longitude});
    }
    const bool have_coords = std::all_of(series_.begin(), series_.end(), [](const SensorSeries& s) {
      return std::isfinite(s.latitude) && std::isfinite(s.longitude);
    });

    const int64_t origin = common_origin(series_);
    for (int rate : cfg.rates) panels_.emplace(rate, resample(series_, rate, origin));

    for (std::size_t K : cfg.nodes) {
      if (K > series_.size()) {
        plan_errors_[K] = "K=" + std::to_string(K) + " exceeds network size " +
                          std::to_string(series_.size());
        continue;
      }
      if (!have_coords) {
        if (K == series_.size()) {
          SubsetPlan plan;
          plan.K = K;
          plan.selected = ids_;
          for (const auto& id : ids_) plan.provenance[id] = "dispersion";
          plans_[K] = std::move(plan);
        } else {
          plan_errors_[K] = "sensor coordinates unavailable; cannot select K=" +
                            std::to_string(K) + " of " + std::to_string(series_.size());
        }
        continue;
      }
      try {
        const std::size_t k_clusters = std::min<std::size_t>(5, series_.size());
        ClusterModel model = agglomerative_cluster(ids_, sites_, k_clusters);
        plans_[K] = select_subset(model, ids_, sites_, K, cfg.strict_nodes);
      } catch (const Error& e) {
        plan_errors_[K] = e.what();
      }
    }
  }

  const AlignedPanel& panel(int rate) const { return panels_.at(rate); }
  const SubsetPlan& plan(std::size_t K) const {
    auto it = plans_.find(K);
    if (it == plans_.end()) throw Error(plan_errors_.at(K));
    return it->second;
  }
  const std::vector<SensorSeries>& series() const { return series_; }

 private:
  std::vector<SensorSeries> series_;
  std::vector<std::string> ids_;
  std::vector<GeoPoint> sites_;
  std::map<int, AlignedPanel> panels_;
  std::map<std::size_t, SubsetPlan> plans_;
  std::map<std::size_t, std::string> plan_errors_;
};

namespace detail {

struct HeatmapGuard {
  std::mutex mu;
  std::set<std::string> written;
};

inline EvalRecord run_one_cell(const RunConfig& cfg, const GridData& data, const Cell& cell,
                               const std::string& out_dir, HeatmapGuard& heatmaps) {
  EvalRecord rec;
  rec.kind = cell.kind;
  rec.rate = cell.rate;
  rec.K = cell.K;
  rec.p = cell.p;
  rec.seed = cell.seed;
  try {
    const auto [C, H] = window_lengths(cell.rate);
    AlignedPanel sub = subset_panel(data.panel(cell.rate), data.plan(cell.K).selected);
    PanelSplit split = split_by_days(sub, cfg.split);
    NodeStats stats = normalize_fit(split.train);

    if (cell.kind == ModelKind::EXTERNAL) {
      // zero-shot path: raw °C contexts to the external process, then blend
      if (cfg.external_cmd.empty())
        throw Error("external model requested but external_cmd is not configured");
      WindowSet test = make_windows(split.test, C, H, cfg.stride);
      if (test.count() == 0)
        throw Error("test split too short for C=" + std::to_string(C) + ", H=" +
                    std::to_string(H));
      rec.test_windows = test.count();
      CorrelationMatrix corr = pearson_abs(split.train);

      ExternalForecasterHandle handle{split_command(cfg.external_cmd), cfg.external_timeout_s, 1};
      LineProcess proc(handle.argv, handle.timeout_s);
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<Mat> preds, truths;
      for (std::size_t w = 0; w < test.count(); ++w) {
        Mat raw = per_node_forecast(proc, sub.sensor_ids, test.context(w), H, cell.rate);
        preds.push_back(blend(raw, corr, cfg.blend).output);
        truths.push_back(test.target(w));
      }
      rec.infer_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      EvalMetrics m = mae_rmse(preds, truths);
      rec.mae = m.mae;
      rec.rmse = m.rmse;
      rec.ok = true;
      return rec;
    }

    AlignedPanel train_n = split.train, val_n = split.val, test_n = split.test;
    normalize_apply(train_n, stats);
    normalize_apply(val_n, stats);
    normalize_apply(test_n, stats);
    WindowSet train_ws = make_windows(train_n, C, H, cfg.stride);
    WindowSet val_ws = make_windows(val_n, C, H, cfg.stride);
    if (train_ws.count() == 0)
      throw Error("train split too short for C=" + std::to_string(C) + ", H=" + std::to_string(H));
    rec.train_windows = train_ws.count();

    ForecasterSpec spec;
    spec.kind = cell.kind;
    spec.hidden = cfg.hidden;
    spec.layers = cfg.layers;
    spec.C = C;
    spec.H = H;
    spec.N = sub.nodes();
    spec.seed = cell_seed(cell);
    spec.train = cfg.train;

    if (is_graph_model(cell.kind)) {
      CorrelationMatrix corr = pearson_abs(train_n);
      WeightedGraph g = build_graph(corr, cell.p);
      rec.theta = g.threshold;
      rec.edges = g.edge_count();
      spec.graph = normalize_adjacency(g);

      const std::string key = "f" + std::to_string(cell.rate) + "_K" + std::to_string(cell.K) +
                              "_p" + std::to_string(cell.p);
      std::lock_guard<std::mutex> lk(heatmaps.mu);
      if (heatmaps.written.insert(key).second) {
        std::filesystem::create_directories(out_dir + "/graphs");
        export_heatmap_csv(g.adjacency, sub.sensor_ids, out_dir + "/graphs/heatmap_" + key + ".csv");
        std::ofstream gj(out_dir + "/graphs/graph_" + key + ".json");
        gj << graph_to_json(g).dump(2) << '\n';
      }
    }

    auto fc = make_forecaster(spec);
    const auto t0 = std::chrono::steady_clock::now();
    fc->fit(train_ws, val_ws, stats);
    rec.fit_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.epochs_run = fc->fit_result().epochs_run;
    rec.best_val_mae = fc->fit_result().best_val_mae;
    if (cell.kind == ModelKind::VAR)
      rec.var_lag = dynamic_cast<VarForecaster&>(*fc).coefficients().L;

    const auto t1 = std::chrono::steady_clock::now();
    CellEval ev = evaluate_forecaster(
        *fc, [&]() { return make_windows(test_n, C, H, cfg.stride); }, stats);
    rec.infer_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
    rec.test_windows = ev.windows;
    rec.mae = ev.metrics.mae;
    rec.rmse = ev.metrics.rmse;
    rec.ok = true;

    if (cfg.save_models) save_forecaster(*fc, out_dir + "/models/" + cell_tag(rec));
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.note = e.what();
  }
  return rec;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline void emit_reports(const std::vector<EvalRecord>& records, const std::string& out_dir) {
  if (records.empty()) throw Error("emit_reports: no records");
  std::filesystem::create_directories(out_dir);
  std::filesystem::create_directories(out_dir + "/cells");

  {
    std::ofstream out(out_dir + "/results.csv");
    if (!out) throw Error("emit_reports: cannot write to " + out_dir);
    out << detail::kResultsHeader << '\n';
    for (const auto& r : records) out << detail::record_row(r) << '\n';
  }

  // column set: plain models once, graph models expanded per redundancy
  std::vector<std::pair<ModelKind, int>> columns;
  std::vector<int> rates;
  std::vector<std::size_t> Ks;
  std::vector<uint64_t> seeds;
  auto remember = [](auto& vec, auto v) {
    if (std::find(vec.begin(), vec.end(), v) == vec.end()) vec.push_back(v);
  };
  for (const auto& r : records) {
    remember(columns, std::make_pair(r.kind, r.p));
    remember(rates, r.rate);
    remember(Ks, r.K);
    remember(seeds, r.seed);
  }

  std::map<std::tuple<int, std::size_t, ModelKind, int, uint64_t>, const EvalRecord*> by_cell;
  for (const auto& r : records) by_cell[{r.rate, r.K, r.kind, r.p, r.seed}] = &r;

  char buf[80];
  std::ofstream pv(out_dir + "/table_pivot.csv");
  pv << "rate_minutes,K,seed";
  for (const auto& [kind, p] : columns) {
    pv << ',' << kind_name(kind);
    if (p >= 0) pv << "@p" << p;
  }
  pv << '\n';
  for (int rate : rates)
    for (std::size_t K : Ks) {
      for (uint64_t seed : seeds) {
        pv << rate << ',' << K << ',' << seed;
        for (const auto& [kind, p] : columns) {
          auto it = by_cell.find({rate, K, kind, p, seed});
          pv << ',';
          if (it == by_cell.end()) continue;
          if (!it->second->ok) {
            pv << "FAIL";
          } else {
            std::snprintf(buf, sizeof(buf), "%.3f/%.3f", it->second->mae, it->second->rmse);
            pv << buf;
          }
        }
        pv << '\n';
      }
      pv << rate << ',' << K << ",mean";
      for (const auto& [kind, p] : columns) {
        double mae = 0, rmse = 0;
        std::size_t n = 0;
        bool failed = false, present = false;
        for (uint64_t seed : seeds) {
          auto it = by_cell.find({rate, K, kind, p, seed});
          if (it == by_cell.end()) continue;
          present = true;
          if (!it->second->ok) {
            failed = true;
          } else {
            mae += it->second->mae;
            rmse += it->second->rmse;
            ++n;
          }
        }
        pv << ',';
        if (!present) continue;
        if (failed || n == 0) {
          pv << "FAIL";
        } else {
          std::snprintf(buf, sizeof(buf), "%.3f/%.3f", mae / static_cast<double>(n),
                        rmse / static_cast<double>(n));
          pv << buf;
        }
      }
      pv << '\n';
    }

  for (const auto& r : records) {
    nlohmann::json j;
    j["model"] = kind_name(r.kind);
    j["rate_minutes"] = r.rate;
    j["K"] = r.K;
    if (r.p >= 0) j["p"] = r.p;
    j["seed"] = r.seed;
    j["ok"] = r.ok;
    if (r.ok) {
      j["mae"] = r.mae;
      j["rmse"] = r.rmse;
    } else {
      j["error"] = r.note;
    }
    j["train_windows"] = r.train_windows;
    j["test_windows"] = r.test_windows;
    j["fit_seconds"] = r.fit_seconds;
    j["infer_seconds"] = r.infer_seconds;
    if (r.epochs_run > 0) {
      j["epochs_run"] = r.epochs_run;
      j["best_val_mae"] = r.best_val_mae;
    }
    if (r.kind == ModelKind::VAR && r.ok) j["var_lag"] = r.var_lag;
    if (r.p >= 0 && r.ok) {
      j["theta"] = r.theta;
      j["edges"] = r.edges;
    }
    std::ofstream cj(out_dir + "/cells/" + detail::cell_tag(r) + ".json");
    cj << j.dump(2) << '\n';
  }
}

// ---------------------------------------------------------------------------
// run_grid
// ---------------------------------------------------------------------------

inline int default_workers() {
  if (const char* env = std::getenv("STGRID_WORKERS")) {
    try {
      int w = std::stoi(env);
      if (w >= 1) return w;
    } catch (...) {
    }
  }
  return 1;
}

// Executes every cell of the grid on a worker pool. Results are flushed to
// results.csv incrementally in cell-coordinate order (independent of worker
// count and completion order); full reports are emitted at the end.
inline GridResult run_grid(const RunConfig& cfg, const std::vector<SensorSeries>& data,
                           const std::string& out_dir, int workers = 0) {
  if (workers <= 0) workers = default_workers();
  std::filesystem::create_directories(out_dir);
  GridData shared(cfg, data);
  const std::vector<detail::Cell> cells = detail::enumerate_cells(cfg);

  std::vector<EvalRecord> records(cells.size());
  std::vector<char> done(cells.size(), 0);
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<std::size_t> next{0};
  detail::HeatmapGuard heatmaps;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      EvalRecord rec = detail::run_one_cell(cfg, shared, cells[i], out_dir, heatmaps);
      {
        std::lock_guard<std::mutex> lk(mu);
        records[i] = std::move(rec);
        done[i] = 1;
      }
      cv.notify_one();
    }
  };

  std::vector<std::thread> pool;
  const std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(workers),
                                                      std::max<std::size_t>(cells.size(), 1));
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);

  {
    std::ofstream out(out_dir + "/results.csv");
    if (!out) throw Error("run_grid: cannot write to " + out_dir);
    out << detail::kResultsHeader << '\n';
    out.flush();
    std::unique_lock<std::mutex> lk(mu);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      cv.wait(lk, [&] { return done[i] != 0; });
      out << detail::record_row(records[i]) << '\n';
      out.flush();
    }
  }
  for (auto& t : pool) t.join();

  emit_reports(records, out_dir);
  GridResult res;
  res.records = std::move(records);
  for (const auto& r : res.records) res.any_failed |= !r.ok;
  return res;
}

}  // namespace stgrid
