#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stgrid/core.hpp"
#include "stgrid/csv.hpp"

namespace stgrid {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

// One sensor's timestamped scalar readings plus geographic metadata.
// Timestamps are UTC epoch seconds, strictly increasing after ingestion.
struct SensorSeries {
  std::string sensor_id;
  double latitude = std::nan("");
  double longitude = std::nan("");
  std::vector<int64_t> timestamps;
  std::vector<double> values;
};

struct IngestReport {
  std::size_t rows_total = 0;
  std::size_t rows_dropped = 0;  // unparseable timestamp/value, NaN/inf, dup ts
};

struct CsvSchema {
  std::string timestamp_col = "timestamp";
  std::string sensor_col = "sensor_id";
  std::string value_col = "value";
};

// N sensors x T timesteps on a common regular timeline.
// mask(i,t) is true where the cell was observed (false = imputed).
struct AlignedPanel {
  std::vector<std::string> sensor_ids;
  int rate_minutes = 0;
  int64_t start = 0;  // timestamp of the first bucket's left edge
  Mat values;         // N x T
  std::vector<uint8_t> mask;

  std::size_t nodes() const { return values.rows; }
  std::size_t steps() const { return values.cols; }
  bool observed(std::size_t i, std::size_t t) const { return mask[i * values.cols + t] != 0; }
};

struct SplitSpec {
  int train_days = 5;
  int val_days = 2;
  int test_days = 2;
};

struct PanelSplit {
  AlignedPanel train, val, test;
};

// Sliding (context, horizon) sample pairs over one split.
// Windows are stored as start offsets into the split's value matrix.
struct WindowSet {
  int context_len = 0;
  int horizon_len = 0;
  int stride = 1;
  Mat values;  // N x T of the underlying split
  std::vector<std::size_t> starts;
  bool too_short = false;  // T < C + H: empty set, degraded gracefully

  std::size_t count() const { return starts.size(); }
  std::size_t nodes() const { return values.rows; }

  Mat context(std::size_t w) const {
    Mat m(values.rows, static_cast<std::size_t>(context_len));
    for (std::size_t i = 0; i < values.rows; ++i)
      for (int t = 0; t < context_len; ++t)
        m.at(i, t) = values.at(i, starts[w] + t);
    return m;
  }

  Mat target(std::size_t w) const {
    Mat m(values.rows, static_cast<std::size_t>(horizon_len));
    for (std::size_t i = 0; i < values.rows; ++i)
      for (int t = 0; t < horizon_len; ++t)
        m.at(i, t) = values.at(i, starts[w] + context_len + t);
    return m;
  }
};

// Per-node z-score statistics, fit on the training split only.
struct NodeStats {
  std::vector<double> mean;
  std::vector<double> stdev;
};

// ---------------------------------------------------------------------------
// Timestamp parsing
// ---------------------------------------------------------------------------

namespace detail {

// days since 1970-01-01 from a civil date (proleptic Gregorian)
inline int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<int64_t>(doe) - 719468;
}

inline bool all_digits(const std::string& s) {
  if (s.empty()) return false;
  std::size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
  if (i >= s.size()) return false;
  for (; i < s.size(); ++i)
    if (s[i] < '0' || s[i] > '9') return false;
  return true;
}

}  // namespace detail

// Accepts integer epoch seconds or ISO-8601 "YYYY-MM-DD[T ]HH:MM:SS[Z]".
inline std::optional<int64_t> parse_timestamp(const std::string& raw) {
  std::string s = trim(raw);
  if (s.empty()) return std::nullopt;
  if (detail::all_digits(s)) {
    try {
      return std::stoll(s);
    } catch (...) {
      return std::nullopt;
    }
  }
  if (!s.empty() && (s.back() == 'Z' || s.back() == 'z')) s.pop_back();
  int y, mo, d, h, mi, sec;
  char sep;
  if (std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &sec) == 7 &&
      (sep == 'T' || sep == ' ')) {
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec > 60)
      return std::nullopt;
    return detail::days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + sec;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

inline std::vector<SensorSeries> ingest_csv(const std::string& path,
                                            const CsvSchema& schema = {},
                                            IngestReport* report = nullptr) {
  auto rows = read_csv(path);
  if (rows.empty()) throw Error("ingest_csv: empty file: " + path);

  const auto& header = rows.front();
  auto col_of = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (trim(header[i]) == name) return static_cast<int>(i);
    return -1;
  };
  int ts_col = col_of(schema.timestamp_col);
  int id_col = col_of(schema.sensor_col);
  int val_col = col_of(schema.value_col);
  if (ts_col < 0 || id_col < 0 || val_col < 0)
    throw Error("ingest_csv: required column missing (need '" + schema.timestamp_col +
                "', '" + schema.sensor_col + "', '" + schema.value_col + "') in " + path);

  IngestReport rep;
  std::map<std::string, SensorSeries> by_id;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    ++rep.rows_total;
    std::size_t need = static_cast<std::size_t>(std::max({ts_col, id_col, val_col}));
    if (row.size() <= need) {
      ++rep.rows_dropped;
      continue;
    }
    auto ts = parse_timestamp(row[ts_col]);
    if (!ts) {
      ++rep.rows_dropped;
      continue;
    }
    double v;
    try {
      v = std::stod(trim(row[val_col]));
    } catch (...) {
      ++rep.rows_dropped;
      continue;
    }
    if (!std::isfinite(v)) {
      ++rep.rows_dropped;
      continue;
    }
    std::string id = trim(row[id_col]);
    auto& s = by_id[id];
    s.sensor_id = id;
    s.timestamps.push_back(*ts);
    s.values.push_back(v);
  }

  std::vector<SensorSeries> out;
  for (auto& [id, s] : by_id) {
    // sort by timestamp, drop exact-duplicate timestamps (keep first)
    std::vector<std::size_t> idx(s.timestamps.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return s.timestamps[a] < s.timestamps[b]; });
    SensorSeries clean;
    clean.sensor_id = s.sensor_id;
    for (std::size_t i : idx) {
      if (!clean.timestamps.empty() && s.timestamps[i] == clean.timestamps.back()) {
        ++rep.rows_dropped;
        continue;
      }
      clean.timestamps.push_back(s.timestamps[i]);
      clean.values.push_back(s.values[i]);
    }
    out.push_back(std::move(clean));
  }
  if (report) *report = rep;
  if (out.empty()) throw Error("ingest_csv: no valid rows in " + path);
  return out;
}

// Optional metadata CSV: sensor_id,lat,lon
inline void apply_sensor_metadata(std::vector<SensorSeries>& series, const std::string& path) {
  auto rows = read_csv(path);
  if (rows.empty()) throw Error("metadata CSV empty: " + path);
  std::map<std::string, std::pair<double, double>> coords;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() < 3) continue;
    try {
      coords[trim(rows[r][0])] = {std::stod(rows[r][1]), std::stod(rows[r][2])};
    } catch (...) {
      continue;
    }
  }
  for (auto& s : series) {
    auto it = coords.find(s.sensor_id);
    if (it != coords.end()) {
      s.latitude = it->second.first;
      s.longitude = it->second.second;
    }
  }
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

inline const std::vector<int>& supported_rates() {
  static const std::vector<int> r = {5, 15, 30, 45, 60};
  return r;
}

inline bool is_supported_rate(int rate_minutes) {
  const auto& r = supported_rates();
  return std::find(r.begin(), r.end(), rate_minutes) != r.end();
}

// Bucket-mean resampling with left-labeled intervals [t, t+rate). Empty
// buckets are linearly interpolated from the nearest observed buckets and
// flagged in the mask; edge gaps hold the nearest observed value.
inline AlignedPanel resample(const std::vector<SensorSeries>& series, int rate_minutes,
                             int64_t origin) {
  if (!is_supported_rate(rate_minutes))
    throw Error("resample: unsupported rate " + std::to_string(rate_minutes) + " minutes");
  if (series.empty()) throw Error("resample: no input series");

  const int64_t step = static_cast<int64_t>(rate_minutes) * 60;
  int64_t common_end = INT64_MAX;
  for (const auto& s : series) {
    if (s.timestamps.empty()) throw Error("resample: sensor " + s.sensor_id + " has no samples");
    common_end = std::min(common_end, s.timestamps.back());
  }
  if (common_end < origin) throw Error("resample: series share no span past the origin");

  const std::size_t T = static_cast<std::size_t>((common_end - origin) / step) + 1;
  const std::size_t N = series.size();

  AlignedPanel panel;
  panel.rate_minutes = rate_minutes;
  panel.start = origin;
  panel.values = Mat(N, T);
  panel.mask.assign(N * T, 0);
  panel.sensor_ids.reserve(N);

  std::vector<double> sum(T);
  std::vector<std::size_t> cnt(T);
  for (std::size_t i = 0; i < N; ++i) {
    const auto& s = series[i];
    panel.sensor_ids.push_back(s.sensor_id);
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(cnt.begin(), cnt.end(), 0);
    for (std::size_t k = 0; k < s.timestamps.size(); ++k) {
      int64_t t = s.timestamps[k];
      if (t < origin) continue;
      std::size_t b = static_cast<std::size_t>((t - origin) / step);
      if (b >= T) continue;
      sum[b] += s.values[k];
      ++cnt[b];
    }
    std::size_t observed = 0;
    for (std::size_t b = 0; b < T; ++b) {
      if (cnt[b] > 0) {
        panel.values.at(i, b) = sum[b] / static_cast<double>(cnt[b]);
        panel.mask[i * T + b] = 1;
        ++observed;
      }
    }
    if (observed == 0)
      throw Error("resample: sensor " + s.sensor_id + " has zero observed buckets");

    // fill gaps: linear between observed buckets, hold at the edges
    std::ptrdiff_t prev = -1;
    for (std::size_t b = 0; b < T; ++b) {
      if (!panel.mask[i * T + b]) continue;
      if (prev < 0) {
        for (std::size_t g = 0; g < b; ++g) panel.values.at(i, g) = panel.values.at(i, b);
      } else if (static_cast<std::size_t>(prev) + 1 < b) {
        double v0 = panel.values.at(i, prev);
        double v1 = panel.values.at(i, b);
        double span = static_cast<double>(b - prev);
        for (std::size_t g = prev + 1; g < b; ++g)
          panel.values.at(i, g) = v0 + (v1 - v0) * (static_cast<double>(g - prev) / span);
      }
      prev = static_cast<std::ptrdiff_t>(b);
    }
    for (std::size_t g = static_cast<std::size_t>(prev) + 1; g < T; ++g)
      panel.values.at(i, g) = panel.values.at(i, prev);
  }
  return panel;
}

// First timestamp common to every series; the natural resample origin.
inline int64_t common_origin(const std::vector<SensorSeries>& series) {
  if (series.empty()) throw Error("common_origin: no series");
  int64_t start = INT64_MIN;
  for (const auto& s : series) {
    if (s.timestamps.empty()) throw Error("common_origin: sensor " + s.sensor_id + " empty");
    start = std::max(start, s.timestamps.front());
  }
  return start;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

inline std::size_t samples_per_day(int rate_minutes) {
  return static_cast<std::size_t>(86400 / (60 * rate_minutes));
}

// Contiguous chronological train/val/test partition on whole-day boundaries,
// measured from the panel origin.
inline PanelSplit split_by_days(const AlignedPanel& panel, const SplitSpec& spec) {
  if (spec.train_days <= 0 || spec.val_days <= 0 || spec.test_days <= 0)
    throw Error("split_by_days: all split day counts must be positive");
  const std::size_t spd = samples_per_day(panel.rate_minutes);
  const std::size_t need =
      spd * static_cast<std::size_t>(spec.train_days + spec.val_days + spec.test_days);
  if (panel.steps() < need)
    throw Error("split_by_days: panel has " + std::to_string(panel.steps()) +
                " samples, split needs " + std::to_string(need));

  auto slice = [&](std::size_t t0, std::size_t len) {
    AlignedPanel p;
    p.sensor_ids = panel.sensor_ids;
    p.rate_minutes = panel.rate_minutes;
    p.start = panel.start + static_cast<int64_t>(t0) * panel.rate_minutes * 60;
    p.values = Mat(panel.nodes(), len);
    p.mask.assign(panel.nodes() * len, 0);
    for (std::size_t i = 0; i < panel.nodes(); ++i)
      for (std::size_t t = 0; t < len; ++t) {
        p.values.at(i, t) = panel.values.at(i, t0 + t);
        p.mask[i * len + t] = panel.mask[i * panel.steps() + t0 + t];
      }
    return p;
  };

  PanelSplit out;
  std::size_t t0 = 0;
  out.train = slice(t0, spd * spec.train_days);
  t0 += spd * spec.train_days;
  out.val = slice(t0, spd * spec.val_days);
  t0 += spd * spec.val_days;
  out.test = slice(t0, spd * spec.test_days);
  return out;
}

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

// Context/horizon lengths for a sampling rate: 8 hours of context and 4 hours
// of horizon. Exact division for 5/15/30/60; the 45-minute rate does not
// divide evenly and floors to (10, 5).
inline std::pair<int, int> window_lengths(int rate_minutes) {
  if (!is_supported_rate(rate_minutes))
    throw Error("window_lengths: unsupported rate " + std::to_string(rate_minutes));
  return {480 / rate_minutes, 240 / rate_minutes};
}

inline WindowSet make_windows(const AlignedPanel& panel, int context_len, int horizon_len,
                              int stride = 1) {
  if (context_len < 1 || horizon_len < 1 || stride < 1)
    throw Error("make_windows: context, horizon and stride must be >= 1");
  WindowSet ws;
  ws.context_len = context_len;
  ws.horizon_len = horizon_len;
  ws.stride = stride;
  ws.values = panel.values;
  const std::size_t T = panel.steps();
  const std::size_t need = static_cast<std::size_t>(context_len + horizon_len);
  if (T < need) {
    ws.too_short = true;
    return ws;
  }
  for (std::size_t s = 0; s + need <= T; s += static_cast<std::size_t>(stride))
    ws.starts.push_back(s);
  return ws;
}

// ---------------------------------------------------------------------------
// Normalization (per-node z-score, fit on the training split only)
// ---------------------------------------------------------------------------

inline NodeStats normalize_fit(const AlignedPanel& train) {
  NodeStats st;
  const std::size_t N = train.nodes(), T = train.steps();
  st.mean.resize(N);
  st.stdev.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    double m = 0;
    for (std::size_t t = 0; t < T; ++t) m += train.values.at(i, t);
    m /= static_cast<double>(T);
    double v = 0;
    for (std::size_t t = 0; t < T; ++t) {
      double d = train.values.at(i, t) - m;
      v += d * d;
    }
    v /= static_cast<double>(T);
    st.mean[i] = m;
    st.stdev[i] = v > 0 ? std::sqrt(v) : 1.0;
  }
  return st;
}

inline void normalize_apply(Mat& values, const NodeStats& st) {
  if (values.rows != st.mean.size())
    throw Error("normalize_apply: node axis mismatch (" + std::to_string(values.rows) +
                " rows vs " + std::to_string(st.mean.size()) + " stats)");
  for (std::size_t i = 0; i < values.rows; ++i)
    for (std::size_t t = 0; t < values.cols; ++t)
      values.at(i, t) = (values.at(i, t) - st.mean[i]) / st.stdev[i];
}

inline void normalize_apply(AlignedPanel& panel, const NodeStats& st) {
  normalize_apply(panel.values, st);
}

inline void denormalize(Mat& values, const NodeStats& st) {
  if (values.rows != st.mean.size())
    throw Error("denormalize: node axis mismatch (" + std::to_string(values.rows) + " rows vs " +
                std::to_string(st.mean.size()) + " stats)");
  for (std::size_t i = 0; i < values.rows; ++i)
    for (std::size_t t = 0; t < values.cols; ++t)
      values.at(i, t) = values.at(i, t) * st.stdev[i] + st.mean[i];
}

}  // namespace stgrid
