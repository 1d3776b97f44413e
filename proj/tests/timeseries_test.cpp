// Ingestion, resampling, splitting, windowing and normalization. Window
// extraction is checked against a brute-force enumerator and resampling
// against hand-computed bucket means.

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "stgrid/rng.hpp"
#include "stgrid/timeseries.hpp"

namespace {

using namespace stgrid;

std::string write_temp(const std::string& name, const std::string& content) {
  std::string path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream out(path);
  out << content;
  return path;
}

SensorSeries regular_series(const std::string& id, int64_t t0, int64_t step, std::size_t n,
                            double v0 = 0.0, double dv = 1.0) {
  SensorSeries s;
  s.sensor_id = id;
  for (std::size_t k = 0; k < n; ++k) {
    s.timestamps.push_back(t0 + static_cast<int64_t>(k) * step);
    s.values.push_back(v0 + dv * static_cast<double>(k));
  }
  return s;
}

TEST(ParseTimestamp, AcceptsEpochAndIso) {
  EXPECT_EQ(parse_timestamp("1704067200").value(), 1704067200);
  EXPECT_EQ(parse_timestamp(" 42 ").value(), 42);
  EXPECT_EQ(parse_timestamp("1970-01-01T00:00:00").value(), 0);
  EXPECT_EQ(parse_timestamp("1970-01-01 00:01:00").value(), 60);
  EXPECT_EQ(parse_timestamp("2024-01-01T00:00:00Z").value(), 1704067200);
  EXPECT_EQ(parse_timestamp("2024-02-29T12:30:15").value(),
            1704067200 + 59LL * 86400 + 12 * 3600 + 30 * 60 + 15);
}

TEST(ParseTimestamp, RejectsGarbage) {
  EXPECT_FALSE(parse_timestamp("").has_value());
  EXPECT_FALSE(parse_timestamp("yesterday").has_value());
  EXPECT_FALSE(parse_timestamp("2024-13-01T00:00:00").has_value());
  EXPECT_FALSE(parse_timestamp("2024-01-32T00:00:00").has_value());
  EXPECT_FALSE(parse_timestamp("12:30:15").has_value());
}

TEST(Ingest, DropsBadRowsAndSorts) {
  std::string path = write_temp("ingest_basic.csv",
                                "timestamp,sensor_id,value\n"
                                "100,b,2.0\n"
                                "60,b,1.0\n"
                                "nonsense,b,3.0\n"   // bad timestamp
                                "120,b,inf\n"        // non-finite value
                                "60,b,9.0\n"         // duplicate timestamp
                                "50,a,5.0\n"
                                "70,a,not_a_number\n");
  IngestReport rep;
  auto series = ingest_csv(path, {}, &rep);
  ASSERT_EQ(series.size(), 2u);
  EXPECT_EQ(series[0].sensor_id, "a");
  EXPECT_EQ(series[1].sensor_id, "b");
  EXPECT_EQ(rep.rows_total, 7u);
  EXPECT_EQ(rep.rows_dropped, 4u);
  ASSERT_EQ(series[1].timestamps.size(), 2u);
  EXPECT_EQ(series[1].timestamps[0], 60);
  EXPECT_EQ(series[1].timestamps[1], 100);
  EXPECT_DOUBLE_EQ(series[1].values[0], 1.0);  // first of the duplicates wins
}

TEST(Ingest, ErrorsOnMissingColumnAndEmpty) {
  std::string bad_cols = write_temp("ingest_cols.csv", "time,id,value\n1,a,2\n");
  EXPECT_THROW(ingest_csv(bad_cols), Error);
  std::string no_rows = write_temp("ingest_norows.csv", "timestamp,sensor_id,value\nx,a,zz\n");
  EXPECT_THROW(ingest_csv(no_rows), Error);
  EXPECT_THROW(ingest_csv("/nonexistent/file.csv"), Error);
}

TEST(Ingest, MetadataAttachesCoordinates) {
  std::string data = write_temp("ingest_meta_data.csv", "timestamp,sensor_id,value\n1,a,2\n");
  std::string meta = write_temp("ingest_meta.csv", "sensor_id,lat,lon\na,40.5,-105.25\n");
  auto series = ingest_csv(data);
  apply_sensor_metadata(series, meta);
  EXPECT_DOUBLE_EQ(series[0].latitude, 40.5);
  EXPECT_DOUBLE_EQ(series[0].longitude, -105.25);
}

TEST(Resample, BucketMeansMatchHandComputation) {
  // 5-minute buckets [0,300), [300,600), ...: values landing in the same
  // bucket are averaged
  SensorSeries s;
  s.sensor_id = "a";
  s.timestamps = {0, 100, 250, 300, 899};
  s.values = {1.0, 3.0, 5.0, 10.0, 20.0};
  auto panel = resample({s}, 5, 0);
  ASSERT_EQ(panel.steps(), 3u);
  EXPECT_DOUBLE_EQ(panel.values.at(0, 0), 3.0);   // mean(1, 3, 5)
  EXPECT_DOUBLE_EQ(panel.values.at(0, 1), 10.0);  // lone sample
  EXPECT_DOUBLE_EQ(panel.values.at(0, 2), 20.0);
  EXPECT_TRUE(panel.observed(0, 0));
  EXPECT_TRUE(panel.observed(0, 2));
}

TEST(Resample, InterpolatesInteriorGapsAndHoldsEdges) {
  SensorSeries a;
  a.sensor_id = "a";
  a.timestamps = {300, 1500, 1800};  // buckets 1, 5, 6 of a 5-min grid
  a.values = {10.0, 50.0, 60.0};
  SensorSeries b = regular_series("b", 0, 300, 7, 0.0, 0.0);
  auto panel = resample({a, b}, 5, 0);
  ASSERT_EQ(panel.steps(), 7u);
  EXPECT_DOUBLE_EQ(panel.values.at(0, 0), 10.0);  // edge hold
  EXPECT_FALSE(panel.observed(0, 0));
  EXPECT_DOUBLE_EQ(panel.values.at(0, 2), 20.0);  // linear 10 -> 50 over 4 steps
  EXPECT_DOUBLE_EQ(panel.values.at(0, 3), 30.0);
  EXPECT_DOUBLE_EQ(panel.values.at(0, 4), 40.0);
  EXPECT_DOUBLE_EQ(panel.values.at(0, 6), 60.0);  // tail hold past bucket 6
  EXPECT_FALSE(panel.observed(0, 4));
  EXPECT_TRUE(panel.observed(0, 5));
}

TEST(Resample, CommonSpanAndErrors) {
  SensorSeries a = regular_series("a", 0, 300, 10);
  SensorSeries b = regular_series("b", 0, 300, 5);
  auto panel = resample({a, b}, 5, 0);
  EXPECT_EQ(panel.steps(), 5u);  // bounded by the shortest series

  EXPECT_THROW(resample({a}, 7, 0), Error);           // unsupported rate
  EXPECT_THROW(resample({a}, 5, 10'000'000), Error);  // origin past all data
  EXPECT_THROW(resample({}, 5, 0), Error);
}

TEST(Resample, NineDayFiveMinutePanelHas2592Samples) {
  const std::size_t n = 9 * 24 * 12;
  SensorSeries s = regular_series("a", 1704067200, 300, n);
  auto panel = resample({s}, 5, 1704067200);
  EXPECT_EQ(panel.steps(), 2592u);
}

TEST(WindowLengths, EightHourContextFourHourHorizon) {
  EXPECT_EQ(window_lengths(5), (std::pair<int, int>{96, 48}));
  EXPECT_EQ(window_lengths(15), (std::pair<int, int>{32, 16}));
  EXPECT_EQ(window_lengths(30), (std::pair<int, int>{16, 8}));
  EXPECT_EQ(window_lengths(45), (std::pair<int, int>{10, 5}));  // floored
  EXPECT_EQ(window_lengths(60), (std::pair<int, int>{8, 4}));
  EXPECT_THROW(window_lengths(10), Error);
}

TEST(Split, WholeDayBoundaries) {
  const std::size_t spd = samples_per_day(60);
  ASSERT_EQ(spd, 24u);
  SensorSeries s = regular_series("a", 0, 3600, spd * 9);
  auto panel = resample({s}, 60, 0);
  auto split = split_by_days(panel, SplitSpec{5, 2, 2});
  EXPECT_EQ(split.train.steps(), spd * 5);
  EXPECT_EQ(split.val.steps(), spd * 2);
  EXPECT_EQ(split.test.steps(), spd * 2);
  EXPECT_EQ(split.train.start, 0);
  EXPECT_EQ(split.val.start, static_cast<int64_t>(5 * 86400));
  EXPECT_EQ(split.test.start, static_cast<int64_t>(7 * 86400));
  // the partition is contiguous: first val sample follows last train sample
  EXPECT_DOUBLE_EQ(split.val.values.at(0, 0), static_cast<double>(spd * 5));

  EXPECT_THROW(split_by_days(panel, SplitSpec{0, 2, 2}), Error);
  EXPECT_THROW(split_by_days(panel, SplitSpec{9, 2, 2}), Error);  // too short
}

// Brute-force enumerator: every start where context+horizon fits, checked
// element-by-element against the WindowSet accessors.
TEST(Windows, MatchBruteForceEnumeration) {
  Rng rng(7);
  AlignedPanel panel;
  panel.rate_minutes = 60;
  panel.values = Mat(3, 40);
  for (double& v : panel.values.data) v = rng.uniform(-10.0, 10.0);
  panel.mask.assign(3 * 40, 1);

  for (int stride : {1, 2, 5}) {
    const int C = 5, H = 3;
    auto ws = make_windows(panel, C, H, stride);
    std::vector<std::size_t> expect_starts;
    for (std::size_t s = 0; s + C + H <= 40; s += static_cast<std::size_t>(stride))
      expect_starts.push_back(s);
    ASSERT_EQ(ws.starts, expect_starts) << "stride " << stride;
    for (std::size_t w = 0; w < ws.count(); ++w) {
      Mat ctx = ws.context(w), tgt = ws.target(w);
      for (std::size_t i = 0; i < 3; ++i) {
        for (int t = 0; t < C; ++t)
          ASSERT_DOUBLE_EQ(ctx.at(i, t), panel.values.at(i, expect_starts[w] + t));
        for (int t = 0; t < H; ++t)
          ASSERT_DOUBLE_EQ(tgt.at(i, t), panel.values.at(i, expect_starts[w] + C + t));
      }
    }
  }
}

TEST(Windows, TooShortSplitDegradesGracefully) {
  AlignedPanel panel;
  panel.rate_minutes = 60;
  panel.values = Mat(2, 6);
  panel.mask.assign(12, 1);
  auto ws = make_windows(panel, 5, 3);
  EXPECT_TRUE(ws.too_short);
  EXPECT_EQ(ws.count(), 0u);

  auto exact = make_windows(panel, 4, 2);
  EXPECT_FALSE(exact.too_short);
  EXPECT_EQ(exact.count(), 1u);

  EXPECT_THROW(make_windows(panel, 0, 3), Error);
  EXPECT_THROW(make_windows(panel, 4, 2, 0), Error);
}

TEST(Normalize, RoundTripAndZeroVariance) {
  AlignedPanel panel;
  panel.rate_minutes = 60;
  panel.values = Mat(2, 4);
  panel.values.data = {1.0, 2.0, 3.0, 4.0,   // mean 2.5, population var 1.25
                       7.0, 7.0, 7.0, 7.0};  // constant node
  panel.mask.assign(8, 1);
  auto st = normalize_fit(panel);
  EXPECT_DOUBLE_EQ(st.mean[0], 2.5);
  EXPECT_DOUBLE_EQ(st.stdev[0], std::sqrt(1.25));
  EXPECT_DOUBLE_EQ(st.stdev[1], 1.0);  // guarded

  Mat m = panel.values;
  normalize_apply(m, st);
  EXPECT_DOUBLE_EQ(m.at(1, 0), 0.0);
  denormalize(m, st);
  for (std::size_t i = 0; i < m.data.size(); ++i)
    EXPECT_NEAR(m.data[i], panel.values.data[i], 1e-12);

  Mat wrong(3, 4);
  EXPECT_THROW(normalize_apply(wrong, st), Error);
  EXPECT_THROW(denormalize(wrong, st), Error);
}

TEST(CommonOrigin, LatestFirstTimestampWins) {
  SensorSeries a = regular_series("a", 100, 300, 5);
  SensorSeries b = regular_series("b", 400, 300, 5);
  EXPECT_EQ(common_origin({a, b}), 400);
  EXPECT_THROW(common_origin({}), Error);
}

}  // namespace
