// Similarity-weighted blending and the external-forecaster adapter. The
// protocol tests drive the real echo_forecaster binary (path provided via
// the ECHO_FORECASTER environment variable) through pipes.

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

#include "stgrid/ensemble.hpp"
#include "stgrid/rng.hpp"

namespace {

using namespace stgrid;

Mat random_mat(std::size_t r, std::size_t c, Rng& rng, double lo = -5.0, double hi = 5.0) {
  Mat m(r, c);
  for (double& v : m.data) v = rng.uniform(lo, hi);
  return m;
}

CorrelationMatrix corr_from(std::size_t n, const std::vector<double>& upper) {
  CorrelationMatrix cm;
  cm.n = n;
  cm.rho = Mat(n, n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cm.rho.at(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      cm.rho.at(i, j) = upper[k];
      cm.rho.at(j, i) = upper[k];
      ++k;
    }
  }
  return cm;
}

TEST(Blend, SingleNeighborFixture) {
  Mat forecasts(2, 1);
  forecasts.data = {10.0, 20.0};
  CorrelationMatrix cm = corr_from(2, {0.8});
  BlendConfig cfg;
  cfg.k = 1;
  cfg.alpha = 0.6;
  BlendResult res = blend(forecasts, cm, cfg);
  EXPECT_DOUBLE_EQ(res.output.at(0, 0), 14.0);  // 0.6*10 + 0.4*20
  EXPECT_DOUBLE_EQ(res.output.at(1, 0), 16.0);  // 0.6*20 + 0.4*10
  EXPECT_TRUE(res.passthrough_nodes.empty());
}

TEST(Blend, AlphaOneIsIdentity) {
  Rng rng(201);
  Mat forecasts = random_mat(4, 3, rng);
  CorrelationMatrix cm = corr_from(4, {0.5, 0.4, 0.3, 0.6, 0.2, 0.7});
  BlendConfig cfg;
  cfg.k = 2;
  cfg.alpha = 1.0;
  BlendResult res = blend(forecasts, cm, cfg);
  EXPECT_EQ(res.output.data, forecasts.data);
}

TEST(Blend, OutputStaysInsidePerStepHull) {
  Rng rng(202);
  Mat forecasts = random_mat(5, 4, rng);
  std::vector<double> upper;
  for (int i = 0; i < 10; ++i) upper.push_back(rng.uniform(0.05, 0.95));
  CorrelationMatrix cm = corr_from(5, upper);
  BlendConfig cfg;
  cfg.k = 3;
  cfg.alpha = 0.35;
  BlendResult res = blend(forecasts, cm, cfg);
  for (std::size_t h = 0; h < 4; ++h) {
    double lo = forecasts.at(0, h), hi = lo;
    for (std::size_t i = 1; i < 5; ++i) {
      lo = std::min(lo, forecasts.at(i, h));
      hi = std::max(hi, forecasts.at(i, h));
    }
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_GE(res.output.at(i, h), lo - 1e-12);
      EXPECT_LE(res.output.at(i, h), hi + 1e-12);
    }
  }
}

TEST(Blend, TopKNeighborsBySimilarityThenIndex) {
  Mat forecasts(4, 1);
  forecasts.data = {1.0, 2.0, 3.0, 4.0};
  // rho(0,.) = {1:0.9, 2:0.5, 3:0.6}; rho(3,.) = {0:0.6, 1:0.6, 2:0.6}
  CorrelationMatrix cm = corr_from(4, {0.9, 0.5, 0.6, 0.2, 0.6, 0.6});
  BlendConfig cfg;
  cfg.k = 2;
  cfg.alpha = 0.5;
  BlendResult res = blend(forecasts, cm, cfg);

  // node 0 ranks neighbor 1 (0.9) then 3 (0.6), dropping 2 (0.5)
  const double nb0 = (0.9 / 1.5) * 2.0 + (0.6 / 1.5) * 4.0;
  EXPECT_DOUBLE_EQ(res.output.at(0, 0), 0.5 * 1.0 + 0.5 * nb0);
  // node 3 sees a three-way tie at 0.6; the index tie-break keeps 0 and 1
  const double nb3 = 0.5 * 1.0 + 0.5 * 2.0;
  EXPECT_DOUBLE_EQ(res.output.at(3, 0), 0.5 * 4.0 + 0.5 * nb3);
}

TEST(Blend, ZeroSimilarityRowPassesThrough) {
  Mat forecasts(3, 2);
  forecasts.data = {1.0, 10.0, 2.0, 20.0, 3.0, 30.0};
  CorrelationMatrix cm = corr_from(3, {0.9, 0.0, 0.0});  // node 2 unrelated to all
  BlendConfig cfg;
  cfg.k = 2;
  cfg.alpha = 0.5;
  BlendResult res = blend(forecasts, cm, cfg);
  ASSERT_EQ(res.passthrough_nodes.size(), 1u);
  EXPECT_EQ(res.passthrough_nodes[0], 2u);
  EXPECT_DOUBLE_EQ(res.output.at(2, 0), 3.0);
  EXPECT_DOUBLE_EQ(res.output.at(2, 1), 30.0);
  // node 0 still blends: neighbor weights 0.9 and 0.0
  EXPECT_DOUBLE_EQ(res.output.at(0, 0), 0.5 * 1.0 + 0.5 * 2.0);
}

TEST(Blend, ValidationErrors) {
  Mat forecasts(3, 2, 1.0);
  CorrelationMatrix cm = corr_from(3, {0.5, 0.5, 0.5});
  BlendConfig cfg;

  cfg.alpha = 1.5;
  EXPECT_THROW(blend(forecasts, cm, cfg), Error);
  cfg.alpha = -0.1;
  EXPECT_THROW(blend(forecasts, cm, cfg), Error);

  cfg.alpha = 0.5;
  cfg.k = 0;
  EXPECT_THROW(blend(forecasts, cm, cfg), Error);  // k = 0 only in permissive mode
  cfg.k = 3;
  EXPECT_THROW(blend(forecasts, cm, cfg), Error);  // k > N-1

  cfg.k = 1;
  CorrelationMatrix wrong = corr_from(4, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5});
  EXPECT_THROW(blend(forecasts, wrong, cfg), Error);

  Mat bad = forecasts;
  bad.at(1, 1) = std::nan("");
  EXPECT_THROW(blend(bad, cm, cfg), Error);
}

TEST(Blend, PermissiveZeroKIsIdentity) {
  Rng rng(203);
  Mat forecasts = random_mat(3, 2, rng);
  CorrelationMatrix cm = corr_from(3, {0.5, 0.5, 0.5});
  BlendConfig cfg;
  cfg.k = 0;
  cfg.permissive = true;
  BlendResult res = blend(forecasts, cm, cfg);
  EXPECT_EQ(res.output.data, forecasts.data);
  EXPECT_TRUE(res.passthrough_nodes.empty());
}

// --------------------------------------------------------------------------
// adapter protocol against the real echo binary
// --------------------------------------------------------------------------

std::string echo_binary() {
  const char* p = std::getenv("ECHO_FORECASTER");
  return p ? std::string(p) : std::string();
}

ExternalForecasterHandle handle_for(const std::string& mode, double timeout_s = 10.0) {
  ExternalForecasterHandle h;
  h.argv = {echo_binary()};
  if (!mode.empty()) h.argv.push_back(mode);
  h.timeout_s = timeout_s;
  return h;
}

class AdapterTest : public ::testing::Test {
 protected:
  void SetUp() override {
    if (echo_binary().empty()) GTEST_SKIP() << "ECHO_FORECASTER not set";
  }
};

TEST_F(AdapterTest, EchoRepeatsLastContextValue) {
  Rng rng(204);
  Mat context = random_mat(3, 4, rng);
  std::vector<std::string> ids = {"a", "b", "c"};
  Mat out = per_node_forecast(handle_for("echo"), ids, context, 5, 15);
  ASSERT_EQ(out.rows, 3u);
  ASSERT_EQ(out.cols, 5u);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t h = 0; h < 5; ++h)
      EXPECT_DOUBLE_EQ(out.at(i, h), context.at(i, 3)) << "node " << i << " step " << h;
}

TEST_F(AdapterTest, ReusedProcessServesManyRounds) {
  LineProcess proc(handle_for("echo").argv, 10.0);
  std::vector<std::string> ids = {"n0", "n1"};
  for (int round = 0; round < 3; ++round) {
    Mat context(2, 2);
    context.data = {1.0 + round, 2.0, 3.0 + round, 4.0};
    Mat out = per_node_forecast(proc, ids, context, 2, 5);
    EXPECT_DOUBLE_EQ(out.at(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(out.at(1, 1), 4.0);
  }
}

TEST_F(AdapterTest, CompositionThroughBlendMatchesHandComputation) {
  // echo turns each node's context tail into a flat forecast; blending those
  // must equal the directly composed fixture
  Mat context(3, 2);
  context.data = {0.0, 5.0, 0.0, -7.0, 0.0, 11.0};
  std::vector<std::string> ids = {"s1", "s2", "s3"};
  Mat fc = per_node_forecast(handle_for("echo"), ids, context, 3, 30);

  CorrelationMatrix cm = corr_from(3, {0.9, 0.1, 0.5});
  BlendConfig cfg;
  cfg.k = 1;
  cfg.alpha = 0.25;
  BlendResult res = blend(fc, cm, cfg);

  // nearest neighbors: 0 -> 1, 1 -> 0, 2 -> 1; echo bases are (5, -7, 11)
  for (std::size_t h = 0; h < 3; ++h) {
    EXPECT_DOUBLE_EQ(res.output.at(0, h), 0.25 * 5.0 + 0.75 * -7.0);
    EXPECT_DOUBLE_EQ(res.output.at(1, h), 0.25 * -7.0 + 0.75 * 5.0);
    EXPECT_DOUBLE_EQ(res.output.at(2, h), 0.25 * 11.0 + 0.75 * -7.0);
  }
}

void expect_adapter_error(const std::string& mode, const std::string& needle,
                          double timeout_s = 10.0) {
  Mat context(2, 3, 1.0);
  std::vector<std::string> ids = {"a", "b"};
  try {
    per_node_forecast(handle_for(mode, timeout_s), ids, context, 4, 5);
    FAIL() << "mode '" << mode << "' should have thrown";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos)
        << "mode '" << mode << "' raised: " << e.what();
  }
}

TEST_F(AdapterTest, MalformedResponsesFailLoudly) {
  expect_adapter_error("garbage", "malformed response");
  expect_adapter_error("short", "forecast length");
  expect_adapter_error("text", "non-numeric");
  // numbers beyond double range are rejected by the JSON parser itself
  expect_adapter_error("huge", "malformed response");
  expect_adapter_error("wrongid", "while awaiting");
}

TEST_F(AdapterTest, SilentAdapterTimesOut) {
  expect_adapter_error("silent", "timed out", 0.5);
}

TEST_F(AdapterTest, MissingBinaryReportsClosedStream) {
  ExternalForecasterHandle h;
  h.argv = {"/nonexistent/forecaster_binary"};
  h.timeout_s = 5.0;
  Mat context(1, 2, 1.0);
  EXPECT_THROW(per_node_forecast(h, {"a"}, context, 2, 5), Error);
}

TEST(SplitCommand, TokenizesOnWhitespace) {
  auto tokens = split_command("python3  adapter.py --mode fast");
  ASSERT_EQ(tokens.size(), 4u);
  EXPECT_EQ(tokens[0], "python3");
  EXPECT_EQ(tokens[1], "adapter.py");
  EXPECT_EQ(tokens[2], "--mode");
  EXPECT_EQ(tokens[3], "fast");
  EXPECT_TRUE(split_command("").empty());
  EXPECT_TRUE(split_command("   ").empty());
}

}  // namespace
