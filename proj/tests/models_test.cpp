// Forecaster zoo: VAR against closed-form least-squares oracles, the graph
// models against no-mixing references (identity mixing must be bit-exact),
// permutation equivariance, single-window overfit, seeds and checkpoints.

#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stgrid/graph.hpp"
#include "stgrid/models.hpp"
#include "stgrid/rng.hpp"

namespace {

using namespace stgrid;

Mat random_mat(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Mat m(r, c);
  for (double& v : m.data) v = rng.uniform(lo, hi);
  return m;
}

// A window set over a raw panel; enough for models that read `values`
// directly (VAR) and, with starts, for the training loop.
WindowSet ws_over(Mat panel, int C, int H, int stride = 1) {
  WindowSet ws;
  ws.context_len = C;
  ws.horizon_len = H;
  ws.stride = stride;
  ws.values = std::move(panel);
  const std::size_t T = ws.values.cols;
  const std::size_t need = static_cast<std::size_t>(C + H);
  if (T < need) {
    ws.too_short = true;
  } else {
    for (std::size_t s = 0; s + need <= T; s += static_cast<std::size_t>(stride))
      ws.starts.push_back(s);
  }
  return ws;
}

NodeStats identity_stats(std::size_t n) {
  NodeStats st;
  st.mean.assign(n, 0.0);
  st.stdev.assign(n, 1.0);
  return st;
}

NormalizedAdjacency identity_adjacency(std::size_t n) {
  NormalizedAdjacency na;
  na.n = n;
  na.a_hat = Mat::identity(n);
  return na;
}

// Degree-normalized mixing matrix from a small correlation fixture.
NormalizedAdjacency dense_adjacency(std::size_t n) {
  CorrelationMatrix cm;
  cm.n = n;
  cm.rho = Mat(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      cm.rho.at(i, j) = (i == j) ? 1.0 : 0.3 + 0.07 * static_cast<double>(i + j) +
                                             0.01 * static_cast<double>(i * j);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) cm.rho.at(i, j) = cm.rho.at(j, i);
  return normalize_adjacency(build_graph(cm, 60.0));
}

// x_t = c + A1 x_{t-1} (+ A2 x_{t-2}) rolled out exactly in doubles.
Mat var_trajectory(const Mat& c, const std::vector<Mat>& lags, const Mat& x0_cols,
                   std::size_t T) {
  const std::size_t N = c.rows, L = lags.size();
  Mat panel(N, T);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t i = 0; i < N; ++i) panel.at(i, t) = x0_cols.at(i, t);
  for (std::size_t t = L; t < T; ++t)
    for (std::size_t i = 0; i < N; ++i) {
      double v = c.at(i, 0);
      for (std::size_t l = 1; l <= L; ++l)
        for (std::size_t j = 0; j < N; ++j) v += lags[l - 1].at(i, j) * panel.at(j, t - l);
      panel.at(i, t) = v;
    }
  return panel;
}

TEST(Var, FitRecoversNoiselessVar1) {
  Mat A(3, 3);
  A.data = {0.5, 0.2, 0.0, 0.1, 0.4, 0.2, 0.0, 0.3, 0.5};
  Mat c(3, 1);
  c.data = {1.0, -2.0, 0.5};
  Mat x0(3, 1);
  x0.data = {50.0, -70.0, 30.0};
  Mat panel = var_trajectory(c, {A}, x0, 60);

  VarCoefficients coef = var_fit(panel, 1, /*ridge=*/0.0);
  ASSERT_EQ(coef.L, 1);
  double worst = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    worst = std::max(worst, std::fabs(coef.intercept.at(i, 0) - c.at(i, 0)));
    for (std::size_t j = 0; j < 3; ++j)
      worst = std::max(worst, std::fabs(coef.lags[0].at(i, j) - A.at(i, j)));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Var, TwoStepAr1ForecastIsExact) {
  // x_{t+1} = 0.9 x_t, no intercept; fitted on the exact decay curve
  const std::size_t T = 30;
  Mat panel(1, T);
  panel.at(0, 0) = 1.0;
  for (std::size_t t = 1; t < T; ++t) panel.at(0, t) = 0.9 * panel.at(0, t - 1);

  VarCoefficients coef = var_fit(panel, 1, /*ridge=*/0.0);
  Mat context(1, 1);
  context.at(0, 0) = 1.0;
  Mat fc = var_predict(coef, context, 2);
  EXPECT_NEAR(fc.at(0, 0), 0.9, 1e-9);
  EXPECT_NEAR(fc.at(0, 1), 0.81, 1e-9);
}

TEST(Var, PredictMatchesHandRollout) {
  VarCoefficients coef;
  coef.L = 2;
  coef.intercept = Mat(2, 1);
  coef.intercept.data = {0.5, -0.25};
  Mat A1(2, 2), A2(2, 2);
  A1.data = {0.3, 0.1, 0.0, 0.2};
  A2.data = {0.05, 0.0, 0.1, -0.1};
  coef.lags = {A1, A2};

  Mat context(2, 4);
  context.data = {1.0, -0.5, 2.0, 0.75, -1.5, 0.25, 0.5, -2.0};
  const int H = 3;
  Mat got = var_predict(coef, context, H);

  // independent rollout over an explicit history buffer
  std::vector<std::vector<double>> hist = {{context.at(0, 2), context.at(1, 2)},
                                           {context.at(0, 3), context.at(1, 3)}};
  for (int h = 0; h < H; ++h) {
    std::vector<double> next(2);
    for (std::size_t i = 0; i < 2; ++i) {
      double v = coef.intercept.at(i, 0);
      for (std::size_t j = 0; j < 2; ++j) v += A1.at(i, j) * hist[1][j];
      for (std::size_t j = 0; j < 2; ++j) v += A2.at(i, j) * hist[0][j];
      next[i] = v;
    }
    for (std::size_t i = 0; i < 2; ++i)
      EXPECT_NEAR(got.at(i, static_cast<std::size_t>(h)), next[i], 1e-12);
    hist[0] = hist[1];
    hist[1] = next;
  }
}

TEST(Var, AicIsMinusInfinityOnExactResiduals) {
  // x_t = 0.5 * x_{t-1} on powers of two: the hand-built coefficients leave
  // residuals that are exactly zero in floating point, so the residual
  // covariance determinant is zero and the score degenerates to -infinity
  Mat panel(1, 20);
  panel.at(0, 0) = 1.0;
  for (std::size_t t = 1; t < 20; ++t) panel.at(0, t) = 0.5 * panel.at(0, t - 1);
  VarCoefficients coef;
  coef.L = 1;
  coef.intercept = Mat(1, 1, 0.0);
  coef.lags = {Mat(1, 1, 0.5)};
  EXPECT_EQ(var_aic(panel, coef), -std::numeric_limits<double>::infinity());

  // on a persistently excited (noisy) panel, perturbing a fitted coefficient
  // inflates the residual covariance, so the fit must score strictly better
  Mat A(2, 2), c(2, 1);
  A.data = {0.6, 0.2, 0.1, 0.5};
  c.data = {1.0, -1.0};
  Rng rng(77);
  Mat noisy(2, 300);
  noisy.at(0, 0) = 1.0;
  noisy.at(1, 0) = -1.0;
  for (std::size_t t = 1; t < 300; ++t)
    for (std::size_t i = 0; i < 2; ++i) {
      double v = c.at(i, 0) + 0.3 * rng.gaussian();
      for (std::size_t j = 0; j < 2; ++j) v += A.at(i, j) * noisy.at(j, t - 1);
      noisy.at(i, t) = v;
    }
  VarCoefficients fit = var_fit(noisy, 1, /*ridge=*/0.0);
  VarCoefficients wrong = fit;
  wrong.lags[0].at(0, 0) += 0.25;
  EXPECT_LT(var_aic(noisy, fit), var_aic(noisy, wrong));
}

TEST(Var, LagSearchDoesNotUnderfit) {
  // dynamics live purely at lag 2, driven by process noise so the panel
  // stays excited; a lag-1 model leaves most variance behind
  Mat A2(2, 2), c(2, 1);
  A2.data = {0.7, 0.1, 0.05, 0.65};
  c.data = {1.0, -1.0};
  const std::size_t T = 300;
  Mat panel(2, T);
  panel.at(0, 0) = 3.0;
  panel.at(1, 0) = -4.0;
  panel.at(0, 1) = 2.5;
  panel.at(1, 1) = 3.5;
  Rng noise(404);
  for (std::size_t t = 2; t < T; ++t)
    for (std::size_t i = 0; i < 2; ++i) {
      double v = c.at(i, 0) + 0.3 * noise.gaussian();
      for (std::size_t j = 0; j < 2; ++j) v += A2.at(i, j) * panel.at(j, t - 2);
      panel.at(i, t) = v;
    }

  ForecasterSpec spec;
  spec.kind = ModelKind::VAR;
  spec.C = 8;
  spec.H = 2;
  spec.N = 2;
  VarForecaster fc(spec);
  fc.fit(ws_over(panel, spec.C, spec.H), WindowSet{}, identity_stats(2));
  EXPECT_GE(fc.coefficients().L, 2);

  // the lag-1 fit really is worse under the same criterion
  const double aic1 = var_aic(panel, var_fit(panel, 1));
  const double aic2 = var_aic(panel, var_fit(panel, 2));
  EXPECT_LT(aic2, aic1);
}

TEST(Var, ConstantSeriesPredictsConstant) {
  Mat panel(2, 50, 5.0);
  ForecasterSpec spec;
  spec.kind = ModelKind::VAR;
  spec.C = 6;
  spec.H = 3;
  spec.N = 2;
  VarForecaster fc(spec);
  fc.fit(ws_over(panel, spec.C, spec.H), ws_over(Mat(2, 0), spec.C, spec.H),
         identity_stats(2));
  Mat pred = fc.predict(Mat(2, 6, 5.0));
  for (double v : pred.data) EXPECT_NEAR(v, 5.0, 1e-3);
}

TEST(Var, GuardsAgainstBadInput) {
  Mat panel(2, 50, 1.0);
  EXPECT_THROW(var_fit(panel, 0), Error);
  EXPECT_THROW(var_fit(Mat(3, 6), 2), Error);  // too short for N=3, L=2

  VarCoefficients coef;
  coef.L = 3;
  coef.intercept = Mat(1, 1);
  coef.lags = {Mat(1, 1), Mat(1, 1), Mat(1, 1)};
  EXPECT_THROW(var_predict(coef, Mat(1, 2), 1), Error);  // context < lag order

  ForecasterSpec spec;
  spec.kind = ModelKind::VAR;
  spec.C = 4;
  spec.H = 1;
  spec.N = 2;
  VarForecaster fc(spec);
  EXPECT_THROW(fc.predict(Mat(2, 4, 1.0)), Error);  // predict before fit
}

TEST(Models, SpecValidation) {
  ForecasterSpec bad;
  bad.kind = ModelKind::GRU;
  bad.C = 4;
  bad.H = 2;
  bad.N = 3;
  bad.graph = identity_adjacency(3);
  EXPECT_THROW(validate_spec(bad), Error);  // non-graph model with a graph

  ForecasterSpec missing;
  missing.kind = ModelKind::GRUGCN;
  missing.C = 4;
  missing.H = 2;
  missing.N = 3;
  EXPECT_THROW(validate_spec(missing), Error);  // graph model without one

  ForecasterSpec mismatch = missing;
  mismatch.graph = identity_adjacency(4);
  EXPECT_THROW(validate_spec(mismatch), Error);  // graph over wrong node count

  ForecasterSpec zero;
  zero.kind = ModelKind::GRU;
  EXPECT_THROW(validate_spec(zero), Error);  // C = H = 0

  ForecasterSpec ext;
  ext.kind = ModelKind::EXTERNAL;
  ext.C = 4;
  ext.H = 2;
  ext.N = 2;
  EXPECT_THROW(
      {
        try {
          make_forecaster(ext);
        } catch (const Error& e) {
          EXPECT_NE(std::string(e.what()).find("adapter"), std::string::npos);
          throw;
        }
      },
      Error);
}

TEST(Models, KindNamesRoundTrip) {
  for (ModelKind k : {ModelKind::VAR, ModelKind::GRU, ModelKind::TRANSFORMER, ModelKind::GRUGCN,
                      ModelKind::TGCN, ModelKind::EXTERNAL})
    EXPECT_EQ(kind_from_string(kind_name(k)), k);
  EXPECT_THROW(kind_from_string("lstm"), Error);
  EXPECT_TRUE(is_graph_model(ModelKind::GRUGCN));
  EXPECT_TRUE(is_graph_model(ModelKind::TGCN));
  EXPECT_FALSE(is_graph_model(ModelKind::GRU));
}

ForecasterSpec small_spec(ModelKind kind, std::size_t N, int C, int H, uint64_t seed) {
  ForecasterSpec spec;
  spec.kind = kind;
  spec.hidden = 8;
  spec.layers = 1;
  spec.C = C;
  spec.H = H;
  spec.N = N;
  spec.seed = seed;
  if (is_graph_model(kind)) spec.graph = dense_adjacency(N);
  return spec;
}

TEST(Models, PredictShapeContract) {
  Rng rng(11);
  for (ModelKind kind :
       {ModelKind::GRU, ModelKind::TRANSFORMER, ModelKind::GRUGCN, ModelKind::TGCN}) {
    auto fc = make_forecaster(small_spec(kind, 3, 5, 2, 1));
    Mat ctx = random_mat(3, 5, rng);
    Mat out = fc->predict(ctx);  // untrained weights are still a valid function
    EXPECT_EQ(out.rows, 3u) << kind_name(kind);
    EXPECT_EQ(out.cols, 2u) << kind_name(kind);
    EXPECT_TRUE(all_finite(out)) << kind_name(kind);
    EXPECT_THROW(fc->predict(Mat(3, 4)), Error) << kind_name(kind);
    EXPECT_THROW(fc->predict(Mat(2, 5)), Error) << kind_name(kind);
  }
}

// Copies parameter values from a fitted forecaster into a test-local bank
// whose layers were registered in the same order.
void mirror_params(const std::vector<ad::Param>& src, nn::ParamBank& dst) {
  auto& ps = dst.params();
  ASSERT_EQ(ps.size(), src.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    ASSERT_EQ(ps[i].name, src[i].name);
    ASSERT_TRUE(ps[i].value.same_shape(src[i].value));
    ps[i].value = src[i].value;
  }
}

TEST(Models, GrugcnWithIdentityGraphMatchesPerNodeReference) {
  const std::size_t N = 4;
  const int C = 8, H = 2;
  ForecasterSpec spec = small_spec(ModelKind::GRUGCN, N, C, H, 21);
  spec.graph = identity_adjacency(N);
  GrugcnForecaster fc(spec);

  // same layer layout, but the graph convolution collapses to its projection
  nn::ParamBank ref(0);
  nn::GruLayer gru(ref, "gru", 1, static_cast<std::size_t>(spec.hidden));
  nn::GcnLayer gcn(ref, "gcn", static_cast<std::size_t>(spec.hidden),
                   static_cast<std::size_t>(spec.hidden));
  nn::Linear head(ref, "head", static_cast<std::size_t>(spec.hidden),
                  static_cast<std::size_t>(H));
  mirror_params(fc.params(), ref);

  Rng rng(22);
  Mat ctx = random_mat(N, static_cast<std::size_t>(C), rng);

  ad::Tape tape;
  auto lv = ref.bind_const(tape);
  ad::Var h = gru.zero_state(tape, N);
  for (int t = 0; t < C; ++t) {
    Mat x(N, 1);
    for (std::size_t i = 0; i < N; ++i) x.at(i, 0) = ctx.at(i, t);
    h = gru.step(lv, tape.constant(x), h);
  }
  ad::Var mixed = ad::relu(gcn.proj.apply(lv, h));  // no mixing: per-node GRU + dense
  ad::Var want = head.apply(lv, mixed);

  Mat got = fc.predict(ctx);
  ASSERT_EQ(got.data.size(), want->value.data.size());
  for (std::size_t i = 0; i < got.data.size(); ++i)
    ASSERT_EQ(got.data[i], want->value.data[i]) << "element " << i;
}

TEST(Models, TgcnWithIdentityGraphMatchesPerNodeReference) {
  const std::size_t N = 4;
  const int C = 8, H = 2;
  ForecasterSpec spec = small_spec(ModelKind::TGCN, N, C, H, 23);
  spec.graph = identity_adjacency(N);
  TgcnForecaster fc(spec);

  nn::ParamBank ref(0);
  nn::GcnLayer gcn1(ref, "gcn1", 1, TgcnForecaster::kGcnWidth);
  nn::GcnLayer gcn2(ref, "gcn2", TgcnForecaster::kGcnWidth, TgcnForecaster::kGcnWidth);
  nn::GruLayer gru(ref, "gru", TgcnForecaster::kGcnWidth, static_cast<std::size_t>(spec.hidden));
  nn::Linear head(ref, "head", static_cast<std::size_t>(spec.hidden),
                  static_cast<std::size_t>(H));
  mirror_params(fc.params(), ref);

  Rng rng(24);
  Mat ctx = random_mat(N, static_cast<std::size_t>(C), rng);

  ad::Tape tape;
  auto lv = ref.bind_const(tape);
  ad::Var h = gru.zero_state(tape, N);
  for (int t = 0; t < C; ++t) {
    Mat x(N, 1);
    for (std::size_t i = 0; i < N; ++i) x.at(i, 0) = ctx.at(i, t);
    ad::Var s = ad::relu(gcn1.proj.apply(lv, tape.constant(x)));  // per-node MLP
    s = ad::relu(gcn2.proj.apply(lv, s));
    h = gru.step(lv, s, h);
  }
  ad::Var want = head.apply(lv, h);

  Mat got = fc.predict(ctx);
  ASSERT_EQ(got.data.size(), want->value.data.size());
  for (std::size_t i = 0; i < got.data.size(); ++i)
    ASSERT_EQ(got.data[i], want->value.data[i]) << "element " << i;
}

TEST(Models, StgnnPermutationEquivarianceIsExact) {
  const std::size_t N = 4;
  const int C = 6, H = 3;
  const std::vector<std::size_t> perm = {2, 0, 3, 1};

  for (ModelKind kind : {ModelKind::GRUGCN, ModelKind::TGCN}) {
    ForecasterSpec spec = small_spec(kind, N, C, H, 31);
    NormalizedAdjacency base = *spec.graph;

    NormalizedAdjacency permuted;
    permuted.n = N;
    permuted.a_hat = Mat(N, N);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j)
        permuted.a_hat.at(i, j) = base.a_hat.at(perm[i], perm[j]);

    ForecasterSpec spec_p = spec;
    spec_p.graph = permuted;
    auto fc = make_forecaster(spec);      // same seed => identical shared weights
    auto fc_p = make_forecaster(spec_p);

    Rng rng(32);
    Mat ctx = random_mat(N, static_cast<std::size_t>(C), rng);
    Mat ctx_p(N, static_cast<std::size_t>(C));
    for (std::size_t i = 0; i < N; ++i)
      for (int t = 0; t < C; ++t) ctx_p.at(i, t) = ctx.at(perm[i], t);

    Mat pred = fc->predict(ctx);
    Mat pred_p = fc_p->predict(ctx_p);
    for (std::size_t i = 0; i < N; ++i)
      for (int t = 0; t < H; ++t)
        ASSERT_EQ(pred_p.at(i, t), pred.at(perm[i], t))
            << kind_name(kind) << " node " << i << " step " << t;
  }
}

TEST(Models, GcnLayerHandOracle) {
  // mixing [[.5,.5],[.5,.5]] over X=[2;6] averages to 4; unit projection
  nn::ParamBank bank(0);
  nn::GcnLayer gcn(bank, "g", 1, 1);
  bank.params()[gcn.proj.w].value = Mat(1, 1, 1.0);
  bank.params()[gcn.proj.b].value = Mat(1, 1, 0.0);

  Mat a_hat(2, 2, 0.5);
  Mat x(2, 1);
  x.data = {2.0, 6.0};

  ad::Tape tape;
  auto lv = bank.bind_const(tape);
  ad::Var y = gcn.apply(lv, a_hat, tape.constant(x), 2);
  EXPECT_DOUBLE_EQ(y->value.at(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(y->value.at(1, 0), 4.0);
}

// One window, no validation set: every trained model should drive L1 loss
// near zero when allowed to memorize.
TEST(Models, SingleWindowOverfit) {
  const std::size_t N = 3;
  const int C = 6, H = 2;
  Mat panel(N, static_cast<std::size_t>(C + H));
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t t = 0; t < panel.cols; ++t)
      panel.at(i, t) = std::sin(0.7 * static_cast<double>(t) + static_cast<double>(i)) +
                       0.2 * static_cast<double>(i);

  for (ModelKind kind :
       {ModelKind::GRU, ModelKind::TRANSFORMER, ModelKind::GRUGCN, ModelKind::TGCN}) {
    ForecasterSpec spec = small_spec(kind, N, C, H, 41);
    spec.train.max_epochs = 1200;
    spec.train.patience = 1200;
    spec.train.batch_size = 1;
    spec.train.lr = 0.02;
    auto fc = make_forecaster(spec);
    fc->fit(ws_over(panel, C, H), WindowSet{}, identity_stats(N));
    EXPECT_LT(fc->fit_result().best_val_mae, 0.05) << kind_name(kind);
  }
}

TEST(Models, SeedDeterminismAndVariation) {
  const std::size_t N = 2;
  const int C = 4, H = 2;
  Rng rng(55);
  Mat panel = random_mat(N, 12, rng);

  auto train_once = [&](uint64_t seed) {
    ForecasterSpec spec = small_spec(ModelKind::GRU, N, C, H, seed);
    spec.hidden = 6;
    spec.train.max_epochs = 30;
    spec.train.patience = 30;
    spec.train.batch_size = 2;
    auto fc = make_forecaster(spec);
    fc->fit(ws_over(panel, C, H), WindowSet{}, identity_stats(N));
    Mat ctx(N, static_cast<std::size_t>(C));
    for (std::size_t i = 0; i < N; ++i)
      for (int t = 0; t < C; ++t) ctx.at(i, t) = panel.at(i, t);
    return fc->predict(ctx);
  };

  Mat a = train_once(5), b = train_once(5), c = train_once(6);
  EXPECT_EQ(a.data, b.data);  // same seed: bit-identical end to end
  EXPECT_NE(a.data, c.data);  // different seed: different optimum
}

TEST(Models, GradientFlowsToEveryParameter) {
  const std::size_t N = 3;
  const int C = 5, H = 2;
  Rng rng(66);
  for (ModelKind kind :
       {ModelKind::GRU, ModelKind::TRANSFORMER, ModelKind::GRUGCN, ModelKind::TGCN}) {
    ForecasterSpec spec = small_spec(kind, N, C, H, 67);
    spec.layers = 2;
    auto fc = make_forecaster(spec);
    auto* nf = dynamic_cast<NeuralForecaster*>(fc.get());
    ASSERT_NE(nf, nullptr);

    Mat c0 = random_mat(N, static_cast<std::size_t>(C), rng, 0.5, 1.5);
    Mat c1 = random_mat(N, static_cast<std::size_t>(C), rng, 0.5, 1.5);
    std::vector<const Mat*> ctxs{&c0, &c1};
    Mat target = random_mat(2 * N, static_cast<std::size_t>(H), rng);

    ad::Tape tape;
    auto leaves = nf->bank().bind(tape);
    ad::Var pred = nf->forward(tape, leaves, ctxs);
    ad::Var loss = nn::l1_loss(tape, pred, target);
    tape.backward(loss);

    const auto& params = nf->bank().params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      ASSERT_TRUE(leaves[i]->has_grad()) << kind_name(kind) << " param " << params[i].name;
      double linf = 0.0;
      for (double g : leaves[i]->grad.data) linf = std::max(linf, std::fabs(g));
      EXPECT_GT(linf, 0.0) << kind_name(kind) << " param " << params[i].name;
    }
  }
}

TEST(Models, SaveLoadRoundTrip) {
  namespace fs = std::filesystem;
  const std::string root = (fs::temp_directory_path() / "stgrid_models_rt").string();
  fs::remove_all(root);
  Rng rng(77);

  {  // VAR: lag structure survives the checkpoint
    Mat A(2, 2);
    A.data = {0.6, 0.1, 0.2, 0.5};
    Mat c(2, 1);
    c.data = {0.5, -1.0};
    Mat x0(2, 1);
    x0.data = {20.0, -30.0};
    Mat panel = var_trajectory(c, {A}, x0, 50);

    ForecasterSpec spec;
    spec.kind = ModelKind::VAR;
    spec.C = 6;
    spec.H = 3;
    spec.N = 2;
    VarForecaster fc(spec);
    fc.fit(ws_over(panel, spec.C, spec.H), WindowSet{}, identity_stats(2));
    save_forecaster(fc, root + "/var");

    auto back = load_forecaster(root + "/var");
    Mat ctx = random_mat(2, 6, rng);
    EXPECT_EQ(back->predict(ctx).data, fc.predict(ctx).data);
    EXPECT_EQ(dynamic_cast<VarForecaster&>(*back).coefficients().L, fc.coefficients().L);
  }

  {  // graph model: mixing matrix travels in the sidecar
    ForecasterSpec spec = small_spec(ModelKind::GRUGCN, 3, 4, 2, 78);
    spec.train.max_epochs = 5;
    spec.train.patience = 5;
    auto fc = make_forecaster(spec);
    Mat panel = random_mat(3, 14, rng);
    fc->fit(ws_over(panel, 4, 2), WindowSet{}, identity_stats(3));
    save_forecaster(*fc, root + "/grugcn");

    auto back = load_forecaster(root + "/grugcn");
    EXPECT_EQ(back->spec().kind, ModelKind::GRUGCN);
    ASSERT_TRUE(back->spec().graph.has_value());
    EXPECT_EQ(back->spec().graph->a_hat.data, spec.graph->a_hat.data);
    Mat ctx = random_mat(3, 4, rng);
    EXPECT_EQ(back->predict(ctx).data, fc->predict(ctx).data);
  }

  EXPECT_THROW(load_forecaster(root + "/nope"), Error);
}

TEST(TrainModel, BestWeightsAreRestored) {
  const std::size_t N = 2;
  const int C = 4, H = 2;
  Rng rng(88);
  Mat panel = random_mat(N, 20, rng);
  WindowSet train = ws_over(panel, C, H);
  WindowSet val = ws_over(random_mat(N, 12, rng), C, H);

  ForecasterSpec spec = small_spec(ModelKind::GRU, N, C, H, 89);
  spec.hidden = 6;
  spec.train.max_epochs = 25;
  spec.train.patience = 25;
  auto fc = make_forecaster(spec);
  fc->fit(train, val, identity_stats(N));
  const auto& res = fc->fit_result();
  ASSERT_GE(res.best_epoch, 0);

  // the weights left in the bank must reproduce the reported best val MAE
  auto* nf = dynamic_cast<NeuralForecaster*>(fc.get());
  const double re_eval = nn::eval_mae_celsius(nf->bank(), nf->forward_fn(), val,
                                              identity_stats(N), spec.train.batch_size);
  EXPECT_NEAR(re_eval, res.best_val_mae, 1e-12);
}

TEST(TrainModel, EmptyTrainSetThrows) {
  ForecasterSpec spec = small_spec(ModelKind::GRU, 2, 4, 2, 90);
  auto fc = make_forecaster(spec);
  EXPECT_THROW(fc->fit(WindowSet{}, WindowSet{}, identity_stats(2)), Error);
}

TEST(PositionalEncoding, MatchesClosedForm) {
  const std::size_t steps = 5, dim = 6;
  Mat pe = nn::positional_encoding(steps, dim);
  ASSERT_EQ(pe.rows, steps);
  ASSERT_EQ(pe.cols, dim);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -2.0 * std::floor(static_cast<double>(i) / 2.0) /
                                                 static_cast<double>(dim));
      const double want = (i % 2 == 0) ? std::sin(static_cast<double>(t) * freq)
                                       : std::cos(static_cast<double>(t) * freq);
      EXPECT_DOUBLE_EQ(pe.at(t, i), want) << "t=" << t << " i=" << i;
    }
}

}  // namespace
