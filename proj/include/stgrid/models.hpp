#pragma once

// The forecaster zoo behind one interface: fit on (train, val) windows of
// normalized data, then predict an H-step horizon for all N nodes from an
// N x C context. Kinds: VAR (least squares), GRU and Transformer sequence
// baselines, and the two graph models (GRU->GCN and GCN->GRU stacks).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stgrid/core.hpp"
#include "stgrid/graph.hpp"
#include "stgrid/nn.hpp"
#include "stgrid/tensor.hpp"
#include "stgrid/timeseries.hpp"

namespace stgrid {

// ---------------------------------------------------------------------------
// Spec
// ---------------------------------------------------------------------------

enum class ModelKind { VAR, GRU, TRANSFORMER, GRUGCN, TGCN, EXTERNAL };

inline const char* kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::VAR: return "var";
    case ModelKind::GRU: return "gru";
    case ModelKind::TRANSFORMER: return "transformer";
    case ModelKind::GRUGCN: return "grugcn";
    case ModelKind::TGCN: return "tgcn";
    case ModelKind::EXTERNAL: return "external";
  }
  return "?";
}

inline ModelKind kind_from_string(const std::string& s) {
  for (ModelKind k : {ModelKind::VAR, ModelKind::GRU, ModelKind::TRANSFORMER, ModelKind::GRUGCN,
                      ModelKind::TGCN, ModelKind::EXTERNAL})
    if (s == kind_name(k)) return k;
  throw Error("unknown model kind '" + s + "'");
}

inline bool is_graph_model(ModelKind k) { return k == ModelKind::GRUGCN || k == ModelKind::TGCN; }

struct ForecasterSpec {
  ModelKind kind = ModelKind::VAR;
  int hidden = 64;
  int layers = 2;  // encoder depth for GRU/Transformer; graph models are fixed stacks
  int C = 0;
  int H = 0;
  std::size_t N = 0;
  std::optional<NormalizedAdjacency> graph;
  uint64_t seed = 0;
  nn::TrainConfig train;
};

inline void validate_spec(const ForecasterSpec& s) {
  if (s.C < 1 || s.H < 1 || s.N < 1)
    throw Error("forecaster spec: need C, H, N >= 1 (got C=" + std::to_string(s.C) +
                " H=" + std::to_string(s.H) + " N=" + std::to_string(s.N) + ")");
  if (s.hidden < 1 || s.layers < 1) throw Error("forecaster spec: hidden and layers must be >= 1");
  if (is_graph_model(s.kind)) {
    if (!s.graph) throw Error(std::string(kind_name(s.kind)) + " requires a graph");
    if (s.graph->n != s.N || s.graph->a_hat.rows != s.N || s.graph->a_hat.cols != s.N)
      throw Error(std::string(kind_name(s.kind)) + ": graph is over " +
                  std::to_string(s.graph->n) + " nodes, model over " + std::to_string(s.N));
  } else if (s.graph) {
    throw Error(std::string(kind_name(s.kind)) + " must not receive a graph");
  }
}

// ---------------------------------------------------------------------------
// Forecaster interface
// ---------------------------------------------------------------------------

class Forecaster {
 public:
  explicit Forecaster(ForecasterSpec spec) : spec_(std::move(spec)) { validate_spec(spec_); }
  virtual ~Forecaster() = default;

  const ForecasterSpec& spec() const { return spec_; }
  const nn::FitResult& fit_result() const { return fit_result_; }

  virtual void fit(const WindowSet& train, const WindowSet& val, const NodeStats& stats) = 0;
  virtual Mat predict(const Mat& context) = 0;  // normalized N x C -> normalized N x H
  virtual std::vector<ad::Param>& params() = 0;
  virtual void on_params_loaded() {}

 protected:
  ForecasterSpec spec_;
  nn::FitResult fit_result_;
};

// ---------------------------------------------------------------------------
// VAR
// ---------------------------------------------------------------------------

// x_t = c + sum_{l=1..L} A_l x_{t-l}
struct VarCoefficients {
  int L = 0;
  Mat intercept;          // N x 1
  std::vector<Mat> lags;  // L matrices, N x N
};

// Least squares with ridge damping on a node-by-time panel. Predictor rows
// are [1, x_{t-1}, ..., x_{t-L}]; one regression per target node, solved
// jointly through the shared Gram matrix.
inline VarCoefficients var_fit(const Mat& panel, int L, double ridge = 1e-6) {
  const std::size_t N = panel.rows, T = panel.cols;
  if (L < 1) throw Error("var_fit: lag order must be >= 1");
  const std::size_t D = static_cast<std::size_t>(L) * N + 1;
  if (T < static_cast<std::size_t>(L) + 1 ||
      T - static_cast<std::size_t>(L) <= static_cast<std::size_t>(N) * L + 1)
    throw Error("var_fit: train length " + std::to_string(T) + " too short for N=" +
                std::to_string(N) + ", L=" + std::to_string(L));
  const std::size_t rows = T - static_cast<std::size_t>(L);

  ad::detail::EMat X(rows, D), Y(rows, N);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t t = r + static_cast<std::size_t>(L);
    X(r, 0) = 1.0;
    for (int l = 1; l <= L; ++l)
      for (std::size_t j = 0; j < N; ++j)
        X(r, 1 + static_cast<std::size_t>(l - 1) * N + j) = panel.at(j, t - l);
    for (std::size_t i = 0; i < N; ++i) Y(r, i) = panel.at(i, t);
  }

  ad::detail::EMat G = X.transpose() * X;
  for (std::size_t d = 0; d < D; ++d) G(d, d) += ridge;
  Eigen::LDLT<ad::detail::EMat> solver(G);
  if (solver.info() != Eigen::Success || !solver.isPositive())
    throw Error("var_fit: singular design matrix (even after ridge damping)");
  ad::detail::EMat B = solver.solve(X.transpose() * Y);  // D x N

  VarCoefficients coef;
  coef.L = L;
  coef.intercept = Mat(N, 1);
  for (std::size_t i = 0; i < N; ++i) coef.intercept.at(i, 0) = B(0, i);
  for (int l = 1; l <= L; ++l) {
    Mat A(N, N);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j)
        A.at(i, j) = B(1 + static_cast<std::size_t>(l - 1) * N + j, i);
    coef.lags.push_back(std::move(A));
  }
  return coef;
}

// Akaike information criterion: ln det(residual covariance) + 2 k / T_eff.
// A perfectly explained panel has a degenerate covariance; that maps to -inf,
// which correctly wins the lag search.
inline double var_aic(const Mat& panel, const VarCoefficients& coef) {
  const std::size_t N = panel.rows, T = panel.cols;
  const std::size_t rows = T - static_cast<std::size_t>(coef.L);
  ad::detail::EMat E(rows, N);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t t = r + static_cast<std::size_t>(coef.L);
    for (std::size_t i = 0; i < N; ++i) {
      double pred = coef.intercept.at(i, 0);
      for (int l = 1; l <= coef.L; ++l)
        for (std::size_t j = 0; j < N; ++j) pred += coef.lags[l - 1].at(i, j) * panel.at(j, t - l);
      E(r, i) = panel.at(i, t) - pred;
    }
  }
  ad::detail::EMat sigma = (E.transpose() * E) / static_cast<double>(rows);
  const double det = sigma.determinant();
  const double logdet =
      (det > 0.0 && std::isfinite(det)) ? std::log(det) : -std::numeric_limits<double>::infinity();
  const double k = static_cast<double>(coef.L) * N * N + N;
  return logdet + 2.0 * k / static_cast<double>(rows);
}

// Iterated one-step rollout for H steps from the tail of the context.
inline Mat var_predict(const VarCoefficients& coef, const Mat& context, int H) {
  const std::size_t N = context.rows, C = context.cols;
  if (coef.L < 1) throw Error("var_predict: model has no coefficients");
  if (C < static_cast<std::size_t>(coef.L))
    throw Error("var_predict: context length " + std::to_string(C) + " < lag order " +
                std::to_string(coef.L));
  // history[k] = state L-k steps back; front is oldest
  std::vector<std::vector<double>> history;
  for (std::size_t t = C - static_cast<std::size_t>(coef.L); t < C; ++t) {
    std::vector<double> col(N);
    for (std::size_t i = 0; i < N; ++i) col[i] = context.at(i, t);
    history.push_back(std::move(col));
  }
  Mat out(N, static_cast<std::size_t>(H));
  for (int h = 0; h < H; ++h) {
    std::vector<double> next(N);
    for (std::size_t i = 0; i < N; ++i) {
      double v = coef.intercept.at(i, 0);
      for (int l = 1; l <= coef.L; ++l) {
        const auto& past = history[history.size() - static_cast<std::size_t>(l)];
        for (std::size_t j = 0; j < N; ++j) v += coef.lags[l - 1].at(i, j) * past[j];
      }
      next[i] = v;
      out.at(i, static_cast<std::size_t>(h)) = v;
    }
    history.push_back(std::move(next));
    history.erase(history.begin());
  }
  return out;
}

class VarForecaster final : public Forecaster {
 public:
  explicit VarForecaster(ForecasterSpec spec) : Forecaster(std::move(spec)) {}

  void fit(const WindowSet& train, const WindowSet& val, const NodeStats&) override {
    (void)val;  // no iterative training, nothing to early-stop
    const Mat& panel = train.values;
    const int l_cap = std::min(8, spec_.C - 1);
    double best_aic = std::numeric_limits<double>::infinity();
    bool found = false;
    std::string last_err = "no admissible lag order";
    for (int L = 1; L <= std::max(1, l_cap); ++L) {
      VarCoefficients cand;
      try {
        cand = var_fit(panel, L);
      } catch (const Error& e) {
        last_err = e.what();
        continue;
      }
      const double aic = var_aic(panel, cand);
      if (!found || aic < best_aic) {
        best_aic = aic;
        coef_ = std::move(cand);
        found = true;
      }
    }
    if (!found) throw Error("var: fit failed for every lag order; last error: " + last_err);
    store_params();
  }

  Mat predict(const Mat& context) override {
    if (coef_.L == 0) throw Error("var: predict called before fit");
    if (context.rows != spec_.N || context.cols != static_cast<std::size_t>(spec_.C))
      throw Error("var: context is " + shape_str(context.rows, context.cols) + ", expected " +
                  shape_str(spec_.N, static_cast<std::size_t>(spec_.C)));
    return var_predict(coef_, context, spec_.H);
  }

  std::vector<ad::Param>& params() override { return bank_.params(); }

  // Sizes the parameter slots so a checkpoint can be loaded into them.
  void prepare_slots(int L) {
    bank_ = nn::ParamBank(spec_.seed);
    bank_.add("var.c", Mat(spec_.N, 1));
    for (int l = 1; l <= L; ++l)
      bank_.add("var.A" + std::to_string(l), Mat(spec_.N, spec_.N));
  }

  void on_params_loaded() override {
    auto& ps = bank_.params();
    if (ps.empty()) throw Error("var: checkpoint has no tensors");
    coef_.L = static_cast<int>(ps.size()) - 1;
    coef_.intercept = ps[0].value;
    coef_.lags.clear();
    for (std::size_t l = 1; l < ps.size(); ++l) coef_.lags.push_back(ps[l].value);
  }

  const VarCoefficients& coefficients() const { return coef_; }

 private:
  void store_params() {
    prepare_slots(coef_.L);
    auto& ps = bank_.params();
    ps[0].value = coef_.intercept;
    for (int l = 1; l <= coef_.L; ++l) ps[static_cast<std::size_t>(l)].value = coef_.lags[l - 1];
  }

  nn::ParamBank bank_{0};
  VarCoefficients coef_;
};

// ---------------------------------------------------------------------------
// Shared scaffolding for the trained models
// ---------------------------------------------------------------------------

class NeuralForecaster : public Forecaster {
 public:
  explicit NeuralForecaster(ForecasterSpec spec)
      : Forecaster(std::move(spec)), bank_(spec_.seed) {}

  void fit(const WindowSet& train, const WindowSet& val, const NodeStats& stats) override {
    nn::TrainConfig cfg = spec_.train;
    cfg.seed = spec_.seed;
    fit_result_ = nn::train_model(bank_, forward_fn(), train, val, stats, cfg);
  }

  Mat predict(const Mat& context) override {
    if (context.rows != spec_.N || context.cols != static_cast<std::size_t>(spec_.C))
      throw Error(std::string(kind_name(spec_.kind)) + ": context is " +
                  shape_str(context.rows, context.cols) + ", expected " +
                  shape_str(spec_.N, static_cast<std::size_t>(spec_.C)));
    ad::Tape tape;
    auto leaves = bank_.bind_const(tape);
    std::vector<const Mat*> ctxs{&context};
    ad::Var out = forward(tape, leaves, ctxs);
    Mat m(spec_.N, static_cast<std::size_t>(spec_.H));
    m.data = out->value.data;
    return m;
  }

  std::vector<ad::Param>& params() override { return bank_.params(); }

  // Batched forward pass; row b*N+i of the result is window b, node i.
  virtual ad::Var forward(ad::Tape& tape, const std::vector<ad::Var>& lv,
                          const std::vector<const Mat*>& ctxs) = 0;

  nn::ForwardFn forward_fn() {
    return [this](ad::Tape& t, const std::vector<ad::Var>& lv,
                  const std::vector<const Mat*>& c) { return forward(t, lv, c); };
  }

  nn::ParamBank& bank() { return bank_; }

 protected:
  void check_contexts(const std::vector<const Mat*>& ctxs) const {
    if (ctxs.empty()) throw Error("forward: empty context batch");
    for (const Mat* c : ctxs)
      if (c->rows != spec_.N || c->cols != static_cast<std::size_t>(spec_.C))
        throw Error("forward: context is " + shape_str(c->rows, c->cols) + ", expected " +
                    shape_str(spec_.N, static_cast<std::size_t>(spec_.C)));
  }

  // B x N input slab for one timestep (window per row).
  Mat step_slab(const std::vector<const Mat*>& ctxs, int t) const {
    Mat x(ctxs.size(), spec_.N);
    for (std::size_t b = 0; b < ctxs.size(); ++b)
      for (std::size_t i = 0; i < spec_.N; ++i) x.at(b, i) = ctxs[b]->at(i, t);
    return x;
  }

  // (B*N) x 1 input column for one timestep (node-major rows).
  Mat node_slab(const std::vector<const Mat*>& ctxs, int t) const {
    Mat x(ctxs.size() * spec_.N, 1);
    for (std::size_t b = 0; b < ctxs.size(); ++b)
      for (std::size_t i = 0; i < spec_.N; ++i) x.at(b * spec_.N + i, 0) = ctxs[b]->at(i, t);
    return x;
  }

  nn::ParamBank bank_;
};

// ---------------------------------------------------------------------------
// GRU baseline: stacked GRUs over the multivariate input vector
// ---------------------------------------------------------------------------

class GruForecaster final : public NeuralForecaster {
 public:
  explicit GruForecaster(ForecasterSpec spec) : NeuralForecaster(std::move(spec)) {
    const std::size_t hid = static_cast<std::size_t>(spec_.hidden);
    for (int l = 0; l < spec_.layers; ++l)
      grus_.emplace_back(bank_, "gru" + std::to_string(l), l == 0 ? spec_.N : hid, hid);
    head_ = nn::Linear(bank_, "head", hid, spec_.N * static_cast<std::size_t>(spec_.H));
  }

  ad::Var forward(ad::Tape& tape, const std::vector<ad::Var>& lv,
                  const std::vector<const Mat*>& ctxs) override {
    check_contexts(ctxs);
    const std::size_t B = ctxs.size();
    std::vector<ad::Var> h;
    for (const auto& g : grus_) h.push_back(g.zero_state(tape, B));
    for (int t = 0; t < spec_.C; ++t) {
      ad::Var x = tape.constant(step_slab(ctxs, t));
      for (std::size_t l = 0; l < grus_.size(); ++l) {
        h[l] = grus_[l].step(lv, l == 0 ? x : h[l - 1], h[l]);
      }
    }
    ad::Var out = head_.apply(lv, h.back());  // B x (N*H), node-major columns
    return ad::reshape(out, B * spec_.N, static_cast<std::size_t>(spec_.H));
  }

 private:
  std::vector<nn::GruLayer> grus_;
  nn::Linear head_;
};

// ---------------------------------------------------------------------------
// Transformer baseline: projection + positional encoding + encoder stack,
// mean-pooled over time into an affine head
// ---------------------------------------------------------------------------

class TransformerForecaster final : public NeuralForecaster {
 public:
  static constexpr std::size_t kHeads = 4;
  static constexpr std::size_t kFeedForward = 256;

  explicit TransformerForecaster(ForecasterSpec spec) : NeuralForecaster(std::move(spec)) {
    const std::size_t dim = static_cast<std::size_t>(spec_.hidden);
    proj_ = nn::Linear(bank_, "proj", spec_.N, dim);
    for (int l = 0; l < spec_.layers; ++l)
      encoders_.emplace_back(bank_, "enc" + std::to_string(l), dim, kHeads, kFeedForward);
    head_ = nn::Linear(bank_, "head", dim, spec_.N * static_cast<std::size_t>(spec_.H));
    pe_ = nn::positional_encoding(static_cast<std::size_t>(spec_.C), dim);
  }

  ad::Var forward(ad::Tape& tape, const std::vector<ad::Var>& lv,
                  const std::vector<const Mat*>& ctxs) override {
    check_contexts(ctxs);
    const std::size_t B = ctxs.size();
    const std::size_t C = static_cast<std::size_t>(spec_.C);

    // all windows stacked time-major: row b*C+t holds window b's step-t vector
    Mat slab(B * C, spec_.N);
    Mat pe_tiled(B * C, pe_.cols);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < C; ++t) {
        for (std::size_t i = 0; i < spec_.N; ++i) slab.at(b * C + t, i) = ctxs[b]->at(i, t);
        for (std::size_t d = 0; d < pe_.cols; ++d) pe_tiled.at(b * C + t, d) = pe_.at(t, d);
      }
    ad::Var x = ad::add(proj_.apply(lv, tape.constant(slab)), tape.constant(pe_tiled));

    std::vector<ad::Var> pooled;
    pooled.reserve(B);
    for (std::size_t b = 0; b < B; ++b) {
      ad::Var xw = ad::slice(x, 0, b * C, C);
      for (const auto& enc : encoders_) xw = enc.apply(lv, xw);
      pooled.push_back(ad::mean_axis(xw, 0));  // 1 x dim
    }
    ad::Var out = head_.apply(lv, ad::concat(pooled, 0));  // B x (N*H)
    return ad::reshape(out, B * spec_.N, static_cast<std::size_t>(spec_.H));
  }

 private:
  nn::Linear proj_;
  std::vector<nn::EncoderLayer> encoders_;
  nn::Linear head_;
  Mat pe_;
};

// ---------------------------------------------------------------------------
// GRU -> GCN: per-node recurrence, then one graph convolution on final states
// ---------------------------------------------------------------------------

class GrugcnForecaster final : public NeuralForecaster {
 public:
  explicit GrugcnForecaster(ForecasterSpec spec) : NeuralForecaster(std::move(spec)) {
    const std::size_t hid = static_cast<std::size_t>(spec_.hidden);
    gru_ = nn::GruLayer(bank_, "gru", 1, hid);
    gcn_ = nn::GcnLayer(bank_, "gcn", hid, hid);
    head_ = nn::Linear(bank_, "head", hid, static_cast<std::size_t>(spec_.H));
  }

  ad::Var forward(ad::Tape& tape, const std::vector<ad::Var>& lv,
                  const std::vector<const Mat*>& ctxs) override {
    check_contexts(ctxs);
    ad::Var h = gru_.zero_state(tape, ctxs.size() * spec_.N);
    for (int t = 0; t < spec_.C; ++t)
      h = gru_.step(lv, tape.constant(node_slab(ctxs, t)), h);
    ad::Var mixed = ad::relu(gcn_.apply(lv, spec_.graph->a_hat, h, spec_.N));
    return head_.apply(lv, mixed);  // (B*N) x H
  }

 private:
  nn::GruLayer gru_;
  nn::GcnLayer gcn_;
  nn::Linear head_;
};

// ---------------------------------------------------------------------------
// GCN -> GRU: per-step spatial mixing of raw features, then recurrence
// ---------------------------------------------------------------------------

class TgcnForecaster final : public NeuralForecaster {
 public:
  static constexpr std::size_t kGcnWidth = 32;

  explicit TgcnForecaster(ForecasterSpec spec) : NeuralForecaster(std::move(spec)) {
    const std::size_t hid = static_cast<std::size_t>(spec_.hidden);
    gcn1_ = nn::GcnLayer(bank_, "gcn1", 1, kGcnWidth);
    gcn2_ = nn::GcnLayer(bank_, "gcn2", kGcnWidth, kGcnWidth);
    gru_ = nn::GruLayer(bank_, "gru", kGcnWidth, hid);
    head_ = nn::Linear(bank_, "head", hid, static_cast<std::size_t>(spec_.H));
  }

  ad::Var forward(ad::Tape& tape, const std::vector<ad::Var>& lv,
                  const std::vector<const Mat*>& ctxs) override {
    check_contexts(ctxs);
    const Mat& a_hat = spec_.graph->a_hat;
    ad::Var h = gru_.zero_state(tape, ctxs.size() * spec_.N);
    for (int t = 0; t < spec_.C; ++t) {
      ad::Var x = tape.constant(node_slab(ctxs, t));
      ad::Var s = ad::relu(gcn1_.apply(lv, a_hat, x, spec_.N));
      s = ad::relu(gcn2_.apply(lv, a_hat, s, spec_.N));
      h = gru_.step(lv, s, h);
    }
    return head_.apply(lv, h);  // (B*N) x H
  }

 private:
  nn::GcnLayer gcn1_, gcn2_;
  nn::GruLayer gru_;
  nn::Linear head_;
};

// ---------------------------------------------------------------------------
// Factory and checkpointing
// ---------------------------------------------------------------------------

inline std::unique_ptr<Forecaster> make_forecaster(const ForecasterSpec& spec) {
  switch (spec.kind) {
    case ModelKind::VAR: return std::make_unique<VarForecaster>(spec);
    case ModelKind::GRU: return std::make_unique<GruForecaster>(spec);
    case ModelKind::TRANSFORMER: return std::make_unique<TransformerForecaster>(spec);
    case ModelKind::GRUGCN: return std::make_unique<GrugcnForecaster>(spec);
    case ModelKind::TGCN: return std::make_unique<TgcnForecaster>(spec);
    case ModelKind::EXTERNAL:
      throw Error("external forecasters run through the adapter, not the model factory");
  }
  throw Error("make_forecaster: bad kind");
}

// Writes <dir>/params.ckpt plus a <dir>/forecaster.json sidecar with enough
// to reconstruct the model (including the mixing matrix for graph kinds).
inline void save_forecaster(Forecaster& fc, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto& s = fc.spec();
  nlohmann::json j;
  j["kind"] = kind_name(s.kind);
  j["hidden"] = s.hidden;
  j["layers"] = s.layers;
  j["C"] = s.C;
  j["H"] = s.H;
  j["N"] = s.N;
  j["seed"] = s.seed;
  if (s.graph) j["a_hat"] = s.graph->a_hat.data;
  if (s.kind == ModelKind::VAR) {
    auto& var = dynamic_cast<VarForecaster&>(fc);
    j["var_lag"] = var.coefficients().L;
  }
  std::ofstream out(dir + "/forecaster.json");
  if (!out) throw Error("save_forecaster: cannot open " + dir + "/forecaster.json");
  out << j.dump(2) << '\n';
  ad::save_checkpoint(dir + "/params.ckpt", fc.params());
}

inline std::unique_ptr<Forecaster> load_forecaster(const std::string& dir) {
  std::ifstream in(dir + "/forecaster.json");
  if (!in) throw Error("load_forecaster: cannot open " + dir + "/forecaster.json");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error("load_forecaster: bad JSON in " + dir);

  ForecasterSpec spec;
  spec.kind = kind_from_string(j.at("kind").get<std::string>());
  spec.hidden = j.at("hidden").get<int>();
  spec.layers = j.at("layers").get<int>();
  spec.C = j.at("C").get<int>();
  spec.H = j.at("H").get<int>();
  spec.N = j.at("N").get<std::size_t>();
  spec.seed = j.at("seed").get<uint64_t>();
  if (j.contains("a_hat")) {
    NormalizedAdjacency na;
    na.n = spec.N;
    na.a_hat = Mat(spec.N, spec.N);
    na.a_hat.data = j.at("a_hat").get<std::vector<double>>();
    if (na.a_hat.data.size() != spec.N * spec.N)
      throw Error("load_forecaster: mixing matrix size mismatch");
    spec.graph = std::move(na);
  }
  auto fc = make_forecaster(spec);
  if (spec.kind == ModelKind::VAR)
    dynamic_cast<VarForecaster&>(*fc).prepare_slots(j.at("var_lag").get<int>());
  ad::load_checkpoint(dir + "/params.ckpt", fc->params());
  fc->on_params_loaded();
  return fc;
}

}  // namespace stgrid
