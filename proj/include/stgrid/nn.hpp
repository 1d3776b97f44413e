#pragma once

// Neural building blocks on top of the autodiff tape: parameter bank, linear
// and GRU layers, graph convolution, transformer encoder layer, L1 loss, and
// the shared training loop (Adam, early stopping on validation MAE °C,
// best-weights restore).

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stgrid/core.hpp"
#include "stgrid/rng.hpp"
#include "stgrid/tensor.hpp"
#include "stgrid/timeseries.hpp"

namespace stgrid::nn {

using ad::Param;
using ad::Tape;
using ad::Var;

// ---------------------------------------------------------------------------
// Parameter bank
// ---------------------------------------------------------------------------

// Owns a model's parameters; layers hold indices into it. Initialization
// seeds derive from (base seed, registration order), so construction order
// fully determines the weights.
class ParamBank {
 public:
  explicit ParamBank(uint64_t seed = 0) : seed_(seed) {}

  std::size_t add(const std::string& name, Mat init) {
    params_.push_back(Param{name, std::move(init), {}});
    return params_.size() - 1;
  }

  std::size_t add_glorot(const std::string& name, std::size_t rows, std::size_t cols) {
    return add(name, ad::seeded_init(rows, cols, "glorot",
                                     mix_seed(seed_, params_.size() + 1)));
  }

  std::size_t add_zeros(const std::string& name, std::size_t rows, std::size_t cols) {
    return add(name, ad::seeded_init(rows, cols, "zeros", 0));
  }

  std::size_t add_ones(const std::string& name, std::size_t rows, std::size_t cols) {
    Mat m(rows, cols);
    std::fill(m.data.begin(), m.data.end(), 1.0);
    return add(name, std::move(m));
  }

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  // One tracked leaf per parameter for a training step.
  std::vector<Var> bind(Tape& tape) {
    std::vector<Var> vs;
    vs.reserve(params_.size());
    for (auto& p : params_) vs.push_back(tape.leaf(p.value));
    return vs;
  }

  // Untracked constants for inference.
  std::vector<Var> bind_const(Tape& tape) {
    std::vector<Var> vs;
    vs.reserve(params_.size());
    for (auto& p : params_) vs.push_back(tape.constant(p.value));
    return vs;
  }

  void apply_grads(const std::vector<Var>& leaves, double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!leaves[i]->has_grad()) continue;
      params_[i].opt.lr = lr;
      ad::adam_step(params_[i].value, leaves[i]->grad, params_[i].opt);
    }
  }

  std::vector<Mat> snapshot() const {
    std::vector<Mat> s;
    s.reserve(params_.size());
    for (const auto& p : params_) s.push_back(p.value);
    return s;
  }

  void restore(const std::vector<Mat>& snap) {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value = snap[i];
  }

 private:
  uint64_t seed_;
  std::vector<Param> params_;
};

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

struct Linear {
  std::size_t w = 0, b = 0;
  Linear() = default;
  Linear(ParamBank& bank, const std::string& name, std::size_t in, std::size_t out) {
    w = bank.add_glorot(name + ".w", in, out);
    b = bank.add_zeros(name + ".b", 1, out);
  }
  Var apply(const std::vector<Var>& lv, const Var& x) const {
    return ad::add(ad::matmul(x, lv[w]), lv[b]);
  }
};

// Gated recurrent unit with packed (reset, update, candidate) gates:
//   r = sig(x Wxr + bxr + h Whr + bhr)
//   z = sig(x Wxz + bxz + h Whz + bhz)
//   n = tanh(x Wxn + bxn + r .* (h Whn + bhn))
//   h' = (1 - z) .* n + z .* h
struct GruLayer {
  std::size_t wx = 0, wh = 0, bx = 0, bh = 0;
  std::size_t hidden = 0;
  GruLayer() = default;
  GruLayer(ParamBank& bank, const std::string& name, std::size_t in, std::size_t hid)
      : hidden(hid) {
    wx = bank.add_glorot(name + ".wx", in, 3 * hid);
    wh = bank.add_glorot(name + ".wh", hid, 3 * hid);
    bx = bank.add_zeros(name + ".bx", 1, 3 * hid);
    bh = bank.add_zeros(name + ".bh", 1, 3 * hid);
  }

  Var zero_state(Tape& tape, std::size_t rows) const {
    return tape.constant(Mat(rows, hidden));
  }

  Var step(const std::vector<Var>& lv, const Var& x, const Var& h) const {
    Var gx = ad::add(ad::matmul(x, lv[wx]), lv[bx]);
    Var gh = ad::add(ad::matmul(h, lv[wh]), lv[bh]);
    const std::size_t H = hidden;
    Var r = ad::sigmoid(ad::add(ad::slice(gx, 1, 0, H), ad::slice(gh, 1, 0, H)));
    Var z = ad::sigmoid(ad::add(ad::slice(gx, 1, H, H), ad::slice(gh, 1, H, H)));
    Var n = ad::tanh(ad::add(ad::slice(gx, 1, 2 * H, H), ad::mul(r, ad::slice(gh, 1, 2 * H, H))));
    return ad::add(ad::sub(n, ad::mul(z, n)), ad::mul(z, h));
  }
};

// Graph convolution sigma(A_hat X W + b), computed as project(mix(X)). The
// mixing matrix is fixed (not learned); activation is chosen by the caller.
struct GcnLayer {
  Linear proj;
  GcnLayer() = default;
  GcnLayer(ParamBank& bank, const std::string& name, std::size_t in, std::size_t out)
      : proj(bank, name, in, out) {}
  Var apply(const std::vector<Var>& lv, const Mat& a_hat, const Var& x,
            std::size_t n_nodes) const {
    return proj.apply(lv, ad::graph_mix(a_hat, x, n_nodes));
  }
};

struct LayerNorm {
  std::size_t gamma = 0, beta = 0;
  double eps = 1e-5;
  LayerNorm() = default;
  LayerNorm(ParamBank& bank, const std::string& name, std::size_t dim) {
    gamma = bank.add_ones(name + ".gamma", 1, dim);
    beta = bank.add_zeros(name + ".beta", 1, dim);
  }
  Var apply(const std::vector<Var>& lv, const Var& x) const {
    Var m = ad::mean_axis(x, 1);
    Var xc = ad::sub(x, m);
    Var v = ad::mean_axis(ad::mul(xc, xc), 1);
    Var d = ad::sqrt(ad::add_scalar(v, eps));
    return ad::add(ad::mul(ad::divide(xc, d), lv[gamma]), lv[beta]);
  }
};

// Post-norm transformer encoder layer: multi-head self-attention and a
// position-wise feed-forward block, each with residual + layer norm.
struct EncoderLayer {
  Linear q, k, v, o, ff1, ff2;
  LayerNorm ln1, ln2;
  std::size_t heads = 0, dim = 0;

  EncoderLayer() = default;
  EncoderLayer(ParamBank& bank, const std::string& name, std::size_t model_dim,
               std::size_t n_heads, std::size_t ff_dim)
      : q(bank, name + ".q", model_dim, model_dim),
        k(bank, name + ".k", model_dim, model_dim),
        v(bank, name + ".v", model_dim, model_dim),
        o(bank, name + ".o", model_dim, model_dim),
        ff1(bank, name + ".ff1", model_dim, ff_dim),
        ff2(bank, name + ".ff2", ff_dim, model_dim),
        ln1(bank, name + ".ln1", model_dim),
        ln2(bank, name + ".ln2", model_dim),
        heads(n_heads),
        dim(model_dim) {
    if (model_dim % n_heads != 0) throw Error("EncoderLayer: dim not divisible by heads");
  }

  Var apply(const std::vector<Var>& lv, const Var& x) const {  // x: T x dim
    const std::size_t dh = dim / heads;
    Var Q = q.apply(lv, x), K = k.apply(lv, x), V = v.apply(lv, x);
    std::vector<Var> outs;
    outs.reserve(heads);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t h = 0; h < heads; ++h) {
      Var Qh = ad::slice(Q, 1, h * dh, dh);
      Var Kh = ad::slice(K, 1, h * dh, dh);
      Var Vh = ad::slice(V, 1, h * dh, dh);
      Var scores = ad::scale(ad::matmul(Qh, ad::transpose2(Kh)), inv_sqrt);
      outs.push_back(ad::matmul(ad::softmax(scores, 1), Vh));
    }
    Var attn = o.apply(lv, ad::concat(outs, 1));
    Var x1 = ln1.apply(lv, ad::add(x, attn));
    Var ff = ff2.apply(lv, ad::relu(ff1.apply(lv, x1)));
    return ln2.apply(lv, ad::add(x1, ff));
  }
};

// Sinusoidal positional encoding table: row t, even col 2i = sin, odd = cos.
inline Mat positional_encoding(std::size_t steps, std::size_t dim) {
  Mat pe(steps, dim);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(t) * freq;
      pe.at(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

inline Var l1_loss(Tape& tape, const Var& pred, const Mat& target) {
  if (pred->value.rows != target.rows || pred->value.cols != target.cols)
    throw Error("l1_loss: prediction " + shape_str(pred->value.rows, pred->value.cols) +
                " vs target " + shape_str(target.rows, target.cols));
  return ad::mean_all(ad::abs(ad::sub(pred, tape.constant(target))));
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  int max_epochs = 100;
  int patience = 10;
  int batch_size = 64;
  double lr = 1e-3;
  uint64_t seed = 0;
};

struct FitResult {
  int epochs_run = 0;
  int best_epoch = -1;
  double best_val_mae = std::numeric_limits<double>::infinity();
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();
};

// Batched forward pass: given contexts (each N x C, normalized) produce a
// (B*N) x H prediction tensor whose row b*N+i is window b, node i.
using ForwardFn =
    std::function<Var(Tape&, const std::vector<Var>&, const std::vector<const Mat*>&)>;

namespace detail {

inline Mat stack_targets(const WindowSet& ws, const std::vector<std::size_t>& batch) {
  const std::size_t N = ws.nodes(), H = static_cast<std::size_t>(ws.horizon_len);
  Mat t(batch.size() * N, H);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Mat tb = ws.target(batch[b]);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t h = 0; h < H; ++h) t.at(b * N + i, h) = tb.at(i, h);
  }
  return t;
}

}  // namespace detail

// Mean absolute error in °C over every window/node/step of a window set,
// using chunked constant-parameter forward passes.
inline double eval_mae_celsius(ParamBank& bank, const ForwardFn& forward, const WindowSet& ws,
                               const NodeStats& stats, int chunk) {
  const std::size_t N = ws.nodes(), H = static_cast<std::size_t>(ws.horizon_len);
  double abs_sum = 0.0;
  std::size_t count = 0;
  std::vector<Mat> ctx_store;
  for (std::size_t w0 = 0; w0 < ws.count(); w0 += static_cast<std::size_t>(chunk)) {
    const std::size_t w1 = std::min(ws.count(), w0 + static_cast<std::size_t>(chunk));
    ctx_store.clear();
    for (std::size_t w = w0; w < w1; ++w) ctx_store.push_back(ws.context(w));
    std::vector<const Mat*> ctxs;
    for (const auto& c : ctx_store) ctxs.push_back(&c);
    Tape tape;
    auto leaves = bank.bind_const(tape);
    Var pred = forward(tape, leaves, ctxs);
    for (std::size_t b = 0; b < ctxs.size(); ++b) {
      Mat truth = ws.target(w0 + b);
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t h = 0; h < H; ++h) {
          const double p = pred->value.at(b * N + i, h) * stats.stdev[i] + stats.mean[i];
          const double t = truth.at(i, h) * stats.stdev[i] + stats.mean[i];
          abs_sum += std::fabs(p - t);
          ++count;
        }
    }
  }
  if (count == 0) throw Error("eval_mae_celsius: empty window set");
  return abs_sum / static_cast<double>(count);
}

// Adam training with per-epoch validation, early stopping (patience epochs
// without improvement) and restoration of the best-validation weights.
// Throws on non-finite loss with step diagnostics.
inline FitResult train_model(ParamBank& bank, const ForwardFn& forward, const WindowSet& train,
                             const WindowSet& val, const NodeStats& stats,
                             const TrainConfig& cfg) {
  if (train.count() == 0) throw Error("train_model: empty training window set");
  FitResult res;
  std::vector<Mat> best = bank.snapshot();
  int since_best = 0;

  std::vector<std::size_t> order(train.count());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<Mat> ctx_store;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    // deterministic Fisher-Yates shuffle per (seed, epoch)
    Rng rng(mix_seed(cfg.seed, 1000 + static_cast<uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.next_below(i)]);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 =
          std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b0),
                                     order.begin() + static_cast<std::ptrdiff_t>(b1));
      ctx_store.clear();
      for (std::size_t w : batch) ctx_store.push_back(train.context(w));
      std::vector<const Mat*> ctxs;
      for (const auto& c : ctx_store) ctxs.push_back(&c);

      Tape tape;
      auto leaves = bank.bind(tape);
      Var pred = forward(tape, leaves, ctxs);
      Var loss = l1_loss(tape, pred, detail::stack_targets(train, batch));
      const double lv = loss->value.data[0];
      if (!std::isfinite(lv))
        throw Error("train_model: non-finite loss " + std::to_string(lv) + " at epoch " +
                    std::to_string(epoch) + ", batch " + std::to_string(batches));
      tape.backward(loss);
      bank.apply_grads(leaves, cfg.lr);
      loss_sum += lv;
      ++batches;
    }
    res.final_train_loss = loss_sum / static_cast<double>(batches);
    res.epochs_run = epoch + 1;

    const double val_mae =
        val.count() > 0 ? eval_mae_celsius(bank, forward, val, stats, cfg.batch_size)
                        : res.final_train_loss;
    if (val_mae < res.best_val_mae) {
      res.best_val_mae = val_mae;
      res.best_epoch = epoch;
      best = bank.snapshot();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  bank.restore(best);
  return res;
}

}  // namespace stgrid::nn
