#pragma once

// Dense 2-D tensor engine with reverse-mode automatic differentiation, the
// Adam optimizer, seeded initialization, and a flat-binary checkpoint format.
// Design notes:
//   - 64-bit floats throughout; sizes are desk-scale.
//   - Dynamic define-by-run tape; recurrent models loop over variable-length
//     contexts, so the graph is rebuilt each step.
//   - graph_mix accumulates each output element by summing its products in
//     sorted value order, which makes node-permuted inputs produce
//     bit-identical (permuted) outputs.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "stgrid/core.hpp"
#include "stgrid/rng.hpp"

namespace stgrid::ad {

class Tape;

struct Node {
  Mat value;
  Mat grad;  // empty until the backward pass first touches this node
  bool want_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> pull;  // adds this node's grad into its parents
  Tape* tape = nullptr;
  std::size_t idx = 0;

  bool has_grad() const { return !grad.data.empty(); }
  void ensure_grad() {
    if (!has_grad()) grad = Mat(value.rows, value.cols);
  }
};

using Var = std::shared_ptr<Node>;

// Records nodes in creation order; backward walks that order in reverse, so
// every node is visited after all of its consumers.
class Tape {
 public:
  Var make(Mat v, bool want_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->want_grad = want_grad;
    n->tape = this;
    n->idx = nodes_.size();
    nodes_.push_back(n);
    return n;
  }

  Var constant(const Mat& v) { return make(v, false); }
  Var leaf(const Mat& v) { return make(v, true); }

  void backward(const Var& loss) {
    if (!loss || loss->tape != this)
      throw Error("backward: loss is not a node of this tape (detached graph)");
    if (loss->value.rows != 1 || loss->value.cols != 1)
      throw Error("backward: loss must be scalar, got " +
                  shape_str(loss->value.rows, loss->value.cols));
    if (used_) throw Error("backward: tape already consumed; build a fresh graph");
    used_ = true;
    loss->ensure_grad();
    loss->grad.data[0] = 1.0;
    for (std::size_t i = loss->idx + 1; i-- > 0;) {
      Node& n = *nodes_[i];
      if (n.has_grad() && n.pull) n.pull(n);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Var> nodes_;
  bool used_ = false;
};

namespace detail {

inline Tape* tape_of(const Var& a) {
  if (!a || !a->tape) throw Error("tensor op: null or tape-less operand");
  return a->tape;
}

inline void check_same_tape(const Var& a, const Var& b, const char* op) {
  if (tape_of(a) != tape_of(b)) throw Error(std::string(op) + ": operands on different tapes");
}

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

inline ECMap emap(const Mat& m) {
  return ECMap(m.data.data(), static_cast<Eigen::Index>(m.rows),
               static_cast<Eigen::Index>(m.cols));
}
inline EMap emap(Mat& m) {
  return EMap(m.data.data(), static_cast<Eigen::Index>(m.rows),
              static_cast<Eigen::Index>(m.cols));
}

// Broadcast classes for elementwise binary ops.
enum class Bcast { Same, Row, Col, Scalar };

inline Bcast bcast_kind(const Mat& a, const Mat& b, const char* op) {
  if (a.same_shape(b)) return Bcast::Same;
  if (b.rows == 1 && b.cols == a.cols) return Bcast::Row;
  if (b.cols == 1 && b.rows == a.rows) return Bcast::Col;
  if (b.rows == 1 && b.cols == 1) return Bcast::Scalar;
  throw Error(std::string(op) + ": incompatible shapes " + shape_str(a.rows, a.cols) + " vs " +
              shape_str(b.rows, b.cols));
}

inline std::size_t bcast_index(Bcast k, std::size_t r, std::size_t c, std::size_t cols) {
  switch (k) {
    case Bcast::Same: return r * cols + c;
    case Bcast::Row: return c;
    case Bcast::Col: return r;
    default: return 0;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Binary elementwise ops (b may broadcast: same shape, 1xC row, Rx1 col, 1x1)
// ---------------------------------------------------------------------------

namespace detail {

template <class Fwd, class DA, class DB>
Var binary_op(const char* name, const Var& a, const Var& b, Fwd fwd, DA da, DB db) {
  check_same_tape(a, b, name);
  const Bcast k = bcast_kind(a->value, b->value, name);
  const std::size_t R = a->value.rows, C = a->value.cols;
  Mat out(R, C);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const double x = a->value.data[r * C + c];
      const double y = b->value.data[bcast_index(k, r, c, C)];
      out.data[r * C + c] = fwd(x, y);
    }
  Var o = tape_of(a)->make(std::move(out));
  o->parents = {a, b};
  o->pull = [k, da, db](Node& n) {
    auto& A = *n.parents[0];
    auto& B = *n.parents[1];
    const std::size_t R = A.value.rows, C = A.value.cols;
    A.ensure_grad();
    B.ensure_grad();
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t ia = r * C + c;
        const std::size_t ib = bcast_index(k, r, c, C);
        const double g = n.grad.data[ia];
        const double x = A.value.data[ia];
        const double y = B.value.data[ib];
        A.grad.data[ia] += g * da(x, y);
        B.grad.data[ib] += g * db(x, y);
      }
  };
  return o;
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  return detail::binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Var divide(const Var& a, const Var& b) {
  return detail::binary_op(
      "divide", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

// ---------------------------------------------------------------------------
// Unary elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

template <class Fwd, class Dx>
Var unary_op(const Var& a, Fwd fwd, Dx dx) {
  Mat out(a->value.rows, a->value.cols);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = fwd(a->value.data[i]);
  Var o = tape_of(a)->make(std::move(out));
  o->parents = {a};
  o->pull = [dx](Node& n) {
    auto& A = *n.parents[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < n.grad.data.size(); ++i)
      A.grad.data[i] += n.grad.data[i] * dx(A.value.data[i], n.value.data[i]);
  };
  return o;
}

}  // namespace detail

inline Var sigmoid(const Var& a) {
  return detail::unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& a) {
  return detail::unary_op(a, [](double x) { return std::tanh(x); },
                          [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(const Var& a) {
  return detail::unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                          [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var abs(const Var& a) {
  return detail::unary_op(a, [](double x) { return std::fabs(x); },
                          [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var sqrt(const Var& a) {
  return detail::unary_op(a, [](double x) { return std::sqrt(x); },
                          [](double, double y) { return 0.5 / y; });
}

inline Var neg(const Var& a) {
  return detail::unary_op(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

inline Var scale(const Var& a, double s) {
  return detail::unary_op(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Var add_scalar(const Var& a, double s) {
  return detail::unary_op(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// Matrix product (Eigen-backed)
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  detail::check_same_tape(a, b, "matmul");
  if (a->value.cols != b->value.rows)
    throw Error("matmul: inner dims differ, " + shape_str(a->value.rows, a->value.cols) + " x " +
                shape_str(b->value.rows, b->value.cols));
  Mat out(a->value.rows, b->value.cols);
  detail::emap(out).noalias() = detail::emap(a->value) * detail::emap(b->value);
  Var o = detail::tape_of(a)->make(std::move(out));
  o->parents = {a, b};
  o->pull = [](Node& n) {
    auto& A = *n.parents[0];
    auto& B = *n.parents[1];
    A.ensure_grad();
    B.ensure_grad();
    detail::emap(A.grad).noalias() += detail::emap(n.grad) * detail::emap(B.value).transpose();
    detail::emap(B.grad).noalias() += detail::emap(A.value).transpose() * detail::emap(n.grad);
  };
  return o;
}

// ---------------------------------------------------------------------------
// Graph mixing: block-diagonal application of a fixed N x N matrix
// ---------------------------------------------------------------------------

namespace detail {

// y[b*N+i, f] = sum_k M(i,k) * x[b*N+k, f], with each element's products
// summed in ascending value order. Identical multisets of products therefore
// sum identically, which is what makes node permutation exact rather than
// merely approximate. Zero entries of M contribute nothing and are skipped,
// so M = I reproduces x bit-for-bit.
inline void sorted_mix(const Mat& mix, const Mat& x, std::size_t n_nodes, bool transpose_mix,
                       bool accumulate, Mat& out) {
  const std::size_t F = x.cols;
  const std::size_t blocks = x.rows / n_nodes;
  std::vector<double> prods;
  prods.reserve(n_nodes);
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t i = 0; i < n_nodes; ++i)
      for (std::size_t f = 0; f < F; ++f) {
        prods.clear();
        for (std::size_t k = 0; k < n_nodes; ++k) {
          const double m = transpose_mix ? mix.at(k, i) : mix.at(i, k);
          if (m != 0.0) prods.push_back(m * x.at(b * n_nodes + k, f));
        }
        std::sort(prods.begin(), prods.end());
        double s = 0.0;
        for (double p : prods) s += p;
        double& dst = out.at(b * n_nodes + i, f);
        if (accumulate)
          dst += s;
        else
          dst = s;
      }
}

}  // namespace detail

// Applies a fixed (non-learned) N x N mixing matrix to every consecutive
// N-row block of x. mix is captured by value; it is small.
inline Var graph_mix(const Mat& mix, const Var& x, std::size_t n_nodes) {
  if (mix.rows != n_nodes || mix.cols != n_nodes)
    throw Error("graph_mix: mixing matrix is " + shape_str(mix.rows, mix.cols) + ", expected " +
                shape_str(n_nodes, n_nodes));
  if (n_nodes == 0 || x->value.rows % n_nodes != 0)
    throw Error("graph_mix: rows " + std::to_string(x->value.rows) +
                " not a multiple of node count " + std::to_string(n_nodes));
  Mat out(x->value.rows, x->value.cols);
  detail::sorted_mix(mix, x->value, n_nodes, false, false, out);
  Var o = detail::tape_of(x)->make(std::move(out));
  o->parents = {x};
  o->pull = [mix, n_nodes](Node& n) {
    auto& X = *n.parents[0];
    X.ensure_grad();
    detail::sorted_mix(mix, n.grad, n_nodes, true, true, X.grad);
  };
  return o;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Var transpose2(const Var& a) {
  Mat out(a->value.cols, a->value.rows);
  for (std::size_t r = 0; r < a->value.rows; ++r)
    for (std::size_t c = 0; c < a->value.cols; ++c) out.at(c, r) = a->value.at(r, c);
  Var o = detail::tape_of(a)->make(std::move(out));
  o->parents = {a};
  o->pull = [](Node& n) {
    auto& A = *n.parents[0];
    A.ensure_grad();
    for (std::size_t r = 0; r < A.value.rows; ++r)
      for (std::size_t c = 0; c < A.value.cols; ++c) A.grad.at(r, c) += n.grad.at(c, r);
  };
  return o;
}

// axis 0 stacks row-blocks; axis 1 abuts column-blocks.
inline Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw Error("concat: no inputs");
  if (axis != 0 && axis != 1) throw Error("concat: axis must be 0 or 1");
  for (std::size_t i = 1; i < parts.size(); ++i) {
    detail::check_same_tape(parts[0], parts[i], "concat");
    if (axis == 0 && parts[i]->value.cols != parts[0]->value.cols)
      throw Error("concat: column mismatch on axis 0");
    if (axis == 1 && parts[i]->value.rows != parts[0]->value.rows)
      throw Error("concat: row mismatch on axis 1");
  }
  std::size_t R = 0, C = 0;
  if (axis == 0) {
    C = parts[0]->value.cols;
    for (const auto& p : parts) R += p->value.rows;
  } else {
    R = parts[0]->value.rows;
    for (const auto& p : parts) C += p->value.cols;
  }
  Mat out(R, C);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < p->value.rows; ++r)
      for (std::size_t c = 0; c < p->value.cols; ++c) {
        if (axis == 0)
          out.at(off + r, c) = p->value.at(r, c);
        else
          out.at(r, off + c) = p->value.at(r, c);
      }
    off += (axis == 0) ? p->value.rows : p->value.cols;
  }
  Var o = detail::tape_of(parts[0])->make(std::move(out));
  o->parents = parts;
  o->pull = [axis](Node& n) {
    std::size_t off = 0;
    for (auto& pp : n.parents) {
      auto& P = *pp;
      P.ensure_grad();
      for (std::size_t r = 0; r < P.value.rows; ++r)
        for (std::size_t c = 0; c < P.value.cols; ++c) {
          if (axis == 0)
            P.grad.at(r, c) += n.grad.at(off + r, c);
          else
            P.grad.at(r, c) += n.grad.at(r, off + c);
        }
      off += (axis == 0) ? P.value.rows : P.value.cols;
    }
  };
  return o;
}

// Row-major reinterpretation; element order is unchanged.
inline Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a->value.size())
    throw Error("reshape: cannot view " + shape_str(a->value.rows, a->value.cols) + " as " +
                shape_str(rows, cols));
  Mat out(rows, cols);
  out.data = a->value.data;
  Var o = detail::tape_of(a)->make(std::move(out));
  o->parents = {a};
  o->pull = [](Node& n) {
    auto& A = *n.parents[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < n.grad.data.size(); ++i) A.grad.data[i] += n.grad.data[i];
  };
  return o;
}

inline Var slice(const Var& a, int axis, std::size_t offset, std::size_t len) {
  if (axis != 0 && axis != 1) throw Error("slice: axis must be 0 or 1");
  const std::size_t extent = (axis == 0) ? a->value.rows : a->value.cols;
  if (offset + len > extent)
    throw Error("slice: range [" + std::to_string(offset) + ", " + std::to_string(offset + len) +
                ") exceeds axis extent " + std::to_string(extent));
  const std::size_t R = (axis == 0) ? len : a->value.rows;
  const std::size_t C = (axis == 0) ? a->value.cols : len;
  Mat out(R, C);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c)
      out.at(r, c) = (axis == 0) ? a->value.at(offset + r, c) : a->value.at(r, offset + c);
  Var o = detail::tape_of(a)->make(std::move(out));
  o->parents = {a};
  o->pull = [axis, offset](Node& n) {
    auto& A = *n.parents[0];
    A.ensure_grad();
    for (std::size_t r = 0; r < n.value.rows; ++r)
      for (std::size_t c = 0; c < n.value.cols; ++c) {
        if (axis == 0)
          A.grad.at(offset + r, c) += n.grad.at(r, c);
        else
          A.grad.at(r, offset + c) += n.grad.at(r, c);
      }
  };
  return o;
}

// ---------------------------------------------------------------------------
// Reductions and softmax
// ---------------------------------------------------------------------------

inline Var sum_all(const Var& a) {
  Mat out(1, 1);
  double s = 0.0;
  for (double v : a->value.data) s += v;
  out.data[0] = s;
  Var o = detail::tape_of(a)->make(std::move(out));
  o->parents = {a};
  o->pull = [](Node& n) {
    auto& A = *n.parents[0];
    A.ensure_grad();
    const double g = n.grad.data[0];
    for (double& gv : A.grad.data) gv += g;
  };
  return o;
}

inline Var mean_all(const Var& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a->value.size()));
}

// axis 0: mean over rows -> 1xC; axis 1: mean over cols -> Rx1.
inline Var mean_axis(const Var& a, int axis) {
  if (axis != 0 && axis != 1) throw Error("mean_axis: axis must be 0 or 1");
  const std::size_t R = a->value.rows, C = a->value.cols;
  Mat out(axis == 0 ? 1 : R, axis == 0 ? C : 1);
  if (axis == 0) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t r = 0; r < R; ++r) s += a->value.at(r, c);
      out.at(0, c) = s / static_cast<double>(R);
    }
  } else {
    for (std::size_t r = 0; r < R; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) s += a->value.at(r, c);
      out.at(r, 0) = s / static_cast<double>(C);
    }
  }
  Var o = detail::tape_of(a)->make(std::move(out));
  o->parents = {a};
  o->pull = [axis](Node& n) {
    auto& A = *n.parents[0];
    A.ensure_grad();
    const std::size_t R = A.value.rows, C = A.value.cols;
    const double denom = static_cast<double>(axis == 0 ? R : C);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c)
        A.grad.at(r, c) += n.grad.data[axis == 0 ? c : r] / denom;
  };
  return o;
}

// Numerically stable row softmax (axis 1) or column softmax (axis 0).
inline Var softmax(const Var& a, int axis = 1) {
  if (axis != 0 && axis != 1) throw Error("softmax: axis must be 0 or 1");
  const std::size_t R = a->value.rows, C = a->value.cols;
  Mat out(R, C);
  const std::size_t lanes = (axis == 1) ? R : C;
  const std::size_t width = (axis == 1) ? C : R;
  auto at = [&](const Mat& m, std::size_t lane, std::size_t k) -> double {
    return (axis == 1) ? m.at(lane, k) : m.at(k, lane);
  };
  for (std::size_t l = 0; l < lanes; ++l) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < width; ++k) mx = std::max(mx, at(a->value, l, k));
    double z = 0.0;
    for (std::size_t k = 0; k < width; ++k) z += std::exp(at(a->value, l, k) - mx);
    for (std::size_t k = 0; k < width; ++k) {
      double y = std::exp(at(a->value, l, k) - mx) / z;
      if (axis == 1)
        out.at(l, k) = y;
      else
        out.at(k, l) = y;
    }
  }
  Var o = detail::tape_of(a)->make(std::move(out));
  o->parents = {a};
  o->pull = [axis](Node& n) {
    auto& A = *n.parents[0];
    A.ensure_grad();
    const std::size_t R = A.value.rows, C = A.value.cols;
    const std::size_t lanes = (axis == 1) ? R : C;
    const std::size_t width = (axis == 1) ? C : R;
    auto idx = [&](std::size_t lane, std::size_t k) {
      return (axis == 1) ? lane * C + k : k * C + lane;
    };
    for (std::size_t l = 0; l < lanes; ++l) {
      double dot = 0.0;
      for (std::size_t k = 0; k < width; ++k)
        dot += n.grad.data[idx(l, k)] * n.value.data[idx(l, k)];
      for (std::size_t k = 0; k < width; ++k) {
        const double y = n.value.data[idx(l, k)];
        A.grad.data[idx(l, k)] += y * (n.grad.data[idx(l, k)] - dot);
      }
    }
  };
  return o;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::vector<double> m;  // first moment
  std::vector<double> v;  // second moment
};

// Standard bias-corrected Adam; epsilon applied after the square root.
inline void adam_step(Mat& param, const Mat& grad, AdamState& st) {
  if (!param.same_shape(grad))
    throw Error("adam_step: param " + shape_str(param.rows, param.cols) + " vs grad " +
                shape_str(grad.rows, grad.cols));
  if (st.m.empty()) {
    st.m.assign(param.size(), 0.0);
    st.v.assign(param.size(), 0.0);
  }
  if (st.m.size() != param.size()) throw Error("adam_step: moment buffer size mismatch");
  ++st.t;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.data[i];
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
    const double mhat = st.m[i] / c1;
    const double vhat = st.v[i] / c2;
    param.data[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
  }
}

// ---------------------------------------------------------------------------
// Seeded initialization
// ---------------------------------------------------------------------------

// "glorot": uniform in [-b, b], b = sqrt(6 / (fan_in + fan_out)); "zeros".
inline Mat seeded_init(std::size_t rows, std::size_t cols, const std::string& scheme,
                       uint64_t seed) {
  Mat m(rows, cols);
  if (scheme == "zeros") return m;
  if (scheme == "glorot") {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Rng rng(seed);
    for (double& v : m.data) v = rng.uniform(-bound, bound);
    return m;
  }
  throw Error("seeded_init: unknown scheme '" + scheme + "'");
}

// ---------------------------------------------------------------------------
// Parameters and checkpoints
// ---------------------------------------------------------------------------

struct Param {
  std::string name;
  Mat value;
  AdamState opt;
};

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// Single file: one JSON manifest line, then the raw f64 payload.
inline void save_checkpoint(const std::string& path, const std::vector<Param>& params) {
  nlohmann::json manifest;
  manifest["format"] = "stgrid-checkpoint-v1";
  auto tensors = nlohmann::json::array();
  for (const auto& p : params)
    tensors.push_back({{"name", p.name}, {"rows", p.value.rows}, {"cols", p.value.cols}});
  manifest["tensors"] = std::move(tensors);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_checkpoint: cannot open " + path);
  out << manifest.dump() << '\n';
  for (const auto& p : params)
    out.write(reinterpret_cast<const char*>(p.value.data.data()),
              static_cast<std::streamsize>(p.value.data.size() * sizeof(double)));
  if (!out) throw Error("save_checkpoint: short write to " + path);
}

// Restores values into params, matching by name and shape.
inline void load_checkpoint(const std::string& path, std::vector<Param>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error("load_checkpoint: missing manifest in " + path);
  nlohmann::json manifest = nlohmann::json::parse(line, nullptr, false);
  if (manifest.is_discarded() || manifest.value("format", "") != "stgrid-checkpoint-v1")
    throw Error("load_checkpoint: bad manifest in " + path);
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != params.size())
    throw Error("load_checkpoint: manifest has " + std::to_string(tensors.size()) +
                " tensors, model has " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    if (t.at("name").get<std::string>() != params[i].name ||
        t.at("rows").get<std::size_t>() != params[i].value.rows ||
        t.at("cols").get<std::size_t>() != params[i].value.cols)
      throw Error("load_checkpoint: tensor " + std::to_string(i) + " mismatch (expected '" +
                  params[i].name + "' " +
                  shape_str(params[i].value.rows, params[i].value.cols) + ")");
    in.read(reinterpret_cast<char*>(params[i].value.data.data()),
            static_cast<std::streamsize>(params[i].value.data.size() * sizeof(double)));
    if (!in) throw Error("load_checkpoint: truncated payload in " + path);
  }
}

}  // namespace stgrid::ad
