#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msinfluence/common.hpp"
#include "msinfluence/params.hpp"

namespace msi::ad {

// ---------------------------------------------------------------------------
// Dual numbers. Running the reverse-mode tape with T = Dual propagates a
// forward tangent through both the primal and the adjoint pass, so the
// tangent part of a leaf adjoint is an exact Hessian-vector product
// (forward-over-reverse). No finite differences anywhere.
// ---------------------------------------------------------------------------

struct Dual {
  double v = 0.0;  // value
  double d = 0.0;  // tangent

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit by design, constants lift cleanly
  Dual(double value, double tangent) : v(value), d(tangent) {}
};

inline Dual operator+(Dual a, Dual b) { return Dual(a.v + b.v, a.d + b.d); }
inline Dual operator-(Dual a, Dual b) { return Dual(a.v - b.v, a.d - b.d); }
inline Dual operator-(Dual a) { return Dual(-a.v, -a.d); }
inline Dual operator*(Dual a, Dual b) { return Dual(a.v * b.v, a.d * b.v + a.v * b.d); }
inline Dual operator/(Dual a, Dual b) {
  double inv = 1.0 / b.v;
  double q = a.v * inv;
  return Dual(q, (a.d - q * b.d) * inv);
}
inline Dual& operator+=(Dual& a, Dual b) { a = a + b; return a; }
inline Dual& operator-=(Dual& a, Dual b) { a = a - b; return a; }
inline Dual& operator*=(Dual& a, Dual b) { a = a * b; return a; }

inline Dual exp(Dual a) {
  double e = std::exp(a.v);
  return Dual(e, e * a.d);
}
inline Dual log(Dual a) { return Dual(std::log(a.v), a.d / a.v); }
inline Dual tanh(Dual a) {
  double t = std::tanh(a.v);
  return Dual(t, (1.0 - t * t) * a.d);
}

// Exact-match overloads so unqualified calls in templated code resolve to
// the scalar versions when T = double.
inline double exp(double x) { return std::exp(x); }
inline double log(double x) { return std::log(x); }
inline double tanh(double x) { return std::tanh(x); }

inline double value_of(double x) { return x; }
inline double value_of(Dual x) { return x.v; }
inline double tangent_of(double) { return 0.0; }
inline double tangent_of(Dual x) { return x.d; }

inline bool is_finite(double x) { return std::isfinite(x); }
inline bool is_finite(Dual x) { return std::isfinite(x.v) && std::isfinite(x.d); }

template <typename T>
inline T make_scalar(double value, double tangent);
template <>
inline double make_scalar<double>(double value, double) { return value; }
template <>
inline Dual make_scalar<Dual>(double value, double tangent) { return Dual(value, tangent); }

// ---------------------------------------------------------------------------
// Batch view handed to loss builders. Rows of `x` are examples; `y` holds the
// class index per row; `w` is an optional per-example weight (null = 1);
// `scale` multiplies the weighted sum of per-example losses (1/m for the
// paper's averaged objectives).
// ---------------------------------------------------------------------------

struct Batch {
  const double* x = nullptr;
  const int* y = nullptr;
  const double* w = nullptr;
  int n = 0;
  int dim = 0;
  double scale = 1.0;

  double weight(int i) const { return w ? w[i] : 1.0; }
  double weight_sum() const {
    if (!w) return static_cast<double>(n);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += w[i];
    return s;
  }
};

// ---------------------------------------------------------------------------
// Tape: eager-forward reverse-mode graph on dense row-major buffers.
// ---------------------------------------------------------------------------

enum class OpKind : std::uint8_t {
  Leaf,          // parameter matrix (participates in gradients)
  Constant,      // batch data or other non-differentiated matrix
  Linear,        // y(n x out) = x(n x in) * w(out x in)^T + bias broadcast
  Tanh,          // elementwise
  CrossEntropy,  // per-row softmax cross-entropy against integer targets
  WeightedSum,   // scalar = scale * sum_i w_i * vec_i
  SumSq,         // scalar = coeff * sum x^2
  SumSqDiff,     // scalar = coeff * sum (x - ref)^2, ref constant
  Dot,           // scalar = coeff * sum a_i * b_i (same-shape nodes)
  AddScaled,     // scalar = ca * a + cb * b
};

template <typename T>
class Tape {
 public:
  struct Node {
    OpKind kind;
    int rows = 0;
    int cols = 0;
    int in0 = -1;
    int in1 = -1;
    int in2 = -1;
    std::size_t val = 0;   // offset into values_
    std::size_t aux = 0;   // offset into values_ for stashed forward results
    double c0 = 0.0;
    double c1 = 0.0;
    const double* cptr = nullptr;
    const int* iptr = nullptr;
  };

  int leaf(const double* src, int rows, int cols, const double* tangent = nullptr) {
    int id = new_node(OpKind::Leaf, rows, cols, -1, -1);
    Node& n = nodes_[id];
    T* out = values_.data() + n.val;
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    for (std::size_t i = 0; i < count; ++i) {
      out[i] = make_scalar<T>(src[i], tangent ? tangent[i] : 0.0);
    }
    return id;
  }

  int constant(const double* src, int rows, int cols) {
    int id = new_node(OpKind::Constant, rows, cols, -1, -1);
    Node& n = nodes_[id];
    T* out = values_.data() + n.val;
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    for (std::size_t i = 0; i < count; ++i) out[i] = make_scalar<T>(src[i], 0.0);
    return id;
  }

  // y = x * w^T + b broadcast along rows. x: (n x in), w: (out x in), b: (out).
  int linear(int x, int w, int b) {
    const Node& nx = nodes_[x];
    const Node& nw = nodes_[w];
    int n = nx.rows, in = nx.cols, out = nw.rows;
    int id = new_node(OpKind::Linear, n, out, x, w);
    nodes_[id].in2 = b;
    const T* xv = values_.data() + nodes_[x].val;
    const T* wv = values_.data() + nodes_[w].val;
    const T* bv = values_.data() + nodes_[b].val;
    T* yv = values_.data() + nodes_[id].val;
    for (int i = 0; i < n; ++i) {
      const T* xi = xv + static_cast<std::size_t>(i) * in;
      T* yi = yv + static_cast<std::size_t>(i) * out;
      for (int k = 0; k < out; ++k) {
        const T* wk = wv + static_cast<std::size_t>(k) * in;
        T acc = bv[k];
        for (int j = 0; j < in; ++j) acc += xi[j] * wk[j];
        yi[k] = acc;
      }
    }
    return id;
  }

  int tanh_op(int x) {
    const int rows = nodes_[x].rows, cols = nodes_[x].cols;
    int id = new_node(OpKind::Tanh, rows, cols, x, -1);
    const T* xv = values_.data() + nodes_[x].val;
    T* yv = values_.data() + nodes_[id].val;
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    for (std::size_t i = 0; i < count; ++i) yv[i] = tanh(xv[i]);
    return id;
  }

  // Per-row loss_i = logsumexp(logits_i) - logits_i[y_i]. Softmax
  // probabilities are stashed for the backward pass. The max shift is a
  // constant, which keeps both value and derivatives exact.
  int cross_entropy(int logits, const int* targets) {
    const Node& nl = nodes_[logits];
    int n = nl.rows, k = nl.cols;
    int id = new_node(OpKind::CrossEntropy, n, 1, logits, -1,
                      static_cast<std::size_t>(n) * k);
    Node& node = nodes_[id];
    node.iptr = targets;
    const T* lv = values_.data() + nodes_[logits].val;
    T* loss = values_.data() + node.val;
    T* probs = values_.data() + node.aux;
    for (int i = 0; i < n; ++i) {
      const T* li = lv + static_cast<std::size_t>(i) * k;
      T* pi = probs + static_cast<std::size_t>(i) * k;
      double m = value_of(li[0]);
      for (int j = 1; j < k; ++j) m = std::max(m, value_of(li[j]));
      T denom = make_scalar<T>(0.0, 0.0);
      for (int j = 0; j < k; ++j) {
        pi[j] = exp(li[j] - make_scalar<T>(m, 0.0));
        denom += pi[j];
      }
      T inv = make_scalar<T>(1.0, 0.0) / denom;
      for (int j = 0; j < k; ++j) pi[j] *= inv;
      loss[i] = make_scalar<T>(m, 0.0) + log(denom) - li[targets[i]];
    }
    return id;
  }

  int weighted_sum(int vec, const double* weights, double scale) {
    const int rows = nodes_[vec].rows;
    int id = new_node(OpKind::WeightedSum, 1, 1, vec, -1);
    Node& node = nodes_[id];
    node.cptr = weights;
    node.c0 = scale;
    const T* v = values_.data() + nodes_[vec].val;
    T acc = make_scalar<T>(0.0, 0.0);
    for (int i = 0; i < rows; ++i) {
      acc += v[i] * make_scalar<T>(weights ? weights[i] : 1.0, 0.0);
    }
    values_[node.val] = acc * make_scalar<T>(scale, 0.0);
    return id;
  }

  int sum_sq(int x, double coeff) {
    const std::size_t count = static_cast<std::size_t>(nodes_[x].rows) * nodes_[x].cols;
    int id = new_node(OpKind::SumSq, 1, 1, x, -1);
    nodes_[id].c0 = coeff;
    const T* xv = values_.data() + nodes_[x].val;
    T acc = make_scalar<T>(0.0, 0.0);
    for (std::size_t i = 0; i < count; ++i) acc += xv[i] * xv[i];
    values_[nodes_[id].val] = acc * make_scalar<T>(coeff, 0.0);
    return id;
  }

  int sum_sq_diff(int x, const double* ref, double coeff) {
    const std::size_t count = static_cast<std::size_t>(nodes_[x].rows) * nodes_[x].cols;
    int id = new_node(OpKind::SumSqDiff, 1, 1, x, -1);
    Node& node = nodes_[id];
    node.c0 = coeff;
    node.cptr = ref;
    const T* xv = values_.data() + nodes_[x].val;
    T acc = make_scalar<T>(0.0, 0.0);
    for (std::size_t i = 0; i < count; ++i) {
      T diff = xv[i] - make_scalar<T>(ref[i], 0.0);
      acc += diff * diff;
    }
    values_[node.val] = acc * make_scalar<T>(coeff, 0.0);
    return id;
  }

  int dot(int a, int b, double coeff = 1.0) {
    const std::size_t count = static_cast<std::size_t>(nodes_[a].rows) * nodes_[a].cols;
    int id = new_node(OpKind::Dot, 1, 1, a, b);
    nodes_[id].c0 = coeff;
    const T* av = values_.data() + nodes_[a].val;
    const T* bv = values_.data() + nodes_[b].val;
    T acc = make_scalar<T>(0.0, 0.0);
    for (std::size_t i = 0; i < count; ++i) acc += av[i] * bv[i];
    values_[nodes_[id].val] = acc * make_scalar<T>(coeff, 0.0);
    return id;
  }

  int add_scaled(int a, int b, double ca = 1.0, double cb = 1.0) {
    int id = new_node(OpKind::AddScaled, 1, 1, a, b);
    Node& node = nodes_[id];
    node.c0 = ca;
    node.c1 = cb;
    values_[node.val] = values_[nodes_[a].val] * make_scalar<T>(ca, 0.0) +
                        values_[nodes_[b].val] * make_scalar<T>(cb, 0.0);
    return id;
  }

  T value(int node) const { return values_[nodes_[node].val]; }

  std::span<const T> values(int node) const {
    const Node& n = nodes_[node];
    return std::span<const T>(values_.data() + n.val,
                              static_cast<std::size_t>(n.rows) * n.cols);
  }

  std::span<const T> adjoint(int node) const {
    const Node& n = nodes_[node];
    return std::span<const T>(grads_.data() + n.val,
                              static_cast<std::size_t>(n.rows) * n.cols);
  }

  // Reverse pass seeded with d(output)/d(output) = 1.
  void backward(int output) {
    grads_.assign(values_.size(), make_scalar<T>(0.0, 0.0));
    grads_[nodes_[output].val] = make_scalar<T>(1.0, 0.0);
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      const Node& n = nodes_[id];
      switch (n.kind) {
        case OpKind::Leaf:
        case OpKind::Constant:
          break;
        case OpKind::Linear:
          backward_linear(n);
          break;
        case OpKind::Tanh:
          backward_tanh(n);
          break;
        case OpKind::CrossEntropy:
          backward_cross_entropy(n);
          break;
        case OpKind::WeightedSum: {
          const Node& src = nodes_[n.in0];
          T seed = grads_[n.val] * make_scalar<T>(n.c0, 0.0);
          T* g = grads_.data() + src.val;
          for (int i = 0; i < src.rows; ++i) {
            g[i] += seed * make_scalar<T>(n.cptr ? n.cptr[i] : 1.0, 0.0);
          }
          break;
        }
        case OpKind::SumSq: {
          const Node& src = nodes_[n.in0];
          T seed = grads_[n.val] * make_scalar<T>(2.0 * n.c0, 0.0);
          const T* xv = values_.data() + src.val;
          T* g = grads_.data() + src.val;
          const std::size_t count = static_cast<std::size_t>(src.rows) * src.cols;
          for (std::size_t i = 0; i < count; ++i) g[i] += seed * xv[i];
          break;
        }
        case OpKind::SumSqDiff: {
          const Node& src = nodes_[n.in0];
          T seed = grads_[n.val] * make_scalar<T>(2.0 * n.c0, 0.0);
          const T* xv = values_.data() + src.val;
          T* g = grads_.data() + src.val;
          const std::size_t count = static_cast<std::size_t>(src.rows) * src.cols;
          for (std::size_t i = 0; i < count; ++i) {
            g[i] += seed * (xv[i] - make_scalar<T>(n.cptr[i], 0.0));
          }
          break;
        }
        case OpKind::Dot: {
          const Node& na = nodes_[n.in0];
          T seed = grads_[n.val] * make_scalar<T>(n.c0, 0.0);
          const T* av = values_.data() + na.val;
          const T* bv = values_.data() + nodes_[n.in1].val;
          T* ga = grads_.data() + na.val;
          T* gb = grads_.data() + nodes_[n.in1].val;
          const std::size_t count = static_cast<std::size_t>(na.rows) * na.cols;
          for (std::size_t i = 0; i < count; ++i) {
            ga[i] += seed * bv[i];
            gb[i] += seed * av[i];
          }
          break;
        }
        case OpKind::AddScaled:
          grads_[nodes_[n.in0].val] += grads_[n.val] * make_scalar<T>(n.c0, 0.0);
          grads_[nodes_[n.in1].val] += grads_[n.val] * make_scalar<T>(n.c1, 0.0);
          break;
      }
    }
  }

 private:
  int new_node(OpKind kind, int rows, int cols, int in0, int in1, std::size_t aux_count = 0) {
    Node n;
    n.kind = kind;
    n.rows = rows;
    n.cols = cols;
    n.in0 = in0;
    n.in1 = in1;
    n.val = values_.size();
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    values_.resize(values_.size() + count, make_scalar<T>(0.0, 0.0));
    n.aux = values_.size();
    if (aux_count > 0) values_.resize(values_.size() + aux_count, make_scalar<T>(0.0, 0.0));
    nodes_.push_back(n);
    return static_cast<int>(nodes_.size()) - 1;
  }

  void backward_linear(const Node& n) {
    const Node& nx = nodes_[n.in0];
    const Node& nw = nodes_[n.in1];
    const Node& nb = nodes_[n.in2];
    int rows = n.rows, out = n.cols, in = nx.cols;
    const T* gy = grads_.data() + n.val;
    const T* xv = values_.data() + nx.val;
    const T* wv = values_.data() + nw.val;
    T* gx = grads_.data() + nx.val;
    T* gw = grads_.data() + nw.val;
    T* gb = grads_.data() + nb.val;
    for (int i = 0; i < rows; ++i) {
      const T* gyi = gy + static_cast<std::size_t>(i) * out;
      const T* xi = xv + static_cast<std::size_t>(i) * in;
      T* gxi = gx + static_cast<std::size_t>(i) * in;
      for (int k = 0; k < out; ++k) {
        T gyk = gyi[k];
        const T* wk = wv + static_cast<std::size_t>(k) * in;
        T* gwk = gw + static_cast<std::size_t>(k) * in;
        for (int j = 0; j < in; ++j) {
          gxi[j] += gyk * wk[j];
          gwk[j] += gyk * xi[j];
        }
        gb[k] += gyk;
      }
    }
  }

  void backward_tanh(const Node& n) {
    const Node& nx = nodes_[n.in0];
    const T* yv = values_.data() + n.val;
    const T* gy = grads_.data() + n.val;
    T* gx = grads_.data() + nx.val;
    const std::size_t count = static_cast<std::size_t>(n.rows) * n.cols;
    const T one = make_scalar<T>(1.0, 0.0);
    for (std::size_t i = 0; i < count; ++i) {
      gx[i] += gy[i] * (one - yv[i] * yv[i]);
    }
  }

  void backward_cross_entropy(const Node& n) {
    const Node& nl = nodes_[n.in0];
    int rows = n.rows, k = nl.cols;
    const T* probs = values_.data() + n.aux;
    const T* gl = grads_.data() + n.val;
    T* glogits = grads_.data() + nl.val;
    const T one = make_scalar<T>(1.0, 0.0);
    for (int i = 0; i < rows; ++i) {
      T seed = gl[i];
      const T* pi = probs + static_cast<std::size_t>(i) * k;
      T* gi = glogits + static_cast<std::size_t>(i) * k;
      for (int j = 0; j < k; ++j) gi[j] += seed * pi[j];
      gi[n.iptr[i]] -= seed * one;
    }
  }

  std::vector<Node> nodes_;
  std::vector<T> values_;
  std::vector<T> grads_;
};

// ---------------------------------------------------------------------------
// Loss functions declare which parameter segments they read and build their
// graph through a BuildCtx, which records one leaf per parameter block so the
// drivers below can seed tangents and collect per-segment derivatives.
// ---------------------------------------------------------------------------

struct LeafInfo {
  std::string segment;
  std::size_t sub_offset = 0;  // into the segment's flat storage
  std::size_t count = 0;
  int node = -1;
};

template <typename T>
class BuildCtx {
 public:
  BuildCtx(Tape<T>& tape, const ParamVector& params) : tape_(tape), params_(params) {}

  // Optional per-segment tangent seeds (flat, segment-local indexing).
  void set_tangent(std::string_view segment, std::span<const double> tangent) {
    tangent_segments_.emplace_back(std::string(segment), tangent);
  }

  Tape<T>& tape() { return tape_; }

  int param_leaf(std::string_view segment, std::size_t sub_offset, int rows, int cols) {
    auto seg_data = params_.slice(segment);
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    const double* tangent = nullptr;
    for (const auto& [name, t] : tangent_segments_) {
      if (name == segment) {
        tangent = t.data() + sub_offset;
        break;
      }
    }
    int node = tape_.leaf(seg_data.data() + sub_offset, rows, cols, tangent);
    leaves_.push_back(LeafInfo{std::string(segment), sub_offset, count, node});
    return node;
  }

  const std::vector<LeafInfo>& leaves() const { return leaves_; }

 private:
  Tape<T>& tape_;
  const ParamVector& params_;
  std::vector<std::pair<std::string, std::span<const double>>> tangent_segments_;
  std::vector<LeafInfo> leaves_;
};

class LossFunction {
 public:
  virtual ~LossFunction() = default;

  // Segment names this loss reads. Gradients with respect to anything else
  // are identically zero.
  virtual std::span<const std::string> reads() const = 0;

  virtual int build_graph(BuildCtx<double>& ctx, const Batch& batch) const = 0;
  virtual int build_graph(BuildCtx<Dual>& ctx, const Batch& batch) const = 0;
};

// ---------------------------------------------------------------------------
// Differentiation drivers.
// ---------------------------------------------------------------------------

double value(const LossFunction& loss, const ParamVector& params, const Batch& batch);

// Concatenated partial derivatives over `wrt` segments, in list order.
// Throws NumericError naming the offending segment if anything non-finite
// shows up.
std::vector<double> grad(const LossFunction& loss, const ParamVector& params,
                         const Batch& batch, std::span<const std::string> wrt);

double value_and_grad(const LossFunction& loss, const ParamVector& params, const Batch& batch,
                      std::span<const std::string> wrt, std::vector<double>& grad_out);

// Exact H.v over the `wrt` block of the batch loss, by nested differentiation.
std::vector<double> hvp(const LossFunction& loss, const ParamVector& params, const Batch& batch,
                        std::span<const std::string> wrt, std::span<const double> v);

// (d^2 loss / d row d col) . v — the directional derivative along v (in the
// col segment) of the gradient with respect to the row segment.
std::vector<double> cross_hvp(const LossFunction& loss, const ParamVector& params,
                              const Batch& batch, const std::string& row_seg,
                              const std::string& col_seg, std::span<const double> v);

}  // namespace msi::ad
