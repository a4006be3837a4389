#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "st/activations.hpp"
#include "st/error.hpp"
#include "st/tensor.hpp"

namespace st::ad {

template <class T>
class Graph;

// Handle to a node on a Graph. Cheap to copy; only valid while the graph lives.
template <class T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  Graph<T>& g() const { return *graph; }
  const Shape& shape() const { return graph->node(id).shape; }
  std::size_t rows() const {
    const auto& s = shape();
    return s.size() == 2 ? s[0] : 1;
  }
  std::size_t cols() const {
    const auto& s = shape();
    return s.size() == 2 ? s[1] : s.back();
  }
  std::size_t size() const { return graph->node(id).value.size(); }
  const std::vector<T>& value() const { return graph->node(id).value; }
  T item() const { return graph->node(id).value.at(0); }
};

// Append-only tape. Node order is a valid topological order, so backward is a
// single sweep in reverse append order.
template <class T>
class Graph {
 public:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool needs_grad = false;
    std::function<void(Graph&, std::size_t)> backward;
    Tensor<T>* bound = nullptr;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // When false, no backward closures are recorded (evaluation mode).
  explicit Graph(bool record) : record_(record) {}
  bool recording() const { return record_; }

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(const Tensor<T>& t) { return push(t.shape(), t.values(), false); }
  Var<T> constant(Shape shape, std::vector<T> values) {
    return push(std::move(shape), std::move(values), false);
  }
  Var<T> scalar(T v) { return push(Shape{1}, std::vector<T>{v}, false); }

  // Leaf bound to a persistent tensor; backward accumulates into t.grad().
  Var<T> param(Tensor<T>& t) {
    const bool ng = record_ && t.requires_grad();
    Var<T> v = push(t.shape(), t.values(), ng);
    if (ng) nodes_[v.id].bound = &t;
    return v;
  }

  // Leaf that tracks a gradient without a bound tensor (read via grad()).
  Var<T> input(const Tensor<T>& t) { return push(t.shape(), t.values(), record_); }

  Var<T> push(Shape shape, std::vector<T> value, bool needs_grad,
              std::function<void(Graph&, std::size_t)> bw = {}) {
    if (numel(shape) != value.size())
      throw DimensionError("node shape " + shape_str(shape) + " vs " +
                           std::to_string(value.size()) + " values");
    for (T x : value)
      if (!std::isfinite(x)) throw NumericError("non-finite value produced by forward op");
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.needs_grad = record_ && needs_grad;
    if (n.needs_grad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  std::vector<T>& grad_buffer(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
    return n.grad;
  }

  const std::vector<T>& grad(Var<T> v) {
    return grad_buffer(v.id);
  }

  void backward(Var<T> loss) {
    if (loss.graph != this) throw UsageError("loss belongs to another graph");
    if (nodes_[loss.id].value.size() != 1)
      throw UsageError("backward needs a scalar loss, got shape " +
                       shape_str(nodes_[loss.id].shape));
    if (!nodes_[loss.id].needs_grad) return;
    grad_buffer(loss.id)[0] += T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) continue;
      for (T g : n.grad)
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in backward pass");
      if (n.backward) n.backward(*this, i);
      if (n.bound) {
        auto dst = n.bound->grad();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
      }
    }
  }

 private:
  std::vector<Node> nodes_;
  bool record_ = true;
};

namespace detail {

template <class T>
bool same_graph(Var<T> a, Var<T> b) {
  return a.graph == b.graph;
}

template <class T>
void require_matrix(Var<T> a, const char* op) {
  if (a.shape().size() != 2)
    throw DimensionError(std::string(op) + " needs a matrix, got shape " + shape_str(a.shape()));
}

// c[m x n] (+)= op(a) * op(b), row-major.
template <class T>
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  const std::size_t lda = ta ? m : k;
  const std::size_t ldb = tb ? k : n;
  if (!tb) {
    for (std::size_t i = 0; i < m; ++i) {
      T* ci = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = ta ? a[p * lda + i] : a[i * lda + p];
        if (av == T(0)) continue;
        const T* bp = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      T* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T* bj = b + j * ldb;
        T acc = T(0);
        if (!ta) {
          const T* ai = a + i * lda;
          for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
        } else {
          for (std::size_t p = 0; p < k; ++p) acc += a[p * lda + i] * bj[p];
        }
        ci[j] += acc;
      }
    }
  }
}

// Unary elementwise op with derivative computed from (input, output).
template <class T, class F, class D>
Var<T> unary(Var<T> x, F f, D df) {
  auto& g = x.g();
  const auto& xv = x.value();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const std::size_t xid = x.id;
  return g.push(x.shape(), std::move(out), g.needs_grad(xid),
                [xid, df](Graph<T>& gr, std::size_t self) {
                  const auto& xv = gr.node(xid).value;
                  const auto& yv = gr.node(self).value;
                  const auto& gy = gr.node(self).grad;
                  auto& gx = gr.grad_buffer(xid);
                  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
                });
}

enum class Bin { add, sub, mul };

template <class T>
Var<T> binary(Var<T> a, Var<T> b, Bin kind) {
  if (!same_graph(a, b)) throw UsageError("operands live on different graphs");
  auto& g = a.g();
  const std::size_t na = a.size(), nb = b.size();
  const bool a_scalar = na == 1 && nb != 1;
  const bool b_scalar = nb == 1 && na != 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape() && !(na == 1 && nb == 1))
    throw DimensionError("elementwise op on shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  Shape shape = a_scalar ? b.shape() : a.shape();
  if (na == 1 && nb == 1 && b.shape().size() > shape.size()) shape = b.shape();
  const std::size_t n = std::max(na, nb);
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T x = av[a_scalar ? 0 : i];
    const T y = bv[b_scalar ? 0 : i];
    out[i] = kind == Bin::add ? x + y : kind == Bin::sub ? x - y : x * y;
  }
  const std::size_t aid = a.id, bid = b.id;
  return g.push(shape, std::move(out), g.needs_grad(aid) || g.needs_grad(bid),
                [aid, bid, a_scalar, b_scalar, kind](Graph<T>& gr, std::size_t self) {
                  const auto& gy = gr.node(self).grad;
                  const std::size_t n = gy.size();
                  if (gr.needs_grad(aid)) {
                    auto& ga = gr.grad_buffer(aid);
                    const auto& bv = gr.node(bid).value;
                    for (std::size_t i = 0; i < n; ++i) {
                      const T d = kind == Bin::mul ? bv[b_scalar ? 0 : i] : T(1);
                      ga[a_scalar ? 0 : i] += gy[i] * d;
                    }
                  }
                  if (gr.needs_grad(bid)) {
                    auto& gb = gr.grad_buffer(bid);
                    const auto& av = gr.node(aid).value;
                    for (std::size_t i = 0; i < n; ++i) {
                      const T d = kind == Bin::mul   ? av[a_scalar ? 0 : i]
                                  : kind == Bin::sub ? T(-1)
                                                     : T(1);
                      gb[b_scalar ? 0 : i] += gy[i] * d;
                    }
                  }
                });
}

}  // namespace detail

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (!detail::same_graph(a, b)) throw UsageError("operands live on different graphs");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  auto& g = a.g();
  std::vector<T> out(m * n);
  detail::gemm(false, false, m, n, k, a.value().data(), b.value().data(), out.data(), false);
  const std::size_t aid = a.id, bid = b.id;
  return g.push(Shape{m, n}, std::move(out), g.needs_grad(aid) || g.needs_grad(bid),
                [aid, bid, m, n, k](Graph<T>& gr, std::size_t self) {
                  const auto& gy = gr.node(self).grad;
                  if (gr.needs_grad(aid)) {
                    auto& ga = gr.grad_buffer(aid);
                    detail::gemm(false, true, m, k, n, gy.data(), gr.node(bid).value.data(),
                                 ga.data(), true);
                  }
                  if (gr.needs_grad(bid)) {
                    auto& gb = gr.grad_buffer(bid);
                    detail::gemm(true, false, k, n, m, gr.node(aid).value.data(), gy.data(),
                                 gb.data(), true);
                  }
                });
}

template <class T>
Var<T> transpose(Var<T> a) {
  detail::require_matrix(a, "transpose");
  auto& g = a.g();
  const std::size_t r = a.rows(), c = a.cols();
  const auto& av = a.value();
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  const std::size_t aid = a.id;
  return g.push(Shape{c, r}, std::move(out), g.needs_grad(aid),
                [aid, r, c](Graph<T>& gr, std::size_t self) {
                  const auto& gy = gr.node(self).grad;
                  auto& ga = gr.grad_buffer(aid);
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += gy[j * r + i];
                });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::binary(a, b, detail::Bin::add);
}
template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::binary(a, b, detail::Bin::sub);
}
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::binary(a, b, detail::Bin::mul);
}

template <class T>
Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <class T>
Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <class T>
Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }

template <class T>
Var<T> negate(Var<T> x) {
  return detail::unary(x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}
template <class T>
Var<T> operator-(Var<T> x) { return negate(x); }

template <class T>
Var<T> scale(Var<T> x, T c) {
  return detail::unary(x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <class T>
Var<T> square(Var<T> x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Var<T> relu(Var<T> x) {
  return detail::unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> tanh(Var<T> x) {
  return detail::unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  return detail::unary(x, [](T v) { return st::sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

// Zero gradient strictly outside [lo, hi].
template <class T>
Var<T> clamp(Var<T> x, T lo, T hi) {
  return detail::unary(
      x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <class T>
Var<T> sparse_activation(Var<T> x, const SparseActivationParams& p,
                         DerivMode mode = DerivMode::exact) {
  p.validate();
  return detail::unary(
      x, [p](T v) { return st::sparse_activation(v, p); },
      [p, mode](T v, T) { return st::sparse_activation_grad(v, p, mode); });
}

template <class T>
Var<T> leaky(Var<T> x, const LeakyParams& p) {
  p.validate();
  return detail::unary(
      x, [p](T v) { return st::leaky(v, p); }, [p](T v, T) { return st::leaky_grad(v, p); });
}

// Cuts the gradient path; the value passes through.
template <class T>
Var<T> detach(Var<T> x) {
  return x.g().constant(x.shape(), x.value());
}

template <class T>
Var<T> sum(Var<T> x) {
  auto& g = x.g();
  T s = T(0);
  for (T v : x.value()) s += v;
  const std::size_t xid = x.id;
  return g.push(Shape{1}, std::vector<T>{s}, g.needs_grad(xid),
                [xid](Graph<T>& gr, std::size_t self) {
                  const T gy = gr.node(self).grad[0];
                  for (auto& v : gr.grad_buffer(xid)) v += gy;
                });
}

template <class T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

// x[r x c] + bias (c values broadcast over rows).
template <class T>
Var<T> add_row(Var<T> x, Var<T> bias) {
  detail::require_matrix(x, "add_row");
  const std::size_t r = x.rows(), c = x.cols();
  if (bias.size() != c)
    throw DimensionError("bias of " + std::to_string(bias.size()) + " values for " +
                         std::to_string(c) + " columns");
  auto& g = x.g();
  std::vector<T> out = x.value();
  const auto& bv = bias.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
  const std::size_t xid = x.id, bid = bias.id;
  return g.push(x.shape(), std::move(out), g.needs_grad(xid) || g.needs_grad(bid),
                [xid, bid, r, c](Graph<T>& gr, std::size_t self) {
                  const auto& gy = gr.node(self).grad;
                  if (gr.needs_grad(xid)) {
                    auto& gx = gr.grad_buffer(xid);
                    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
                  }
                  if (gr.needs_grad(bid)) {
                    auto& gb = gr.grad_buffer(bid);
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j) gb[j] += gy[i * c + j];
                  }
                });
}

// x[r x c] * scale (c values broadcast over rows).
template <class T>
Var<T> mul_row(Var<T> x, Var<T> scale) {
  detail::require_matrix(x, "mul_row");
  const std::size_t r = x.rows(), c = x.cols();
  if (scale.size() != c)
    throw DimensionError("row scale of " + std::to_string(scale.size()) + " values for " +
                         std::to_string(c) + " columns");
  auto& g = x.g();
  std::vector<T> out = x.value();
  const auto& sv = scale.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= sv[j];
  const std::size_t xid = x.id, sid = scale.id;
  return g.push(x.shape(), std::move(out), g.needs_grad(xid) || g.needs_grad(sid),
                [xid, sid, r, c](Graph<T>& gr, std::size_t self) {
                  const auto& gy = gr.node(self).grad;
                  if (gr.needs_grad(xid)) {
                    const auto& sv = gr.node(sid).value;
                    auto& gx = gr.grad_buffer(xid);
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += gy[i * c + j] * sv[j];
                  }
                  if (gr.needs_grad(sid)) {
                    const auto& xv = gr.node(xid).value;
                    auto& gs = gr.grad_buffer(sid);
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < c; ++j) gs[j] += gy[i * c + j] * xv[i * c + j];
                  }
                });
}

// Row gather; index -1 yields a zero row.
template <class T>
Var<T> gather_rows(Var<T> x, std::vector<long> index) {
  detail::require_matrix(x, "gather_rows");
  const std::size_t r = x.rows(), c = x.cols();
  if (index.empty()) throw DimensionError("gather_rows with no indices");
  auto& g = x.g();
  std::vector<T> out(index.size() * c, T(0));
  const auto& xv = x.value();
  for (std::size_t i = 0; i < index.size(); ++i) {
    const long src = index[i];
    if (src < 0) continue;
    if (static_cast<std::size_t>(src) >= r)
      throw DimensionError("gather_rows index " + std::to_string(src) + " out of " +
                           std::to_string(r) + " rows");
    std::copy_n(xv.begin() + src * c, c, out.begin() + i * c);
  }
  const std::size_t xid = x.id;
  const Shape shape{index.size(), c};
  return g.push(shape, std::move(out), g.needs_grad(xid),
                [xid, c, index = std::move(index)](Graph<T>& gr, std::size_t self) {
                  const auto& gy = gr.node(self).grad;
                  auto& gx = gr.grad_buffer(xid);
                  for (std::size_t i = 0; i < index.size(); ++i) {
                    if (index[i] < 0) continue;
                    T* dst = gx.data() + index[i] * c;
                    for (std::size_t j = 0; j < c; ++j) dst[j] += gy[i * c + j];
                  }
                });
}

// Embedding lookup straight out of a parameter table. Gradient is scattered
// into table.grad() without materialising the whole table on the graph.
template <class T>
Var<T> lookup_rows(Graph<T>& g, Tensor<T>& table, const std::vector<long>& ids) {
  if (table.rank() != 2) throw DimensionError("lookup table must be a matrix");
  const std::size_t r = table.rows(), c = table.cols();
  if (ids.empty()) throw DataError("lookup with no ids");
  std::vector<T> out(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= r)
      throw DataError("token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                      std::to_string(r));
    std::copy_n(table.values().begin() + ids[i] * c, c, out.begin() + i * c);
  }
  Tensor<T>* tp = &table;
  return g.push(Shape{ids.size(), c}, std::move(out), table.requires_grad(),
                [tp, c, ids](Graph<T>& gr, std::size_t self) {
                  const auto& gy = gr.node(self).grad;
                  auto dst = tp->grad();
                  for (std::size_t i = 0; i < ids.size(); ++i)
                    for (std::size_t j = 0; j < c; ++j) dst[ids[i] * c + j] += gy[i * c + j];
                });
}

// Cumulative sum of rows within consecutive segments; segment s covers rows
// [offsets[s], offsets[s+1]).
template <class T>
Var<T> segment_cumsum(Var<T> x, std::vector<std::size_t> offsets) {
  detail::require_matrix(x, "segment_cumsum");
  const std::size_t r = x.rows(), c = x.cols();
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != r)
    throw DimensionError("segment offsets do not cover the rows");
  auto& g = x.g();
  std::vector<T> out = x.value();
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
    for (std::size_t i = offsets[s] + 1; i < offsets[s + 1]; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += out[(i - 1) * c + j];
  const std::size_t xid = x.id;
  return g.push(x.shape(), std::move(out), g.needs_grad(xid),
                [xid, c, offsets = std::move(offsets)](Graph<T>& gr, std::size_t self) {
                  const auto& gy = gr.node(self).grad;
                  auto& gx = gr.grad_buffer(xid);
                  // Reverse cumulative sum.
                  std::vector<T> acc(c);
                  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
                    std::fill(acc.begin(), acc.end(), T(0));
                    for (std::size_t i = offsets[s + 1]; i-- > offsets[s];) {
                      for (std::size_t j = 0; j < c; ++j) {
                        acc[j] += gy[i * c + j];
                        gx[i * c + j] += acc[j];
                      }
                    }
                  }
                });
}

template <class T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  detail::require_matrix(a, "concat_cols");
  detail::require_matrix(b, "concat_cols");
  if (a.rows() != b.rows()) throw DimensionError("concat_cols row counts differ");
  const std::size_t r = a.rows(), ca = a.cols(), cb = b.cols(), c = ca + cb;
  auto& g = a.g();
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(a.value().begin() + i * ca, ca, out.begin() + i * c);
    std::copy_n(b.value().begin() + i * cb, cb, out.begin() + i * c + ca);
  }
  const std::size_t aid = a.id, bid = b.id;
  return g.push(Shape{r, c}, std::move(out), g.needs_grad(aid) || g.needs_grad(bid),
                [aid, bid, r, ca, cb, c](Graph<T>& gr, std::size_t self) {
                  const auto& gy = gr.node(self).grad;
                  if (gr.needs_grad(aid)) {
                    auto& ga = gr.grad_buffer(aid);
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += gy[i * c + j];
                  }
                  if (gr.needs_grad(bid)) {
                    auto& gb = gr.grad_buffer(bid);
                    for (std::size_t i = 0; i < r; ++i)
                      for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] += gy[i * c + ca + j];
                  }
                });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows with no parts");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  bool ng = false;
  for (auto p : parts) {
    detail::require_matrix(p, "concat_rows");
    if (p.cols() != c) throw DimensionError("concat_rows column counts differ");
    r += p.rows();
    ng = ng || p.g().needs_grad(p.id);
  }
  auto& g = parts.front().g();
  std::vector<T> out;
  out.reserve(r * c);
  std::vector<std::size_t> ids;
  for (auto p : parts) {
    out.insert(out.end(), p.value().begin(), p.value().end());
    ids.push_back(p.id);
  }
  return g.push(Shape{r, c}, std::move(out), ng, [ids](Graph<T>& gr, std::size_t self) {
    const auto& gy = gr.node(self).grad;
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t n = gr.node(id).value.size();
      if (gr.needs_grad(id)) {
        auto& gp = gr.grad_buffer(id);
        for (std::size_t i = 0; i < n; ++i) gp[i] += gy[off + i];
      }
      off += n;
    }
  });
}

template <class T>
Var<T> slice_cols(Var<T> x, std::size_t start, std::size_t len) {
  detail::require_matrix(x, "slice_cols");
  const std::size_t r = x.rows(), c = x.cols();
  if (len == 0 || start + len > c) throw DimensionError("slice_cols out of range");
  auto& g = x.g();
  std::vector<T> out(r * len);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(x.value().begin() + i * c + start, len, out.begin() + i * len);
  const std::size_t xid = x.id;
  return g.push(Shape{r, len}, std::move(out), g.needs_grad(xid),
                [xid, r, c, start, len](Graph<T>& gr, std::size_t self) {
                  const auto& gy = gr.node(self).grad;
                  auto& gx = gr.grad_buffer(xid);
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < len; ++j) gx[i * c + start + j] += gy[i * len + j];
                });
}

// Per-row safe L2 norm sqrt(sum x^2 + eps); result is r x 1.
template <class T>
Var<T> row_norms(Var<T> x, T eps) {
  detail::require_matrix(x, "row_norms");
  const std::size_t r = x.rows(), c = x.cols();
  auto& g = x.g();
  std::vector<T> out(r);
  const auto& xv = x.value();
  for (std::size_t i = 0; i < r; ++i) {
    T s = eps;
    for (std::size_t j = 0; j < c; ++j) s += xv[i * c + j] * xv[i * c + j];
    out[i] = std::sqrt(s);
  }
  const std::size_t xid = x.id;
  return g.push(Shape{r, 1}, std::move(out), g.needs_grad(xid),
                [xid, r, c](Graph<T>& gr, std::size_t self) {
                  const auto& gy = gr.node(self).grad;
                  const auto& nv = gr.node(self).value;
                  const auto& xv = gr.node(xid).value;
                  auto& gx = gr.grad_buffer(xid);
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                      gx[i * c + j] += gy[i] * xv[i * c + j] / nv[i];
                });
}

// Rows divided by their safe norm.
template <class T>
Var<T> l2_normalize_rows(Var<T> x, T eps) {
  detail::require_matrix(x, "l2_normalize_rows");
  const std::size_t r = x.rows(), c = x.cols();
  auto& g = x.g();
  const auto& xv = x.value();
  std::vector<T> norms(r), out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    T s = eps;
    for (std::size_t j = 0; j < c; ++j) s += xv[i * c + j] * xv[i * c + j];
    norms[i] = std::sqrt(s);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] / norms[i];
  }
  const std::size_t xid = x.id;
  return g.push(x.shape(), std::move(out), g.needs_grad(xid),
                [xid, r, c, norms = std::move(norms)](Graph<T>& gr, std::size_t self) {
                  const auto& gy = gr.node(self).grad;
                  const auto& yv = gr.node(self).value;
                  auto& gx = gr.grad_buffer(xid);
                  for (std::size_t i = 0; i < r; ++i) {
                    T dot = T(0);
                    for (std::size_t j = 0; j < c; ++j) dot += gy[i * c + j] * yv[i * c + j];
                    for (std::size_t j = 0; j < c; ++j)
                      gx[i * c + j] += (gy[i * c + j] - yv[i * c + j] * dot) / norms[i];
                  }
                });
}

// Mean over rows of -log softmax(logits)[label]; evaluated via log-sum-exp.
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, const std::vector<int>& labels) {
  detail::require_matrix(logits, "softmax_cross_entropy");
  const std::size_t r = logits.rows(), c = logits.cols();
  if (labels.size() != r)
    throw DimensionError("got " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(r) + " rows");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= c)
      throw DataError("label " + std::to_string(l) + " outside [0, " + std::to_string(c) + ")");
  auto& g = logits.g();
  const auto& lv = logits.value();
  std::vector<T> probs(r * c);
  T loss = T(0);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = lv.data() + i * c;
    const T mx = *std::max_element(row, row + c);
    T z = T(0);
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const T lse = mx + std::log(z);
    loss += lse - row[labels[i]];
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - lse);
  }
  loss /= static_cast<T>(r);
  const std::size_t lid = logits.id;
  return g.push(Shape{1}, std::vector<T>{loss}, g.needs_grad(lid),
                [lid, r, c, labels, probs = std::move(probs)](Graph<T>& gr, std::size_t self) {
                  const T gy = gr.node(self).grad[0] / static_cast<T>(r);
                  auto& gl = gr.grad_buffer(lid);
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                      gl[i * c + j] +=
                          gy * (probs[i * c + j] - (static_cast<int>(j) == labels[i] ? T(1) : T(0)));
                });
}

// Largest componentwise |analytic - central| / max(|analytic|, |central|, 1e-8)
// of the gradient of a scalar-valued closure at `point`.
inline double grad_check(const std::function<Var<double>(Graph<double>&, Var<double>)>& f,
                         const Tensor<double>& point, double h = 1e-5) {
  std::vector<double> analytic;
  {
    Graph<double> g;
    auto x = g.input(point);
    auto y = f(g, x);
    if (y.size() != 1) throw UsageError("grad_check closure must return a scalar");
    g.backward(y);
    analytic = g.grad(x);
  }
  auto eval = [&](const Tensor<double>& p) {
    Graph<double> g(false);
    auto x = g.input(p);
    return f(g, x).item();
  };
  double worst = 0.0;
  Tensor<double> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double x0 = point[i];
    probe[i] = x0 + h;
    const double fp = eval(probe);
    probe[i] = x0 - h;
    const double fm = eval(probe);
    probe[i] = x0;
    const double central = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(central), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - central) / denom);
  }
  return worst;
}

// Same measure for the gradient accumulated into a bound parameter tensor.
inline double grad_check_param(const std::function<Var<double>(Graph<double>&)>& f,
                               Tensor<double>& param, double h = 1e-5) {
  const bool was = param.requires_grad();
  param.set_requires_grad(true);
  param.ensure_grad();
  param.zero_grad();
  {
    Graph<double> g;
    auto y = f(g);
    if (y.size() != 1) throw UsageError("grad_check closure must return a scalar");
    g.backward(y);
  }
  const std::vector<double> analytic(param.grad().begin(), param.grad().end());
  param.zero_grad();
  auto eval = [&] {
    Graph<double> g(false);
    return f(g).item();
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double x0 = param[i];
    param[i] = x0 + h;
    const double fp = eval();
    param[i] = x0 - h;
    const double fm = eval();
    param[i] = x0;
    const double central = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(central), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - central) / denom);
  }
  param.set_requires_grad(was);
  return worst;
}

}  // namespace st::ad
