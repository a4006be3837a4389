#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "st/autodiff.hpp"

namespace st {

enum class Activation { identity, tanh, relu, sigmoid };

inline Activation parse_activation(const std::string& s) {
  if (s == "identity" || s == "linear") return Activation::identity;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + s + "'");
}

template <class T>
ad::Var<T> apply_activation(ad::Var<T> x, Activation a) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::tanh: return ad::tanh(x);
    case Activation::relu: return ad::relu(x);
    case Activation::sigmoid: return ad::sigmoid(x);
  }
  return x;
}

// Uniform(-a, a), a = sqrt(6 / (fan_in + fan_out)).
template <class T>
Tensor<T> glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  Tensor<T> t(Shape{fan_in, fan_out});
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-a, a);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  t.set_requires_grad(true);
  return t;
}

template <class T>
Tensor<T> zeros_param(Shape shape) {
  Tensor<T> t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

// Row 0 is PAD and stays zero; Adam skips it.
template <class T>
struct EmbeddingTable {
  Tensor<T> matrix;
  bool trainable = true;

  // scale 0 selects Glorot, otherwise Uniform(-scale, scale).
  static EmbeddingTable init(std::size_t vocab_size, std::size_t dim, std::mt19937_64& rng,
                             double scale = 0.0) {
    if (vocab_size < 2) throw ConfigError("vocabulary must hold at least PAD and UNK");
    EmbeddingTable e;
    e.matrix = glorot_uniform<T>(vocab_size, dim, rng);
    if (scale > 0.0) {
      std::uniform_real_distribution<double> u(-scale, scale);
      for (auto& v : e.matrix.values()) v = static_cast<T>(u(rng));
    }
    for (std::size_t j = 0; j < dim; ++j) e.matrix.at(0, j) = T(0);
    return e;
  }

  std::size_t vocab_size() const { return matrix.rows(); }
  std::size_t dim() const { return matrix.cols(); }
};

template <class T>
ad::Var<T> embed(ad::Graph<T>& g, EmbeddingTable<T>& table, const std::vector<long>& ids) {
  for (long id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= table.vocab_size())
      throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                      std::to_string(table.vocab_size()));
  table.matrix.set_requires_grad(table.trainable);
  return ad::lookup_rows(g, table.matrix, ids);
}

template <class T>
struct Linear {
  Tensor<T> weight;  // in x out
  Tensor<T> bias;    // 1 x out
  bool use_bias = true;
  Activation act = Activation::tanh;

  static Linear init(std::size_t in, std::size_t out, Activation act, bool use_bias,
                     std::mt19937_64& rng) {
    Linear l;
    l.weight = glorot_uniform<T>(in, out, rng);
    l.bias = zeros_param<T>(Shape{1, out});
    l.use_bias = use_bias;
    l.act = act;
    return l;
  }

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

// Stack of p_i = act(p_{i-1} W_i + b_i). An empty stack is the identity.
template <class T>
struct MlpStack {
  std::vector<Linear<T>> layers;

  // dims = {in, h1, ..., out}; hidden layers use `hidden`, the last `last`.
  static MlpStack init(const std::vector<std::size_t>& dims, Activation hidden, Activation last,
                       bool use_bias, std::mt19937_64& rng) {
    MlpStack s;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      const bool is_last = i + 2 == dims.size();
      s.layers.push_back(
          Linear<T>::init(dims[i], dims[i + 1], is_last ? last : hidden, use_bias, rng));
    }
    return s;
  }

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }
};

template <class T>
ad::Var<T> mlp_forward(ad::Var<T> x, MlpStack<T>& stack) {
  auto& g = x.g();
  for (std::size_t i = 0; i < stack.layers.size(); ++i) {
    auto& l = stack.layers[i];
    if (x.cols() != l.in_dim())
      throw DimensionError("mlp layer " + std::to_string(i) + " expects " +
                           std::to_string(l.in_dim()) + " inputs, got " +
                           std::to_string(x.cols()));
    auto h = ad::matmul(x, g.param(l.weight));
    if (l.use_bias) h = ad::add_row(h, g.param(l.bias));
    x = apply_activation(h, l.act);
  }
  return x;
}

template <class T>
ad::Var<T> classify(ad::Var<T> features, MlpStack<T>& head) {
  return mlp_forward(features, head);
}

// Single-layer LSTM. Gates are packed column-wise as [input, forget, output,
// candidate] in one (in + h) x 4h block pair.
template <class T>
struct LstmCell {
  Tensor<T> w_input;   // in x 4h
  Tensor<T> w_hidden;  // h x 4h
  Tensor<T> bias;      // 1 x 4h
  std::size_t hidden = 0;

  static LstmCell init(std::size_t in, std::size_t h, std::mt19937_64& rng) {
    LstmCell c;
    c.hidden = h;
    c.w_input = Tensor<T>(Shape{in, 4 * h});
    c.w_hidden = Tensor<T>(Shape{h, 4 * h});
    // Glorot per gate block.
    for (std::size_t gate = 0; gate < 4; ++gate) {
      auto wi = glorot_uniform<T>(in, h, rng);
      auto wh = glorot_uniform<T>(h, h, rng);
      for (std::size_t r = 0; r < in; ++r)
        for (std::size_t j = 0; j < h; ++j) c.w_input.at(r, gate * h + j) = wi.at(r, j);
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t j = 0; j < h; ++j) c.w_hidden.at(r, gate * h + j) = wh.at(r, j);
    }
    c.bias = zeros_param<T>(Shape{1, 4 * h});
    for (std::size_t j = 0; j < h; ++j) c.bias[h + j] = T(1);  // forget gate
    c.w_input.set_requires_grad(true);
    c.w_hidden.set_requires_grad(true);
    return c;
  }

  std::size_t in_dim() const { return w_input.rows(); }
};

// Runs a batch of sequences stored back to back in `embedded` (rows
// offsets[s]..offsets[s+1]) from a zero state and returns every prefix hidden
// state in the same row order.
template <class T>
ad::Var<T> lstm_prefix_states(ad::Var<T> embedded, const std::vector<std::size_t>& offsets,
                              LstmCell<T>& cell) {
  if (offsets.size() < 2) throw DataError("lstm needs at least one sequence");
  const std::size_t batch = offsets.size() - 1;
  std::size_t max_len = 0;
  for (std::size_t s = 0; s < batch; ++s) {
    if (offsets[s + 1] <= offsets[s]) throw DataError("lstm received an empty sequence");
    max_len = std::max(max_len, offsets[s + 1] - offsets[s]);
  }
  if (embedded.cols() != cell.in_dim())
    throw DimensionError("lstm expects inputs of width " + std::to_string(cell.in_dim()));
  auto& g = embedded.g();
  const std::size_t h = cell.hidden;
  auto wi = g.param(cell.w_input);
  auto wh = g.param(cell.w_hidden);
  auto b = g.param(cell.bias);
  auto hs = g.constant(Shape{batch, h}, std::vector<T>(batch * h, T(0)));
  auto cs = hs;
  std::vector<ad::Var<T>> steps;
  for (std::size_t t = 0; t < max_len; ++t) {
    std::vector<long> idx(batch);
    for (std::size_t s = 0; s < batch; ++s)
      idx[s] = offsets[s] + t < offsets[s + 1] ? static_cast<long>(offsets[s] + t) : -1L;
    auto xt = ad::gather_rows(embedded, idx);
    auto gates = ad::add_row(ad::matmul(xt, wi) + ad::matmul(hs, wh), b);
    auto ig = ad::sigmoid(ad::slice_cols(gates, 0, h));
    auto fg = ad::sigmoid(ad::slice_cols(gates, h, h));
    auto og = ad::sigmoid(ad::slice_cols(gates, 2 * h, h));
    auto cand = ad::tanh(ad::slice_cols(gates, 3 * h, h));
    cs = fg * cs + ig * cand;
    hs = og * ad::tanh(cs);
    steps.push_back(hs);
  }
  auto all = ad::concat_rows(steps);  // row t * batch + s
  std::vector<long> order;
  order.reserve(offsets.back() - offsets.front());
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t t = 0; t < offsets[s + 1] - offsets[s]; ++t)
      order.push_back(static_cast<long>(t * batch + s));
  return ad::gather_rows(all, order);
}

}  // namespace st
