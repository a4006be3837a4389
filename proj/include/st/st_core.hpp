#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "st/activations.hpp"
#include "st/autodiff.hpp"
#include "st/layers.hpp"

namespace st {

// d x M matrix whose columns are the semantic basis vectors.
template <class T>
struct SemanticBases {
  Tensor<T> B;

  static SemanticBases init(std::size_t d, std::size_t m, std::mt19937_64& rng) {
    if (m < 2) throw ConfigError("need at least two semantic bases");
    return SemanticBases{glorot_uniform<T>(d, m, rng)};
  }

  void rescale_columns(double norm) {
    for (std::size_t m = 0; m < B.cols(); ++m) {
      double n = 0.0;
      for (std::size_t j = 0; j < B.rows(); ++j) n += double(B.at(j, m)) * B.at(j, m);
      const double f = n > 0.0 ? norm / std::sqrt(n) : 0.0;
      for (std::size_t j = 0; j < B.rows(); ++j) B.at(j, m) = static_cast<T>(B.at(j, m) * f);
    }
  }

  std::size_t dense_dim() const { return B.rows(); }
  std::size_t count() const { return B.cols(); }
};

// Dense -> sparse: y = S(f(x) W_f B).
template <class T>
struct SftParams {
  MlpStack<T> f;
  Tensor<T> w_f;  // f_out x d
  SparseActivationParams act;
  DerivMode deriv = DerivMode::exact;

  static SftParams init(std::size_t in, std::size_t hidden, std::size_t d, bool bias,
                        std::mt19937_64& rng) {
    SftParams p;
    p.f = MlpStack<T>::init({in, hidden}, Activation::tanh, Activation::tanh, bias, rng);
    p.w_f = glorot_uniform<T>(hidden, d, rng);
    return p;
  }
};

enum class GainMode { scalar, vector };

// Sparse -> dense: x = F(tanh(w_b * B y^T)).
template <class T>
struct SbtParams {
  MlpStack<T> F;
  Tensor<T> w_b;  // 1 value (scalar gain) or 1 x d (per-dimension gain)

  static SbtParams init(std::size_t d, std::size_t hidden, std::size_t out, GainMode gain,
                        bool bias, std::mt19937_64& rng) {
    SbtParams p;
    p.F = MlpStack<T>::init({d, hidden, hidden, out}, Activation::tanh, Activation::identity,
                            bias, rng);
    p.w_b = gain == GainMode::scalar ? Tensor<T>(Shape{1}, T(1)) : Tensor<T>(Shape{1, d}, T(1));
    p.w_b.set_requires_grad(true);
    return p;
  }
};

template <class T>
ad::Var<T> sft(ad::Var<T> x, SftParams<T>& params, SemanticBases<T>& bases) {
  auto& g = x.g();
  auto p = mlp_forward(x, params.f);
  if (p.cols() != params.w_f.rows())
    throw DimensionError("sft: feature width " + std::to_string(p.cols()) + " vs w_f rows " +
                         std::to_string(params.w_f.rows()));
  if (params.w_f.cols() != bases.dense_dim())
    throw DimensionError("sft: w_f maps to " + std::to_string(params.w_f.cols()) +
                         " dims but bases live in " + std::to_string(bases.dense_dim()));
  auto z = ad::matmul(ad::matmul(p, g.param(params.w_f)), g.param(bases.B));
  return ad::sparse_activation(z, params.act, params.deriv);
}

template <class T>
ad::Var<T> sbt(ad::Var<T> y, SbtParams<T>& params, SemanticBases<T>& bases) {
  auto& g = y.g();
  if (y.cols() != bases.count())
    throw DimensionError("sbt: sparse width " + std::to_string(y.cols()) + " vs " +
                         std::to_string(bases.count()) + " bases");
  auto proj = ad::matmul(y, ad::transpose(g.param(bases.B)));  // n x d
  auto gain = g.param(params.w_b);
  auto scaled = params.w_b.size() == 1 ? ad::mul(proj, gain) : ad::mul_row(proj, gain);
  return mlp_forward(ad::tanh(scaled), params.F);
}

// Negative part of the previous word plus positive part of the current one.
template <class T>
ad::Var<T> preceding_elimination(ad::Var<T> y_prev, ad::Var<T> y_cur) {
  if (y_prev.shape() != y_cur.shape())
    throw DimensionError("preceding_elimination on shapes " + shape_str(y_prev.shape()) +
                         " and " + shape_str(y_cur.shape()));
  return ad::negate(ad::relu(ad::negate(y_prev))) + ad::relu(y_cur);
}

enum class ClampMode { per_prefix, final_only };

struct ScssOptions {
  LeakyParams leaky;
  ClampMode clamp = ClampMode::per_prefix;
};

// Composes the word codes of each sentence (rows offsets[s]..offsets[s+1] of
// ys) into prefix codes s_1..s_T. y_0 is the zero vector.
template <class T>
ad::Var<T> scss(ad::Var<T> ys, const std::vector<std::size_t>& offsets, const ScssOptions& opt) {
  if (offsets.size() < 2 || offsets.back() == 0) throw DataError("scss on an empty sequence");
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
    if (offsets[s + 1] <= offsets[s]) throw DataError("scss on an empty sequence");
  std::vector<long> prev(ys.rows());
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
    for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i)
      prev[i] = i == offsets[s] ? -1L : static_cast<long>(i - 1);
  auto eliminated = preceding_elimination(ad::gather_rows(ys, prev), ys);
  auto sums = ad::segment_cumsum(ad::leaky(eliminated, opt.leaky), offsets);
  if (opt.clamp == ClampMode::per_prefix) return ad::clamp(sums, T(-1), T(1));
  // Clamp only the final row of each sentence.
  std::vector<long> others(sums.rows()), lasts(sums.rows(), -1L);
  for (std::size_t i = 0; i < sums.rows(); ++i) others[i] = static_cast<long>(i);
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    lasts[offsets[s + 1] - 1] = static_cast<long>(offsets[s + 1] - 1);
    others[offsets[s + 1] - 1] = -1L;
  }
  return ad::gather_rows(sums, others) + ad::clamp(ad::gather_rows(sums, lasts), T(-1), T(1));
}

template <class T>
ad::Var<T> scss(ad::Var<T> ys, const ScssOptions& opt) {
  return scss(ys, std::vector<std::size_t>{0, ys.rows()}, opt);
}

// Flattened batch of token sequences with PAD stripped.
struct TokenBlock {
  std::vector<long> ids;
  std::vector<std::size_t> offsets{0};

  std::size_t sentences() const { return offsets.size() - 1; }
  std::size_t tokens() const { return ids.size(); }

  std::vector<long> last_rows() const {
    std::vector<long> out;
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
      out.push_back(static_cast<long>(offsets[s + 1] - 1));
    return out;
  }

  void add(const std::vector<long>& sentence, long pad_id = 0) {
    std::size_t kept = 0;
    for (long id : sentence)
      if (id != pad_id) {
        ids.push_back(id);
        ++kept;
      }
    if (kept == 0) throw DataError("sentence is empty after removing padding");
    offsets.push_back(ids.size());
  }
};

template <class T>
struct Encoded {
  ad::Var<T> embedded;  // tokens x emb
  ad::Var<T> words;     // tokens x M, per-word y_i
  ad::Var<T> prefixes;  // tokens x M, s_t
  ad::Var<T> sentence;  // sentences x M, s_T
};

template <class T>
Encoded<T> encode_block(ad::Graph<T>& g, const TokenBlock& block, EmbeddingTable<T>& emb,
                        SftParams<T>& sft_params, SemanticBases<T>& bases,
                        const ScssOptions& opt) {
  if (block.sentences() == 0) throw DataError("no sentences to encode");
  Encoded<T> e;
  e.embedded = embed(g, emb, block.ids);
  e.words = sft(e.embedded, sft_params, bases);
  e.prefixes = scss(e.words, block.offsets, opt);
  e.sentence = ad::gather_rows(e.prefixes, block.last_rows());
  return e;
}

template <class T>
Encoded<T> encode_sentence(ad::Graph<T>& g, const std::vector<long>& tokens,
                           EmbeddingTable<T>& emb, SftParams<T>& sft_params,
                           SemanticBases<T>& bases, const ScssOptions& opt) {
  TokenBlock block;
  block.add(tokens);
  return encode_block(g, block, emb, sft_params, bases, opt);
}

}  // namespace st
