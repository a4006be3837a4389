#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "st/autodiff.hpp"
#include "st/st_core.hpp"

namespace st {

enum class MarginMode { flat, ordinal };

inline MarginMode parse_margin_mode(const std::string& s) {
  if (s == "flat") return MarginMode::flat;
  if (s == "ordinal") return MarginMode::ordinal;
  throw ConfigError("unknown W mode '" + s + "'");
}

// Class-pair weights for the margin loss. Diagonal -1; off-diagonal 1 (flat)
// or (1/2)^((N - 1 - |i - j|) / tau) (ordinal, tau is the half-life).
struct MarginWeightMatrix {
  std::size_t n = 0;
  MarginMode mode = MarginMode::flat;
  double tau = 0.0;
  std::vector<double> w;

  double operator()(std::size_t i, std::size_t j) const { return w[i * n + j]; }
};

inline double default_tau(std::size_t n) { return (static_cast<double>(n) - 1.0) / 2.0; }

inline MarginWeightMatrix build_w(std::size_t n, MarginMode mode, double tau) {
  if (n < 2) throw ConfigError("margin weights need at least 2 classes");
  if (!(tau > 0.0)) throw ConfigError("margin weight half-life must be positive");
  MarginWeightMatrix m{n, mode, tau, std::vector<double>(n * n)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) {
        m.w[i * n + j] = -1.0;
      } else if (mode == MarginMode::flat) {
        m.w[i * n + j] = 1.0;
      } else {
        const double dist = static_cast<double>(i > j ? i - j : j - i);
        m.w[i * n + j] = std::pow(0.5, (static_cast<double>(n) - 1.0 - dist) / tau);
      }
    }
  return m;
}

template <class T>
ad::Var<T> prediction_loss(ad::Var<T> logits, const std::vector<int>& labels) {
  return ad::softmax_cross_entropy(logits, labels);
}

struct MarginOptions {
  bool cosine = true;
  double eps = 1e-12;
};

// sum(W .* Yc Yc^T) over the classes present in the batch, where row c of Yc
// is the mean representation of class c (L2-normalised in cosine mode).
template <class T>
ad::Var<T> margin_loss(ad::Var<T> reps, const std::vector<int>& labels,
                       const MarginWeightMatrix& w, const MarginOptions& opt = {}) {
  auto& g = reps.g();
  const std::size_t b = reps.rows();
  if (b == 0 || labels.size() != b)
    throw DimensionError("margin_loss needs one label per representation");
  std::vector<std::size_t> counts(w.n, 0);
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= w.n)
      throw DataError("label " + std::to_string(l) + " outside margin matrix");
    ++counts[l];
  }
  std::vector<std::size_t> present;
  for (std::size_t c = 0; c < w.n; ++c)
    if (counts[c]) present.push_back(c);
  const std::size_t k = present.size();
  std::vector<T> avg(k * b, T(0));
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t i = 0; i < b; ++i)
      if (static_cast<std::size_t>(labels[i]) == present[r])
        avg[r * b + i] = T(1) / static_cast<T>(counts[present[r]]);
  auto means = ad::matmul(g.constant(Shape{k, b}, std::move(avg)), reps);
  if (opt.cosine) means = ad::l2_normalize_rows(means, T(opt.eps));
  auto gram = ad::matmul(means, ad::transpose(means));
  std::vector<T> wsub(k * k);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < k; ++c) wsub[r * k + c] = static_cast<T>(w(present[r], present[c]));
  return ad::sum(ad::mul(g.constant(Shape{k, k}, std::move(wsub)), gram));
}

// sum_m (||b_m|| - 1)^2 with ||.|| = sqrt(sum x^2 + eps).
template <class T>
ad::Var<T> base_regularization(ad::Var<T> basis, double eps = 1e-12) {
  auto norms = ad::row_norms(ad::transpose(basis), T(eps));
  auto& g = basis.g();
  return ad::sum(ad::square(ad::sub(norms, g.scalar(T(1)))));
}

template <class T>
ad::Var<T> base_regularization(ad::Graph<T>& g, SemanticBases<T>& bases, double eps = 1e-12) {
  return base_regularization(g.param(bases.B), eps);
}

// Inputs of the reconstruction loss, each tokens x width:
//   words/words_rec       x_i and SBT(y_i)
//   prefixes/prefixes_rec s_i and SFT(X_i)
//   states/states_rec     X_i and SBT(s_i)
template <class T>
struct ReconstructionTerms {
  ad::Var<T> words, words_rec;
  ad::Var<T> prefixes, prefixes_rec;
  ad::Var<T> states, states_rec;
};

template <class T>
ad::Var<T> squared_distance(ad::Var<T> a, ad::Var<T> b) {
  if (a.shape() != b.shape())
    throw DataError("reconstruction pair shapes differ: " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
  return ad::sum(ad::square(ad::sub(a, b)));
}

template <class T>
ad::Var<T> reconstruction_loss(const ReconstructionTerms<T>& t) {
  if (t.words.rows() != t.prefixes.rows() || t.prefixes.rows() != t.states.rows())
    throw DataError("reconstruction terms cover different token counts");
  return squared_distance(t.words, t.words_rec) + squared_distance(t.prefixes, t.prefixes_rec) +
         squared_distance(t.states, t.states_rec);
}

struct LossWeights {
  double pl = 1.0;
  double ml = 1.0;
  double bl = 1.0;
  double rl = 1.0;
  bool rl_enabled = false;

  void validate() const {
    if (!(pl > 0.0)) throw ConfigError("lambda_pl must be positive");
    if (ml < 0.0 || bl < 0.0 || rl < 0.0) throw ConfigError("loss weights must be >= 0");
  }
};

template <class T>
struct LossParts {
  ad::Var<T> pl;
  std::optional<ad::Var<T>> ml, bl, rl;
};

// Weighted sum; zero-weight terms are left off the graph.
template <class T>
ad::Var<T> total_loss(const LossParts<T>& parts, const LossWeights& w) {
  if (parts.rl.has_value() != w.rl_enabled)
    throw UsageError("reconstruction term must be present exactly when it is enabled");
  auto total = w.pl == 1.0 ? parts.pl : ad::scale(parts.pl, T(w.pl));
  auto add_term = [&](const std::optional<ad::Var<T>>& v, double lambda) {
    if (!v || lambda == 0.0) return;
    total = total + (lambda == 1.0 ? *v : ad::scale(*v, T(lambda)));
  };
  add_term(parts.ml, w.ml);
  add_term(parts.bl, w.bl);
  add_term(parts.rl, w.rl);
  return total;
}

}  // namespace st
