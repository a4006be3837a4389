#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "st/autodiff.hpp"
#include "st/layers.hpp"
#include "st/objectives.hpp"
#include "st/st_core.hpp"

namespace st {

struct GradCase {
  std::string name;
  std::size_t points = 0;
  double max_error = 0.0;
  double min_error = std::numeric_limits<double>::infinity();
  // When set the case is expected to fail: every point must exceed `threshold`.
  bool expect_failure = false;
  double threshold = 1e-4;

  bool passed() const { return expect_failure ? min_error > threshold : max_error < threshold; }
};

namespace detail {

using GVar = ad::Var<double>;
using GGraph = ad::Graph<double>;

inline Tensor<double> uniform_tensor(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Random linear read-out so every output component reaches the loss.
inline GVar readout(GVar y, std::mt19937_64& rng) {
  auto w = uniform_tensor(y.shape(), 0.5, 1.5, rng);
  std::bernoulli_distribution flip(0.5);
  for (auto& v : w.data())
    if (flip(rng)) v = -v;
  return ad::sum(ad::mul(y, y.g().constant(w)));
}

class SuiteRunner {
 public:
  SuiteRunner(std::size_t points, std::uint64_t seed) : points_(points), rng_(seed) {}

  // f sees a fresh random input drawn by `draw` at every point.
  void input(const std::string& name, const std::function<Tensor<double>(std::mt19937_64&)>& draw,
             const std::function<GVar(GGraph&, GVar, std::mt19937_64&)>& f,
             bool expect_failure = false, double threshold = 1e-4) {
    GradCase c{name, 0, 0.0, std::numeric_limits<double>::infinity(), expect_failure, threshold};
    for (std::size_t p = 0; p < points_; ++p) {
      auto x = draw(rng_);
      const std::uint64_t inner = rng_();
      const double e = ad::grad_check(
          [&](GGraph& g, GVar v) {
            std::mt19937_64 local(inner);
            return f(g, v, local);
          },
          x);
      record(c, e);
    }
    cases.push_back(c);
  }

  // `setup` builds fresh parameters at every point and returns the tensor to
  // perturb; f evaluates the scalar objective.
  template <class State>
  void param(const std::string& name, const std::function<State(std::mt19937_64&)>& setup,
             const std::function<Tensor<double>&(State&)>& target,
             const std::function<GVar(GGraph&, State&, std::mt19937_64&)>& f) {
    GradCase c{name, 0, 0.0, std::numeric_limits<double>::infinity(), false, 1e-4};
    for (std::size_t p = 0; p < points_; ++p) {
      State s = setup(rng_);
      const std::uint64_t inner = rng_();
      const double e = ad::grad_check_param(
          [&](GGraph& g) {
            std::mt19937_64 local(inner);
            return f(g, s, local);
          },
          target(s));
      record(c, e);
    }
    cases.push_back(c);
  }

  std::vector<GradCase> cases;

 private:
  static void record(GradCase& c, double e) {
    ++c.points;
    c.max_error = std::max(c.max_error, e);
    c.min_error = std::min(c.min_error, e);
  }

  std::size_t points_;
  std::mt19937_64 rng_;
};

struct CoreState {
  SftParams<double> sft;
  SbtParams<double> sbt;
  SemanticBases<double> bases;
  Tensor<double> x;  // word embeddings, 5 x in
  Tensor<double> y;  // sparse codes, 5 x M
};

constexpr std::size_t kIn = 4, kHidden = 5, kDense = 3, kBases = 6;

inline CoreState core_state(std::mt19937_64& rng) {
  CoreState s;
  s.sft = SftParams<double>::init(kIn, kHidden, kDense, true, rng);
  s.sbt = SbtParams<double>::init(kDense, kHidden, kIn, GainMode::vector, true, rng);
  s.bases = SemanticBases<double>::init(kDense, kBases, rng);
  // Scale the bases up so that the sparse activation sees its responsive range.
  for (auto& v : s.bases.B.data()) v *= 3.0;
  for (auto& v : s.sbt.w_b.data()) v = uniform_tensor(Shape{1}, 0.5, 1.5, rng)[0];
  s.x = uniform_tensor(Shape{5, kIn}, -1.0, 1.0, rng);
  s.y = uniform_tensor(Shape{5, kBases}, -0.9, 0.9, rng);
  return s;
}

inline std::vector<int> random_labels(std::size_t n, int classes, std::mt19937_64& rng) {
  std::vector<int> l(n);
  for (std::size_t i = 0; i < n; ++i) l[i] = static_cast<int>(i % classes);
  std::shuffle(l.begin(), l.end(), rng);
  return l;
}

}  // namespace detail

// Central finite-difference check of every differentiable operation.
inline std::vector<GradCase> gradient_suite(std::size_t points = 100, std::uint64_t seed = 2024) {
  using namespace detail;
  SuiteRunner run(points, seed);
  auto box = [](Shape shape, double lo, double hi) {
    return [shape, lo, hi](std::mt19937_64& r) { return uniform_tensor(shape, lo, hi, r); };
  };
  auto rd = [](auto op) {
    return [op](GGraph&, GVar x, std::mt19937_64& r) { return readout(op(x), r); };
  };

  run.input("matmul", box({3, 4}, -1, 1), [](GGraph& g, GVar x, std::mt19937_64& r) {
    auto w = g.constant(uniform_tensor({4, 2}, -1, 1, r));
    return readout(ad::matmul(x, w), r);
  });
  run.input("transpose", box({3, 4}, -1, 1), rd([](GVar x) { return ad::transpose(x); }));
  run.input("mul", box({2, 3}, -1, 1), rd([](GVar x) { return x * ad::tanh(x); }));
  run.input("add_row", box({3, 4}, -1, 1), [](GGraph& g, GVar x, std::mt19937_64& r) {
    return readout(ad::add_row(x, g.constant(uniform_tensor({1, 4}, -1, 1, r))), r);
  });
  run.input("mul_row", box({3, 4}, -1, 1), [](GGraph& g, GVar x, std::mt19937_64& r) {
    return readout(ad::mul_row(x, g.constant(uniform_tensor({1, 4}, -1, 1, r))), r);
  });
  run.input("tanh", box({2, 4}, -3, 3), rd([](GVar x) { return ad::tanh(x); }));
  run.input("sigmoid", box({2, 4}, -5, 5), rd([](GVar x) { return ad::sigmoid(x); }));
  run.input("relu", box({2, 4}, -2, 2), rd([](GVar x) { return ad::relu(x); }));
  run.input("clamp", box({2, 4}, -2, 2), rd([](GVar x) { return ad::clamp(x, -1.0, 1.0); }));
  run.input("square", box({2, 4}, -2, 2), rd([](GVar x) { return ad::square(x); }));
  run.input("segment_cumsum", box({5, 3}, -1, 1), rd([](GVar x) {
              return ad::segment_cumsum(x, {0, 2, 5});
            }));
  run.input("concat_slice", box({3, 4}, -1, 1), rd([](GVar x) {
              return ad::concat_cols(ad::slice_cols(x, 2, 2), ad::slice_cols(x, 0, 1));
            }));
  run.input("row_norms", box({3, 4}, -1, 1), rd([](GVar x) { return ad::row_norms(x, 1e-12); }));
  run.input("l2_normalize_rows", box({3, 4}, -1, 1),
            rd([](GVar x) { return ad::l2_normalize_rows(x, 1e-12); }));

  const SparseActivationParams sp;
  run.input("sparse_activation", box({1, 8}, -4, 4),
            rd([sp](GVar x) { return ad::sparse_activation(x, sp, DerivMode::exact); }));
  run.input("sparse_activation paper_eq5 near 0", box({1, 1}, -0.05, 0.05),
            rd([sp](GVar x) { return ad::sparse_activation(x, sp, DerivMode::paper_eq5); }),
            true, 0.1);
  run.input("sparse_activation exact near 0", box({1, 1}, -0.05, 0.05),
            rd([sp](GVar x) { return ad::sparse_activation(x, sp, DerivMode::exact); }));
  run.input("leaky_activation", box({1, 8}, -2, 2),
            rd([](GVar x) { return ad::leaky(x, LeakyParams{}); }));

  auto mlp = [](std::mt19937_64& r) {
    return MlpStack<double>::init({4, 5, 3}, Activation::tanh, Activation::identity, true, r);
  };
  run.input("mlp", box({3, 4}, -1, 1), [mlp](GGraph&, GVar x, std::mt19937_64& r) {
    auto s = mlp(r);
    return readout(mlp_forward(x, s), r);
  });
  run.input("lstm", box({5, 3}, -1, 1), [](GGraph&, GVar x, std::mt19937_64& r) {
    auto cell = LstmCell<double>::init(3, 2, r);
    return readout(lstm_prefix_states(x, {0, 3, 5}, cell), r);
  });

  // Semantic transforms and composition.
  using S = CoreState;
  run.input("sft", box({5, kIn}, -1, 1), [](GGraph&, GVar x, std::mt19937_64& r) {
    auto s = core_state(r);
    return readout(sft(x, s.sft, s.bases), r);
  });
  run.param<S>("sft d/dB", core_state, [](S& s) -> Tensor<double>& { return s.bases.B; },
               [](GGraph& g, S& s, std::mt19937_64& r) {
                 return readout(sft(g.constant(s.x), s.sft, s.bases), r);
               });
  run.param<S>("sft d/dW_f", core_state, [](S& s) -> Tensor<double>& { return s.sft.w_f; },
               [](GGraph& g, S& s, std::mt19937_64& r) {
                 return readout(sft(g.constant(s.x), s.sft, s.bases), r);
               });
  run.input("sbt", box({5, kBases}, -0.9, 0.9), [](GGraph&, GVar y, std::mt19937_64& r) {
    auto s = core_state(r);
    return readout(sbt(y, s.sbt, s.bases), r);
  });
  run.param<S>("sbt d/dB", core_state, [](S& s) -> Tensor<double>& { return s.bases.B; },
               [](GGraph& g, S& s, std::mt19937_64& r) {
                 return readout(sbt(g.constant(s.y), s.sbt, s.bases), r);
               });
  run.param<S>("sbt d/dw_b", core_state, [](S& s) -> Tensor<double>& { return s.sbt.w_b; },
               [](GGraph& g, S& s, std::mt19937_64& r) {
                 return readout(sbt(g.constant(s.y), s.sbt, s.bases), r);
               });
  run.input("scss", box({5, kBases}, -0.9, 0.9), rd([](GVar y) {
              return scss(y, {0, 3, 5}, ScssOptions{});
            }));
  run.input("scss final_only", box({5, kBases}, -0.9, 0.9), rd([](GVar y) {
              return scss(y, {0, 3, 5}, ScssOptions{LeakyParams{}, ClampMode::final_only});
            }));
  run.param<S>("sft+scss end to end d/dB", core_state,
               [](S& s) -> Tensor<double>& { return s.bases.B; },
               [](GGraph& g, S& s, std::mt19937_64& r) {
                 return readout(scss(sft(g.constant(s.x), s.sft, s.bases), {0, 2, 5}, ScssOptions{}), r);
               });

  // Losses.
  run.input("prediction_loss", box({6, 4}, -3, 3), [](GGraph&, GVar z, std::mt19937_64& r) {
    return prediction_loss(z, random_labels(6, 4, r));
  });
  run.input("margin_loss flat", box({6, kBases}, -0.9, 0.9), [](GGraph&, GVar y, std::mt19937_64& r) {
    return margin_loss(y, random_labels(6, 3, r), build_w(3, MarginMode::flat, 1.0));
  });
  run.input("margin_loss ordinal", box({10, kBases}, -0.9, 0.9),
            [](GGraph&, GVar y, std::mt19937_64& r) {
              return margin_loss(y, random_labels(10, 5, r), build_w(5, MarginMode::ordinal, 2.0));
            });
  run.input("margin_loss dot", box({6, kBases}, -0.9, 0.9), [](GGraph&, GVar y, std::mt19937_64& r) {
    return margin_loss(y, random_labels(6, 3, r), build_w(3, MarginMode::flat, 1.0),
                       MarginOptions{false, 1e-12});
  });
  run.input("base_regularization", box({kDense, kBases}, -1, 1),
            [](GGraph&, GVar b, std::mt19937_64&) { return base_regularization(b); });
  run.input("reconstruction_loss", box({6 * 4, 3}, -1, 1), [](GGraph&, GVar v, std::mt19937_64&) {
    auto part = [&](long k) {
      std::vector<long> rows(4);
      for (long i = 0; i < 4; ++i) rows[i] = 4 * k + i;
      return ad::gather_rows(v, rows);
    };
    return reconstruction_loss(
        ReconstructionTerms<double>{part(0), part(1), part(2), part(3), part(4), part(5)});
  });
  run.param<S>("reconstruction_loss through sft/sbt d/dB", core_state,
               [](S& s) -> Tensor<double>& { return s.bases.B; },
               [](GGraph& g, S& s, std::mt19937_64&) {
                 auto x = g.constant(s.x);
                 auto words = sft(x, s.sft, s.bases);
                 auto prefixes = scss(words, {0, 5}, ScssOptions{});
                 auto states = ad::tanh(x);
                 return reconstruction_loss(ReconstructionTerms<double>{
                     x, sbt(words, s.sbt, s.bases), prefixes, sft(states, s.sft, s.bases), states,
                     sbt(prefixes, s.sbt, s.bases)});
               });
  return run.cases;
}

}  // namespace st
