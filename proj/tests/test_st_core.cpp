#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "st/st_core.hpp"

using st::Shape;
using st::Tensor;
using st::ad::Graph;
namespace ad = st::ad;

namespace {

double s_ref(double z) { return std::exp(-(z - 2) * (z - 2)) - std::exp(-(z + 2) * (z + 2)); }

std::vector<double> row(const ad::Var<double>& v, std::size_t r) {
  const std::size_t c = v.cols();
  return {v.value().begin() + r * c, v.value().begin() + (r + 1) * c};
}

struct Fixture {
  std::mt19937_64 rng{42};
  st::SftParams<double> sft = st::SftParams<double>::init(4, 5, 3, true, rng);
  st::SbtParams<double> sbt = st::SbtParams<double>::init(3, 5, 4, st::GainMode::vector, true, rng);
  st::SemanticBases<double> bases = st::SemanticBases<double>::init(3, 7, rng);
};

}  // namespace

TEST(PrecedingElimination, WorkedExample) {
  Graph<double> g;
  auto out = st::preceding_elimination(g.constant(Shape{1, 3}, {-0.5, 0.2, 0.0}),
                                       g.constant(Shape{1, 3}, {0.8, -0.3, 0.4}));
  EXPECT_NEAR(out.value()[0], 0.3, 1e-15);
  EXPECT_EQ(out.value()[1], 0.0);
  EXPECT_NEAR(out.value()[2], 0.4, 1e-15);
  EXPECT_THROW(st::preceding_elimination(g.constant(Shape{1, 2}, {0, 0}),
                                         g.constant(Shape{1, 3}, {0, 0, 0})),
               st::DimensionError);
}

TEST(Scss, SingleWordIsLeakyOfPositivePart) {
  Graph<double> g;
  auto s = st::scss(g.constant(Shape{1, 3}, {0.3, 0.0, 0.4}), st::ScssOptions{});
  // 0.3 * sigmoid(2), 0, 0.4 * sigmoid(3)
  EXPECT_NEAR(s.value()[0], 0.264239, 1e-6);
  EXPECT_EQ(s.value()[1], 0.0);
  EXPECT_NEAR(s.value()[2], 0.381030, 1e-6);
}

TEST(Scss, ClampsEveryPrefixByDefault) {
  Graph<double> g;
  auto ys = g.constant(Shape{3, 1}, {0.9, 0.9, 0.9});
  auto per_prefix = st::scss(ys, st::ScssOptions{});
  const double l = 0.9 / (1 + std::exp(-10 * 0.8));
  EXPECT_NEAR(per_prefix.value()[0], l, 1e-12);
  EXPECT_EQ(per_prefix.value()[1], 1.0);
  EXPECT_EQ(per_prefix.value()[2], 1.0);
  auto final_only = st::scss(ys, st::ScssOptions{st::LeakyParams{}, st::ClampMode::final_only});
  EXPECT_NEAR(final_only.value()[1], 2 * l, 1e-12);
  EXPECT_EQ(final_only.value()[2], 1.0);
}

TEST(Scss, NegativeWordCancelsFollowingPositive) {
  Graph<double> g;
  // "not good": the negation word's negative part removes the next word's meaning.
  auto s = st::scss(g.constant(Shape{2, 1}, {-0.8, 0.8}), st::ScssOptions{});
  EXPECT_NEAR(s.value()[1], 0.0, 1e-12);
}

TEST(Scss, IsOrderSensitive) {
  Graph<double> g;
  auto ab = st::scss(g.constant(Shape{2, 2}, {-0.5, 0.6, 0.7, -0.2}), st::ScssOptions{});
  auto ba = st::scss(g.constant(Shape{2, 2}, {0.7, -0.2, -0.5, 0.6}), st::ScssOptions{});
  const auto x = row(ab, 1), y = row(ba, 1);
  EXPECT_GT(std::max(std::abs(x[0] - y[0]), std::abs(x[1] - y[1])), 1e-6);
}

TEST(Scss, OutputStaysInUnitRange) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(40 * 6);
  for (auto& x : v) x = u(rng);
  Graph<double> g;
  auto s = st::scss(g.constant(Shape{40, 6}, v), {0, 10, 40}, st::ScssOptions{});
  for (double x : s.value()) {
    EXPECT_GE(x, -1.0);
    EXPECT_LE(x, 1.0);
  }
}

TEST(Scss, SegmentsAreIndependent) {
  Graph<double> g;
  const std::vector<double> a{0.4, -0.6, 0.2, 0.9}, b{-0.3, 0.5};
  std::vector<double> both(a);
  both.insert(both.end(), b.begin(), b.end());
  auto joint = st::scss(g.constant(Shape{3, 2}, both), {0, 2, 3}, st::ScssOptions{});
  auto first = st::scss(g.constant(Shape{2, 2}, a), st::ScssOptions{});
  auto second = st::scss(g.constant(Shape{1, 2}, b), st::ScssOptions{});
  EXPECT_EQ(row(joint, 1), row(first, 1));
  EXPECT_EQ(row(joint, 2), row(second, 0));
  EXPECT_THROW(st::scss(g.constant(Shape{2, 2}, a), {0, 0, 2}, st::ScssOptions{}), st::DataError);
}

TEST(Sft, MatchesHandComposition) {
  Fixture f;
  const std::vector<double> x{0.2, -0.7, 0.5, 0.1};
  const auto& l = f.sft.f.layers[0];
  std::vector<double> h(5), z(3), y(7);
  for (std::size_t j = 0; j < 5; ++j) {
    double s = l.bias[j];
    for (std::size_t k = 0; k < 4; ++k) s += x[k] * l.weight.at(k, j);
    h[j] = std::tanh(s);
  }
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t k = 0; k < 5; ++k) z[j] += h[k] * f.sft.w_f.at(k, j);
  for (std::size_t m = 0; m < 7; ++m) {
    double s = 0;
    for (std::size_t j = 0; j < 3; ++j) s += z[j] * f.bases.B.at(j, m);
    y[m] = s_ref(s);
  }
  Graph<double> g;
  auto out = st::sft(g.constant(Shape{1, 4}, x), f.sft, f.bases);
  for (std::size_t m = 0; m < 7; ++m) EXPECT_NEAR(out.value()[m], y[m], 1e-12);
}

TEST(Sbt, MatchesHandComposition) {
  Fixture f;
  f.sbt.w_b[0] = 1.5;
  f.sbt.w_b[2] = -0.5;
  const std::vector<double> y{0.9, 0, 0, -0.4, 0, 0.1, 0};
  std::vector<double> p(3);
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0;
    for (std::size_t m = 0; m < 7; ++m) s += y[m] * f.bases.B.at(j, m);
    p[j] = std::tanh(f.sbt.w_b[j] * s);
  }
  for (std::size_t li = 0; li < 3; ++li) {
    const auto& l = f.sbt.F.layers[li];
    std::vector<double> next(l.out_dim());
    for (std::size_t j = 0; j < next.size(); ++j) {
      double s = l.bias[j];
      for (std::size_t k = 0; k < p.size(); ++k) s += p[k] * l.weight.at(k, j);
      next[j] = li == 2 ? s : std::tanh(s);
    }
    p = next;
  }
  Graph<double> g;
  auto out = st::sbt(g.constant(Shape{1, 7}, y), f.sbt, f.bases);
  ASSERT_EQ(out.cols(), 4u);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.value()[j], p[j], 1e-12);
  EXPECT_THROW(st::sbt(g.constant(Shape{1, 3}, {0, 0, 0}), f.sbt, f.bases), st::DimensionError);
}

TEST(Sbt, ScalarGainScalesEveryDimension) {
  std::mt19937_64 rng(5);
  auto sbt = st::SbtParams<double>::init(3, 4, 2, st::GainMode::scalar, true, rng);
  auto bases = st::SemanticBases<double>::init(3, 4, rng);
  EXPECT_EQ(sbt.w_b.size(), 1u);
  Graph<double> g;
  auto y = g.constant(Shape{1, 4}, {0.5, -0.5, 0.2, 0.0});
  auto a = st::sbt(y, sbt, bases).value();
  sbt.w_b[0] = 0.0;
  auto zero = st::sbt(y, sbt, bases).value();
  auto at_origin = st::mlp_forward(g.constant(Shape{1, 3}, {0, 0, 0}), sbt.F).value();
  EXPECT_EQ(zero, at_origin);
  EXPECT_NE(a, zero);
}

TEST(Bases, NeedAtLeastTwo) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(st::SemanticBases<double>::init(3, 1, rng), st::ConfigError);
}

TEST(Encode, SentenceIsLastPrefixAndBatchingIsTransparent) {
  Fixture f;
  auto emb = st::EmbeddingTable<double>::init(10, 4, f.rng);
  st::TokenBlock block;
  block.add({3, 4, 5, 0, 0});
  block.add({6, 0});
  ASSERT_EQ(block.tokens(), 4u);
  Graph<double> g;
  auto e = st::encode_block(g, block, emb, f.sft, f.bases, st::ScssOptions{});
  EXPECT_EQ(row(e.sentence, 0), row(e.prefixes, 2));
  EXPECT_EQ(row(e.sentence, 1), row(e.prefixes, 3));
  auto alone = st::encode_sentence(g, {3, 4, 5}, emb, f.sft, f.bases, st::ScssOptions{});
  auto prefix = st::encode_sentence(g, {3, 4}, emb, f.sft, f.bases, st::ScssOptions{});
  EXPECT_EQ(row(e.sentence, 0), row(alone.sentence, 0));
  EXPECT_EQ(row(prefix.sentence, 0), row(alone.prefixes, 1));
}

TEST(Encode, PadOnlySentenceIsRejected) {
  st::TokenBlock block;
  EXPECT_THROW(block.add({0, 0, 0}), st::DataError);
  EXPECT_THROW(block.add({}), st::DataError);
}

TEST(Encode, EndToEndGradientThroughEmbeddings) {
  std::mt19937_64 rng(8);
  auto sft = st::SftParams<double>::init(4, 5, 3, true, rng);
  auto bases = st::SemanticBases<double>::init(3, 6, rng);
  for (auto& v : bases.B.values()) v *= 3;
  auto emb = st::EmbeddingTable<double>::init(8, 4, rng);
  st::TokenBlock block;
  block.add({2, 5, 7});
  block.add({5, 1});
  auto f = [&](Graph<double>& g) {
    auto e = st::encode_block(g, block, emb, sft, bases, st::ScssOptions{});
    return ad::sum(ad::square(e.sentence));
  };
  EXPECT_LT(ad::grad_check_param(f, emb.matrix), 1e-5);
  EXPECT_LT(ad::grad_check_param(f, bases.B), 1e-5);
  EXPECT_LT(ad::grad_check_param(f, sft.w_f), 1e-5);
}
