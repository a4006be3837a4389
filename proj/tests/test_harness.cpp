#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "st/checkpoint.hpp"
#include "st/gradcheck_suite.hpp"
#include "st/trainer.hpp"

namespace fs = std::filesystem;
using st::Shape;
using st::Tensor;

namespace {

const fs::path kSource = ST_SOURCE_DIR;

st::TrainConfig keywords(std::size_t epochs = 20) {
  auto cfg = st::TrainConfig::from_file(kSource / "configs" / "keywords_desk.conf");
  cfg.max_epochs = epochs;
  return cfg;
}

st::Datasets keyword_data() { return st::load_datasets(keywords(), kSource / "fixtures"); }

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("st_test_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor<double> p(Shape{1, 3}, {1.0, -2.0, 0.5});
  p.ensure_grad();
  p.grad()[0] = 0.3;
  p.grad()[1] = -7.0;
  std::vector<Tensor<double>*> params{&p};
  st::AdamState<double> state;
  st::adam_step(params, state, st::AdamOptions{0.01});
  // Bias-corrected m / sqrt(v) is sign(g) after one step.
  EXPECT_NEAR(p[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p[1], -2.0 + 0.01, 1e-9);
  EXPECT_EQ(p[2], 0.5);
  EXPECT_EQ(p.grad()[0], 0.0);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, ConstantGradientKeepsFullStepSize) {
  Tensor<double> p(Shape{1, 1}, {0.0});
  p.ensure_grad();
  std::vector<Tensor<double>*> params{&p};
  st::AdamState<double> state;
  for (int i = 0; i < 50; ++i) {
    p.grad()[0] = 4.0;
    st::adam_step(params, state, st::AdamOptions{0.1});
  }
  EXPECT_NEAR(p[0], -5.0, 1e-6);
}

TEST(Adam, FrozenRowNeverMoves) {
  Tensor<double> emb(Shape{3, 2}, {0, 0, 1, 1, 2, 2});
  emb.ensure_grad();
  for (auto& g : emb.grad()) g = 1.0;
  std::vector<Tensor<double>*> params{&emb};
  st::AdamState<double> state;
  st::adam_step(params, state, st::AdamOptions{0.5}, {0});
  EXPECT_EQ(emb.at(0, 0), 0.0);
  EXPECT_EQ(emb.at(0, 1), 0.0);
  EXPECT_NEAR(emb.at(1, 0), 0.5, 1e-7);
  EXPECT_EQ(state.slots[0].m[0], 0.0);
}

TEST(EarlyStopping, StopsAfterPatienceWithoutStrictGain) {
  st::EarlyStopping stop(5);
  std::size_t epoch = 0;
  // Last strict gain at epoch 10.
  const std::vector<double> dev{0.5, 0.6, 0.7, 0.7, 0.8, 0.9, 0.9, 0.85, 0.9, 0.91,
                                0.91, 0.9, 0.91, 0.8, 0.91, 0.99};
  for (double d : dev) {
    ++epoch;
    stop.update(d);
    if (stop.should_stop()) break;
  }
  EXPECT_EQ(epoch, 15u);
  EXPECT_EQ(stop.best(), 0.91);
}

TEST(Config, ParsesPresetsOverridesAndValidates) {
  auto cfg = st::TrainConfig::from_string("preset = desk\nfeature = Xp\nrl_enabled = true\n");
  EXPECT_EQ(cfg.bases, 200u);
  EXPECT_EQ(cfg.lr, 3e-3);
  cfg.apply_override("lr=0.01");
  EXPECT_EQ(cfg.lr, 0.01);
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_THROW(cfg.apply_override("lr"), st::ConfigError);
  EXPECT_THROW(cfg.apply_override("learning_rate=1"), st::ConfigError);
  EXPECT_THROW(st::TrainConfig::from_string("feature = Xp\n").validate(), st::ConfigError);
  EXPECT_THROW(st::TrainConfig::from_string("bases = 1\n").validate(), st::ConfigError);
}

TEST(Config, SnapshotRoundTrips) {
  auto cfg = keywords();
  cfg.apply_override("seeds=3..5");
  cfg.apply_override("w_mode=ordinal");
  const auto text = cfg.to_text();
  EXPECT_EQ(st::TrainConfig::from_string(text).to_text(), text);
  EXPECT_EQ(st::TrainConfig::from_string(text).seeds, (std::vector<std::uint64_t>{3, 4, 5}));
}

TEST(Model, ParameterCountMatchesArchitecture) {
  auto cfg = keywords();
  auto m = st::StModel<float>::init(cfg, 50, 2, 1);
  const std::size_t d = 64, h = 64, M = 200, head = 64;
  const std::size_t expected = 50 * d + (d * h + h) + h * d + d * M + (M * head + head) + head * 2 + 2;
  EXPECT_EQ(m.parameter_count(), expected);
  cfg.apply_override("feature=Xp");
  cfg.apply_override("rl_enabled=true");
  auto xp = st::StModel<float>::init(cfg, 50, 2, 1);
  EXPECT_TRUE(xp.sbt.has_value());
  EXPECT_TRUE(xp.lstm.has_value());
  EXPECT_GT(xp.parameter_count(), m.parameter_count());
}

TEST(Checkpoint, RoundTripReproducesParameters) {
  auto data = keyword_data();
  auto res = st::train(keywords(2), data, 3);
  const auto dir = scratch("roundtrip");
  st::save_checkpoint(dir, res.model, data.vocab, data.labels, {3, res.report.best_epoch, 0.5});
  auto ck = st::load_checkpoint(dir);
  EXPECT_EQ(ck.meta.seed, 3u);
  EXPECT_EQ(ck.vocab.tokens(), data.vocab.tokens());
  EXPECT_EQ(ck.labels.names(), data.labels.names());
  auto a = res.model.named_params(), b = ck.model.named_params();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    ASSERT_EQ(a[k].first, b[k].first);
    for (std::size_t i = 0; i < a[k].second->size(); ++i)
      ASSERT_LT(std::abs((*a[k].second)[i] - (*b[k].second)[i]), 1e-7);
  }
  fs::remove_all(dir);
}

TEST(Checkpoint, DetectsCorruption) {
  auto data = keyword_data();
  auto cfg = keywords();
  auto model = st::StModel<float>::init(cfg, data.vocab.size(), data.labels.size(), 1);
  const auto dir = scratch("corrupt");
  st::save_checkpoint(dir, model, data.vocab, data.labels, {});
  fs::resize_file(dir / "params.bin", fs::file_size(dir / "params.bin") - 8);
  EXPECT_THROW(st::load_checkpoint(dir), st::CorruptionError);

  st::save_checkpoint(dir, model, data.vocab, data.labels, {});
  std::ofstream(dir / "manifest.txt", std::ios::app) << "param ghost 2x2 0\n";
  EXPECT_THROW(st::load_checkpoint(dir), st::CorruptionError);
  EXPECT_THROW(st::load_checkpoint(dir / "missing"), st::DataError);
  fs::remove_all(dir);
}

TEST(Training, SameSeedSameReport) {
  auto data = keyword_data();
  auto a = st::train(keywords(3), data, 11).report;
  auto b = st::train(keywords(3), data, 11).report;
  ASSERT_EQ(a.epochs.size(), b.epochs.size());
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    EXPECT_EQ(a.epochs[e].train_loss, b.epochs[e].train_loss);
    EXPECT_EQ(a.epochs[e].dev_accuracy, b.epochs[e].dev_accuracy);
  }
  EXPECT_EQ(a.test_accuracy, b.test_accuracy);
}

TEST(Training, LearnsKeywordTask) {
  auto data = keyword_data();
  auto r = st::train(keywords(), data, 1).report;
  EXPECT_LT(r.epochs.back().train_loss, r.epochs[1].train_loss);
  EXPECT_GE(r.test_accuracy, 0.95);
  EXPECT_EQ(r.best_dev_accuracy, r.epochs[r.best_epoch].dev_accuracy);
  EXPECT_EQ(r.epochs.front().epoch, 0u);
}

TEST(Training, DivergenceIsANumericError) {
  auto cfg = keywords(2);
  cfg.divergence_threshold = 1e-3;
  EXPECT_THROW(st::train(cfg, keyword_data(), 1), st::NumericError);
}

TEST(MultiRun, SingleSeedHasZeroSpread) {
  auto data = keyword_data();
  auto cfg = keywords(2);
  auto one = st::multi_run(cfg, data, {4});
  EXPECT_EQ(one.std_test_accuracy, 0.0);
  EXPECT_EQ(one.mean_test_accuracy, one.runs[0].test_accuracy);
  cfg.jobs = 2;
  auto two = st::multi_run(cfg, data, {4, 5});
  EXPECT_EQ(two.runs[0].test_accuracy, one.runs[0].test_accuracy);
  EXPECT_EQ(two.runs[1].seed, 5u);
}

TEST(MultiRun, FailedSeedIsRecordedAndSkipped) {
  auto cfg = keywords(2);
  cfg.divergence_threshold = 1e-3;
  auto rep = st::multi_run(cfg, keyword_data(), {1, 2});
  EXPECT_EQ(rep.failed_seeds, (std::vector<std::uint64_t>{1, 2}));
  EXPECT_TRUE(rep.runs[0].failed);
}

TEST(GradientSuite, EveryCasePasses) {
  for (const auto& c : st::gradient_suite(20)) EXPECT_TRUE(c.passed()) << c.name;
}
