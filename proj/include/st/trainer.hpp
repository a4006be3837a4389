#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "st/analytics.hpp"
#include "st/config.hpp"
#include "st/data.hpp"
#include "st/model.hpp"
#include "st/optim.hpp"

namespace st {

struct Datasets {
  Vocab vocab;
  LabelSet labels;
  std::vector<Example> train, dev, test;
};

// Vocabulary and label set come from the training split; dev/test labels
// must already be known.
inline Datasets make_datasets(const std::vector<RawExample>& train,
                              const std::vector<RawExample>& dev,
                              const std::vector<RawExample>& test, std::size_t min_freq) {
  if (train.empty()) throw DataError("training split is empty");
  Datasets d;
  d.vocab = Vocab::build(corpus_of(train), min_freq);
  d.train = numericalize(train, d.vocab, d.labels);
  d.labels.freeze();
  d.dev = numericalize(dev, d.vocab, d.labels);
  d.test = numericalize(test, d.vocab, d.labels);
  return d;
}

inline Datasets load_datasets(const TrainConfig& cfg, const std::filesystem::path& root = {}) {
  if (cfg.train_file.empty() || cfg.dev_file.empty() || cfg.test_file.empty())
    throw ConfigError("train_file, dev_file and test_file must all be set");
  auto load = [&](const std::string& f) {
    return load_examples(resolve_data_path(f, root), cfg.task, cfg.max_len);
  };
  return make_datasets(load(cfg.train_file), load(cfg.dev_file), load(cfg.test_file), cfg.min_freq);
}

// Stops after `patience` consecutive epochs without a strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  bool update(double score) {
    if (score > best_) {
      best_ = score;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const { return stale_ >= patience_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
};

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
  std::vector<int> predictions;
  std::vector<int> labels;
  std::vector<float> word_values;   // every component of every word code
  Tensor<float> sentence_reps;      // examples x feature width (sparse)
  std::vector<Tensor<double>> states, states_rec;  // per sentence, for CAM
};

inline EvalResult evaluate_model(StModel<float>& model, const std::vector<Example>& data,
                                 std::size_t batch_size = 256, bool collect = true) {
  if (data.empty()) throw DataError("cannot evaluate on an empty dataset");
  EvalResult r;
  std::vector<float> reps;
  std::size_t width = 0;
  double loss_sum = 0.0;
  for (const auto& batch : batch_iter(data, batch_size, std::nullopt)) {
    ad::Graph<float> g(false);
    for (long id : batch.ids)
      if (id >= static_cast<long>(model.emb.vocab_size()))
        throw DataError("token id outside the model vocabulary");
    auto out = forward(g, model, batch, false);
    loss_sum += ad::softmax_cross_entropy(out.logits, batch.labels).item() * batch.size();
    auto pred = argmax_rows(out.logits);
    r.predictions.insert(r.predictions.end(), pred.begin(), pred.end());
    r.labels.insert(r.labels.end(), batch.labels.begin(), batch.labels.end());
    if (!collect) continue;
    const auto& wv = out.enc.words.value();
    r.word_values.insert(r.word_values.end(), wv.begin(), wv.end());
    width = out.sparse_features.cols();
    reps.insert(reps.end(), out.sparse_features.value().begin(), out.sparse_features.value().end());
    if (out.states) {
      const auto block = batch.tokens();
      const std::size_t h = out.states->cols();
      for (std::size_t s = 0; s < block.sentences(); ++s) {
        const std::size_t lo = block.offsets[s], len = block.offsets[s + 1] - lo;
        Tensor<double> x(Shape{len, h}), xr(Shape{len, h});
        for (std::size_t i = 0; i < len * h; ++i) {
          x[i] = out.states->value()[lo * h + i];
          xr[i] = out.states_rec->value()[lo * h + i];
        }
        r.states.push_back(std::move(x));
        r.states_rec.push_back(std::move(xr));
      }
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < r.labels.size(); ++i) correct += r.predictions[i] == r.labels[i];
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.labels.size());
  r.loss = loss_sum / static_cast<double>(r.labels.size());
  if (collect) r.sentence_reps = Tensor<float>(Shape{r.labels.size(), width}, std::move(reps));
  return r;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double dev_loss = 0.0;
  double dev_accuracy = 0.0;
  double sparsity_se = 0.0;  // on the probe set
  std::optional<double> dev_cam;
  double seconds = 0.0;
};

struct RunReport {
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;  // epochs[0] is the untrained model
  std::size_t best_epoch = 0;
  double best_dev_accuracy = 0.0;
  double test_accuracy = 0.0;
  SparsityReport test_distribution;
  std::optional<double> test_cam;        // best-dev model
  std::optional<double> final_test_cam;  // model after the last epoch
  double wall_seconds = 0.0;
  bool failed = false;
  std::string error;
};

struct TrainResult {
  RunReport report;
  StModel<float> model;  // parameters at the best dev epoch
};

inline std::vector<Tensor<float>*> param_pointers(StModel<float>& m) {
  std::vector<Tensor<float>*> out;
  for (auto& [name, t] : m.named_params()) out.push_back(t);
  return out;
}

inline std::vector<long> frozen_rows(StModel<float>& m) {
  std::vector<long> out;
  for (auto& [name, t] : m.named_params()) out.push_back(m.is_embedding(name) ? Vocab::kPad : -1L);
  return out;
}

inline std::vector<Example> probe_set(const Datasets& d, std::size_t n) {
  const auto& src = d.dev.empty() ? d.train : d.dev;
  return std::vector<Example>(src.begin(), src.begin() + std::min(n, src.size()));
}

using EpochCallback = std::function<void(const EpochRecord&)>;

inline TrainResult train(const TrainConfig& cfg_in, const Datasets& data, std::uint64_t seed,
                         const EpochCallback& on_epoch = {}) {
  TrainConfig cfg = cfg_in;
  cfg.seed = seed;
  cfg.validate();
  if (data.dev.empty()) throw DataError("dev split is empty");
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  TrainResult res{RunReport{}, StModel<float>::init(cfg, data.vocab.size(), data.labels.size(), seed)};
  auto& report = res.report;
  report.seed = seed;
  StModel<float> model = res.model;
  auto params = param_pointers(model);
  const auto frozen = frozen_rows(model);
  for (auto* p : params) p->ensure_grad();
  AdamState<float> adam;
  const AdamOptions opt{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  const auto probe = probe_set(data, cfg.probe_size);

  auto probe_se = [&] {
    auto ev = evaluate_model(model, probe);
    return sparsity_se(ev.word_values);
  };

  const bool with_cam = model.lstm.has_value();
  auto dev_cam = [&](const EvalResult& dev) -> std::optional<double> {
    if (dev.states.empty()) return std::nullopt;
    return cam(dev.states, dev.states_rec).cam_score;
  };

  {
    auto dev = evaluate_model(model, data.dev, 256, with_cam);
    EpochRecord e0;
    e0.dev_cam = dev_cam(dev);
    e0.dev_loss = dev.loss;
    e0.dev_accuracy = dev.accuracy;
    e0.sparsity_se = probe_se();
    e0.seconds = elapsed();
    report.epochs.push_back(e0);
    if (on_epoch) on_epoch(e0);
  }

  EarlyStopping stopper(cfg.patience);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t seen = 0, correct = 0;
    double loss_sum = 0.0;
    const std::uint64_t shuffle_seed = seed * 1000003ULL + epoch;
    for (const auto& batch : batch_iter(data.train, cfg.batch_size, shuffle_seed)) {
      ad::Graph<float> g;
      auto out = forward(g, model, batch, true);
      const double loss = out.total.item();
      if (!std::isfinite(loss) || loss > cfg.divergence_threshold)
        throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                           " (loss " + std::to_string(loss) + ")");
      g.backward(out.total);
      adam_step(params, adam, opt, frozen);
      loss_sum += loss * batch.size();
      seen += batch.size();
      auto pred = argmax_rows(out.logits);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i];
    }
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    auto dev = evaluate_model(model, data.dev, 256, with_cam);
    rec.dev_cam = dev_cam(dev);
    rec.dev_loss = dev.loss;
    rec.dev_accuracy = dev.accuracy;
    rec.sparsity_se = probe_se();
    rec.seconds = elapsed();
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (stopper.update(dev.accuracy)) {
      report.best_epoch = epoch;
      report.best_dev_accuracy = dev.accuracy;
      res.model = model;
    }
    if (stopper.should_stop()) break;
  }
  if (report.best_epoch == 0) {
    // Keep the untrained model only if no epoch ever ran.
    report.best_dev_accuracy = report.epochs.front().dev_accuracy;
  }

  if (!data.test.empty()) {
    auto test = evaluate_model(res.model, data.test);
    report.test_accuracy = test.accuracy;
    report.test_distribution = value_distribution(test.word_values);
    if (!test.states.empty()) report.test_cam = cam(test.states, test.states_rec).cam_score;
    if (with_cam) {
      auto last = evaluate_model(model, data.test);
      report.final_test_cam = cam(last.states, last.states_rec).cam_score;
    }
  }
  report.wall_seconds = elapsed();
  return res;
}

struct MultiRunReport {
  std::vector<RunReport> runs;
  std::vector<std::uint64_t> failed_seeds;
  double mean_test_accuracy = 0.0;
  double std_test_accuracy = 0.0;
  double mean_dev_accuracy = 0.0;
};

// Independent replicas, one per seed, `cfg.jobs` at a time.
inline MultiRunReport multi_run(const TrainConfig& cfg, const Datasets& data,
                                const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("multi_run needs at least one seed");
  std::vector<RunReport> runs(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < seeds.size();) {
      try {
        runs[i] = train(cfg, data, seeds[i]).report;
      } catch (const Error& e) {
        runs[i].seed = seeds[i];
        runs[i].failed = true;
        runs[i].error = e.what();
      }
    }
  };
  const std::size_t jobs = std::min<std::size_t>(std::max<std::size_t>(cfg.jobs, 1), seeds.size());
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  MultiRunReport rep;
  std::vector<double> acc, dev;
  for (auto& r : runs) {
    if (r.failed) {
      rep.failed_seeds.push_back(r.seed);
    } else {
      acc.push_back(r.test_accuracy);
      dev.push_back(r.best_dev_accuracy);
    }
  }
  rep.runs = std::move(runs);
  if (!acc.empty()) {
    const double n = static_cast<double>(acc.size());
    rep.mean_test_accuracy = std::accumulate(acc.begin(), acc.end(), 0.0) / n;
    rep.mean_dev_accuracy = std::accumulate(dev.begin(), dev.end(), 0.0) / n;
    double var = 0.0;
    for (double a : acc) var += (a - rep.mean_test_accuracy) * (a - rep.mean_test_accuracy);
    rep.std_test_accuracy = std::sqrt(var / n);
  }
  return rep;
}

inline nlohmann::json to_json(const EpochRecord& e) {
  nlohmann::json j = {{"type", "epoch"},         {"epoch", e.epoch},
                      {"train_loss", e.train_loss}, {"train_accuracy", e.train_accuracy},
                      {"dev_loss", e.dev_loss},     {"dev_accuracy", e.dev_accuracy},
                      {"sparsity_se", e.sparsity_se}, {"seconds", e.seconds}};
  if (e.dev_cam) j["dev_cam"] = *e.dev_cam;
  return j;
}

inline nlohmann::json to_json(const SparsityReport& s) {
  return {{"se_score", s.se_score},
          {"hi_threshold", s.hi_threshold},
          {"lo_threshold", s.lo_threshold},
          {"frac_above", s.frac_above},
          {"frac_below", s.frac_below},
          {"signed_frac_above", s.signed_frac_above},
          {"signed_frac_below", s.signed_frac_below},
          {"count", s.count},
          {"histogram", s.histogram}};
}

inline nlohmann::json to_json(const RunReport& r) {
  nlohmann::json j = {{"type", "summary"},
                      {"seed", r.seed},
                      {"best_epoch", r.best_epoch},
                      {"best_dev_accuracy", r.best_dev_accuracy},
                      {"test_accuracy", r.test_accuracy},
                      {"test_distribution", to_json(r.test_distribution)},
                      {"wall_seconds", r.wall_seconds},
                      {"failed", r.failed}};
  if (r.test_cam) j["test_cam"] = *r.test_cam;
  if (r.final_test_cam) j["final_test_cam"] = *r.final_test_cam;
  if (r.failed) j["error"] = r.error;
  nlohmann::json traj = nlohmann::json::array();
  for (const auto& e : r.epochs) traj.push_back(e.sparsity_se);
  j["sparsity_trajectory"] = traj;
  return j;
}

inline nlohmann::json to_json(const MultiRunReport& m) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : m.runs) runs.push_back(to_json(r));
  return {{"type", "multirun"},
          {"runs", runs},
          {"failed_seeds", m.failed_seeds},
          {"mean_test_accuracy", m.mean_test_accuracy},
          {"std_test_accuracy", m.std_test_accuracy},
          {"mean_dev_accuracy", m.mean_dev_accuracy}};
}

}  // namespace st
