// st_cli: train, evaluate and analyse Semantic Transform models.
//
// Exit status: 0 ok, 1 usage or config error, 2 data or checkpoint error,
// 3 numeric failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "st/checkpoint.hpp"
#include "st/gradcheck_suite.hpp"
#include "st/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct RunOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::string data_dir;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("-c,--config", o.config, "config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--override", o.overrides, "key=value, repeatable");
  cmd->add_option("--data-dir", o.data_dir, "root for relative dataset paths");
}

st::TrainConfig load_config(const RunOptions& o) {
  auto cfg = st::TrainConfig::from_file(o.config);
  for (const auto& kv : o.overrides) cfg.apply_override(kv);
  cfg.validate();
  return cfg;
}

std::vector<st::Example> load_split(const std::string& file, const std::string& data_dir,
                                    const st::Checkpoint& ck) {
  auto raw = st::load_examples(st::resolve_data_path(file, data_dir), ck.cfg.task, ck.cfg.max_len);
  auto labels = ck.labels;
  return st::numericalize(raw, ck.vocab, labels);
}

void write_file(const std::string& path, auto&& writer) {
  std::ofstream out(path);
  if (!out) throw st::DataError("cannot write " + path);
  writer(out);
}

int run_train(const RunOptions& o, std::optional<std::uint64_t> seed, const std::string& out) {
  const auto cfg = load_config(o);
  const auto data = st::load_datasets(cfg, o.data_dir);
  auto res = st::train(cfg, data, seed.value_or(cfg.seed), [](const st::EpochRecord& e) {
    std::cout << st::to_json(e).dump() << std::endl;
  });
  const auto summary = st::to_json(res.report);
  std::cout << summary.dump() << std::endl;
  if (!out.empty()) {
    st::save_checkpoint(fs::path(out) / "checkpoint", res.model, data.vocab, data.labels,
                        {res.report.seed, res.report.best_epoch, res.report.best_dev_accuracy});
    write_file((fs::path(out) / "report.json").string(),
               [&](std::ostream& os) { os << summary.dump(2) << '\n'; });
  }
  return 0;
}

int run_multirun(const RunOptions& o, const std::string& seeds, std::optional<std::size_t> jobs,
                 const std::string& out) {
  auto cfg = load_config(o);
  if (jobs) cfg.jobs = *jobs;
  cfg.validate();
  const auto data = st::load_datasets(cfg, o.data_dir);
  const auto rep = st::multi_run(cfg, data, seeds.empty() ? cfg.seeds : st::parse_seeds(seeds));
  const auto j = st::to_json(rep);
  std::cout << j.dump(2) << std::endl;
  if (!out.empty()) write_file(out, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
  return rep.failed_seeds.size() == rep.runs.size() ? 3 : 0;
}

int run_eval(const std::string& checkpoint, const std::string& file, const std::string& data_dir) {
  auto ck = st::load_checkpoint(checkpoint);
  const auto examples = load_split(file, data_dir, ck);
  auto r = st::evaluate_model(ck.model, examples);
  nlohmann::json j{{"examples", examples.size()},
                   {"accuracy", r.accuracy},
                   {"loss", r.loss},
                   {"sparsity", st::to_json(st::value_distribution(r.word_values))}};
  if (!r.states.empty()) j["cam"] = st::cam(r.states, r.states_rec).cam_score;
  std::cout << j.dump(2) << std::endl;
  return 0;
}

struct AnalyzeOptions {
  std::string checkpoint, file, data_dir, class_average, histogram, sort_class;
  double hi = 0.6, lo = 0.05;
};

int run_analyze(const AnalyzeOptions& o) {
  auto ck = st::load_checkpoint(o.checkpoint);
  const auto examples = load_split(o.file, o.data_dir, ck);
  auto r = st::evaluate_model(ck.model, examples);
  const auto dist = st::value_distribution(r.word_values, o.hi, o.lo);
  nlohmann::json j{{"examples", examples.size()}, {"sparsity", st::to_json(dist)}};
  if (!r.states.empty()) {
    auto c = st::cam(r.states, r.states_rec);
    j["cam"] = c.cam_score;
    j["cam_skipped_pairs"] = c.skipped_pairs;
    for (const auto& w : c.warnings) std::cerr << "warning: " << w << '\n';
  }
  if (!o.class_average.empty()) {
    std::size_t sort_by = 0;
    if (!o.sort_class.empty()) {
      const auto& names = ck.labels.names();
      auto it = std::find(names.begin(), names.end(), o.sort_class);
      if (it == names.end()) throw st::ConfigError("unknown class '" + o.sort_class + "'");
      sort_by = static_cast<std::size_t>(it - names.begin());
    }
    auto avg = st::class_average_export(r.sentence_reps, r.labels, ck.labels.size(), sort_by);
    for (const auto& w : avg.warnings) std::cerr << "warning: " << w << '\n';
    write_file(o.class_average, [&](std::ostream& os) { st::write_class_average_csv(os, avg); });
  }
  if (!o.histogram.empty())
    write_file(o.histogram, [&](std::ostream& os) { st::write_histogram_csv(os, dist); });
  std::cout << j.dump(2) << std::endl;
  return 0;
}

int run_gradcheck(std::size_t points, std::uint64_t seed) {
  bool ok = true;
  for (const auto& c : st::gradient_suite(points, seed)) {
    ok = ok && c.passed();
    std::cout << (c.passed() ? "ok   " : "FAIL ") << c.name << "  max " << c.max_error << "  min "
              << c.min_error << (c.expect_failure ? "  (expected to exceed threshold)" : "")
              << '\n';
  }
  return ok ? 0 : 3;
}

int exit_code(const st::Error& e) {
  switch (e.kind()) {
    case st::ErrorKind::config:
    case st::ErrorKind::usage: return 1;
    case st::ErrorKind::numeric: return 3;
    default: return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic Transform models"};
  app.require_subcommand(1);

  RunOptions train_opts;
  std::optional<std::uint64_t> seed;
  std::string train_out;
  auto* train = app.add_subcommand("train", "train one model, print JSON lines per epoch");
  add_run_options(train, train_opts);
  train->add_option("--seed", seed, "overrides the config seed");
  train->add_option("-o,--out", train_out, "directory for checkpoint/ and report.json");

  RunOptions multi_opts;
  std::string seeds, multi_out;
  std::optional<std::size_t> jobs;
  auto* multi = app.add_subcommand("multirun", "independent runs over seeds, mean and std");
  add_run_options(multi, multi_opts);
  multi->add_option("--seeds", seeds, "e.g. 1..10 or 1,4,7");
  multi->add_option("-j,--jobs", jobs, "runs in parallel");
  multi->add_option("-o,--out", multi_out, "JSON report file");

  std::string ckpt, eval_file, eval_dir;
  auto* eval = app.add_subcommand("eval", "accuracy of a checkpoint on a dataset file");
  eval->add_option("--checkpoint", ckpt, "checkpoint directory")->required();
  eval->add_option("--data", eval_file, "TSV file")->required();
  eval->add_option("--data-dir", eval_dir, "root for a relative --data");

  AnalyzeOptions an;
  auto* analyze = app.add_subcommand("analyze", "sparsity, CAM and class-average exports");
  analyze->add_option("--checkpoint", an.checkpoint, "checkpoint directory")->required();
  analyze->add_option("--data", an.file, "TSV file")->required();
  analyze->add_option("--data-dir", an.data_dir, "root for a relative --data");
  analyze->add_option("--class-average", an.class_average, "CSV output path");
  analyze->add_option("--sort-class", an.sort_class, "class whose means order the bases");
  analyze->add_option("--histogram", an.histogram, "CSV output path");
  analyze->add_option("--hi", an.hi, "upper magnitude threshold");
  analyze->add_option("--lo", an.lo, "lower magnitude threshold");

  std::size_t points = 100;
  std::uint64_t gc_seed = 2024;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--points", points, "random points per case");
  gradcheck->add_option("--seed", gc_seed, "sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*train) return run_train(train_opts, seed, train_out);
    if (*multi) return run_multirun(multi_opts, seeds, jobs, multi_out);
    if (*eval) return run_eval(ckpt, eval_file, eval_dir);
    if (*analyze) return run_analyze(an);
    if (*gradcheck) return run_gradcheck(points, gc_seed);
  } catch (const st::Error& e) {
    std::cerr << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
