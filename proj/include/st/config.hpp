#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "st/activations.hpp"
#include "st/data.hpp"
#include "st/error.hpp"
#include "st/objectives.hpp"
#include "st/st_core.hpp"

namespace st {

enum class FeatureMode { sparse, dense_rec };  // Y or X'

inline FeatureMode parse_feature(const std::string& s) {
  if (s == "Y" || s == "y" || s == "sparse") return FeatureMode::sparse;
  if (s == "Xp" || s == "X'" || s == "xp" || s == "dense") return FeatureMode::dense_rec;
  throw ConfigError("unknown feature mode '" + s + "' (expected Y or Xp)");
}

inline std::string to_string(FeatureMode f) { return f == FeatureMode::sparse ? "Y" : "Xp"; }

// "1..10", "3", or "1,4,7".
inline std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  try {
    if (auto dots = s.find(".."); dots != std::string::npos) {
      const auto lo = std::stoull(s.substr(0, dots));
      const auto hi = std::stoull(s.substr(dots + 2));
      if (hi < lo) throw ConfigError("empty seed range '" + s + "'");
      for (auto v = lo; v <= hi; ++v) out.push_back(v);
    } else {
      std::stringstream ss(s);
      std::string item;
      while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stoull(item));
    }
  } catch (const std::logic_error&) {
    throw ConfigError("bad seed list '" + s + "'");
  }
  if (out.empty()) throw ConfigError("no seeds given");
  return out;
}

struct TrainConfig {
  TaskKind task = TaskKind::single;
  std::string preset = "paper";

  std::size_t emb_dim = 300;
  std::size_t hidden = 300;
  std::size_t bases = 1000;
  std::size_t dense_dim = 300;
  std::size_t classifier_hidden = 0;  // 0: 64 for Y, 300 for Xp

  double beta = 1.0, gamma = 2.0;
  double kappa = 10.0, theta = 0.1;
  DerivMode deriv = DerivMode::exact;
  ClampMode clamp = ClampMode::per_prefix;
  GainMode gain = GainMode::scalar;
  bool bias = true;
  bool share_embedding = true;
  double emb_init = 0.0;         // 0: Glorot; otherwise Uniform(-emb_init, emb_init)
  double bases_init_norm = 0.0;  // 0: Glorot; otherwise columns rescaled to this norm

  double lambda_pl = 1.0, lambda_ml = 1.0, lambda_bl = 1.0, lambda_rl = 1.0;
  bool rl_enabled = false;
  bool rl_stop_grad = false;
  bool lstm_aux_loss = false;
  FeatureMode feature = FeatureMode::sparse;

  MarginMode w_mode = MarginMode::flat;
  double tau = 0.0;  // 0: (N - 1) / 2
  bool margin_cosine = true;

  double lr = 1e-4, adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  std::vector<std::uint64_t> seeds = parse_seeds("1..10");
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  double divergence_threshold = 1e6;

  std::size_t min_freq = 1;
  std::size_t max_len = 64;
  std::size_t probe_size = 200;
  std::string train_file, dev_file, test_file;

  std::map<std::string, std::string> raw;  // every key as last set, for snapshots

  void apply_preset(const std::string& name) {
    if (name == "desk") {
      lr = 3e-3;
      emb_dim = 64;
      hidden = 64;
      bases = 200;
      dense_dim = 64;
    } else if (name == "paper") {
      lr = 1e-4;
      emb_dim = 300;
      hidden = 300;
      bases = 1000;
      dense_dim = 300;
    } else {
      throw ConfigError("unknown preset '" + name + "'");
    }
    preset = name;
  }

  void set(const std::string& key, const std::string& value) {
    auto as_size = [&] {
      try {
        std::size_t pos = 0;
        const auto v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return static_cast<std::size_t>(v);
      } catch (const std::logic_error&) {
        throw ConfigError("'" + key + "' needs a non-negative integer, got '" + value + "'");
      }
    };
    auto as_double = [&] {
      try {
        std::size_t pos = 0;
        const auto v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
      } catch (const std::logic_error&) {
        throw ConfigError("'" + key + "' needs a number, got '" + value + "'");
      }
    };
    auto as_bool = [&] {
      if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
      if (value == "false" || value == "0" || value == "no" || value == "off") return false;
      throw ConfigError("'" + key + "' needs a boolean, got '" + value + "'");
    };

    if (key == "preset") apply_preset(value);
    else if (key == "task") task = parse_task(value);
    else if (key == "emb_dim") emb_dim = as_size();
    else if (key == "hidden") hidden = as_size();
    else if (key == "bases") bases = as_size();
    else if (key == "dense_dim") dense_dim = as_size();
    else if (key == "classifier_hidden") classifier_hidden = as_size();
    else if (key == "beta") beta = as_double();
    else if (key == "gamma") gamma = as_double();
    else if (key == "kappa") kappa = as_double();
    else if (key == "theta") theta = as_double();
    else if (key == "deriv_mode") deriv = parse_deriv_mode(value);
    else if (key == "clamp") {
      if (value == "per_prefix") clamp = ClampMode::per_prefix;
      else if (value == "final_only") clamp = ClampMode::final_only;
      else throw ConfigError("unknown clamp mode '" + value + "'");
    } else if (key == "gain") {
      if (value == "scalar") gain = GainMode::scalar;
      else if (value == "vector") gain = GainMode::vector;
      else throw ConfigError("unknown gain mode '" + value + "'");
    } else if (key == "bias") bias = as_bool();
    else if (key == "share_embedding") share_embedding = as_bool();
    else if (key == "emb_init") emb_init = as_double();
    else if (key == "bases_init_norm") bases_init_norm = as_double();
    else if (key == "lambda_pl") lambda_pl = as_double();
    else if (key == "lambda_ml") lambda_ml = as_double();
    else if (key == "lambda_bl") lambda_bl = as_double();
    else if (key == "lambda_rl") lambda_rl = as_double();
    else if (key == "rl_enabled") rl_enabled = as_bool();
    else if (key == "rl_stop_grad") rl_stop_grad = as_bool();
    else if (key == "lstm_aux_loss") lstm_aux_loss = as_bool();
    else if (key == "feature") feature = parse_feature(value);
    else if (key == "w_mode") w_mode = parse_margin_mode(value);
    else if (key == "tau") tau = as_double();
    else if (key == "margin_cosine") margin_cosine = as_bool();
    else if (key == "lr") lr = as_double();
    else if (key == "adam_beta1") adam_beta1 = as_double();
    else if (key == "adam_beta2") adam_beta2 = as_double();
    else if (key == "adam_eps") adam_eps = as_double();
    else if (key == "batch_size") batch_size = as_size();
    else if (key == "max_epochs") max_epochs = as_size();
    else if (key == "patience") patience = as_size();
    else if (key == "seeds") seeds = parse_seeds(value);
    else if (key == "seed") seed = as_size();
    else if (key == "jobs") jobs = as_size();
    else if (key == "divergence_threshold") divergence_threshold = as_double();
    else if (key == "min_freq") min_freq = as_size();
    else if (key == "max_len") max_len = as_size();
    else if (key == "probe_size") probe_size = as_size();
    else if (key == "train_file") train_file = value;
    else if (key == "dev_file") dev_file = value;
    else if (key == "test_file") test_file = value;
    else throw ConfigError("unknown config key '" + key + "'");
    raw[key] = value;
  }

  // `key = value` lines; '#' starts a comment.
  void load_text(std::istream& in, const std::string& origin = "config") {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  static TrainConfig from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    TrainConfig c;
    c.load_text(in, path.string());
    return c;
  }

  static TrainConfig from_string(const std::string& text) {
    std::istringstream in(text);
    TrainConfig c;
    c.load_text(in);
    return c;
  }

  void apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
    set(kv.substr(0, eq), kv.substr(eq + 1));
  }

  std::size_t head_hidden() const {
    if (classifier_hidden) return classifier_hidden;
    return feature == FeatureMode::sparse ? 64 : 300;
  }

  std::size_t feature_width() const {
    const std::size_t w = feature == FeatureMode::sparse ? bases : emb_dim;
    return task == TaskKind::pair ? 2 * w : w;
  }

  bool needs_sbt() const { return feature == FeatureMode::dense_rec || rl_enabled; }

  SparseActivationParams activation() const { return {beta, gamma}; }
  ScssOptions scss_options() const { return {LeakyParams{kappa, theta}, clamp}; }
  LossWeights loss_weights() const { return {lambda_pl, lambda_ml, lambda_bl, lambda_rl, rl_enabled}; }

  void validate() const {
    activation().validate();
    LeakyParams{kappa, theta}.validate();
    loss_weights().validate();
    if (!emb_dim || !hidden || !dense_dim) throw ConfigError("dimensions must be positive");
    if (bases < 2) throw ConfigError("need at least two semantic bases");
    if (feature == FeatureMode::dense_rec && !rl_enabled)
      throw ConfigError("feature mode Xp requires rl_enabled = true");
    if (lstm_aux_loss && !rl_enabled) throw ConfigError("lstm_aux_loss requires rl_enabled");
    if (emb_init < 0.0 || bases_init_norm < 0.0) throw ConfigError("init scales must be >= 0");
    if (tau < 0.0) throw ConfigError("tau must be >= 0 (0 selects (N-1)/2)");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
    if (jobs == 0) throw ConfigError("jobs must be >= 1");
  }

  // Full snapshot, every field explicit, reloadable with from_string.
  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    auto b = [](bool v) { return v ? "true" : "false"; };
    os << "task = " << (task == TaskKind::single ? "single" : "pair") << '\n'
       << "emb_dim = " << emb_dim << '\n'
       << "hidden = " << hidden << '\n'
       << "bases = " << bases << '\n'
       << "dense_dim = " << dense_dim << '\n'
       << "classifier_hidden = " << classifier_hidden << '\n'
       << "beta = " << beta << '\n'
       << "gamma = " << gamma << '\n'
       << "kappa = " << kappa << '\n'
       << "theta = " << theta << '\n'
       << "deriv_mode = " << (deriv == DerivMode::exact ? "exact" : "paper_eq5") << '\n'
       << "clamp = " << (clamp == ClampMode::per_prefix ? "per_prefix" : "final_only") << '\n'
       << "gain = " << (gain == GainMode::scalar ? "scalar" : "vector") << '\n'
       << "bias = " << b(bias) << '\n'
       << "share_embedding = " << b(share_embedding) << '\n'
       << "emb_init = " << emb_init << '\n'
       << "bases_init_norm = " << bases_init_norm << '\n'
       << "lambda_pl = " << lambda_pl << '\n'
       << "lambda_ml = " << lambda_ml << '\n'
       << "lambda_bl = " << lambda_bl << '\n'
       << "lambda_rl = " << lambda_rl << '\n'
       << "rl_enabled = " << b(rl_enabled) << '\n'
       << "rl_stop_grad = " << b(rl_stop_grad) << '\n'
       << "lstm_aux_loss = " << b(lstm_aux_loss) << '\n'
       << "feature = " << to_string(feature) << '\n'
       << "w_mode = " << (w_mode == MarginMode::flat ? "flat" : "ordinal") << '\n'
       << "tau = " << tau << '\n'
       << "margin_cosine = " << b(margin_cosine) << '\n'
       << "lr = " << lr << '\n'
       << "adam_beta1 = " << adam_beta1 << '\n'
       << "adam_beta2 = " << adam_beta2 << '\n'
       << "adam_eps = " << adam_eps << '\n'
       << "batch_size = " << batch_size << '\n'
       << "max_epochs = " << max_epochs << '\n'
       << "patience = " << patience << '\n'
       << "seed = " << seed << '\n'
       << "jobs = " << jobs << '\n'
       << "divergence_threshold = " << divergence_threshold << '\n'
       << "min_freq = " << min_freq << '\n'
       << "max_len = " << max_len << '\n'
       << "probe_size = " << probe_size << '\n';
    os << "seeds = ";
    for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
    os << '\n';
    if (!train_file.empty()) os << "train_file = " << train_file << '\n';
    if (!dev_file.empty()) os << "dev_file = " << dev_file << '\n';
    if (!test_file.empty()) os << "test_file = " << test_file << '\n';
    return os.str();
  }
};

// Relative dataset paths resolve against `root`, else $ST_DATA_DIR when it is
// set, else the working directory.
inline std::filesystem::path resolve_data_path(const std::string& p,
                                               const std::filesystem::path& root = {}) {
  std::filesystem::path path(p);
  if (path.is_absolute()) return path;
  if (!root.empty()) return root / path;
  if (const char* root = std::getenv("ST_DATA_DIR"); root && *root)
    return std::filesystem::path(root) / path;
  return path;
}

}  // namespace st
