#pragma once

#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "st/config.hpp"
#include "st/data.hpp"
#include "st/layers.hpp"
#include "st/objectives.hpp"
#include "st/st_core.hpp"

namespace st {

// Every trainable piece of the classifier: embeddings, SFT, bases, optional
// SBT and LSTM, and the prediction head.
template <class T>
struct StModel {
  TrainConfig cfg;
  std::size_t num_classes = 0;

  EmbeddingTable<T> emb;
  std::optional<EmbeddingTable<T>> lstm_emb;
  SftParams<T> sft;
  SemanticBases<T> bases;
  std::optional<SbtParams<T>> sbt;
  std::optional<LstmCell<T>> lstm;
  MlpStack<T> head;
  std::optional<MlpStack<T>> aux_head;
  MarginWeightMatrix w;

  static StModel init(const TrainConfig& cfg, std::size_t vocab_size, std::size_t num_classes,
                      std::uint64_t seed) {
    cfg.validate();
    if (num_classes < 2) throw DataError("need at least two classes");
    std::mt19937_64 rng(seed);
    StModel m;
    m.cfg = cfg;
    m.num_classes = num_classes;
    m.emb = EmbeddingTable<T>::init(vocab_size, cfg.emb_dim, rng, cfg.emb_init);
    m.sft = SftParams<T>::init(cfg.emb_dim, cfg.hidden, cfg.dense_dim, cfg.bias, rng);
    m.sft.act = cfg.activation();
    m.sft.deriv = cfg.deriv;
    m.bases = SemanticBases<T>::init(cfg.dense_dim, cfg.bases, rng);
    if (cfg.bases_init_norm > 0.0) m.bases.rescale_columns(cfg.bases_init_norm);
    if (cfg.needs_sbt())
      m.sbt = SbtParams<T>::init(cfg.dense_dim, cfg.hidden, cfg.emb_dim, cfg.gain, cfg.bias, rng);
    if (cfg.rl_enabled) {
      if (!cfg.share_embedding) m.lstm_emb = EmbeddingTable<T>::init(vocab_size, cfg.emb_dim, rng, cfg.emb_init);
      // LSTM states are fed back through SFT, so they share the embedding width.
      m.lstm = LstmCell<T>::init(cfg.emb_dim, cfg.emb_dim, rng);
      if (cfg.lstm_aux_loss) {
        const std::size_t in = cfg.task == TaskKind::pair ? 2 * cfg.emb_dim : cfg.emb_dim;
        m.aux_head = MlpStack<T>::init({in, cfg.head_hidden(), num_classes}, Activation::tanh,
                                       Activation::identity, cfg.bias, rng);
      }
    }
    m.head = MlpStack<T>::init({cfg.feature_width(), cfg.head_hidden(), num_classes},
                               Activation::tanh, Activation::identity, cfg.bias, rng);
    const double tau = cfg.tau > 0.0 ? cfg.tau : default_tau(num_classes);
    m.w = build_w(num_classes, cfg.w_mode, tau);
    return m;
  }

  std::vector<std::pair<std::string, Tensor<T>*>> named_params() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    auto add_mlp = [&](const std::string& prefix, MlpStack<T>& s) {
      for (std::size_t i = 0; i < s.layers.size(); ++i) {
        out.emplace_back(prefix + "." + std::to_string(i) + ".weight", &s.layers[i].weight);
        out.emplace_back(prefix + "." + std::to_string(i) + ".bias", &s.layers[i].bias);
      }
    };
    out.emplace_back("embedding", &emb.matrix);
    if (lstm_emb) out.emplace_back("lstm_embedding", &lstm_emb->matrix);
    add_mlp("sft.f", sft.f);
    out.emplace_back("sft.w_f", &sft.w_f);
    out.emplace_back("bases", &bases.B);
    if (sbt) {
      out.emplace_back("sbt.w_b", &sbt->w_b);
      add_mlp("sbt.F", sbt->F);
    }
    if (lstm) {
      out.emplace_back("lstm.w_input", &lstm->w_input);
      out.emplace_back("lstm.w_hidden", &lstm->w_hidden);
      out.emplace_back("lstm.bias", &lstm->bias);
    }
    add_mlp("head", head);
    if (aux_head) add_mlp("aux_head", *aux_head);
    return out;
  }

  // Tables whose row 0 is PAD and must never move.
  bool is_embedding(const std::string& name) const {
    return name == "embedding" || name == "lstm_embedding";
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& [name, t] : named_params()) n += t->size();
    return n;
  }
};

template <class T>
struct BatchForward {
  Encoded<T> enc;
  ad::Var<T> sparse_features;  // per example; two sentence codes side by side for pairs
  ad::Var<T> features;         // classifier input
  ad::Var<T> logits;
  std::optional<ad::Var<T>> states;         // LSTM prefix states
  std::optional<ad::Var<T>> states_rec;     // SBT(s_i)
  LossParts<T> parts;
  std::optional<ad::Var<T>> aux;
  ad::Var<T> total;
};

namespace detail {

template <class T>
ad::Var<T> pair_side_by_side(ad::Var<T> rows, std::size_t batch) {
  std::vector<long> first(batch), second(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    first[i] = static_cast<long>(i);
    second[i] = static_cast<long>(batch + i);
  }
  return ad::concat_cols(ad::gather_rows(rows, first), ad::gather_rows(rows, second));
}

}  // namespace detail

// Forward pass over one batch: encode, classify, and (when `with_losses`)
// assemble every loss term.
template <class T>
BatchForward<T> forward(ad::Graph<T>& g, StModel<T>& m, const SentenceBatch& batch,
                        bool with_losses = true) {
  const auto& cfg = m.cfg;
  const TokenBlock block = batch.tokens();
  const std::size_t n = batch.size();
  const bool pair = cfg.task == TaskKind::pair;
  if (pair != batch.ids_b.has_value())
    throw DataError(pair ? "pair task received single-sentence data"
                         : "single-sentence task received pair data");

  BatchForward<T> out;
  out.enc = encode_block(g, block, m.emb, m.sft, m.bases, cfg.scss_options());
  auto side = [&](ad::Var<T> rows) { return pair ? detail::pair_side_by_side(rows, n) : rows; };
  out.sparse_features = side(out.enc.sentence);
  if (cfg.feature == FeatureMode::sparse) {
    out.features = out.sparse_features;
  } else {
    out.features = side(sbt(out.enc.sentence, *m.sbt, m.bases));
  }
  out.logits = classify(out.features, m.head);

  if (m.lstm) {
    auto lstm_in = m.lstm_emb ? embed(g, *m.lstm_emb, block.ids) : out.enc.embedded;
    out.states = lstm_prefix_states(lstm_in, block.offsets, *m.lstm);
    out.states_rec = sbt(out.enc.prefixes, *m.sbt, m.bases);
  }
  if (!with_losses) return out;

  out.parts.pl = prediction_loss(out.logits, batch.labels);
  if (cfg.lambda_ml > 0.0)
    out.parts.ml = margin_loss(out.sparse_features, batch.labels, m.w,
                               MarginOptions{cfg.margin_cosine, 1e-12});
  if (cfg.lambda_bl > 0.0) out.parts.bl = base_regularization(g, m.bases);
  if (cfg.rl_enabled) {
    ReconstructionTerms<T> t;
    t.words = out.enc.embedded;
    t.words_rec = sbt(out.enc.words, *m.sbt, m.bases);
    t.prefixes = cfg.rl_stop_grad ? ad::detach(out.enc.prefixes) : out.enc.prefixes;
    t.prefixes_rec = sft(*out.states, m.sft, m.bases);
    t.states = *out.states;
    t.states_rec = *out.states_rec;
    out.parts.rl = reconstruction_loss(t);
  }
  out.total = total_loss(out.parts, cfg.loss_weights());
  if (m.aux_head) {
    auto last = ad::gather_rows(*out.states, block.last_rows());
    out.aux = prediction_loss(classify(side(last), *m.aux_head), batch.labels);
    out.total = out.total + *out.aux;
  }
  return out;
}

template <class T>
std::vector<int> argmax_rows(ad::Var<T> logits) {
  std::vector<int> pred(logits.rows());
  const auto& v = logits.value();
  const std::size_t c = logits.cols();
  for (std::size_t i = 0; i < pred.size(); ++i)
    pred[i] = static_cast<int>(std::max_element(v.begin() + i * c, v.begin() + (i + 1) * c) -
                               (v.begin() + i * c));
  return pred;
}

}  // namespace st
