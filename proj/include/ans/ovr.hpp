#pragma once

// One-vs-rest heads trained with synthesized negatives, the assembled
// open-world model, two-stage inference, and the MSP baselines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ans/ans_sampler.hpp"
#include "ans/dataset.hpp"
#include "ans/error.hpp"
#include "ans/known_classifier.hpp"
#include "ans/matrix.hpp"
#include "ans/nn.hpp"
#include "ans/parallel.hpp"
#include "ans/random.hpp"

namespace ans::ovr {

using sampler::AnsConfig;
using sampler::Mode;

struct OvrConfig {
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::size_t epochs = 0;  // 0 selects min(C, 20)
  std::vector<std::size_t> hidden = {256, 64};
  double dropout_rate = 0.3;
  std::uint64_t seed = 0;

  std::size_t resolved_epochs(std::size_t num_classes) const {
    return epochs > 0 ? epochs : std::min<std::size_t>(num_classes, 20);
  }
};

struct TraceRow {
  std::size_t epoch = 0;
  double rest_loss = 0.0;
  double syn_loss = 0.0;
  double open_loss = 0.0;
  double val_metric = 0.0;  // binary accuracy of the head on val
};

struct HeadTrace {
  double initial_rest_loss = 0.0;
  std::vector<TraceRow> rows;
};

struct TrainTrace {
  std::vector<HeadTrace> heads;
};

struct OpenWorldModel {
  known::KnownClassifier known;
  std::vector<nn::MlpModel> heads;
  AnsConfig ans_config;
  std::vector<std::string> vocab;

  std::size_t num_classes() const { return vocab.size(); }
  std::size_t dim() const { return known.model.spec.input_dim(); }

  void validate() const {
    if (heads.size() != vocab.size() || known.vocab.size() != vocab.size())
      throw ValidationError("open-world model: head count, known classifier width and vocab must agree");
    for (const auto& h : heads)
      if (h.spec.input_dim() != dim() || h.spec.output_dim() != 1)
        throw ValidationError("open-world model: heads must map the shared input dim to one logit");
  }
};

struct HeadResult {
  nn::MlpModel head;
  HeadTrace trace;
};

inline double head_val_accuracy(const nn::MlpModel& head, const data::EmbeddingDataset& val, int category) {
  if (val.size() == 0) return 0.0;
  const auto fwd = nn::mlp_forward(head, val.all_rows(), false);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < val.size(); ++i) hit += (fwd.logits(i, 0) >= 0.0) == (val.labels[i] == category);
  return static_cast<double>(hit) / static_cast<double>(val.size());
}

// Trains the binary head for one category. Each step draws a balanced pair
// of batches (known negatives, positives), synthesizes one negative per
// positive unless mode is none, and descends rest + lambda * syn. An epoch
// is one pass over the known negatives; positives are cycled.
inline HeadResult train_head(const data::EmbeddingDataset& train, const data::EmbeddingDataset& val, int category,
                             const AnsConfig& ans, const OvrConfig& cfg) {
  ans.validate();
  if (cfg.batch_size == 0) throw ValidationError("batch_size must be positive");
  const auto pos_idx = train.indices_of(category);
  if (pos_idx.size() < 2)
    throw ValidationError("head " + std::to_string(category) + ": category needs at least 2 training samples");
  std::vector<std::size_t> neg_idx;
  for (std::size_t i = 0; i < train.size(); ++i)
    if (train.labels[i] != category) neg_idx.push_back(i);
  if (neg_idx.empty()) throw ValidationError("head " + std::to_string(category) + ": no known negatives");

  const auto cov = data::per_category_stats(train, category).cov_diag;
  const std::uint64_t head_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(category));

  std::vector<std::size_t> dims{train.dim()};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(1);
  HeadResult out{nn::MlpModel::init({dims, nn::Activation::relu, cfg.dropout_rate}, mix_seed(head_seed, 0)), {}};
  auto adam = nn::AdamState::for_params(out.head.params);

  const Matrix pos_all = train.rows(pos_idx);
  const Matrix neg_all = train.rows(neg_idx);
  out.trace.initial_rest_loss = sampler::rest_loss(out.head, pos_all, neg_all).loss;

  const bool synthesize = ans.mode != Mode::none;
  const std::size_t epochs = cfg.resolved_epochs(train.num_classes());
  auto pos_order = iota_indices(pos_idx.size());
  auto neg_order = iota_indices(neg_idx.size());
  std::size_t pos_cursor = pos_order.size();  // forces a shuffle on first use
  std::uint64_t pos_pass = 0;
  Rng pos_rng = make_rng(mix_seed(head_seed, 1));

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    Rng rng = make_rng(mix_seed(head_seed, 2, epoch));
    shuffle_in_place(std::span<std::size_t>(neg_order), rng);
    double syn_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < neg_order.size(); start += cfg.batch_size, ++steps) {
      const std::size_t b = std::min(cfg.batch_size, neg_order.size() - start);
      std::vector<std::size_t> nb, pb;
      for (std::size_t i = 0; i < b; ++i) nb.push_back(neg_idx[neg_order[start + i]]);
      while (pb.size() < b) {
        if (pos_cursor == pos_order.size()) {
          shuffle_in_place(std::span<std::size_t>(pos_order), pos_rng);
          pos_cursor = 0;
          ++pos_pass;
        }
        pb.push_back(pos_idx[pos_order[pos_cursor++]]);
      }
      const Matrix xp = train.rows(pb);
      const Matrix xn = train.rows(nb);
      const std::uint64_t step_seed = mix_seed(head_seed, 3, epoch * 1000003ULL + steps);

      auto rest = sampler::rest_loss(out.head, xp, xn, {true, mix_seed(step_seed, 0)});
      nn::MlpParams grads = std::move(rest.param_grads);
      if (synthesize) {
        auto negs = sampler::generate_negatives(&out.head, xp, cov, ans, mix_seed(step_seed, 1));
        auto syn = sampler::syn_loss(out.head, negs.negatives, {true, mix_seed(step_seed, 2)});
        grads.add_scaled(syn.param_grads, ans.lambda);
        syn_sum += syn.loss;
      }
      nn::adam_step(adam, out.head.params, grads, cfg.learning_rate);
    }
    TraceRow row;
    row.epoch = epoch;
    row.rest_loss = sampler::rest_loss(out.head, pos_all, neg_all).loss;
    row.syn_loss = synthesize ? syn_sum / static_cast<double>(steps) : 0.0;
    row.open_loss = synthesize ? sampler::open_loss(row.rest_loss, row.syn_loss, ans.lambda) : row.rest_loss;
    row.val_metric = head_val_accuracy(out.head, val, category);
    out.trace.rows.push_back(row);
  }
  return out;
}

// Trains all C heads independently (in parallel, bounded by ANS_THREADS) and
// assembles the open-world model around the given known classifier.
inline std::pair<OpenWorldModel, TrainTrace> train_ovr(const data::EmbeddingDataset& train,
                                                       const data::EmbeddingDataset& val,
                                                       const known::KnownClassifier& known, const AnsConfig& ans,
                                                       const OvrConfig& cfg) {
  train.validate();
  known::detail::check_known_only(train, "train");
  known::detail::check_known_only(val, "val");
  if (known.vocab != train.vocab) throw ValidationError("known classifier vocabulary differs from training data");
  if (known.model.spec.input_dim() != train.dim())
    throw ValidationError("known classifier input dim differs from training data");
  const std::size_t C = train.num_classes();
  if (C < 2) throw ValidationError("one-vs-rest training needs at least 2 categories");

  std::vector<HeadResult> results(C);
  parallel_for(C, [&](std::size_t m) { results[m] = train_head(train, val, static_cast<int>(m), ans, cfg); });

  OpenWorldModel model{known, {}, ans, train.vocab};
  TrainTrace trace;
  for (auto& r : results) {
    model.heads.push_back(std::move(r.head));
    trace.heads.push_back(std::move(r.trace));
  }
  return {std::move(model), std::move(trace)};
}

// N x C matrix of head logits.
inline Matrix head_logits(const OpenWorldModel& model, const Matrix& batch) {
  if (batch.cols() != model.dim()) throw ShapeError("batch dimension does not match model");
  Matrix out(batch.rows(), model.heads.size());
  for (std::size_t m = 0; m < model.heads.size(); ++m) {
    const auto fwd = nn::mlp_forward(model.heads[m], batch, false);
    for (std::size_t i = 0; i < batch.rows(); ++i) out(i, m) = fwd.logits(i, 0);
  }
  return out;
}

// Open (-1) iff every head logit is strictly negative; otherwise the full
// C-way known classifier decides.
inline std::vector<int> decide(const Matrix& logits, std::span<const int> known_argmax) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const bool open = std::all_of(row.begin(), row.end(), [](double g) { return g < 0.0; });
    out[i] = open ? data::kOpenLabel : known_argmax[i];
  }
  return out;
}

inline std::vector<int> infer(const OpenWorldModel& model, const Matrix& batch) {
  const Matrix logits = head_logits(model, batch);
  const auto known = known::predict_known(model.known, batch);
  return decide(logits, known.labels);
}

// ---- MSP baselines ----------------------------------------------------------

struct MspModel {
  nn::MlpModel model;
  std::vector<std::string> vocab;
  bool with_negatives = false;
};

inline constexpr double kMspThreshold = 0.5;

// Open when the top probability is below 0.5, or when it lands on the extra
// negative class (index C) of a with-negatives model.
inline std::vector<int> msp_decide(const Matrix& probs, bool with_negatives) {
  const auto arg = known::argmax_rows(probs);
  const auto extra = static_cast<int>(probs.cols()) - 1;
  std::vector<int> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const bool open = probs(i, arg[i]) < kMspThreshold || (with_negatives && arg[i] == extra);
    out[i] = open ? data::kOpenLabel : arg[i];
  }
  return out;
}

// Without negatives this is the plain C-way classifier. With negatives a
// (C+1)-th class is trained on negatives synthesized around every batch
// sample from one generator pooled over all known categories; gradient
// ascent is not used.
inline MspModel train_msp(const data::EmbeddingDataset& train, const data::EmbeddingDataset& val,
                          const std::vector<std::string>& known_vocab, bool with_negatives,
                          const known::TrainConfig& cfg, AnsConfig ans = {}) {
  train.validate();
  known::detail::check_known_only(train, "train");
  known::detail::check_known_only(val, "val");
  if (known_vocab != train.vocab) throw ValidationError("MSP vocabulary differs from training data");
  const std::size_t C = train.num_classes();
  if (C < 2) throw ValidationError("MSP needs at least 2 categories");
  for (std::size_t c = 0; c < C; ++c)
    if (train.indices_of(static_cast<int>(c)).empty())
      throw ValidationError("category '" + train.vocab[c] + "' has no training samples");

  known::detail::BatchAugmenter augment;
  if (with_negatives) {
    if (ans.mode == Mode::ascend || ans.mode == Mode::none) ans.mode = Mode::project;
    // pooled within-category variance, weighted by degrees of freedom
    std::vector<double> pooled(train.dim(), 0.0);
    double dof = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const auto st = data::per_category_stats(train, static_cast<int>(c));
      const double w = static_cast<double>(st.count) - 1.0;
      for (std::size_t j = 0; j < pooled.size(); ++j) pooled[j] += w * st.cov_diag[j];
      dof += w;
    }
    if (dof <= 0.0) throw ValidationError("MSP negatives need a category with at least 2 samples");
    for (auto& v : pooled) v /= dof;
    augment = [pooled, ans, C](const nn::MlpModel&, Matrix& x, std::vector<int>& y, std::uint64_t seed) {
      const auto negs = sampler::generate_negatives(nullptr, x, pooled, ans, seed);
      x = vstack(x, negs.negatives);
      y.insert(y.end(), negs.negatives.rows(), static_cast<int>(C));
    };
  }
  auto trained = known::detail::train_softmax(train, val, with_negatives ? C + 1 : C, cfg, augment);
  return {std::move(trained.model), known_vocab, with_negatives};
}

inline std::vector<int> predict_msp(const MspModel& model, const Matrix& batch) {
  const auto p = known::predict_probabilities(model.model, batch);
  return msp_decide(p.probabilities, model.with_negatives);
}

// ---- JSON ----------------------------------------------------------------

inline nlohmann::json to_json(const OvrConfig& c) {
  return {{"batch_size", c.batch_size}, {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
          {"hidden", c.hidden},         {"dropout_rate", c.dropout_rate},   {"seed", c.seed}};
}

inline OvrConfig ovr_config_from_json(const nlohmann::json& j, OvrConfig c = {}) {
  try {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.hidden = j.value("hidden", c.hidden);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed ovr config: ") + e.what());
  }
  return c;
}

inline nlohmann::json to_json(const OpenWorldModel& m) {
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : m.heads) heads.push_back(nn::to_json(h));
  return {{"known", known::to_json(m.known)},
          {"heads", std::move(heads)},
          {"ans_config", sampler::to_json(m.ans_config)},
          {"vocab", m.vocab}};
}

inline OpenWorldModel open_world_from_json(const nlohmann::json& j) {
  OpenWorldModel m;
  try {
    m.known = known::known_from_json(j.at("known"));
    for (const auto& h : j.at("heads")) m.heads.push_back(nn::model_from_json(h));
    m.ans_config = sampler::ans_config_from_json(j.at("ans_config"));
    m.vocab = j.at("vocab").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed open-world model: ") + e.what());
  }
  m.validate();
  return m;
}

inline nlohmann::json to_json(const TrainTrace& t) {
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : t.heads) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : h.rows)
      rows.push_back({{"epoch", r.epoch},
                      {"rest_loss", r.rest_loss},
                      {"syn_loss", r.syn_loss},
                      {"open_loss", r.open_loss},
                      {"val_metric", r.val_metric}});
    heads.push_back({{"initial_rest_loss", h.initial_rest_loss}, {"epochs", std::move(rows)}});
  }
  return {{"heads", std::move(heads)}};
}

inline nlohmann::json to_json(const MspModel& m) {
  return {{"msp", nn::to_json(m.model)}, {"vocab", m.vocab}, {"with_negatives", m.with_negatives}};
}

inline MspModel msp_from_json(const nlohmann::json& j) {
  MspModel m;
  try {
    m.model = nn::model_from_json(j.at("msp"));
    m.vocab = j.at("vocab").get<std::vector<std::string>>();
    m.with_negatives = j.at("with_negatives").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed MSP model: ") + e.what());
  }
  if (m.model.spec.output_dim() != m.vocab.size() + (m.with_negatives ? 1 : 0))
    throw ValidationError("MSP output width does not match vocabulary");
  return m;
}

}  // namespace ans::ovr
