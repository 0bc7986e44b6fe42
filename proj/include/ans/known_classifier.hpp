#pragma once

// C-way known-category classifier on frozen features, trained with
// mean cross-entropy, Adam, plateau learning-rate decay and early stopping
// on validation accuracy.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "ans/dataset.hpp"
#include "ans/error.hpp"
#include "ans/matrix.hpp"
#include "ans/nn.hpp"
#include "ans/random.hpp"

namespace ans::known {

struct LossAndGrad {
  double loss = 0.0;
  Matrix grad_logits;
};

// Row-wise softmax, shifted by the row max.
inline Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    auto out = p.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) z += (out[c] = std::exp(in[c] - mx));
    for (auto& v : out) v /= z;
  }
  return p;
}

// Mean over the batch of -log softmax(logits)[label]; gradient is
// (softmax - onehot) / N.
inline LossAndGrad cross_entropy_loss(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows() != labels.size()) throw ShapeError("cross_entropy: logits rows != labels");
  const auto C = static_cast<int>(logits.cols());
  for (int y : labels)
    if (y < 0 || y >= C) throw ValidationError("cross_entropy: label " + std::to_string(y) + " out of range");
  if (!all_finite(logits)) throw NumericError("cross_entropy: non-finite logits");

  const double n = static_cast<double>(labels.size());
  LossAndGrad out{0.0, Matrix(logits.rows(), logits.cols())};
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (double v : in) z += std::exp(v - mx);
    const double log_z = mx + std::log(z);
    out.loss += log_z - in[labels[r]];
    for (std::size_t c = 0; c < in.size(); ++c) out.grad_logits(r, c) = std::exp(in[c] - log_z) / n;
    out.grad_logits(r, labels[r]) -= 1.0 / n;
  }
  out.loss /= n;
  return out;
}

inline std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[best]) best = c;  // ties keep the lower index
    out[r] = static_cast<int>(best);
  }
  return out;
}

struct TrainConfig {
  std::size_t hidden_width = 768;
  double learning_rate = 1e-4;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::size_t decay_patience = 5;
  double decay_factor = 0.5;
  std::size_t batch_size = 64;
  double dropout_rate = 0.3;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double learning_rate = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
};

struct KnownClassifier {
  nn::MlpModel model;
  std::vector<std::string> vocab;
  TrainConfig train_config;
  TrainHistory history;

  std::size_t num_classes() const { return vocab.size(); }
};

struct Prediction {
  std::vector<int> labels;
  Matrix probabilities;
};

inline Prediction predict_probabilities(const nn::MlpModel& model, const Matrix& batch) {
  auto fwd = nn::mlp_forward(model, batch, false);
  Prediction p;
  p.probabilities = softmax(fwd.logits);
  p.labels = argmax_rows(p.probabilities);
  return p;
}

inline Prediction predict_known(const KnownClassifier& clf, const Matrix& batch) {
  return predict_probabilities(clf.model, batch);
}

inline double accuracy(const nn::MlpModel& model, const Matrix& x, std::span<const int> y) {
  if (y.empty()) return 0.0;
  const auto pred = predict_probabilities(model, x).labels;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hit += pred[i] == y[i];
  return static_cast<double>(hit) / static_cast<double>(y.size());
}

namespace detail {

// Appends extra (features, label) rows to a minibatch before the update.
using BatchAugmenter =
    std::function<void(const nn::MlpModel& model, Matrix& x, std::vector<int>& y, std::uint64_t step_seed)>;

struct TrainedSoftmax {
  nn::MlpModel model;
  TrainHistory history;
};

// Shared loop for the known classifier and the MSP baselines. Returns the
// parameters from the epoch with the best validation accuracy.
inline TrainedSoftmax train_softmax(const data::EmbeddingDataset& train, const data::EmbeddingDataset& val,
                                    std::size_t num_outputs, const TrainConfig& cfg,
                                    const BatchAugmenter& augment = {}) {
  if (cfg.batch_size == 0) throw ValidationError("batch_size must be positive");
  if (!(cfg.learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  nn::MlpSpec spec{{train.dim(), cfg.hidden_width, num_outputs}, nn::Activation::relu, cfg.dropout_rate};
  TrainedSoftmax out{nn::MlpModel::init(spec, mix_seed(cfg.seed, 0)), {}};
  auto adam = nn::AdamState::for_params(out.model.params);

  const Matrix train_x = train.all_rows();
  const bool have_val = val.size() > 0;
  const Matrix val_x = have_val ? val.all_rows() : train_x;
  const std::span<const int> val_y = have_val ? std::span<const int>(val.labels) : std::span<const int>(train.labels);

  auto order = iota_indices(train.size());
  double lr = cfg.learning_rate;
  double best = -1.0;
  nn::MlpParams best_params = out.model.params;
  std::size_t since_best = 0, since_decay = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng rng = make_rng(mix_seed(cfg.seed, 1, epoch));
    shuffle_in_place(std::span<std::size_t>(order), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      Matrix x = gather_rows(train.features, idx);
      std::vector<int> y;
      y.reserve(idx.size());
      for (auto i : idx) y.push_back(train.labels[i]);
      const std::uint64_t step_seed = mix_seed(cfg.seed, 2, epoch * 1000003ULL + batches);
      if (augment) augment(out.model, x, y, mix_seed(step_seed, 1));

      auto fwd = nn::mlp_forward(out.model, x, true, step_seed);
      auto ce = cross_entropy_loss(fwd.logits, y);
      auto grads = nn::mlp_backward(out.model, fwd.cache, ce.grad_logits);
      nn::adam_step(adam, out.model.params, grads.param_grads, lr);
      loss_sum += ce.loss;
      ++batches;
    }

    const double val_acc = accuracy(out.model, val_x, val_y);
    out.history.epochs.push_back({epoch, loss_sum / static_cast<double>(batches), val_acc, lr});
    if (val_acc > best) {
      best = val_acc;
      best_params = out.model.params;
      out.history.best_epoch = epoch;
      since_best = since_decay = 0;
    } else {
      ++since_best;
      if (++since_decay >= cfg.decay_patience) {
        lr *= cfg.decay_factor;
        since_decay = 0;
      }
      if (since_best >= cfg.patience) break;
    }
  }
  out.model.params = std::move(best_params);
  out.history.best_val_accuracy = best;
  return out;
}

inline void check_known_only(const data::EmbeddingDataset& ds, const char* what) {
  for (int y : ds.labels)
    if (y < 0) throw ValidationError(std::string(what) + " split must not contain open samples");
}

}  // namespace detail

inline KnownClassifier train_known(const data::EmbeddingDataset& train, const data::EmbeddingDataset& val,
                                   const TrainConfig& cfg) {
  train.validate();
  detail::check_known_only(train, "train");
  detail::check_known_only(val, "val");
  const std::size_t C = train.num_classes();
  if (C < 2) throw ValidationError("known classifier needs at least 2 categories");
  if (val.size() > 0 && (val.vocab.size() != C || val.dim() != train.dim()))
    throw ValidationError("val split does not match train vocabulary/dimension");
  for (std::size_t c = 0; c < C; ++c)
    if (train.indices_of(static_cast<int>(c)).empty())
      throw ValidationError("category '" + train.vocab[c] + "' has no training samples");

  auto trained = detail::train_softmax(train, val, C, cfg);
  return {std::move(trained.model), train.vocab, cfg, std::move(trained.history)};
}

// ---- JSON ----------------------------------------------------------------

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"hidden_width", c.hidden_width}, {"learning_rate", c.learning_rate}, {"max_epochs", c.max_epochs},
          {"patience", c.patience},         {"decay_patience", c.decay_patience}, {"decay_factor", c.decay_factor},
          {"batch_size", c.batch_size},     {"dropout_rate", c.dropout_rate},   {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  try {
    c.hidden_width = j.value("hidden_width", c.hidden_width);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.decay_patience = j.value("decay_patience", c.decay_patience);
    c.decay_factor = j.value("decay_factor", c.decay_factor);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed known-classifier config: ") + e.what());
  }
  return c;
}

inline nlohmann::json to_json(const KnownClassifier& k) {
  auto j = nn::to_json(k.model);
  j["vocab"] = k.vocab;
  j["train_config"] = to_json(k.train_config);
  return j;
}

inline KnownClassifier known_from_json(const nlohmann::json& j) {
  KnownClassifier k;
  k.model = nn::model_from_json(j);
  try {
    k.vocab = j.at("vocab").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("known classifier json lacks vocab: ") + e.what());
  }
  if (k.vocab.size() != k.model.spec.output_dim())
    throw ValidationError("known classifier output width does not match vocabulary size");
  if (j.contains("train_config")) k.train_config = train_config_from_json(j.at("train_config"));
  return k;
}

}  // namespace ans::known
