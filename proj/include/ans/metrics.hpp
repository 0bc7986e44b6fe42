#pragma once

// (C+1)-way evaluation: known categories 0..C-1 plus the open class, which
// is indexed last in the confusion matrix.

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ans/dataset.hpp"
#include "ans/error.hpp"

namespace ans::metrics {

struct ConfusionMatrix {
  std::size_t num_known = 0;
  std::vector<std::vector<std::size_t>> counts;  // [gold][pred]

  std::size_t index_of(int label) const { return label == data::kOpenLabel ? num_known : static_cast<std::size_t>(label); }
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& r : counts)
      for (auto c : r) n += c;
    return n;
  }
  std::size_t trace() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) n += counts[i][i];
    return n;
  }
};

struct EvalReport {
  double accuracy = 0.0;
  double f1_macro = 0.0;
  double f1_open = 0.0;
  double f1_known = 0.0;
  std::vector<double> per_class_f1;  // known classes, then open
  ConfusionMatrix confusion;
};

inline ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> golds,
                                        std::size_t num_known) {
  if (preds.size() != golds.size())
    throw ValidationError("preds and golds differ in length (" + std::to_string(preds.size()) + " vs " +
                          std::to_string(golds.size()) + ")");
  ConfusionMatrix cm{num_known, std::vector<std::vector<std::size_t>>(num_known + 1,
                                                                      std::vector<std::size_t>(num_known + 1, 0))};
  auto check = [&](int y) {
    if (y < data::kOpenLabel || y >= static_cast<int>(num_known))
      throw ValidationError("label " + std::to_string(y) + " outside {-1} u [0, " + std::to_string(num_known) + ")");
  };
  for (std::size_t i = 0; i < preds.size(); ++i) {
    check(preds[i]);
    check(golds[i]);
    ++cm.counts[cm.index_of(golds[i])][cm.index_of(preds[i])];
  }
  return cm;
}

// One-vs-all F1 per class. Zero-division yields 0 for precision, recall and F1.
inline EvalReport evaluate(std::span<const int> preds, std::span<const int> golds, std::size_t num_known) {
  EvalReport rep;
  rep.confusion = confusion_matrix(preds, golds, num_known);
  const auto& cm = rep.confusion.counts;
  const std::size_t K = num_known + 1;
  const std::size_t n = preds.size();
  rep.accuracy = n == 0 ? 0.0 : static_cast<double>(rep.confusion.trace()) / static_cast<double>(n);

  rep.per_class_f1.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    std::size_t pred_k = 0, gold_k = 0;
    for (std::size_t j = 0; j < K; ++j) {
      pred_k += cm[j][k];
      gold_k += cm[k][j];
    }
    const double tp = static_cast<double>(cm[k][k]);
    const double p = pred_k ? tp / static_cast<double>(pred_k) : 0.0;
    const double r = gold_k ? tp / static_cast<double>(gold_k) : 0.0;
    rep.per_class_f1[k] = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  double known_sum = 0.0;
  for (std::size_t k = 0; k < num_known; ++k) known_sum += rep.per_class_f1[k];
  rep.f1_open = rep.per_class_f1[num_known];
  rep.f1_known = num_known ? known_sum / static_cast<double>(num_known) : 0.0;
  rep.f1_macro = (known_sum + rep.f1_open) / static_cast<double>(K);
  return rep;
}

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"accuracy", r.accuracy},         {"f1_macro", r.f1_macro},
          {"f1_open", r.f1_open},           {"f1_known", r.f1_known},
          {"per_class_f1", r.per_class_f1}, {"confusion", r.confusion.counts}};
}

// Flat CSV form used by ablation and radius sweeps.
struct CsvRow {
  std::string dataset;
  std::string mode;
  double radius = 0.0;
  double gamma = 0.0;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double f1_macro = 0.0;
  double f1_open = 0.0;
  double f1_known = 0.0;
};

inline constexpr const char* kCsvHeader = "dataset,mode,r,gamma,lambda,seed,accuracy,f1_macro,f1_open,f1_known";

inline CsvRow csv_row(const EvalReport& r, std::string dataset, std::string mode, double radius, double gamma,
                      double lambda, std::uint64_t seed) {
  return {std::move(dataset), std::move(mode), radius, gamma, lambda, seed,
          r.accuracy, r.f1_macro, r.f1_open, r.f1_known};
}

inline std::string to_csv(const std::vector<CsvRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << kCsvHeader << '\n';
  for (const auto& r : rows)
    os << r.dataset << ',' << r.mode << ',' << r.radius << ',' << r.gamma << ',' << r.lambda << ',' << r.seed << ','
       << r.accuracy << ',' << r.f1_macro << ',' << r.f1_open << ',' << r.f1_known << '\n';
  return os.str();
}

}  // namespace ans::metrics
