#pragma once

// End-to-end runs shared by the CLI and the acceptance suite: the standard
// synthetic fixture, the four-mode ablation ladder and the radius sweep.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ans/ans_sampler.hpp"
#include "ans/dataset.hpp"
#include "ans/known_classifier.hpp"
#include "ans/metrics.hpp"
#include "ans/ovr.hpp"
#include "ans/random.hpp"

namespace ans::experiment {

struct ExperimentConfig {
  sampler::AnsConfig ans;
  known::TrainConfig known;
  ovr::OvrConfig ovr;
  std::uint64_t seed = 7;
  std::string dataset = "synthetic";

  // Propagates the run seed into the stage configs.
  ExperimentConfig& with_seed(std::uint64_t s) {
    seed = s;
    known.seed = mix_seed(s, 11);
    ovr.seed = mix_seed(s, 13);
    return *this;
  }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"ans", sampler::to_json(c.ans)},
          {"known", known::to_json(c.known)},
          {"ovr", ovr::to_json(c.ovr)},
          {"seed", c.seed},
          {"dataset", c.dataset}};
}

struct Splits {
  data::EmbeddingDataset train, val, test;
};

inline constexpr std::size_t kFixtureDim = 16;
inline constexpr std::size_t kFixtureKnown = 5;
inline constexpr std::size_t kFixtureOpen = 3;
inline constexpr std::size_t kFixturePerCluster = 200;
inline constexpr double kFixtureMeanSpread = 3.0;

// d = 16, five known and three open unit-variance Gaussian clusters of 200
// samples each, with means drawn from N(0, 3^2 I).
inline data::SyntheticSpec standard_fixture_spec(std::uint64_t seed) {
  data::SyntheticSpec spec;
  spec.seed = seed;
  Rng rng = make_rng(mix_seed(seed, 0xF1));
  for (std::size_t c = 0; c < kFixtureKnown + kFixtureOpen; ++c) {
    data::ClusterSpec cl;
    cl.known = c < kFixtureKnown;
    cl.count = kFixturePerCluster;
    cl.cov_diag.assign(kFixtureDim, 1.0);
    for (std::size_t j = 0; j < kFixtureDim; ++j) cl.mean.push_back(kFixtureMeanSpread * standard_normal(rng));
    cl.name = (cl.known ? "known_" : "open_") + std::to_string(c);
    spec.clusters.push_back(std::move(cl));
  }
  return spec;
}

inline Splits standard_fixture(std::uint64_t seed) {
  auto s = data::generate_synthetic(standard_fixture_spec(seed));
  return {std::move(s.train), std::move(s.val), std::move(s.test)};
}

// Mean over known categories of sqrt(2 tr Sigma_m).
inline double mean_radius_bound(const data::EmbeddingDataset& train) {
  double sum = 0.0;
  for (std::size_t c = 0; c < train.num_classes(); ++c)
    sum += sampler::estimate_radius_bound(data::per_category_stats(train, static_cast<int>(c)).cov_diag);
  return sum / static_cast<double>(train.num_classes());
}

inline metrics::EvalReport evaluate_model(const ovr::OpenWorldModel& model, const data::EmbeddingDataset& test) {
  const auto preds = ovr::infer(model, test.all_rows());
  return metrics::evaluate(preds, test.labels, model.num_classes());
}

inline metrics::CsvRow train_and_score(const Splits& s, const known::KnownClassifier& known,
                                       const sampler::AnsConfig& ans, const ExperimentConfig& cfg) {
  auto [model, trace] = ovr::train_ovr(s.train, s.val, known, ans, cfg.ovr);
  const auto rep = evaluate_model(model, s.test);
  return metrics::csv_row(rep, cfg.dataset, sampler::to_string(ans.mode), ans.radius, ans.gamma,
                          ans.mode == sampler::Mode::none ? 0.0 : ans.lambda, cfg.seed);
}

// One row per mode in ladder order none, noise, project, ascend. The known
// classifier is trained once and shared.
inline std::vector<metrics::CsvRow> run_ablation(const Splits& s, const ExperimentConfig& cfg) {
  const auto known = known::train_known(s.train, s.val, cfg.known);
  std::vector<metrics::CsvRow> rows;
  for (auto mode : {sampler::Mode::none, sampler::Mode::noise, sampler::Mode::project, sampler::Mode::ascend}) {
    auto ans = cfg.ans;
    ans.mode = mode;
    rows.push_back(train_and_score(s, known, ans, cfg));
  }
  return rows;
}

// A mode=none baseline row followed by one row per radius (step size r / 4).
inline std::vector<metrics::CsvRow> run_radius_sweep(const Splits& s, const ExperimentConfig& cfg,
                                                     const std::vector<double>& radii) {
  const auto known = known::train_known(s.train, s.val, cfg.known);
  std::vector<metrics::CsvRow> rows;
  auto base = cfg.ans;
  base.mode = sampler::Mode::none;
  rows.push_back(train_and_score(s, known, base, cfg));
  for (double r : radii) {
    auto ans = cfg.ans;
    if (ans.mode == sampler::Mode::none) ans.mode = sampler::Mode::ascend;
    ans.radius = r;
    ans.step_size = r / 4.0;
    rows.push_back(train_and_score(s, known, ans, cfg));
  }
  return rows;
}

}  // namespace ans::experiment
