#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

#include <unistd.h>

#include "ans/ans.hpp"

namespace testing {

inline ans::Matrix mat(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return ans::Matrix(rows, cols, std::move(v));
}

// Builds a model from explicit weight matrices (out x in, row-major).
inline ans::nn::MlpModel model_from(std::vector<ans::Matrix> weights, std::vector<std::vector<double>> biases,
                                    double dropout = 0.0) {
  ans::nn::MlpSpec spec;
  spec.layer_dims.push_back(weights.front().cols());
  for (const auto& w : weights) spec.layer_dims.push_back(w.rows());
  spec.dropout_rate = dropout;
  ans::nn::MlpModel m = ans::nn::MlpModel::zeros(spec);
  for (std::size_t l = 0; l < weights.size(); ++l) {
    m.params.layers[l].weight = weights[l];
    m.params.layers[l].bias = biases[l];
  }
  return m;
}

inline ans::data::EmbeddingDataset dataset(std::size_t d, std::vector<std::vector<float>> rows, std::vector<int> labels,
                                           std::vector<std::string> vocab,
                                           ans::data::SplitTag split = ans::data::SplitTag::train) {
  ans::data::EmbeddingDataset ds;
  ds.features = ans::BasicMatrix<float>(rows.size(), d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) ds.features(i, j) = rows[i][j];
  ds.labels = std::move(labels);
  ds.vocab = std::move(vocab);
  ds.split = split;
  return ds;
}

// Gaussian blobs, one per category, labels 0..C-1.
inline ans::data::SyntheticSplits blobs(std::size_t d, std::size_t known, std::size_t open, std::size_t per_cluster,
                                        double spread, std::uint64_t seed) {
  ans::data::SyntheticSpec spec;
  spec.seed = seed;
  ans::Rng rng = ans::make_rng(seed + 99);
  for (std::size_t c = 0; c < known + open; ++c) {
    ans::data::ClusterSpec cl;
    cl.known = c < known;
    cl.count = per_cluster;
    cl.cov_diag.assign(d, 1.0);
    for (std::size_t j = 0; j < d; ++j) cl.mean.push_back(spread * ans::standard_normal(rng));
    cl.name = "c" + std::to_string(c);
    spec.clusters.push_back(cl);
  }
  return ans::data::generate_synthetic(spec);
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("ans_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace testing
