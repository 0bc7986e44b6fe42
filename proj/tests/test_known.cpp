#include <catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"

using namespace ans;
using Catch::Matchers::WithinAbs;

namespace {

data::EmbeddingDataset separable_2d(std::size_t n, std::uint64_t seed, data::SplitTag tag) {
  Rng rng = make_rng(seed);
  std::vector<std::vector<float>> rows;
  std::vector<int> labels;
  while (rows.size() < n) {
    const double x = 4.0 * uniform01(rng) - 2.0, y = 4.0 * uniform01(rng) - 2.0;
    if (std::abs(x + y) < 0.2) continue;  // margin
    rows.push_back({static_cast<float>(x), static_cast<float>(y)});
    labels.push_back(x + y > 0 ? 1 : 0);
  }
  return testing::dataset(2, rows, labels, {"neg", "pos"}, tag);
}

}  // namespace

TEST_CASE("uniform logits over four classes give ln 4") {
  const std::vector<int> y = {2};
  CHECK_THAT(known::cross_entropy_loss(Matrix(1, 4), y).loss, WithinAbs(std::log(4.0), 1e-12));
}

TEST_CASE("a large correct margin gives near-zero loss") {
  const std::vector<int> y = {0};
  CHECK(known::cross_entropy_loss(testing::mat(1, 3, {50.0, 0.0, 0.0}), y).loss < 1e-20);
}

TEST_CASE("cross entropy matches the frozen value on a fixed batch") {
  auto z = testing::mat(5, 3, {0.3, -1.2, 2.1, 1.5, 0.2, -0.7, -0.4, 0.9, 0.1, 2.2, -0.3, 0.8, 0.0, 1.1, -1.6});
  const std::vector<int> y = {0, 2, 1, 1, 0};
  CHECK_THAT(known::cross_entropy_loss(z, y).loss, WithinAbs(1.8545510868483372, 1e-12));
}

TEST_CASE("cross entropy gradient rows sum to zero and match finite differences") {
  Rng rng = make_rng(1);
  Matrix z(6, 4);
  for (std::size_t i = 0; i < z.size(); ++i) z.data()[i] = 3.0 * standard_normal(rng);
  const std::vector<int> y = {0, 3, 1, 1, 2, 0};
  auto lg = known::cross_entropy_loss(z, y);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    double s = 0.0;
    for (double v : lg.grad_logits.row(r)) s += v;
    CHECK_THAT(s, WithinAbs(0.0, 1e-15));
  }
  const double h = 1e-6;
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto zp = z, zm = z;
    zp.data()[i] += h;
    zm.data()[i] -= h;
    const double fd = (known::cross_entropy_loss(zp, y).loss - known::cross_entropy_loss(zm, y).loss) / (2 * h);
    CHECK_THAT(lg.grad_logits.data()[i], WithinAbs(fd, 1e-8));
  }
}

TEST_CASE("softmax is invariant to a per-row shift") {
  auto z = testing::mat(2, 3, {1.0, 2.0, 3.0, -5.0, 0.5, 4.0});
  auto shifted = z;
  for (std::size_t c = 0; c < 3; ++c) {
    shifted(0, c) += 1000.0;
    shifted(1, c) -= 77.5;
  }
  auto a = known::softmax(z), b = known::softmax(shifted);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK_THAT(a.data()[i], WithinAbs(b.data()[i], 1e-12));
}

TEST_CASE("cross entropy input validation") {
  const std::vector<int> bad = {3}, two = {0, 1};
  CHECK_THROWS_AS(known::cross_entropy_loss(Matrix(1, 3), bad), ValidationError);
  CHECK_THROWS_AS(known::cross_entropy_loss(Matrix(1, 3), two), ShapeError);
}

TEST_CASE("argmax picks the largest logit and breaks ties low") {
  CHECK(known::argmax_rows(testing::mat(1, 3, {2.0, 1.0, 0.0})) == std::vector<int>{0});
  CHECK(known::argmax_rows(testing::mat(2, 3, {0.0, 5.0, 5.0, 1.0, 1.0, 1.0})) == std::vector<int>{1, 0});
}

TEST_CASE("zero weights give uniform probabilities") {
  known::KnownClassifier clf;
  clf.model = nn::MlpModel::zeros({{3, 8, 4}, nn::Activation::relu, 0.3});
  clf.vocab = {"a", "b", "c", "d"};
  auto p = known::predict_known(clf, testing::mat(2, 3, {1, 2, 3, -1, 0, 9}));
  for (std::size_t i = 0; i < p.probabilities.size(); ++i) CHECK_THAT(p.probabilities.data()[i], WithinAbs(0.25, 1e-15));
}

TEST_CASE("probabilities match frozen values on a fixed 2-3-3 network") {
  known::KnownClassifier clf;
  clf.model = testing::model_from({testing::mat(3, 2, {0.8, -0.3, -0.6, 0.9, 0.4, 0.4}),
                                   testing::mat(3, 3, {1.0, -0.5, 0.3, -0.2, 0.7, 0.6, 0.5, 0.5, -1.0})},
                                  {{0.0, 0.1, -0.2}, {0.05, -0.1, 0.0}}, 0.3);
  clf.vocab = {"a", "b", "c"};
  auto p = known::predict_known(clf, testing::mat(3, 2, {1.0, 0.5, -0.3, 1.2, 2.0, -1.0}));
  const std::vector<double> expected = {0.5395298218666973,  0.24001419322522685, 0.22045598490807589,
                                        0.11589691732807768, 0.5352324573805222,  0.34887062529140017,
                                        0.7261453521399359,  0.06788059490147773, 0.20597405295858642};
  for (std::size_t i = 0; i < expected.size(); ++i)
    CHECK_THAT(p.probabilities.data()[i], WithinAbs(expected[i], 1e-12));
  CHECK(p.labels == std::vector<int>{0, 1, 0});
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (double v : p.probabilities.row(r)) s += v;
    CHECK_THAT(s, WithinAbs(1.0, 1e-12));
  }
  CHECK_THROWS_AS(known::predict_known(clf, Matrix(1, 3)), ShapeError);
}

TEST_CASE("training fits a linearly separable 2-D set") {
  auto tr = separable_2d(400, 1, data::SplitTag::train);
  auto va = separable_2d(100, 2, data::SplitTag::val);
  known::TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.max_epochs = 60;
  cfg.seed = 3;
  auto clf = known::train_known(tr, va, cfg);
  CHECK(known::accuracy(clf.model, tr.all_rows(), tr.labels) >= 0.99);
}

TEST_CASE("five-category fixture reaches 0.95 validation accuracy within 100 epochs") {
  auto s = experiment::standard_fixture(7);
  known::TrainConfig cfg;
  cfg.seed = 1;
  auto clf = known::train_known(s.train, s.val, cfg);
  CHECK(clf.history.epochs.size() <= 100);
  CHECK(known::accuracy(clf.model, s.val.all_rows(), s.val.labels) >= 0.95);

  // the returned parameters are the best checkpoint seen
  double best = 0.0;
  for (const auto& e : clf.history.epochs) best = std::max(best, e.val_accuracy);
  CHECK(clf.history.best_val_accuracy == best);
  CHECK(known::accuracy(clf.model, s.val.all_rows(), s.val.labels) == best);
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto tr = separable_2d(120, 4, data::SplitTag::train);
  auto va = separable_2d(30, 5, data::SplitTag::val);
  known::TrainConfig cfg;
  cfg.max_epochs = 5;
  cfg.hidden_width = 32;
  cfg.seed = 9;
  CHECK(known::to_json(known::train_known(tr, va, cfg)) == known::to_json(known::train_known(tr, va, cfg)));
}

TEST_CASE("training preconditions") {
  auto one = testing::dataset(1, {{0.0f}, {1.0f}}, {0, 0}, {"only"});
  CHECK_THROWS_AS(known::train_known(one, one, {}), ValidationError);
  auto missing = testing::dataset(1, {{0.0f}, {1.0f}}, {0, 0}, {"a", "b"});
  CHECK_THROWS_AS(known::train_known(missing, missing, {}), ValidationError);
  auto open = testing::dataset(1, {{0.0f}, {1.0f}, {2.0f}}, {0, 1, -1}, {"a", "b"}, data::SplitTag::test);
  CHECK_THROWS_AS(known::train_known(open, open, {}), ValidationError);
}

TEST_CASE("known classifier JSON round trip") {
  auto tr = separable_2d(60, 6, data::SplitTag::train);
  known::TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.hidden_width = 16;
  auto clf = known::train_known(tr, tr, cfg);
  auto back = known::known_from_json(nlohmann::json::parse(known::to_json(clf).dump()));
  CHECK(back.vocab == clf.vocab);
  CHECK(known::to_json(back.train_config) == known::to_json(clf.train_config));
  auto x = tr.all_rows();
  CHECK(known::predict_known(back, x).probabilities == known::predict_known(clf, x).probabilities);
}
