#include <catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"

using namespace ans;
using Catch::Matchers::WithinAbs;

namespace {

nn::MlpModel linear_head(std::vector<double> w, double b) {
  const std::size_t d = w.size();
  return testing::model_from({testing::mat(1, d, std::move(w))}, {{b}});
}

// Two-category model in 2-D whose known classifier always prefers class 1
// and whose heads are g0 = x0 and g1 = x1.
ovr::OpenWorldModel toy_model() {
  ovr::OpenWorldModel m;
  m.vocab = {"a", "b"};
  m.known.vocab = m.vocab;
  m.known.model = testing::model_from({testing::mat(2, 2, {0, 0, 0, 0})}, {{0.0, 1.0}});
  m.heads = {linear_head({1.0, 0.0}, 0.0), linear_head({0.0, 1.0}, 0.0)};
  return m;
}

struct Blobs2d {
  data::SyntheticSplits s;
  known::KnownClassifier known;
};

// Three well separated unit-variance clusters in 2-D.
const Blobs2d& blobs2d() {
  static const Blobs2d b = [] {
    data::SyntheticSpec spec;
    spec.seed = 4;
    spec.clusters = {{{-6.0, 0.0}, {1.0, 1.0}, 250, true, "left"},
                     {{6.0, 0.0}, {1.0, 1.0}, 250, true, "right"},
                     {{0.0, 8.0}, {1.0, 1.0}, 250, true, "up"},
                     {{0.0, -8.0}, {1.0, 1.0}, 50, false, "down"}};
    Blobs2d out{data::generate_synthetic(spec), {}};
    known::TrainConfig cfg;
    cfg.hidden_width = 64;
    cfg.learning_rate = 1e-3;
    cfg.max_epochs = 20;
    out.known = known::train_known(out.s.train, out.s.val, cfg);
    return out;
  }();
  return b;
}

ovr::OvrConfig small_ovr(std::uint64_t seed) {
  ovr::OvrConfig cfg;
  cfg.hidden = {32, 16};
  cfg.epochs = 10;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("all heads negative routes to open") {
  auto m = toy_model();
  CHECK(ovr::infer(m, testing::mat(1, 2, {-1.0, -0.5})) == std::vector<int>{-1});
}

TEST_CASE("a logit of exactly zero counts as known") {
  auto m = toy_model();
  CHECK(ovr::infer(m, testing::mat(1, 2, {0.0, -3.0})) == std::vector<int>{1});
}

TEST_CASE("any positive head defers to the full known argmax") {
  auto m = toy_model();
  // only head 0 fires, but the known classifier prefers 1
  CHECK(ovr::infer(m, testing::mat(1, 2, {2.0, -1.0})) == std::vector<int>{1});
  CHECK(ovr::infer(m, testing::mat(2, 2, {-2.0, 0.1, -2.0, -0.1})) == std::vector<int>{1, -1});
}

TEST_CASE("decisions are invariant to positive scaling of head logits") {
  Rng rng = make_rng(2);
  Matrix logits(200, 4);
  std::vector<int> arg(200);
  for (std::size_t i = 0; i < logits.size(); ++i) logits.data()[i] = standard_normal(rng) - 0.5;
  for (auto& a : arg) a = static_cast<int>(rng() % 4);
  const auto base = ovr::decide(logits, arg);
  for (double s : {1e-6, 0.3, 7.0, 1e6}) {
    Matrix scaled = logits;
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled.data()[i] *= s;
    CHECK(ovr::decide(scaled, arg) == base);
  }
}

TEST_CASE("inference equals decide over head logits and known argmax, row by row") {
  const auto& b = blobs2d();
  auto [model, trace] = ovr::train_ovr(b.s.train, b.s.val, b.known, {}, small_ovr(1));
  auto x = b.s.test.all_rows();
  auto batch = ovr::infer(model, x);
  CHECK(batch == ovr::decide(ovr::head_logits(model, x), known::predict_known(model.known, x).labels));
  for (std::size_t i = 0; i < x.rows(); i += 17) {
    Matrix row(1, 2, std::vector<double>(x.row(i).begin(), x.row(i).end()));
    CHECK(ovr::infer(model, row)[0] == batch[i]);
  }
  for (int y : batch) CHECK((y >= -1 && y < 3));
}

TEST_CASE("mode none separates well separated categories") {
  const auto& b = blobs2d();
  sampler::AnsConfig ans;
  ans.mode = sampler::Mode::none;
  auto [model, trace] = ovr::train_ovr(b.s.train, b.s.val, b.known, ans, small_ovr(2));
  for (int m = 0; m < 3; ++m) CHECK(ovr::head_val_accuracy(model.heads[m], b.s.val, m) >= 0.99);
}

TEST_CASE("rest loss at the end of training is no higher than at initialization") {
  const auto& b = blobs2d();
  for (auto mode : {sampler::Mode::none, sampler::Mode::ascend}) {
    sampler::AnsConfig ans;
    ans.mode = mode;
    ans.radius = 2.0;
    ans.step_size = 0.5;
    auto [model, trace] = ovr::train_ovr(b.s.train, b.s.val, b.known, ans, small_ovr(3));
    REQUIRE(trace.heads.size() == 3);
    for (const auto& h : trace.heads) {
      REQUIRE(h.rows.size() == 10);
      CHECK(h.rows.back().rest_loss <= h.initial_rest_loss);
      for (const auto& r : h.rows)
        CHECK_THAT(r.open_loss, WithinAbs(r.rest_loss + (mode == sampler::Mode::none ? 0.0 : 0.5 * r.syn_loss), 1e-12));
    }
  }
}

TEST_CASE("ascend training shrinks the far-field positive region") {
  const auto& b = blobs2d();
  auto frac_positive = [&](const ovr::OpenWorldModel& model) {
    Rng rng = make_rng(77);
    std::size_t probes = 0, fired = 0;
    while (probes < 4000) {
      const double x = 60.0 * uniform01(rng) - 30.0, y = 60.0 * uniform01(rng) - 30.0;
      // keep points at least 5 from every known mean
      if (std::hypot(x + 6, y) < 5 || std::hypot(x - 6, y) < 5 || std::hypot(x, y - 8) < 5) continue;
      ++probes;
      auto g = ovr::head_logits(model, testing::mat(1, 2, {x, y}));
      fired += g(0, 0) >= 0 || g(0, 1) >= 0 || g(0, 2) >= 0;
    }
    return static_cast<double>(fired) / static_cast<double>(probes);
  };
  sampler::AnsConfig none, asc;
  none.mode = sampler::Mode::none;
  asc.radius = 2.0;
  asc.step_size = 0.5;
  auto [m_none, t1] = ovr::train_ovr(b.s.train, b.s.val, b.known, none, small_ovr(5));
  auto [m_asc, t2] = ovr::train_ovr(b.s.train, b.s.val, b.known, asc, small_ovr(5));
  const double fn = frac_positive(m_none), fa = frac_positive(m_asc);
  INFO("none " << fn << " ascend " << fa);
  CHECK(fa < fn);
}

TEST_CASE("heads are independent of one another") {
  const auto& b = blobs2d();
  auto cfg = small_ovr(6);
  cfg.epochs = 3;
  sampler::AnsConfig ans;
  ans.radius = 2.0;
  ans.step_size = 0.5;
  auto [model, trace] = ovr::train_ovr(b.s.train, b.s.val, b.known, ans, cfg);
  for (int m = 0; m < 3; ++m) {
    auto alone = ovr::train_head(b.s.train, b.s.val, m, ans, cfg);
    CHECK(nn::to_json(alone.head) == nn::to_json(model.heads[m]));
  }
}

TEST_CASE("one-vs-rest preconditions") {
  const auto& b = blobs2d();
  CHECK_THROWS_AS(ovr::train_ovr(b.s.test, b.s.val, b.known, {}, small_ovr(1)), ValidationError);
  auto other = b.known;
  other.vocab = {"x", "y", "z"};
  CHECK_THROWS_AS(ovr::train_ovr(b.s.train, b.s.val, other, {}, small_ovr(1)), ValidationError);
  CHECK_THROWS_AS(ovr::head_logits(toy_model(), Matrix(1, 3)), ShapeError);
  auto bad = toy_model();
  bad.heads.pop_back();
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("open-world model JSON round trip keeps predictions") {
  const auto& b = blobs2d();
  auto cfg = small_ovr(8);
  cfg.epochs = 2;
  auto [model, trace] = ovr::train_ovr(b.s.train, b.s.val, b.known, {}, cfg);
  auto back = ovr::open_world_from_json(nlohmann::json::parse(ovr::to_json(model).dump()));
  CHECK(back.ans_config == model.ans_config);
  CHECK(ovr::infer(back, b.s.test.all_rows()) == ovr::infer(model, b.s.test.all_rows()));
}

TEST_CASE("maximum softmax probability rule") {
  auto probs = testing::mat(3, 3, {0.4, 0.3, 0.3, 0.6, 0.2, 0.2, 0.2, 0.2, 0.6});
  CHECK(ovr::msp_decide(probs, false) == std::vector<int>{-1, 0, 2});
  // with a negative class the last column means open
  CHECK(ovr::msp_decide(probs, true) == std::vector<int>{-1, 0, -1});
  CHECK(ovr::msp_decide(testing::mat(1, 2, {0.5, 0.5}), false) == std::vector<int>{0});
}

TEST_CASE("MSP baselines train and predict within range") {
  const auto& b = blobs2d();
  known::TrainConfig cfg;
  cfg.hidden_width = 32;
  cfg.learning_rate = 1e-3;
  cfg.max_epochs = 5;
  sampler::AnsConfig ans;
  ans.radius = 2.0;
  for (bool neg : {false, true}) {
    auto msp = ovr::train_msp(b.s.train, b.s.val, b.s.train.vocab, neg, cfg, ans);
    CHECK(msp.model.spec.output_dim() == (neg ? 4u : 3u));
    auto pred = ovr::predict_msp(msp, b.s.test.all_rows());
    for (int y : pred) CHECK((y >= -1 && y < 3));
    auto back = ovr::msp_from_json(nlohmann::json::parse(ovr::to_json(msp).dump()));
    CHECK(ovr::predict_msp(back, b.s.test.all_rows()) == pred);
  }
}
