#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "helpers.hpp"

using namespace ans;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

nn::MlpModel frozen_3_4_2() {
  return testing::model_from(
      {testing::mat(4, 3, {0.5, -0.25, 1.0, -1.0, 0.75, 0.5, 0.3, 0.2, -0.6, 0.0, -0.4, 0.9}),
       testing::mat(2, 4, {1.2, -0.7, 0.4, 0.25, -0.5, 0.9, -1.1, 0.6})},
      {{0.1, -0.2, 0.05, 0.3}, {-0.15, 0.2}});
}

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  Matrix m(r, c);
  for (auto& v : m.data()) v = standard_normal(rng);
  return m;
}

}  // namespace

TEST_CASE("forward with all-zero parameters gives zero logits") {
  auto m = nn::MlpModel::zeros({{8, 16, 16, 3}, nn::Activation::relu, 0.0});
  auto out = nn::mlp_forward(m, random_matrix(5, 8, 1)).logits;
  REQUIRE(out.rows() == 5);
  REQUIRE(out.cols() == 3);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == 0.0);
}

TEST_CASE("single identity layer returns its input") {
  auto m = testing::model_from({testing::mat(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1})}, {{0, 0, 0}});
  auto x = testing::mat(2, 3, {1.5, -2.0, 0.25, 0.0, 3.0, -7.0});
  CHECK(nn::mlp_forward(m, x).logits == x);
}

TEST_CASE("forward matches frozen logits on a fixed 3-4-2 network") {
  auto x = testing::mat(2, 3, {1.0, 2.0, -0.5, -1.5, 0.25, 2.0});
  auto out = nn::mlp_forward(frozen_3_4_2(), x).logits;
  const std::vector<double> expected = {0.23500000000000007, -0.9100000000000001, 0.15375000000000041, 2.995};
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK_THAT(out.data()[i], WithinAbs(expected[i], 1e-12));
}

TEST_CASE("forward rejects a dimension mismatch and non-finite input") {
  auto m = frozen_3_4_2();
  CHECK_THROWS_AS(nn::mlp_forward(m, Matrix(2, 4)), ShapeError);
  auto x = testing::mat(1, 3, {1.0, std::numeric_limits<double>::quiet_NaN(), 0.0});
  CHECK_THROWS_AS(nn::mlp_forward(m, x), NumericError);
}

TEST_CASE("forward is deterministic in eval mode and for a fixed dropout seed") {
  auto m = nn::MlpModel::init({{6, 12, 2}, nn::Activation::relu, 0.3}, 5);
  auto x = random_matrix(7, 6, 2);
  CHECK(nn::mlp_forward(m, x).logits == nn::mlp_forward(m, x).logits);
  CHECK(nn::mlp_forward(m, x, true, 9).logits == nn::mlp_forward(m, x, true, 9).logits);
  CHECK_FALSE(nn::mlp_forward(m, x, true, 9).logits == nn::mlp_forward(m, x, true, 10).logits);
}

TEST_CASE("backward of a linear net returns the weight row as input gradient") {
  auto m = testing::model_from({testing::mat(1, 3, {0.5, -2.0, 1.25})}, {{0.3}});
  auto x = testing::mat(2, 3, {1, 2, 3, -4, 5, 6});
  auto fwd = nn::mlp_forward(m, x);
  auto g = nn::mlp_backward(m, fwd.cache, testing::mat(2, 1, {1.0, 1.0}));
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(g.input_grads(r, 0) == 0.5);
    CHECK(g.input_grads(r, 1) == -2.0);
    CHECK(g.input_grads(r, 2) == 1.25);
  }
  // dL/dW = sum of inputs, dL/db = batch size
  CHECK(g.param_grads.layers[0].weight(0, 0) == -3.0);
  CHECK(g.param_grads.layers[0].bias[0] == 2.0);
}

TEST_CASE("backward agrees with finite differences") {
  const std::vector<std::vector<std::size_t>> shapes = {{4, 8, 8, 1}, {3, 5, 2}, {6, 1}, {2, 32, 4}};
  for (const auto& dims : shapes)
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      auto rep = oracles::check_gradients({dims, nn::Activation::relu, 0.0}, seed);
      INFO("dims size " << dims.size() << " seed " << seed << " err " << rep.error);
      CHECK(rep.pass);
      CHECK(rep.error <= 1e-4);
    }
}

TEST_CASE("backward with dropout matches finite differences of the same mask") {
  auto m = nn::MlpModel::init({{3, 6, 2}, nn::Activation::relu, 0.5}, 21);
  auto x = random_matrix(4, 3, 22);
  auto up = random_matrix(4, 2, 23);
  const std::uint64_t mask_seed = 77;
  auto objective = [&](const nn::MlpModel& mm) {
    auto out = nn::mlp_forward(mm, x, true, mask_seed).logits;
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out.data()[i] * up.data()[i];
    return s;
  };
  auto fwd = nn::mlp_forward(m, x, true, mask_seed);
  auto g = nn::mlp_backward(m, fwd.cache, up);
  const double h = 1e-5;
  for (std::size_t l = 0; l < m.params.layers.size(); ++l)
    for (std::size_t i = 0; i < m.params.layers[l].weight.size(); ++i) {
      auto mp = m, mm = m;
      mp.params.layers[l].weight.data()[i] += h;
      mm.params.layers[l].weight.data()[i] -= h;
      const double fd = (objective(mp) - objective(mm)) / (2 * h);
      CHECK_THAT(g.param_grads.layers[l].weight.data()[i], WithinAbs(fd, 1e-6));
    }
}

TEST_CASE("zero upstream gives zero gradients") {
  auto m = nn::MlpModel::init({{5, 7, 3}, nn::Activation::relu, 0.0}, 3);
  auto fwd = nn::mlp_forward(m, random_matrix(4, 5, 4));
  auto g = nn::mlp_backward(m, fwd.cache, Matrix(4, 3));
  for (std::size_t i = 0; i < g.input_grads.size(); ++i) CHECK(g.input_grads.data()[i] == 0.0);
  for (const auto& l : g.param_grads.layers) {
    for (std::size_t i = 0; i < l.weight.size(); ++i) CHECK(l.weight.data()[i] == 0.0);
    for (double b : l.bias) CHECK(b == 0.0);
  }
}

TEST_CASE("backward is linear in the upstream gradient") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto m = nn::MlpModel::init({{4, 9, 6, 2}, nn::Activation::relu, 0.0}, seed);
    auto fwd = nn::mlp_forward(m, random_matrix(3, 4, seed + 10));
    auto a = random_matrix(3, 2, seed + 20), b = random_matrix(3, 2, seed + 30);
    Matrix ab(3, 2);
    for (std::size_t i = 0; i < ab.size(); ++i) ab.data()[i] = a.data()[i] + b.data()[i];
    auto ga = nn::mlp_backward(m, fwd.cache, a), gb = nn::mlp_backward(m, fwd.cache, b);
    auto gab = nn::mlp_backward(m, fwd.cache, ab);
    for (std::size_t i = 0; i < gab.input_grads.size(); ++i)
      CHECK_THAT(gab.input_grads.data()[i], WithinAbs(ga.input_grads.data()[i] + gb.input_grads.data()[i], 1e-9));
    for (std::size_t l = 0; l < gab.param_grads.layers.size(); ++l)
      for (std::size_t i = 0; i < gab.param_grads.layers[l].weight.size(); ++i)
        CHECK_THAT(gab.param_grads.layers[l].weight.data()[i],
                   WithinAbs(ga.param_grads.layers[l].weight.data()[i] + gb.param_grads.layers[l].weight.data()[i],
                             1e-9));
  }
}

TEST_CASE("backward rejects an upstream of the wrong shape") {
  auto m = frozen_3_4_2();
  auto fwd = nn::mlp_forward(m, Matrix(2, 3));
  CHECK_THROWS_AS(nn::mlp_backward(m, fwd.cache, Matrix(2, 3)), ShapeError);
}

TEST_CASE("first adam step moves each parameter by about lr against the gradient sign") {
  auto m = frozen_3_4_2();
  auto grads = nn::MlpParams::zeros_like(m.params);
  grads.layers[0].weight(0, 0) = 0.7;
  grads.layers[1].bias[1] = -3.0;
  auto before = m.params;
  auto state = nn::AdamState::for_params(m.params);
  nn::adam_step(state, m.params, grads, 1e-3);
  CHECK_THAT(m.params.layers[0].weight(0, 0), WithinAbs(before.layers[0].weight(0, 0) - 1e-3, 1e-9));
  CHECK_THAT(m.params.layers[1].bias[1], WithinAbs(before.layers[1].bias[1] + 1e-3, 1e-9));
  // parameters with zero gradient stay exactly where they were
  CHECK(m.params.layers[0].weight(1, 2) == before.layers[0].weight(1, 2));
  CHECK(m.params.layers[0].bias[0] == before.layers[0].bias[0]);
  CHECK(state.step == 1);
}

TEST_CASE("repeated adam steps on a constant gradient move monotonically") {
  auto m = frozen_3_4_2();
  auto grads = nn::MlpParams::zeros_like(m.params);
  grads.layers[0].weight(2, 1) = 0.25;
  auto state = nn::AdamState::for_params(m.params);
  double prev = m.params.layers[0].weight(2, 1);
  for (int i = 0; i < 20; ++i) {
    nn::adam_step(state, m.params, grads, 1e-2);
    CHECK(m.params.layers[0].weight(2, 1) < prev);
    prev = m.params.layers[0].weight(2, 1);
  }
}

TEST_CASE("adam refuses non-finite gradients and leaves state untouched") {
  auto m = frozen_3_4_2();
  auto grads = nn::MlpParams::zeros_like(m.params);
  grads.layers[1].weight(0, 0) = std::numeric_limits<double>::infinity();
  auto state = nn::AdamState::for_params(m.params);
  const auto before = nn::to_json(m);
  CHECK_THROWS_AS(nn::adam_step(state, m.params, grads, 1e-3), NumericError);
  CHECK(nn::to_json(m) == before);
  CHECK(state.step == 0);
  CHECK_THROWS_AS(nn::adam_step(state, m.params, nn::MlpParams::zeros_like(m.params), 0.0), ValidationError);
}

TEST_CASE("glorot init respects the uniform bound and is seed-deterministic") {
  nn::MlpSpec spec{{20, 30, 5}, nn::Activation::relu, 0.3};
  auto a = nn::MlpModel::init(spec, 4), b = nn::MlpModel::init(spec, 4), c = nn::MlpModel::init(spec, 5);
  CHECK(nn::to_json(a) == nn::to_json(b));
  CHECK_FALSE(nn::to_json(a) == nn::to_json(c));
  const double bound = std::sqrt(6.0 / 50.0);
  for (std::size_t i = 0; i < a.params.layers[0].weight.size(); ++i)
    CHECK(std::abs(a.params.layers[0].weight.data()[i]) <= bound);
  for (double v : a.params.layers[0].bias) CHECK(v == 0.0);
}

TEST_CASE("model JSON round trip is exact") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto m = nn::MlpModel::init({{7, 11, 3}, nn::Activation::relu, 0.25}, seed);
    m.params.layers[1].bias = {0.1, -1.0 / 3.0, 1e-300};
    auto text = nn::to_json(m).dump();
    auto back = nn::model_from_json(nlohmann::json::parse(text));
    CHECK(back.spec == m.spec);
    auto x = random_matrix(4, 7, seed);
    CHECK(nn::mlp_forward(back, x).logits == nn::mlp_forward(m, x).logits);
    CHECK(nn::to_json(back).dump() == text);
  }
}

TEST_CASE("network shape validation") {
  CHECK_THROWS_AS(nn::MlpModel::init({{4}, nn::Activation::relu, 0.0}, 0), ValidationError);
  CHECK_THROWS_AS(nn::MlpModel::init({{4, 0, 1}, nn::Activation::relu, 0.0}, 0), ValidationError);
  CHECK_THROWS_AS(nn::MlpModel::init({{4, 1}, nn::Activation::relu, 1.0}, 0), ValidationError);
  auto j = nn::to_json(frozen_3_4_2());
  j["weights"][0].erase(0);
  CHECK_THROWS_AS(nn::model_from_json(j), Error);
}
