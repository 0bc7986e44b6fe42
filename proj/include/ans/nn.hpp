#pragma once

// Feed-forward ReLU network with hand-written forward/backward passes.
// Gradients are available w.r.t. both parameters and inputs, which is what
// negative-sample ascent (input side) and head training (parameter side) need.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ans/error.hpp"
#include "ans/matrix.hpp"
#include "ans/random.hpp"

namespace ans::nn {

enum class Activation { relu };

struct MlpSpec {
  std::vector<std::size_t> layer_dims;  // input first, output last
  Activation activation = Activation::relu;
  double dropout_rate = 0.3;

  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }
  std::size_t num_layers() const { return layer_dims.size() - 1; }

  void validate() const {
    if (layer_dims.size() < 2) throw ValidationError("MlpSpec needs at least 2 layer dims");
    for (auto d : layer_dims)
      if (d < 1) throw ValidationError("MlpSpec layer dims must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw ValidationError("dropout_rate must lie in [0, 1)");
  }
  bool operator==(const MlpSpec&) const = default;
};

struct Layer {
  Matrix weight;  // out x in
  std::vector<double> bias;
  bool operator==(const Layer&) const = default;
};

struct MlpParams {
  std::vector<Layer> layers;

  bool operator==(const MlpParams&) const = default;

  static MlpParams zeros_like(const MlpParams& p) {
    MlpParams z;
    z.layers.reserve(p.layers.size());
    for (const auto& l : p.layers)
      z.layers.push_back({Matrix(l.weight.rows(), l.weight.cols()), std::vector<double>(l.bias.size())});
    return z;
  }

  // this += scale * other
  void add_scaled(const MlpParams& other, double scale) {
    if (other.layers.size() != layers.size()) throw ShapeError("parameter layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& w = layers[l].weight.data();
      const auto& ow = other.layers[l].weight.data();
      if (w.size() != ow.size() || layers[l].bias.size() != other.layers[l].bias.size())
        throw ShapeError("parameter shape mismatch");
      for (std::size_t i = 0; i < w.size(); ++i) w[i] += scale * ow[i];
      for (std::size_t i = 0; i < layers[l].bias.size(); ++i)
        layers[l].bias[i] += scale * other.layers[l].bias[i];
    }
  }

  bool finite() const {
    for (const auto& l : layers)
      if (!all_finite(l.weight) || !all_finite(std::span<const double>(l.bias))) return false;
    return true;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }
};

struct MlpModel {
  MlpSpec spec;
  MlpParams params;

  bool operator==(const MlpModel&) const = default;

  // Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
  static MlpModel init(MlpSpec spec, std::uint64_t seed) {
    spec.validate();
    MlpModel m{spec, {}};
    Rng rng = make_rng(seed);
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
      const std::size_t in = spec.layer_dims[l], out = spec.layer_dims[l + 1];
      const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
      std::uniform_real_distribution<double> u(-bound, bound);
      Layer layer{Matrix(out, in), std::vector<double>(out, 0.0)};
      for (auto& w : layer.weight.data()) w = u(rng);
      m.params.layers.push_back(std::move(layer));
    }
    return m;
  }

  static MlpModel zeros(MlpSpec spec) {
    spec.validate();
    MlpModel m{spec, {}};
    for (std::size_t l = 0; l < spec.num_layers(); ++l)
      m.params.layers.push_back(
          {Matrix(spec.layer_dims[l + 1], spec.layer_dims[l]), std::vector<double>(spec.layer_dims[l + 1])});
    return m;
  }
};

// Everything backward needs from a forward pass.
struct ForwardCache {
  std::vector<Matrix> inputs;    // input to each layer (post activation and dropout)
  std::vector<Matrix> preacts;   // hidden-layer pre-activations
  std::vector<Matrix> masks;     // hidden-layer dropout scales; empty matrix when off
  std::size_t batch_rows = 0;
};

struct ForwardResult {
  Matrix logits;
  ForwardCache cache;
};

struct GradientBundle {
  MlpParams param_grads;
  Matrix input_grads;
};

namespace detail {

inline void check_params(const MlpModel& m) {
  if (m.params.layers.size() != m.spec.num_layers()) throw ShapeError("params do not match spec layer count");
  for (std::size_t l = 0; l < m.params.layers.size(); ++l) {
    const auto& L = m.params.layers[l];
    if (L.weight.rows() != m.spec.layer_dims[l + 1] || L.weight.cols() != m.spec.layer_dims[l] ||
        L.bias.size() != m.spec.layer_dims[l + 1])
      throw ShapeError("layer " + std::to_string(l) + " params do not match spec");
  }
}

// out(n, o) = sum_i x(n, i) w(o, i) + b(o)
inline Matrix affine(const Matrix& x, const Layer& layer) {
  const std::size_t n = x.rows(), in = x.cols(), out = layer.weight.rows();
  Matrix z(n, out);
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x.data().data() + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = layer.weight.data().data() + o * in;
      double s = layer.bias[o];
      for (std::size_t i = 0; i < in; ++i) s += xr[i] * wr[i];
      z(r, o) = s;
    }
  }
  return z;
}

}  // namespace detail

// Forward pass. With train_mode set, inverted dropout is applied after every
// hidden activation using masks drawn from rng_seed; otherwise the pass is
// deterministic and the seed is ignored.
inline ForwardResult mlp_forward(const MlpModel& model, const Matrix& batch, bool train_mode = false,
                                 std::uint64_t rng_seed = 0) {
  detail::check_params(model);
  if (batch.cols() != model.spec.input_dim())
    throw ShapeError("batch has " + std::to_string(batch.cols()) + " columns, model expects " +
                     std::to_string(model.spec.input_dim()));
  if (!all_finite(batch)) throw NumericError("non-finite value in forward input");

  const std::size_t L = model.spec.num_layers();
  const double p = model.spec.dropout_rate;
  const bool dropout = train_mode && p > 0.0;

  ForwardResult res;
  auto& cache = res.cache;
  cache.batch_rows = batch.rows();
  cache.inputs.reserve(L);
  cache.inputs.push_back(batch);

  for (std::size_t l = 0; l < L; ++l) {
    Matrix z = detail::affine(cache.inputs.back(), model.params.layers[l]);
    if (l + 1 == L) {
      res.logits = std::move(z);
      break;
    }
    Matrix a(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.size(); ++i) a.data()[i] = z.data()[i] > 0.0 ? z.data()[i] : 0.0;
    Matrix mask;
    if (dropout) {
      mask = Matrix(z.rows(), z.cols());
      Rng rng = make_rng(mix_seed(rng_seed, l));
      std::bernoulli_distribution keep(1.0 - p);
      const double scale = 1.0 / (1.0 - p);
      for (std::size_t i = 0; i < mask.size(); ++i) {
        mask.data()[i] = keep(rng) ? scale : 0.0;
        a.data()[i] *= mask.data()[i];
      }
    }
    cache.preacts.push_back(std::move(z));
    cache.masks.push_back(std::move(mask));
    cache.inputs.push_back(std::move(a));
  }
  return res;
}

// Exact gradients of sum(logits * upstream) w.r.t. parameters and inputs.
inline GradientBundle mlp_backward(const MlpModel& model, const ForwardCache& cache, const Matrix& upstream) {
  detail::check_params(model);
  const std::size_t L = model.spec.num_layers();
  if (cache.inputs.size() != L || cache.preacts.size() + 1 != L)
    throw ShapeError("forward cache does not match model depth");
  if (upstream.rows() != cache.batch_rows || upstream.cols() != model.spec.output_dim())
    throw ShapeError("upstream gradient shape mismatch");

  GradientBundle out;
  out.param_grads = MlpParams::zeros_like(model.params);
  Matrix g = upstream;
  for (std::size_t l = L; l-- > 0;) {
    const Matrix& x = cache.inputs[l];
    const Layer& layer = model.params.layers[l];
    Layer& grad = out.param_grads.layers[l];
    const std::size_t n = x.rows(), in = x.cols(), o_dim = layer.weight.rows();

    for (std::size_t r = 0; r < n; ++r) {
      const double* xr = x.data().data() + r * in;
      for (std::size_t o = 0; o < o_dim; ++o) {
        const double go = g(r, o);
        if (go == 0.0) continue;
        grad.bias[o] += go;
        double* gw = grad.weight.data().data() + o * in;
        for (std::size_t i = 0; i < in; ++i) gw[i] += go * xr[i];
      }
    }

    Matrix gx(n, in);
    for (std::size_t r = 0; r < n; ++r) {
      double* gxr = gx.data().data() + r * in;
      for (std::size_t o = 0; o < o_dim; ++o) {
        const double go = g(r, o);
        if (go == 0.0) continue;
        const double* wr = layer.weight.data().data() + o * in;
        for (std::size_t i = 0; i < in; ++i) gxr[i] += go * wr[i];
      }
    }

    if (l > 0) {
      const Matrix& z = cache.preacts[l - 1];
      const Matrix& mask = cache.masks[l - 1];
      for (std::size_t i = 0; i < gx.size(); ++i) {
        double v = z.data()[i] > 0.0 ? gx.data()[i] : 0.0;
        if (!mask.empty()) v *= mask.data()[i];
        gx.data()[i] = v;
      }
    }
    g = std::move(gx);
  }
  out.input_grads = std::move(g);
  return out;
}

struct AdamState {
  MlpParams m;
  MlpParams v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const MlpParams& p) {
    return AdamState{MlpParams::zeros_like(p), MlpParams::zeros_like(p)};
  }
};

// One bias-corrected Adam update. Non-finite gradients are refused before any
// state is touched.
inline void adam_step(AdamState& state, MlpParams& params, const MlpParams& grads, double lr) {
  if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
  if (grads.layers.size() != params.layers.size() || state.m.layers.size() != params.layers.size())
    throw ShapeError("adam: layer count mismatch");
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    if (grads.layers[l].weight.size() != params.layers[l].weight.size() ||
        grads.layers[l].bias.size() != params.layers[l].bias.size() ||
        state.m.layers[l].weight.size() != params.layers[l].weight.size())
      throw ShapeError("adam: parameter shape mismatch");
  }
  if (!grads.finite()) throw NumericError("adam: non-finite gradient, update refused");

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  auto update = [&](double& p, double& m, double& v, double g) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    p -= lr * (m / c1) / (std::sqrt(v / c2) + state.eps);
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& P = params.layers[l];
    auto& M = state.m.layers[l];
    auto& V = state.v.layers[l];
    const auto& G = grads.layers[l];
    for (std::size_t i = 0; i < P.weight.size(); ++i)
      update(P.weight.data()[i], M.weight.data()[i], V.weight.data()[i], G.weight.data()[i]);
    for (std::size_t i = 0; i < P.bias.size(); ++i) update(P.bias[i], M.bias[i], V.bias[i], G.bias[i]);
  }
}

// ---- JSON ----------------------------------------------------------------

inline nlohmann::json to_json(const MlpSpec& s) {
  return {{"layer_dims", s.layer_dims}, {"activation", "relu"}, {"dropout_rate", s.dropout_rate}};
}

inline MlpSpec spec_from_json(const nlohmann::json& j) {
  MlpSpec s;
  try {
    s.layer_dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    if (j.contains("activation") && j.at("activation").get<std::string>() != "relu")
      throw ValidationError("unsupported activation: " + j.at("activation").get<std::string>());
    s.dropout_rate = j.value("dropout_rate", 0.3);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model spec: ") + e.what());
  }
  s.validate();
  return s;
}

inline nlohmann::json to_json(const MlpModel& m) {
  nlohmann::json weights = nlohmann::json::array(), biases = nlohmann::json::array();
  for (const auto& l : m.params.layers) {
    nlohmann::json w = nlohmann::json::array();
    for (std::size_t r = 0; r < l.weight.rows(); ++r) {
      auto row = l.weight.row(r);
      w.push_back(std::vector<double>(row.begin(), row.end()));
    }
    weights.push_back(std::move(w));
    biases.push_back(l.bias);
  }
  return {{"spec", to_json(m.spec)}, {"weights", std::move(weights)}, {"biases", std::move(biases)}};
}

inline MlpModel model_from_json(const nlohmann::json& j) {
  MlpModel m{spec_from_json(j.at("spec")), {}};
  try {
    const auto& W = j.at("weights");
    const auto& B = j.at("biases");
    if (W.size() != m.spec.num_layers() || B.size() != m.spec.num_layers())
      throw ShapeError("serialized layer count does not match spec");
    for (std::size_t l = 0; l < m.spec.num_layers(); ++l) {
      const std::size_t in = m.spec.layer_dims[l], out = m.spec.layer_dims[l + 1];
      Layer layer{Matrix(out, in), B[l].get<std::vector<double>>()};
      if (W[l].size() != out || layer.bias.size() != out) throw ShapeError("serialized layer shape mismatch");
      for (std::size_t r = 0; r < out; ++r) {
        auto row = W[l][r].get<std::vector<double>>();
        if (row.size() != in) throw ShapeError("serialized weight row width mismatch");
        std::copy(row.begin(), row.end(), layer.weight.row(r).begin());
      }
      m.params.layers.push_back(std::move(layer));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model json: ") + e.what());
  }
  if (!m.params.finite()) throw NumericError("serialized model contains non-finite parameters");
  return m;
}

}  // namespace ans::nn
