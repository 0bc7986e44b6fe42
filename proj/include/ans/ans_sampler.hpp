#pragma once

// Adaptive negative sampling in feature space.
//
// Around every positive anchor z a synthetic negative is drawn from the shell
// {u : r <= |u - z| <= gamma * r}. Candidates start as z + eps with
// eps ~ N(0, scale * diag(Sigma)), optionally climb the head's loss
// log(1 + exp(g(z + eps))) by normalized gradient steps, and are finally
// clamped radially into the shell.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ans/error.hpp"
#include "ans/matrix.hpp"
#include "ans/nn.hpp"
#include "ans/random.hpp"

namespace ans::sampler {

enum class Mode { none, noise, project, ascend };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::none: return "none";
    case Mode::noise: return "noise";
    case Mode::project: return "project";
    case Mode::ascend: return "ascend";
  }
  return "?";
}

inline Mode mode_from_string(const std::string& s) {
  if (s == "none") return Mode::none;
  if (s == "noise") return Mode::noise;
  if (s == "project") return Mode::project;
  if (s == "ascend") return Mode::ascend;
  throw ValidationError("unknown mode '" + s + "' (expected none|noise|project|ascend)");
}

struct AnsConfig {
  double radius = 8.0;
  double gamma = 2.0;
  double step_size = 2.0;  // radius / 4
  std::size_t ascent_steps = 5;
  double lambda = 0.5;
  double noise_cov_scale = 4.0;
  Mode mode = Mode::ascend;

  void validate() const {
    if (!(radius > 0.0)) throw ValidationError("radius must be positive");
    if (!(gamma > 1.0)) throw ValidationError("gamma must be > 1");
    if (!(step_size > 0.0)) throw ValidationError("step_size must be positive");
    if (!(lambda >= 0.0)) throw ValidationError("lambda must be non-negative");
    if (!(noise_cov_scale > 0.0)) throw ValidationError("noise_cov_scale must be positive");
    if (mode == Mode::ascend && ascent_steps < 1) throw ValidationError("mode ascend requires ascent_steps >= 1");
  }
  bool operator==(const AnsConfig&) const = default;
};

struct ShellSpec {
  std::vector<double> anchor;
  double inner = 0.0;
  double outer = 0.0;
};

struct NegativeBatch {
  Matrix anchors;
  Matrix negatives;
  std::vector<double> distances;
};

// sqrt(2 * tr(Sigma)): the expected pairwise distance bound for a
// distribution with the given diagonal covariance.
inline double estimate_radius_bound(std::span<const double> cov_diag) {
  double tr = 0.0;
  for (double v : cov_diag) {
    if (v < 0.0 || !std::isfinite(v)) throw ValidationError("covariance entries must be finite and >= 0");
    tr += v;
  }
  return std::sqrt(2.0 * tr);
}

inline Matrix sample_noise(std::size_t rows, std::span<const double> cov_diag, double scale, std::uint64_t seed) {
  if (scale < 0.0) throw ValidationError("noise scale must be >= 0");
  const std::size_t d = cov_diag.size();
  std::vector<double> sd(d);
  for (std::size_t j = 0; j < d; ++j) {
    if (cov_diag[j] < 0.0) throw ValidationError("covariance entries must be >= 0");
    sd[j] = std::sqrt(scale * cov_diag[j]);
  }
  Matrix eps(rows, d);
  Rng rng = make_rng(seed);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < d; ++j) eps(i, j) = sd[j] * standard_normal(rng);
  return eps;
}

inline Matrix sample_noise(const Matrix& anchors, std::span<const double> cov_diag, double scale,
                           std::uint64_t seed) {
  if (anchors.cols() != cov_diag.size()) throw ShapeError("noise: cov_diag length != anchor dimension");
  return sample_noise(anchors.rows(), cov_diag, scale, seed);
}

// Radial clamp of |candidate - anchor| into [r, gamma * r]. A candidate that
// coincides with the anchor is sent along a seeded random unit direction to
// radius r.
inline std::vector<double> project_to_shell(std::span<const double> anchor, std::span<const double> candidate,
                                            double r, double gamma, std::uint64_t seed = 0) {
  if (!(r > 0.0)) throw ValidationError("radius must be positive");
  if (!(gamma > 1.0)) throw ValidationError("gamma must be > 1");
  if (anchor.size() != candidate.size()) throw ShapeError("projection: dimension mismatch");
  const std::size_t d = anchor.size();
  std::vector<double> out(candidate.begin(), candidate.end());
  const double t = l2_distance(candidate, anchor);
  const double outer = gamma * r;
  // Points already within rounding of the shell are kept, which makes the
  // projection idempotent.
  constexpr double kSlack = 1e-12;
  if (t >= r * (1.0 - kSlack) && t <= outer * (1.0 + kSlack)) return out;

  if (t == 0.0) {
    Rng rng = make_rng(seed);
    std::vector<double> dir(d);
    double n = 0.0;
    while (n == 0.0) {
      for (auto& v : dir) v = standard_normal(rng);
      n = l2_norm(dir);
    }
    for (std::size_t j = 0; j < d; ++j) out[j] = anchor[j] + r * dir[j] / n;
    return out;
  }
  const double target = t > outer ? outer : r;
  const double alpha = target / t;
  for (std::size_t j = 0; j < d; ++j) out[j] = anchor[j] + alpha * (candidate[j] - anchor[j]);
  return out;
}

// k steps of eps <- eps + eta * grad / |grad| on log(1 + exp(g(z + eps))),
// normalized per sample. Samples with a zero gradient stay put for the step.
inline Matrix ascend(const nn::MlpModel& head, const Matrix& anchors, Matrix eps, std::size_t k, double eta) {
  if (head.spec.output_dim() != 1) throw ShapeError("ascend: head must have output width 1");
  if (anchors.rows() != eps.rows() || anchors.cols() != eps.cols()) throw ShapeError("ascend: shape mismatch");
  const std::size_t m = anchors.rows(), d = anchors.cols();
  for (std::size_t step = 0; step < k; ++step) {
    Matrix x(m, d);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = anchors.data()[i] + eps.data()[i];
    auto fwd = nn::mlp_forward(head, x, false);
    Matrix upstream(m, 1);
    for (std::size_t i = 0; i < m; ++i) upstream(i, 0) = sigmoid(fwd.logits(i, 0));
    const auto grads = nn::mlp_backward(head, fwd.cache, upstream);
    for (std::size_t i = 0; i < m; ++i) {
      auto g = grads.input_grads.row(i);
      const double n = l2_norm(g);
      if (n == 0.0 || !std::isfinite(n)) continue;
      auto e = eps.row(i);
      for (std::size_t j = 0; j < d; ++j) e[j] += eta * g[j] / n;
    }
  }
  return eps;
}

// Composes noise, optional ascent and optional projection according to
// cfg.mode. The head is only read in ascend mode and may be null otherwise.
inline NegativeBatch generate_negatives(const nn::MlpModel* head, const Matrix& positives,
                                        std::span<const double> cov_diag, const AnsConfig& cfg,
                                        std::uint64_t seed) {
  cfg.validate();
  if (cfg.mode == Mode::none) throw ValidationError("generate_negatives called with mode none");
  if (cfg.mode == Mode::ascend && head == nullptr) throw ValidationError("ascend mode requires a head");

  Matrix eps = sample_noise(positives, cov_diag, cfg.noise_cov_scale, mix_seed(seed, 0));
  if (cfg.mode == Mode::ascend) eps = ascend(*head, positives, std::move(eps), cfg.ascent_steps, cfg.step_size);

  NegativeBatch nb{positives, Matrix(positives.rows(), positives.cols()), std::vector<double>(positives.rows())};
  for (std::size_t i = 0; i < positives.rows(); ++i) {
    auto a = positives.row(i);
    auto e = eps.row(i);
    auto out = nb.negatives.row(i);
    for (std::size_t j = 0; j < a.size(); ++j) out[j] = a[j] + e[j];
    if (cfg.mode != Mode::noise) {
      auto p = project_to_shell(a, out, cfg.radius, cfg.gamma, mix_seed(seed, 1, i));
      std::copy(p.begin(), p.end(), out.begin());
    }
    nb.distances[i] = l2_distance(out, a);
  }
  return nb;
}

// ---- losses --------------------------------------------------------------

struct ForwardOptions {
  bool train = false;
  std::uint64_t seed = 0;
};

struct LossResult {
  double loss = 0.0;
  Matrix input_grads;
  nn::MlpParams param_grads;
};

// mean_i log(1 + exp(g(negatives_i)))
inline LossResult syn_loss(const nn::MlpModel& head, const Matrix& negatives, ForwardOptions opts = {}) {
  if (head.spec.output_dim() != 1) throw ShapeError("syn_loss: head must have output width 1");
  if (negatives.rows() == 0) throw ValidationError("syn_loss: empty negative batch");
  auto fwd = nn::mlp_forward(head, negatives, opts.train, opts.seed);
  const double m = static_cast<double>(negatives.rows());
  LossResult out;
  Matrix upstream(negatives.rows(), 1);
  for (std::size_t i = 0; i < negatives.rows(); ++i) {
    const double g = fwd.logits(i, 0);
    out.loss += softplus(g);
    upstream(i, 0) = sigmoid(g) / m;
  }
  out.loss /= m;
  auto grads = nn::mlp_backward(head, fwd.cache, upstream);
  out.input_grads = std::move(grads.input_grads);
  out.param_grads = std::move(grads.param_grads);
  return out;
}

// mean log(1 + exp(-g(pos))) + mean log(1 + exp(g(neg))). Input gradients
// are returned with positive rows first.
inline LossResult rest_loss(const nn::MlpModel& head, const Matrix& positives, const Matrix& known_negatives,
                            ForwardOptions opts = {}) {
  if (head.spec.output_dim() != 1) throw ShapeError("rest_loss: head must have output width 1");
  if (positives.rows() == 0 || known_negatives.rows() == 0)
    throw ValidationError("rest_loss: positive and negative sets must be non-empty");
  const Matrix x = vstack(positives, known_negatives);
  auto fwd = nn::mlp_forward(head, x, opts.train, opts.seed);
  const std::size_t p = positives.rows();
  const double np = static_cast<double>(p), nn_ = static_cast<double>(known_negatives.rows());
  double pos_sum = 0.0, neg_sum = 0.0;
  Matrix upstream(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double g = fwd.logits(i, 0);
    if (i < p) {
      pos_sum += softplus(-g);
      upstream(i, 0) = -sigmoid(-g) / np;
    } else {
      neg_sum += softplus(g);
      upstream(i, 0) = sigmoid(g) / nn_;
    }
  }
  LossResult out;
  out.loss = pos_sum / np + neg_sum / nn_;
  auto grads = nn::mlp_backward(head, fwd.cache, upstream);
  out.input_grads = std::move(grads.input_grads);
  out.param_grads = std::move(grads.param_grads);
  return out;
}

inline double open_loss(double rest, double syn, double lambda) {
  if (lambda < 0.0) throw ValidationError("lambda must be non-negative");
  return rest + lambda * syn;
}

// ---- JSON ----------------------------------------------------------------

inline nlohmann::json to_json(const AnsConfig& c) {
  return {{"radius", c.radius},
          {"gamma", c.gamma},
          {"step_size", c.step_size},
          {"ascent_steps", c.ascent_steps},
          {"lambda", c.lambda},
          {"noise_cov_scale", c.noise_cov_scale},
          {"mode", to_string(c.mode)}};
}

// Missing fields keep the values of `base`. When radius is given without
// step_size, step_size follows as radius / 4.
inline AnsConfig ans_config_from_json(const nlohmann::json& j, AnsConfig base = {}) {
  AnsConfig c = base;
  try {
    c.radius = j.value("radius", c.radius);
    c.gamma = j.value("gamma", c.gamma);
    if (j.contains("step_size"))
      c.step_size = j.at("step_size").get<double>();
    else if (j.contains("radius"))
      c.step_size = c.radius / 4.0;
    c.ascent_steps = j.value("ascent_steps", c.ascent_steps);
    c.lambda = j.value("lambda", c.lambda);
    c.noise_cov_scale = j.value("noise_cov_scale", c.noise_cov_scale);
    if (j.contains("mode")) c.mode = mode_from_string(j.at("mode").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed ans config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace ans::sampler
