#pragma once

// Brute-force verifiers. None of these reuse the code paths they check:
// the gradient oracle re-evaluates the network with its own nested loops,
// the projection oracle searches a dense shell grid, and the distance
// oracle is plain Monte Carlo.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ans/error.hpp"
#include "ans/matrix.hpp"
#include "ans/nn.hpp"
#include "ans/random.hpp"

namespace ans::oracles {

struct OracleReport {
  std::string name;
  double error = 0.0;      // max relative error, distance to grid optimum, or bound slack
  double tolerance = 0.0;
  std::size_t samples = 0;
  bool pass = false;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const OracleReport& r) {
  return {{"name", r.name}, {"error", r.error}, {"tolerance", r.tolerance},
          {"samples", r.samples}, {"pass", r.pass}, {"seed", r.seed}};
}

// ---- gradients ------------------------------------------------------------

inline constexpr double kFiniteDiffStep = 1e-4;
inline constexpr double kGradRelTol = 1e-4;
inline constexpr double kGradAbsFloor = 1e-8;
inline constexpr std::size_t kGradMaxDim = 32;

using BackwardFn = std::function<nn::GradientBundle(const nn::MlpModel&, const Matrix& batch, const Matrix& upstream)>;

inline nn::GradientBundle library_backward(const nn::MlpModel& m, const Matrix& x, const Matrix& up) {
  auto fwd = nn::mlp_forward(m, x, false);
  return nn::mlp_backward(m, fwd.cache, up);
}

namespace detail {

// sum_{n,o} U[n][o] * f(x_n)[o], evaluated layer by layer with nested vectors.
// When `pattern` is given it receives the on/off state of every hidden unit.
inline double reference_objective(const std::vector<std::vector<std::vector<double>>>& W,
                                  const std::vector<std::vector<double>>& B,
                                  const std::vector<std::vector<double>>& X,
                                  const std::vector<std::vector<double>>& U,
                                  std::vector<char>* pattern = nullptr) {
  if (pattern) pattern->clear();
  double total = 0.0;
  for (std::size_t n = 0; n < X.size(); ++n) {
    std::vector<double> h = X[n];
    for (std::size_t l = 0; l < W.size(); ++l) {
      std::vector<double> next(W[l].size());
      for (std::size_t o = 0; o < W[l].size(); ++o) {
        double s = B[l][o];
        for (std::size_t i = 0; i < h.size(); ++i) s += W[l][o][i] * h[i];
        const bool hidden = l + 1 < W.size();
        if (hidden && pattern) pattern->push_back(s > 0.0);
        next[o] = hidden ? (s > 0.0 ? s : 0.0) : s;
      }
      h = std::move(next);
    }
    for (std::size_t o = 0; o < h.size(); ++o) total += U[n][o] * h[o];
  }
  return total;
}

inline double rel_error(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= kGradAbsFloor) return 0.0;
  return diff / std::max(std::abs(analytic), std::abs(numeric));
}

}  // namespace detail

// Central finite differences against the analytic backward for every
// parameter and input coordinate of a seeded random network. A coordinate
// whose +-h probe flips any ReLU has no usable difference quotient and is
// skipped; `samples` counts the coordinates actually compared.
inline OracleReport check_gradients(nn::MlpSpec spec, std::uint64_t seed,
                                    const BackwardFn& backward = library_backward) {
  spec.validate();
  if (spec.num_layers() > 3) throw ValidationError("gradient oracle supports at most 3 layers");
  for (auto d : spec.layer_dims)
    if (d > kGradMaxDim) throw ValidationError("gradient oracle supports dims <= 32");
  spec.dropout_rate = 0.0;

  Rng rng = make_rng(mix_seed(seed, 7));
  auto model = nn::MlpModel::init(spec, mix_seed(seed, 0));
  std::uniform_real_distribution<double> ub(-0.5, 0.5);
  for (auto& l : model.params.layers)
    for (auto& b : l.bias) b = ub(rng);

  constexpr std::size_t kRows = 4;
  Matrix x(kRows, spec.input_dim()), up(kRows, spec.output_dim());
  for (auto& v : x.data()) v = standard_normal(rng);
  for (auto& v : up.data()) v = standard_normal(rng);

  const auto analytic = backward(model, x, up);

  std::vector<std::vector<std::vector<double>>> W;
  std::vector<std::vector<double>> B;
  for (const auto& l : model.params.layers) {
    std::vector<std::vector<double>> w(l.weight.rows());
    for (std::size_t r = 0; r < l.weight.rows(); ++r) w[r].assign(l.weight.row(r).begin(), l.weight.row(r).end());
    W.push_back(std::move(w));
    B.push_back(l.bias);
  }
  std::vector<std::vector<double>> X(kRows), U(kRows);
  for (std::size_t n = 0; n < kRows; ++n) {
    X[n].assign(x.row(n).begin(), x.row(n).end());
    U[n].assign(up.row(n).begin(), up.row(n).end());
  }

  const double h = kFiniteDiffStep;
  double worst = 0.0;
  std::size_t checked = 0;
  std::vector<char> base, plus, minus;
  detail::reference_objective(W, B, X, U, &base);
  auto probe = [&](double& slot, double a) {
    const double keep = slot;
    slot = keep + h;
    const double fp = detail::reference_objective(W, B, X, U, &plus);
    slot = keep - h;
    const double fm = detail::reference_objective(W, B, X, U, &minus);
    slot = keep;
    if (plus != base || minus != base) return;
    worst = std::max(worst, detail::rel_error(a, (fp - fm) / (2.0 * h)));
    ++checked;
  };

  const auto& G = analytic.param_grads;
  if (G.layers.size() != W.size()) throw ShapeError("gradient oracle: backward returned wrong layer count");
  for (std::size_t l = 0; l < W.size(); ++l) {
    for (std::size_t o = 0; o < W[l].size(); ++o) {
      for (std::size_t i = 0; i < W[l][o].size(); ++i) probe(W[l][o][i], G.layers[l].weight(o, i));
      probe(B[l][o], G.layers[l].bias[o]);
    }
  }
  for (std::size_t n = 0; n < kRows; ++n)
    for (std::size_t i = 0; i < X[n].size(); ++i) probe(X[n][i], analytic.input_grads(n, i));

  return {"grad", worst, kGradRelTol, checked, worst <= kGradRelTol, seed};
}

// ---- shell projection -----------------------------------------------------

struct ShellGrid {
  std::vector<std::vector<double>> points;
  double spacing = 0.0;
};

// Polar (d=2) or spherical (d=3) grid over the shell r <= |u - anchor| <= gamma r.
// `resolution` is the number of radial intervals; angular steps are chosen so
// arc length at the outer radius matches the radial step.
inline ShellGrid shell_grid(std::span<const double> anchor, double r, double gamma, std::size_t resolution) {
  const std::size_t d = anchor.size();
  if (d != 2 && d != 3) throw ValidationError("dense shell grid supports d in {2, 3}");
  if (resolution < 1) throw ValidationError("resolution must be >= 1");
  const double outer = gamma * r;
  const double dr = (outer - r) / static_cast<double>(resolution);
  const double pi = std::numbers::pi;
  ShellGrid g;
  if (d == 2) {
    const auto na = static_cast<std::size_t>(std::ceil(2.0 * pi * outer / dr));
    const double dth = 2.0 * pi / static_cast<double>(na);
    g.spacing = std::max(dr, outer * dth);
    for (std::size_t k = 0; k <= resolution; ++k) {
      const double rad = r + dr * static_cast<double>(k);
      for (std::size_t a = 0; a < na; ++a) {
        const double th = dth * static_cast<double>(a);
        g.points.push_back({anchor[0] + rad * std::cos(th), anchor[1] + rad * std::sin(th)});
      }
    }
  } else {
    const auto nt = static_cast<std::size_t>(std::ceil(pi * outer / dr));
    const auto np = 2 * nt;
    const double dt = pi / static_cast<double>(nt), dp = 2.0 * pi / static_cast<double>(np);
    g.spacing = std::max({dr, outer * dt, outer * dp});
    for (std::size_t k = 0; k <= resolution; ++k) {
      const double rad = r + dr * static_cast<double>(k);
      for (std::size_t t = 0; t <= nt; ++t) {
        const double th = dt * static_cast<double>(t);
        for (std::size_t p = 0; p < np; ++p) {
          const double ph = dp * static_cast<double>(p);
          g.points.push_back({anchor[0] + rad * std::sin(th) * std::cos(ph),
                              anchor[1] + rad * std::sin(th) * std::sin(ph), anchor[2] + rad * std::cos(th)});
        }
      }
    }
  }
  return g;
}

// Closest grid point to `target`, optionally restricted by `admissible`.
inline std::optional<std::vector<double>> grid_argmin(
    const ShellGrid& g, std::span<const double> target,
    const std::function<bool(const std::vector<double>&)>& admissible = {}) {
  double best = std::numeric_limits<double>::infinity();
  const std::vector<double>* arg = nullptr;
  for (const auto& p : g.points) {
    if (admissible && !admissible(p)) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) s += (p[j] - target[j]) * (p[j] - target[j]);
    if (s < best) {
      best = s;
      arg = &p;
    }
  }
  if (!arg) return std::nullopt;
  return *arg;
}

// Checks an analytic projection against the dense-grid argmin over the shell.
inline OracleReport projection_oracle(std::span<const double> anchor, std::span<const double> candidate,
                                      std::span<const double> analytic, double r, double gamma,
                                      std::size_t resolution) {
  const auto grid = shell_grid(anchor, r, gamma, resolution);
  const auto best = grid_argmin(grid, candidate);
  double dist_to_best = 0.0;
  for (std::size_t j = 0; j < anchor.size(); ++j) dist_to_best += ((*best)[j] - analytic[j]) * ((*best)[j] - analytic[j]);
  dist_to_best = std::sqrt(dist_to_best);
  double t = 0.0;
  for (std::size_t j = 0; j < anchor.size(); ++j) t += (analytic[j] - anchor[j]) * (analytic[j] - anchor[j]);
  t = std::sqrt(t);
  const bool in_shell = t >= r - 1e-9 && t <= gamma * r + 1e-9;
  const double tol = 2.0 * grid.spacing;
  return {"projection", dist_to_best, tol, grid.points.size(), in_shell && dist_to_best <= tol, 0};
}

// Grid argmin under the unrelaxed constraint: within gamma*r of anchors[i]
// and at least r away from every anchor of the category.
inline std::optional<std::vector<double>> full_constraint_projection(const std::vector<std::vector<double>>& anchors,
                                                                     std::size_t i, std::span<const double> candidate,
                                                                     double r, double gamma, std::size_t resolution) {
  const auto grid = shell_grid(anchors.at(i), r, gamma, resolution);
  return grid_argmin(grid, candidate, [&](const std::vector<double>& u) {
    for (const auto& a : anchors) {
      double s = 0.0;
      for (std::size_t j = 0; j < u.size(); ++j) s += (u[j] - a[j]) * (u[j] - a[j]);
      if (std::sqrt(s) < r) return false;
    }
    return true;
  });
}

// ---- pairwise distance bound ----------------------------------------------

enum class Distribution { gaussian, uniform };

inline Distribution distribution_from_string(const std::string& s) {
  if (s == "gaussian") return Distribution::gaussian;
  if (s == "uniform") return Distribution::uniform;
  throw ValidationError("unknown distribution '" + s + "'");
}

// Mean |x - y| over independent pairs from a zero-mean distribution with the
// given diagonal covariance; passes iff mean <= sqrt(2 tr Sigma) + 3 SE.
// error = bound + 3 SE - mean (non-negative on pass).
inline OracleReport prop1_monte_carlo(std::span<const double> cov_diag, Distribution dist, std::size_t pairs,
                                      std::uint64_t seed) {
  if (pairs < 10000) throw ValidationError("prop1 oracle needs at least 1e4 pairs");
  const std::size_t d = cov_diag.size();
  std::vector<double> scale(d);
  double tr = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    if (cov_diag[j] < 0.0) throw ValidationError("covariance entries must be >= 0");
    tr += cov_diag[j];
    // uniform on [-a, a] has variance a^2 / 3
    scale[j] = dist == Distribution::gaussian ? std::sqrt(cov_diag[j]) : std::sqrt(3.0 * cov_diag[j]);
  }
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  auto draw = [&](double s) { return s * (dist == Distribution::gaussian ? normal(rng) : unif(rng)); };

  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t p = 0; p < pairs; ++p) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = draw(scale[j]) - draw(scale[j]);
      s += diff * diff;
    }
    const double dist_xy = std::sqrt(s);
    sum += dist_xy;
    sum_sq += dist_xy * dist_xy;
  }
  const double n = static_cast<double>(pairs);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  const double se = std::sqrt(var / n);
  const double bound = std::sqrt(2.0 * tr);
  const double slack = bound + 3.0 * se - mean;
  return {dist == Distribution::gaussian ? "prop1_gaussian" : "prop1_uniform", slack, 0.0, pairs, slack >= 0.0, seed};
}

}  // namespace ans::oracles
