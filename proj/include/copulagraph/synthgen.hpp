#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <Eigen/Cholesky>

#include "copulagraph/errors.hpp"
#include "copulagraph/graph.hpp"

// Latent-space synthetic graphs with labels y ~ N(mu, Sigma):
//   A: mu = D~^{-1} A~ X w_y,  Sigma = sigma2 I
//   B: mu = X w_y,             Sigma = tau (L + gamma I)^{-1}
//   C: mu = D~^{-1} A~ X w_y,  Sigma = tau (L + gamma I)^{-1}
namespace copulagraph::synth {

enum class Setting { A, B, C };

inline std::string_view to_string(Setting s) {
  switch (s) {
    case Setting::A: return "A";
    case Setting::B: return "B";
    case Setting::C: return "C";
  }
  return "?";
}

inline Setting parse_setting(std::string_view s) {
  if (s == "A" || s == "a") return Setting::A;
  if (s == "B" || s == "b") return Setting::B;
  if (s == "C" || s == "c") return Setting::C;
  throw ConfigError("setting: expected one of A, B, C, got '" + std::string(s) + "'");
}

struct SynthConfig {
  std::size_t n = 300;
  std::size_t s = 5000;
  std::size_t d0 = 10;
  std::size_t d1 = 0;  // 0 means d0
  Setting setting = Setting::A;
  double sigma2 = 5.0;
  double tau = 1.0;
  double gamma = 0.1;
  std::uint64_t seed = 0;

  std::size_t latent_dim() const { return d1 == 0 ? d0 : d1; }

  void validate() const {
    if (n < 2) throw ConfigError("n: must be >= 2");
    if (d0 == 0) throw ConfigError("d0: must be >= 1");
    if (s > n * (n - 1) / 2) {
      throw ConfigError("s: " + std::to_string(s) + " exceeds n(n-1)/2 = " + std::to_string(n * (n - 1) / 2));
    }
    if (!(sigma2 > 0.0)) throw ConfigError("sigma2: must be > 0");
    if (!(tau > 0.0)) throw ConfigError("tau: must be > 0");
    if (!(gamma > 0.0)) throw ConfigError("gamma: must be > 0");
  }
};

struct SynthData {
  Graph graph;
  Matrix x;
  Vector y;
  Vector mu;
  Matrix w_graph;
  Vector w_label;
};

inline Matrix standard_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist;
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = dist(rng);
  }
  return m;
}

// The s node pairs with the smallest latent distance ||z_i - z_j||;
// ties resolve by lexicographic (i, j).
inline Graph latent_space_graph(const Matrix& z, std::size_t s) {
  const std::size_t n = static_cast<std::size_t>(z.rows());
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  pairs.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back((z.row(i) - z.row(j)).squaredNorm(), i, j);
  }
  if (s > pairs.size()) throw ConfigError("s: more edges requested than node pairs");
  std::nth_element(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(s), pairs.end());
  std::vector<Edge> edges;
  edges.reserve(s);
  for (std::size_t k = 0; k < s; ++k) edges.push_back({std::get<1>(pairs[k]), std::get<2>(pairs[k])});
  return Graph(n, std::move(edges));
}

inline Vector label_mean(Setting setting, const Graph& g, const Matrix& x, const Vector& w_label) {
  const Vector xw = x * w_label;
  if (setting == Setting::B) return xw;
  return mean_aggregation_operator(g) * xw;
}

// Precision of the label noise in settings B and C: (L + gamma I) / tau.
inline Matrix noise_precision(const Graph& g, double tau, double gamma) {
  Matrix k = laplacian(g);
  k.diagonal().array() += gamma;
  return k / tau;
}

// y = mu + noise; for B and C the noise is chol(K)^{-T} eps so Sigma is never formed.
inline Vector sample_labels(Setting setting, const Graph& g, const Vector& mu, double sigma2, double tau,
                            double gamma, std::mt19937_64& rng) {
  const std::size_t n = g.num_nodes();
  const Vector eps = standard_normal(n, 1, rng).col(0);
  if (setting == Setting::A) return mu + std::sqrt(sigma2) * eps;
  Eigen::LLT<Matrix> llt(noise_precision(g, tau, gamma));
  if (llt.info() != Eigen::Success) throw NumericalError("label precision is not positive definite");
  return mu + llt.matrixU().solve(eps);
}

inline SynthData generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  SynthData d;
  d.x = standard_normal(cfg.n, cfg.d0, rng);
  d.w_graph = standard_normal(cfg.d0, cfg.latent_dim(), rng);
  d.w_label = standard_normal(cfg.d0, 1, rng).col(0);
  d.graph = latent_space_graph(d.x * d.w_graph, cfg.s);
  d.mu = label_mean(cfg.setting, d.graph, d.x, d.w_label);
  d.y = sample_labels(cfg.setting, d.graph, d.mu, cfg.sigma2, cfg.tau, cfg.gamma, rng);
  return d;
}

struct Split {
  Index train;
  Index val;
  Index test;
};

// Seeded permutation split; part sizes are round(n * ratio) for the first
// two parts and the remainder for the third.
inline Split split(std::size_t n, std::array<double, 3> ratios, std::uint64_t seed) {
  for (double r : ratios) {
    if (!(r > 0.0)) throw ConfigError("split ratios must be positive");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1");
  }
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios[0]));
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios[1]));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
    throw ConfigError("split of " + std::to_string(n) + " nodes leaves an empty part");
  }
  Index perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  Split out;
  out.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                 perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

}  // namespace copulagraph::synth
