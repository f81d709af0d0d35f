#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <string_view>

#include "copulagraph/autodiff.hpp"
#include "copulagraph/errors.hpp"
#include "copulagraph/graph.hpp"

// Base predictors (MLP, GCN, mean-aggregator SAGE) and the pairwise edge
// regressor used by the regression-based precision.
namespace copulagraph::nets {

using ad::Tape;
using ad::Value;

enum class BaseModel { MLP, GCN, SAGE };
enum class Activation { ReLU, Identity };

inline std::string_view to_string(BaseModel b) {
  switch (b) {
    case BaseModel::MLP: return "mlp";
    case BaseModel::GCN: return "gcn";
    case BaseModel::SAGE: return "sage";
  }
  return "?";
}

struct NetConfig {
  std::size_t in_dim = 0;
  std::size_t hidden_dim = 16;
  std::size_t layers = 2;
  Activation activation = Activation::ReLU;

  void validate() const {
    if (in_dim == 0) throw ConfigError("NetConfig.in_dim must be >= 1");
    if (hidden_dim == 0) throw ConfigError("NetConfig.hidden_dim must be >= 1");
    if (layers == 0) throw ConfigError("NetConfig.layers must be >= 1");
  }

  std::size_t fan_in(std::size_t layer) const { return layer == 0 ? in_dim : hidden_dim; }
  std::size_t fan_out(std::size_t layer) const { return layer + 1 == layers ? 1 : hidden_dim; }
};

// Named parameter arrays; std::map keeps iteration order deterministic.
using ParamSet = std::map<std::string, Matrix>;
using BoundParams = std::map<std::string, Value>;

inline BoundParams bind(Tape& tape, const ParamSet& params) {
  BoundParams out;
  for (const auto& [name, m] : params) out.emplace(name, tape.variable(m));
  return out;
}

inline ParamSet gradients(const BoundParams& bound) {
  ParamSet out;
  for (const auto& [name, v] : bound) out.emplace(name, v.grad());
  return out;
}

inline const Value& param(const BoundParams& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw ShapeError("missing parameter '" + name + "'");
  return it->second;
}

// Glorot-uniform weights, zero biases.
inline Matrix glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = dist(rng);
  }
  return w;
}

inline std::string layer_name(const std::string& prefix, const char* what, std::size_t l) {
  return prefix + what + std::to_string(l);
}

inline ParamSet init_base(BaseModel base, const NetConfig& cfg, std::mt19937_64& rng,
                          const std::string& prefix = "net.") {
  cfg.validate();
  ParamSet p;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto fi = cfg.fan_in(l), fo = cfg.fan_out(l);
    if (base == BaseModel::SAGE) {
      p[layer_name(prefix, "Wself", l)] = glorot(fi, fo, rng);
      p[layer_name(prefix, "Wneigh", l)] = glorot(fi, fo, rng);
    } else {
      p[layer_name(prefix, "W", l)] = glorot(fi, fo, rng);
    }
    p[layer_name(prefix, "b", l)] = Matrix::Zero(1, fo);
  }
  return p;
}

// h takes the concatenation [x_i, x_j].
inline NetConfig pair_regressor_config(std::size_t feature_dim, std::size_t hidden_dim = 16) {
  return NetConfig{2 * feature_dim, hidden_dim, 2, Activation::ReLU};
}

inline ParamSet init_pair_regressor(const NetConfig& cfg, std::mt19937_64& rng,
                                    const std::string& prefix = "pair.") {
  return init_base(BaseModel::MLP, cfg, rng, prefix);
}

namespace detail {

inline Value activate(const Value& h, Activation act) {
  return act == Activation::ReLU ? ad::relu(h) : h;
}

inline void require_features(const Value& x, const NetConfig& cfg) {
  cfg.validate();
  if (static_cast<std::size_t>(x.cols()) != cfg.in_dim) {
    throw ShapeError("expected " + std::to_string(cfg.in_dim) + " feature columns, got " +
                     std::to_string(x.cols()));
  }
}

}  // namespace detail

// Layer-wise affine maps with activation between layers; the last layer is linear.
inline Value mlp_forward(const BoundParams& p, const Value& x, const NetConfig& cfg,
                         const std::string& prefix = "net.") {
  detail::require_features(x, cfg);
  Value h = x;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    h = ad::add_bias(ad::matmul(h, param(p, layer_name(prefix, "W", l))),
                     param(p, layer_name(prefix, "b", l)));
    if (l + 1 < cfg.layers) h = detail::activate(h, cfg.activation);
  }
  return h;
}

// H' = act(S H W + b) with S the renormalized operator D~^{-1/2} A~ D~^{-1/2}.
inline Value gcn_forward(const BoundParams& p, const Value& x, const Value& propagation,
                         const NetConfig& cfg, const std::string& prefix = "net.") {
  detail::require_features(x, cfg);
  if (propagation.rows() != x.rows() || propagation.cols() != x.rows()) {
    throw ShapeError("gcn_forward: propagation operator does not match node count");
  }
  Value h = x;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    h = ad::add_bias(ad::matmul(propagation, ad::matmul(h, param(p, layer_name(prefix, "W", l)))),
                     param(p, layer_name(prefix, "b", l)));
    if (l + 1 < cfg.layers) h = detail::activate(h, cfg.activation);
  }
  return h;
}

// h' = act(W_self h + W_neigh mean_{j in N(i)} h_j + b); full neighborhoods.
inline Value sage_forward(const BoundParams& p, const Value& x, const Value& neighbor_mean,
                          const NetConfig& cfg, const std::string& prefix = "net.") {
  detail::require_features(x, cfg);
  if (neighbor_mean.rows() != x.rows() || neighbor_mean.cols() != x.rows()) {
    throw ShapeError("sage_forward: aggregation operator does not match node count");
  }
  Value h = x;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const Value self = ad::matmul(h, param(p, layer_name(prefix, "Wself", l)));
    const Value neigh = ad::matmul(ad::matmul(neighbor_mean, h), param(p, layer_name(prefix, "Wneigh", l)));
    h = ad::add_bias(ad::add(self, neigh), param(p, layer_name(prefix, "b", l)));
    if (l + 1 < cfg.layers) h = detail::activate(h, cfg.activation);
  }
  return h;
}

// Dense graph operators consumed by the base networks.
struct GraphOperators {
  Matrix propagation;    // GCN
  Matrix neighbor_mean;  // SAGE

  static GraphOperators from(const Graph& g) {
    return {gcn_propagation_operator(g), neighbor_mean_operator(g)};
  }
};

inline Value base_forward(BaseModel base, const BoundParams& p, const Value& x,
                          const GraphOperators& ops, const NetConfig& cfg,
                          const std::string& prefix = "net.") {
  Tape& t = x.tape();
  switch (base) {
    case BaseModel::MLP: return mlp_forward(p, x, cfg, prefix);
    case BaseModel::GCN: return gcn_forward(p, x, t.constant(ops.propagation), cfg, prefix);
    case BaseModel::SAGE: return sage_forward(p, x, t.constant(ops.neighbor_mean), cfg, prefix);
  }
  throw ConfigError("unknown base model");
}

// Batched h over rows of [x_i, x_j]; returns one scalar per row.
inline Value pair_regressor_forward(const BoundParams& p, const Value& pairs, const NetConfig& cfg,
                                    const std::string& prefix = "pair.") {
  return mlp_forward(p, pairs, cfg, prefix);
}

inline Value pair_regressor_forward(const BoundParams& p, const Value& xi, const Value& xj,
                                    const NetConfig& cfg, const std::string& prefix = "pair.") {
  if (xi.rows() != 1 || xj.rows() != 1 || xi.cols() != xj.cols()) {
    throw ShapeError("pair_regressor_forward: expected two 1 x d feature rows");
  }
  return mlp_forward(p, ad::concat_cols(xi, xj), cfg, prefix);
}

}  // namespace copulagraph::nets
