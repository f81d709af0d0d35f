#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "copulagraph/errors.hpp"

namespace copulagraph {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = std::vector<std::size_t>;

struct Edge {
  std::size_t u;
  std::size_t v;

  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

// Undirected simple graph. Edges are stored canonically (u < v) in
// lexicographic order; construction rejects self-loops, duplicates and
// out-of-range endpoints.
class Graph {
 public:
  Graph() = default;

  Graph(std::size_t n, std::vector<Edge> edges) : n_(n), edges_(std::move(edges)) {
    for (auto& e : edges_) {
      if (e.u >= n_ || e.v >= n_) {
        throw ConfigError("edge (" + std::to_string(e.u) + ", " + std::to_string(e.v) +
                          ") has an endpoint >= n = " + std::to_string(n_));
      }
      if (e.u == e.v) {
        throw ConfigError("self-loop at node " + std::to_string(e.u));
      }
      if (e.u > e.v) std::swap(e.u, e.v);
    }
    std::sort(edges_.begin(), edges_.end());
    auto dup = std::adjacent_find(edges_.begin(), edges_.end());
    if (dup != edges_.end()) {
      throw ConfigError("duplicate edge (" + std::to_string(dup->u) + ", " +
                        std::to_string(dup->v) + ")");
    }
    neighbors_.assign(n_, {});
    for (const auto& e : edges_) {
      neighbors_[e.u].push_back(e.v);
      neighbors_[e.v].push_back(e.u);
    }
    for (auto& nb : neighbors_) std::sort(nb.begin(), nb.end());
  }

  std::size_t num_nodes() const { return n_; }
  std::size_t num_edges() const { return edges_.size(); }
  std::span<const Edge> edges() const { return edges_; }
  std::span<const std::size_t> neighbors(std::size_t i) const { return neighbors_[i]; }
  std::size_t degree(std::size_t i) const { return neighbors_[i].size(); }

  Matrix adjacency() const {
    Matrix a = Matrix::Zero(n_, n_);
    for (const auto& e : edges_) {
      a(e.u, e.v) = 1.0;
      a(e.v, e.u) = 1.0;
    }
    return a;
  }

  Vector degrees() const {
    Vector d(n_);
    for (std::size_t i = 0; i < n_; ++i) d(i) = static_cast<double>(degree(i));
    return d;
  }

  // Relabel node i as perm[i].
  Graph permuted(std::span<const std::size_t> perm) const {
    std::vector<Edge> out;
    out.reserve(edges_.size());
    for (const auto& e : edges_) out.push_back({perm[e.u], perm[e.v]});
    return Graph(n_, std::move(out));
  }

 private:
  std::size_t n_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> neighbors_;
};

// L = D - A.
inline Matrix laplacian(const Graph& g) {
  Matrix l = -g.adjacency();
  l.diagonal() = g.degrees();
  return l;
}

// D~^{-1} A~ with A~ = A + I: uniform average over the closed neighborhood.
inline Matrix mean_aggregation_operator(const Graph& g) {
  Matrix m = g.adjacency();
  m.diagonal().setOnes();
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    m.row(i) /= static_cast<double>(g.degree(i) + 1);
  }
  return m;
}

// D^{-1/2} A D^{-1/2}. Isolated nodes get a zero row and column.
inline Matrix sym_normalized_adjacency(const Graph& g) {
  const std::size_t n = g.num_nodes();
  Vector s(n);
  for (std::size_t i = 0; i < n; ++i) {
    s(i) = g.degree(i) > 0 ? 1.0 / std::sqrt(static_cast<double>(g.degree(i))) : 0.0;
  }
  Matrix a = g.adjacency();
  return s.asDiagonal() * a * s.asDiagonal();
}

// GCN propagation operator D~^{-1/2} A~ D~^{-1/2}.
inline Matrix gcn_propagation_operator(const Graph& g) {
  const std::size_t n = g.num_nodes();
  Vector s(n);
  for (std::size_t i = 0; i < n; ++i) s(i) = 1.0 / std::sqrt(static_cast<double>(g.degree(i) + 1));
  Matrix a = g.adjacency();
  a.diagonal().setOnes();
  return s.asDiagonal() * a * s.asDiagonal();
}

// Mean over open neighborhoods, used by the SAGE aggregator; isolated rows are zero.
inline Matrix neighbor_mean_operator(const Graph& g) {
  Matrix m = g.adjacency();
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    if (g.degree(i) > 0) m.row(i) /= static_cast<double>(g.degree(i));
  }
  return m;
}

// Edge list: one "i j" pair per line, 0-indexed, each undirected pair once.
// Blank lines and lines starting with '#' are skipped.
inline Graph read_edge_list(std::istream& in, std::size_t n, const std::string& source = "edges.txt") {
  std::vector<Edge> edges;
  std::vector<std::size_t> lines;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    long long u = -1, v = -1;
    std::string extra;
    if (!(ss >> u >> v) || (ss >> extra)) {
      throw LoadError(source, lineno, "expected two whitespace-separated node indices");
    }
    if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n || static_cast<std::size_t>(v) >= n) {
      throw LoadError(source, lineno, "node index out of range [0, " + std::to_string(n) + ")");
    }
    if (u == v) throw LoadError(source, lineno, "self-loops are not allowed");
    edges.push_back({static_cast<std::size_t>(std::min(u, v)), static_cast<std::size_t>(std::max(u, v))});
    lines.push_back(lineno);
  }
  std::vector<std::size_t> order(edges.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return edges[a] < edges[b]; });
  for (std::size_t k = 1; k < order.size(); ++k) {
    if (edges[order[k]] == edges[order[k - 1]]) {
      throw LoadError(source, lines[order[k]], "duplicate edge (first listed on line " +
                                                   std::to_string(lines[order[k - 1]]) + ")");
    }
  }
  return Graph(n, std::move(edges));
}

inline void write_edge_list(std::ostream& out, const Graph& g) {
  for (const auto& e : g.edges()) out << e.u << ' ' << e.v << '\n';
}

}  // namespace copulagraph
