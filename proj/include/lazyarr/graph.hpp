#pragma once

// Graph inputs and verification oracles: generators, Matrix Market loading,
// and direct (client-free) triangle and betweenness computations used to
// check the benchmark results.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include "lazyarr/core.hpp"

namespace lazyarr {

// Undirected simple graph: normalized edges (u < v), sorted, deduplicated.
struct EdgeList {
  std::int64_t n = 0;
  std::vector<std::pair<std::int32_t, std::int32_t>> edges;

  void normalize() {
    for (auto& [u, v] : edges)
      if (u > v) std::swap(u, v);
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  }

  std::vector<std::vector<std::int32_t>> adjacency() const {
    std::vector<std::vector<std::int32_t>> adj(static_cast<std::size_t>(n));
    for (auto [u, v] : edges) {
      adj[u].push_back(v);
      adj[v].push_back(u);
    }
    for (auto& nbr : adj) std::sort(nbr.begin(), nbr.end());
    return adj;
  }
};

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

inline EdgeList make_complete(std::int64_t n) {
  EdgeList g;
  g.n = n;
  for (std::int32_t i = 0; i < n; ++i)
    for (std::int32_t j = i + 1; j < n; ++j) g.edges.emplace_back(i, j);
  return g;
}

inline EdgeList make_path(std::int64_t n) {
  EdgeList g;
  g.n = n;
  for (std::int32_t i = 0; i + 1 < n; ++i) g.edges.emplace_back(i, i + 1);
  return g;
}

// Node 0 is the hub.
inline EdgeList make_star(std::int64_t n) {
  EdgeList g;
  g.n = n;
  for (std::int32_t i = 1; i < n; ++i) g.edges.emplace_back(0, i);
  return g;
}

inline EdgeList make_gnp(std::int64_t n, double p, std::uint64_t seed) {
  EdgeList g;
  g.n = n;
  std::uint64_t index = 0;
  for (std::int32_t i = 0; i < n; ++i)
    for (std::int32_t j = i + 1; j < n; ++j) {
      const double u = static_cast<double>(mix64(seed, index++) >> 11) * 0x1.0p-53;
      if (u < p) g.edges.emplace_back(i, j);
    }
  return g;
}

// ---------------------------------------------------------------------------
// Matrix Market ingestion
// ---------------------------------------------------------------------------

// Coordinate format, real/integer/pattern, general or symmetric. The matrix
// is read as an undirected simple graph: self-loops dropped, duplicates
// merged, 1-based indices shifted to 0-based.
inline EdgeList load_matrix_market(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) fail("parse error", "empty matrix market file");
  std::istringstream header(line);
  std::string banner, object, format, field, symmetry;
  header >> banner >> object >> format >> field >> symmetry;
  if (banner != "%%MatrixMarket" || object != "matrix")
    fail("parse error", "bad matrix market banner");
  if (format != "coordinate") fail("parse error", "only coordinate format supported");
  if (field != "real" && field != "integer" && field != "pattern")
    fail("parse error", "unsupported field '" + field + "'");
  if (symmetry != "general" && symmetry != "symmetric")
    fail("parse error", "unsupported symmetry '" + symmetry + "'");

  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '%') break;
  }
  std::istringstream dims(line);
  std::int64_t rows = -1, cols = -1, nnz = -1;
  dims >> rows >> cols >> nnz;
  if (rows < 0 || cols < 0 || nnz < 0) fail("parse error", "bad dimensions line");
  if (rows != cols) fail("parse error", "adjacency matrix must be square");

  EdgeList g;
  g.n = rows;
  for (std::int64_t k = 0; k < nnz; ++k) {
    if (!std::getline(in, line)) fail("parse error", "truncated entry list");
    std::istringstream entry(line);
    std::int64_t i = 0, j = 0;
    if (!(entry >> i >> j)) fail("parse error", "bad entry '" + line + "'");
    if (i < 1 || i > rows || j < 1 || j > rows)
      fail("index-range error", "entry (" + std::to_string(i) + ", " +
                                    std::to_string(j) + ") outside 1.." +
                                    std::to_string(rows));
    if (i == j) continue;
    g.edges.emplace_back(static_cast<std::int32_t>(i - 1),
                         static_cast<std::int32_t>(j - 1));
  }
  g.normalize();
  return g;
}

inline EdgeList load_matrix_market_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("parse error", "cannot open '" + path + "'");
  return load_matrix_market(in);
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

inline constexpr std::int64_t kOracleNodeLimit = 256;

inline std::int64_t oracle_triangles(const EdgeList& g) {
  if (g.n > kOracleNodeLimit) fail("resource error", "oracle limited to 256 nodes");
  const std::size_t n = static_cast<std::size_t>(g.n);
  std::vector<std::uint8_t> adj(n * n, 0);
  for (auto [u, v] : g.edges) {
    adj[static_cast<std::size_t>(u) * n + v] = 1;
    adj[static_cast<std::size_t>(v) * n + u] = 1;
  }
  std::int64_t count = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!adj[i * n + j]) continue;
      for (std::size_t k = j + 1; k < n; ++k)
        if (adj[i * n + k] && adj[j * n + k]) ++count;
    }
  return count;
}

struct BcOracleResult {
  std::vector<double> delta;  // Brandes dependency, source entry fixed at 0
  std::vector<double> sigma;  // shortest-path counts, 0 when unreachable
};

// Single-source Brandes: BFS path counting plus the backward dependency
// accumulation over the shortest-path DAG.
inline BcOracleResult oracle_bc(const EdgeList& g, std::int64_t source) {
  if (g.n > kOracleNodeLimit) fail("resource error", "oracle limited to 256 nodes");
  if (source < 0 || source >= g.n) fail("argument error", "source out of range");
  const std::size_t n = static_cast<std::size_t>(g.n);
  const auto adj = g.adjacency();

  std::vector<std::int64_t> dist(n, -1);
  std::vector<double> sigma(n, 0.0), delta(n, 0.0);
  std::vector<std::size_t> order;
  order.reserve(n);

  std::queue<std::size_t> frontier;
  const auto s = static_cast<std::size_t>(source);
  dist[s] = 0;
  sigma[s] = 1.0;
  frontier.push(s);
  while (!frontier.empty()) {
    const std::size_t v = frontier.front();
    frontier.pop();
    order.push_back(v);
    for (auto w : adj[v]) {
      const auto wi = static_cast<std::size_t>(w);
      if (dist[wi] < 0) {
        dist[wi] = dist[v] + 1;
        frontier.push(wi);
      }
      if (dist[wi] == dist[v] + 1) sigma[wi] += sigma[v];
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const std::size_t w = *it;
    for (auto v : adj[w]) {
      const auto vi = static_cast<std::size_t>(v);
      if (dist[vi] == dist[w] - 1)
        delta[vi] += sigma[vi] / sigma[w] * (1.0 + delta[w]);
    }
  }
  delta[s] = 0.0;
  return {std::move(delta), std::move(sigma)};
}

}  // namespace lazyarr
