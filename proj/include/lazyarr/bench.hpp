#pragma once

// The graph benchmarks, written against the client API exactly as an
// interactive user would: temporaries are released immediately after the
// operation that consumes them, which is what exposes the reuse
// opportunities the optimizing client exploits.

#include <array>
#include <string>
#include <vector>

#include "lazyarr/client.hpp"
#include "lazyarr/graph.hpp"

namespace lazyarr {

inline constexpr std::int64_t kDenseNodeLimit = 512;    // O(n^3) client ops
inline constexpr std::int64_t kSparseNodeLimit = 4096;

// Client-side matrix as an array of row handles, with the transpose rows
// alongside so row-times-column products are one elementwise multiply.
struct DenseMatrix {
  std::int64_t n = 0;
  std::vector<ArrayHandle> rows;
  std::vector<ArrayHandle> rows_t;
};

inline void release_dense(LazyClient& client, DenseMatrix& m) {
  for (auto& h : m.rows) client.release(h);
  for (auto& h : m.rows_t) client.release(h);
  m.rows.clear();
  m.rows_t.clear();
}

// Strictly lower-triangular 0/1 adjacency (edge u<v lands at row v, col u).
inline DenseMatrix build_lower_triangular(LazyClient& client, const EdgeList& g) {
  const std::size_t n = static_cast<std::size_t>(g.n);
  std::vector<std::vector<std::int64_t>> lower(n, std::vector<std::int64_t>(n, 0));
  std::vector<std::vector<std::int64_t>> upper(n, std::vector<std::int64_t>(n, 0));
  for (auto [u, v] : g.edges) {
    lower[v][u] = 1;  // v > u
    upper[u][v] = 1;
  }
  DenseMatrix m;
  m.n = g.n;
  for (std::size_t i = 0; i < n; ++i)
    m.rows.push_back(client.create_array(FillSpec::values(lower[i]), DType::Int64, g.n));
  for (std::size_t i = 0; i < n; ++i)
    m.rows_t.push_back(client.create_array(FillSpec::values(upper[i]), DType::Int64, g.n));
  return m;
}

// Full symmetric 0/1 adjacency as float64 rows; transpose rows are clones of
// the same handles since A = A^T.
inline DenseMatrix build_adjacency(LazyClient& client, const EdgeList& g) {
  const std::size_t n = static_cast<std::size_t>(g.n);
  std::vector<std::vector<double>> adj(n, std::vector<double>(n, 0.0));
  for (auto [u, v] : g.edges) {
    adj[u][v] = 1.0;
    adj[v][u] = 1.0;
  }
  DenseMatrix m;
  m.n = g.n;
  for (std::size_t i = 0; i < n; ++i)
    m.rows.push_back(client.create_array(FillSpec::values(adj[i]), DType::Float64, g.n));
  for (std::size_t i = 0; i < n; ++i) m.rows_t.push_back(client.clone(m.rows[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Triangle counting
// ---------------------------------------------------------------------------

// sum((L*L) .* L): for each structural nonzero (i, j) of L, the (i, j) entry
// of L*L is sum(L.row(i) * L^T.row(j)). Pairs with L_ij = 0 contribute
// nothing and are skipped.
inline std::int64_t tc_dense(LazyClient& client, const EdgeList& g) {
  if (g.n > kDenseNodeLimit) fail("resource error", "dense TC limited to 512 nodes");
  DenseMatrix L = build_lower_triangular(client, g);
  std::int64_t total = 0;
  for (auto [u, v] : g.edges) {  // L_vu = 1 with v > u
    ArrayHandle prod = client.binop("mul", L.rows[static_cast<std::size_t>(v)],
                                    L.rows_t[static_cast<std::size_t>(u)]);
    total += client.reduce("sum", prod).as_i64();
    client.release(prod);
  }
  release_dense(client, L);
  return total;
}

// CSC/CSR wedge intersection. Each triangle is counted once per ordered
// adjacent vertex pair, i.e. six times; the constant is pinned by the
// regression tests against the enumeration oracle.
inline constexpr std::int64_t kSparseTriangleOvercount = 6;

inline std::int64_t tc_sparse(LazyClient& client, const EdgeList& g) {
  if (g.n > kSparseNodeLimit) fail("resource error", "sparse TC limited to 4096 nodes");
  const auto adj = g.adjacency();
  const std::size_t n = static_cast<std::size_t>(g.n);

  // Offsets stay client-side metadata; the index arrays live on the server.
  std::vector<std::int64_t> p1(n + 1, 0), col_indices;
  for (std::size_t i = 0; i < n; ++i) {
    p1[i + 1] = p1[i] + static_cast<std::int64_t>(adj[i].size());
    for (auto w : adj[i]) col_indices.push_back(w);
  }
  const std::vector<std::int64_t>& p2 = p1;  // symmetric: CSR == CSC
  const std::int64_t nnz = p1[n];

  ArrayHandle c = client.create_array(FillSpec::values(col_indices), DType::Int64, nnz);
  ArrayHandle r = client.create_array(FillSpec::values(col_indices), DType::Int64, nnz);

  std::int64_t wedges = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::int64_t k = p1[i]; k < p1[i + 1]; ++k) {
      const auto v = static_cast<std::size_t>(col_indices[static_cast<std::size_t>(k)]);
      ArrayHandle neighbors_i = client.slice(c, p1[i], p1[i + 1]);
      ArrayHandle neighbors_v = client.slice(r, p2[v], p2[v + 1]);
      wedges += client.intersect_size(neighbors_i, neighbors_v);
      client.release(neighbors_i);
      client.release(neighbors_v);
    }
  }
  client.release(c);
  client.release(r);

  if (wedges % kSparseTriangleOvercount != 0)
    fail("internal error", "wedge count not divisible by overcount factor");
  return wedges / kSparseTriangleOvercount;
}

// ---------------------------------------------------------------------------
// Betweenness centrality
// ---------------------------------------------------------------------------

struct BcResult {
  std::vector<double> delta;  // dependency scores, source fixed at 0
  std::vector<double> paths;  // shortest-path counts per vertex
  std::int64_t depth = 0;     // number of BFS levels with a nonempty frontier
};

namespace detail {

// Row vector times matrix, one column at a time: out[j] = sum(v * cols[j]).
// Assembled into a single values-fill create.
inline ArrayHandle vec_mat_product(LazyClient& client, const ArrayHandle& v,
                                   const std::vector<ArrayHandle>& cols) {
  std::vector<double> out;
  out.reserve(cols.size());
  for (const auto& col : cols) {
    ArrayHandle prod = client.binop("mul", v, col);
    out.push_back(client.reduce("sum", prod).as_f64());
    client.release(prod);
  }
  return client.create_array(FillSpec::values(out), DType::Float64,
                             static_cast<std::int64_t>(cols.size()));
}

}  // namespace detail

// Forward BFS wavefronts with path counting, then the backward dependency
// sweep: t1 = 1+delta, t2 = safediv(t1, sigma[i]), t3 = t2*A^T,
// t4 = sigma[i-1] .* t3, delta += t4. safediv zeroes the entries of vertices
// outside frontier i, and the sigma[i-1] mask keeps only the frontier the
// contributions flow back to.
inline BcResult bc_single_source(LazyClient& client, const EdgeList& g,
                                 std::int64_t source) {
  if (g.n > kSparseNodeLimit) fail("resource error", "BC limited to 4096 nodes");
  if (source < 0 || source >= g.n) fail("argument error", "source out of range");
  const std::size_t n = static_cast<std::size_t>(g.n);

  DenseMatrix A = build_adjacency(client, g);
  std::vector<double> seed_vec(n, 0.0);
  seed_vec[static_cast<std::size_t>(source)] = 1.0;

  ArrayHandle q = client.create_array(FillSpec::values(seed_vec), DType::Float64, g.n);
  // p accumulates the sigma rows, so it starts at zero and ends as the
  // per-vertex shortest-path counts.
  ArrayHandle p =
      client.create_array(FillSpec::constant(Scalar::of_f64(0.0)), DType::Float64, g.n);
  ArrayHandle delta =
      client.create_array(FillSpec::constant(Scalar::of_f64(0.0)), DType::Float64, g.n);
  std::vector<ArrayHandle> sigma;  // per-depth frontiers

  std::int64_t d = 0;
  while (true) {
    sigma.push_back(client.clone(q));
    ArrayHandle p_next = client.binop("add", p, q);
    client.release(p);
    p = p_next;
    ArrayHandle unvisited = client.binop("eq", p, Scalar::of_f64(0.0));
    ArrayHandle qa = detail::vec_mat_product(client, q, A.rows_t);
    ArrayHandle q_next = client.binop("mul", qa, unvisited);
    client.release(qa);
    client.release(unvisited);
    client.release(q);
    q = q_next;
    ++d;
    if (client.reduce("sum", q).as_f64() == 0.0) break;
  }

  for (std::int64_t i = d - 1; i >= 1; --i) {
    ArrayHandle t1 = client.binop("add", Scalar::of_f64(1.0), delta);
    ArrayHandle t2 = client.binop("safediv", t1, sigma[static_cast<std::size_t>(i)]);
    ArrayHandle t3 = detail::vec_mat_product(client, t2, A.rows);
    ArrayHandle t4 = client.binop("mul", sigma[static_cast<std::size_t>(i - 1)], t3);
    ArrayHandle delta_next = client.binop("add", delta, t4);
    client.release(t1);
    client.release(t2);
    client.release(t3);
    client.release(t4);
    client.release(delta);
    delta = delta_next;
  }

  BcResult result;
  result.depth = d;
  result.paths = std::get<std::vector<double>>(client.to_values(p));
  result.delta = std::get<std::vector<double>>(client.to_values(delta));
  result.delta[static_cast<std::size_t>(source)] = 0.0;

  for (auto& h : sigma) client.release(h);
  client.release(q);
  client.release(p);
  client.release(delta);
  release_dense(client, A);
  return result;
}

// ---------------------------------------------------------------------------
// Taxi chain
// ---------------------------------------------------------------------------

// The fixed call sequence min, max, mean, std, min, min over one array.
inline std::vector<Scalar> taxi_chain(LazyClient& client, const ArrayHandle& a) {
  std::vector<Scalar> out;
  out.push_back(client.reduce("min", a));
  out.push_back(client.reduce("max", a));
  out.push_back(Scalar::of_f64(client.mean(a)));
  out.push_back(Scalar::of_f64(client.std_dev(a)));
  out.push_back(client.reduce("min", a));
  out.push_back(client.reduce("min", a));
  return out;
}

// ---------------------------------------------------------------------------
// Input specs and the bench runner
// ---------------------------------------------------------------------------

struct InputSpec {
  enum class Kind { Graph, Taxi };
  Kind kind = Kind::Graph;
  std::string name;
  EdgeList graph;
  std::int64_t taxi_n = 0, taxi_lo = 0, taxi_hi = 0;
  std::uint64_t taxi_seed = 0;
};

// kn:N | path:N | star:N | gnp:N:P:SEED | rand:N:LO:HI:SEED | <file.mtx>
inline InputSpec parse_input_spec(const std::string& spec) {
  InputSpec in;
  in.name = spec;
  auto fields = [&](std::size_t expect) {
    std::vector<std::string> parts;
    std::istringstream ss(spec);
    std::string part;
    while (std::getline(ss, part, ':')) parts.push_back(part);
    if (parts.size() != expect)
      fail("usage error", "bad input spec '" + spec + "'");
    return parts;
  };
  try {
    if (spec.rfind("kn:", 0) == 0) {
      in.graph = make_complete(std::stoll(fields(2)[1]));
    } else if (spec.rfind("path:", 0) == 0) {
      in.graph = make_path(std::stoll(fields(2)[1]));
    } else if (spec.rfind("star:", 0) == 0) {
      in.graph = make_star(std::stoll(fields(2)[1]));
    } else if (spec.rfind("gnp:", 0) == 0) {
      auto f = fields(4);
      in.graph = make_gnp(std::stoll(f[1]), std::stod(f[2]), std::stoull(f[3]));
    } else if (spec.rfind("rand:", 0) == 0) {
      auto f = fields(5);
      in.kind = InputSpec::Kind::Taxi;
      in.taxi_n = std::stoll(f[1]);
      in.taxi_lo = std::stoll(f[2]);
      in.taxi_hi = std::stoll(f[3]);
      in.taxi_seed = std::stoull(f[4]);
    } else {
      in.graph = load_matrix_market_file(spec);
    }
  } catch (const std::invalid_argument&) {
    fail("usage error", "bad number in input spec '" + spec + "'");
  }
  return in;
}

struct BenchReport {
  std::string benchmark;
  std::string input;
  std::string mode;
  json flags;
  json result;
  ClientMetrics metrics;
  bool oracle_checked = false;
  bool oracle_ok = true;

  json to_json() const {
    json j{{"benchmark", benchmark},
           {"input", input},
           {"mode", mode},
           {"flags", flags},
           {"result", result},
           {"oracle_checked", oracle_checked},
           {"oracle_ok", oracle_ok}};
    j["metrics"] = metrics.to_json();
    return j;
  }

  static BenchReport from_json(const json& j) {
    BenchReport r;
    r.benchmark = j.at("benchmark").get<std::string>();
    r.input = j.at("input").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    r.flags = j.at("flags");
    r.result = j.at("result");
    r.oracle_checked = j.at("oracle_checked").get<bool>();
    r.oracle_ok = j.at("oracle_ok").get<bool>();
    const json& m = j.at("metrics");
    r.metrics.messages_sent = m.at("messages_sent").get<std::int64_t>();
    r.metrics.creates_sent = m.at("creates_sent").get<std::int64_t>();
    r.metrics.stores_sent = m.at("stores_sent").get<std::int64_t>();
    r.metrics.deletes_sent = m.at("deletes_sent").get<std::int64_t>();
    r.metrics.fetches_sent = m.at("fetches_sent").get<std::int64_t>();
    r.metrics.reduces_sent = m.at("reduces_sent").get<std::int64_t>();
    r.metrics.cache_hits_expr = m.at("cache_hits_expr").get<std::int64_t>();
    r.metrics.cache_hits_reduce = m.at("cache_hits_reduce").get<std::int64_t>();
    r.metrics.freelist_hits = m.at("freelist_hits").get<std::int64_t>();
    r.metrics.buffer_peak = m.at("buffer_peak").get<std::int64_t>();
    r.metrics.overhead_ns = m.at("overhead_ns").get<std::int64_t>();
    r.metrics.marshal_ns = m.at("marshal_ns").get<std::int64_t>();
    r.metrics.transport_ns = m.at("transport_ns").get<std::int64_t>();
    if (m.contains("server") && m.at("server").is_object()) {
      const json& s = m.at("server");
      r.metrics.have_server_stats = true;
      r.metrics.server.messages_handled = s.at("messages_handled").get<std::int64_t>();
      r.metrics.server.arrays_created = s.at("arrays_created").get<std::int64_t>();
      r.metrics.server.arrays_deleted = s.at("arrays_deleted").get<std::int64_t>();
      r.metrics.server.parse_ns = s.at("parse_ns").get<std::int64_t>();
      r.metrics.server.create_ns = s.at("create_ns").get<std::int64_t>();
      r.metrics.server.delete_ns = s.at("delete_ns").get<std::int64_t>();
      r.metrics.server.compute_ns = s.at("compute_ns").get<std::int64_t>();
    }
    return r;
  }
};

// Runs one benchmark on a fresh-stats server and collects the report.
// Oracle verification runs whenever the input is small enough.
inline BenchReport run_benchmark(LazyClient& client, const std::string& benchmark,
                                 const InputSpec& input, std::int64_t source,
                                 const std::string& mode_name) {
  client.reset_server_stats();
  BenchReport report;
  report.benchmark = benchmark;
  report.input = input.name;
  report.mode = mode_name;
  report.flags = client.config().flags_json();

  if (benchmark == "tc-dense" || benchmark == "tc-sparse") {
    if (input.kind != InputSpec::Kind::Graph)
      fail("usage error", benchmark + " needs a graph input");
    const std::int64_t count = benchmark == "tc-dense" ? tc_dense(client, input.graph)
                                                       : tc_sparse(client, input.graph);
    report.result = count;
    if (input.graph.n <= kOracleNodeLimit) {
      report.oracle_checked = true;
      report.oracle_ok = count == oracle_triangles(input.graph);
    }
  } else if (benchmark == "bc") {
    if (input.kind != InputSpec::Kind::Graph) fail("usage error", "bc needs a graph input");
    BcResult r = bc_single_source(client, input.graph, source);
    report.result = json{{"delta", json(r.delta)},
                         {"paths", json(r.paths)},
                         {"depth", r.depth}};
    if (input.graph.n <= kOracleNodeLimit) {
      BcOracleResult oracle = oracle_bc(input.graph, source);
      report.oracle_checked = true;
      bool ok = true;
      for (std::size_t i = 0; i < oracle.sigma.size(); ++i) {
        ok = ok && r.paths[i] == oracle.sigma[i];
        ok = ok && std::abs(r.delta[i] - oracle.delta[i]) <= 1e-9;
      }
      report.oracle_ok = ok;
    }
  } else if (benchmark == "taxi") {
    if (input.kind != InputSpec::Kind::Taxi)
      fail("usage error", "taxi needs a rand:N:LO:HI:SEED input");
    ArrayHandle a = client.create_array(
        FillSpec::randint(input.taxi_lo, input.taxi_hi, input.taxi_seed), DType::Int64,
        input.taxi_n);
    std::vector<Scalar> values = taxi_chain(client, a);
    client.release(a);
    json result = json::array();
    for (const auto& v : values) result.push_back(scalar_to_json(v));
    report.result = std::move(result);
  } else {
    fail("usage error", "unknown benchmark '" + benchmark + "'");
  }

  client.fetch_server_stats();
  report.metrics = client.metrics();
  return report;
}

}  // namespace lazyarr
