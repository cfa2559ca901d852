// Acceptance suite: one pass/fail line per criterion. Exit code is the number
// of failing criteria (0 when everything holds).
//
//  1. sample program message/array counts, baseline vs optimized, over TCP
//  2. worked reuse example: 3 server arrays, final add stored into the first
//  3. delayed-computation example: 3 fewer messages and arrays
//  4. common-subexpression example: one multiply, one expression-cache hit
//  5. taxi chain: 4 reductions vs 7, equal results, fewer messages
//  6. triangle/bc correctness against enumeration oracles on random graphs
//  7. array-creation ratios for sparse and dense triangle counting
//  8. equivalence fuzz across all 2^6 flag combinations, with monotonicity
//  9. premature-overwrite regression under every flag combination

#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>

#include "../tests/fuzz_support.hpp"
#include "lazyarr/bench.hpp"
#include "lazyarr/tcp_server.hpp"

using namespace lazyarr;

namespace {

int g_failures = 0;

void criterion(int number, const std::string& label,
               const std::function<bool(std::string&)>& body) {
  std::string detail;
  bool ok = false;
  const auto start = std::chrono::steady_clock::now();
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%s criterion %d: %s (%.2fs)%s%s\n", ok ? "PASS" : "FAIL", number,
              label.c_str(), secs, detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

struct Counts {
  std::int64_t messages = 0;
  std::int64_t arrays = 0;
};

// The sample program: A = randint; B = (A*A)+(A*A); C = randint; print(B).
Counts run_sample_program(LazyClient& client) {
  client.reset_server_stats();
  ArrayHandle a = client.create_array(FillSpec::randint(0, 10, 7), DType::Int64, 10);
  ArrayHandle t1 = client.binop("mul", a, a);
  ArrayHandle t2 = client.binop("mul", a, a);
  ArrayHandle b = client.binop("add", t1, t2);
  client.release(t1);
  client.release(t2);
  ArrayHandle c = client.create_array(FillSpec::randint(0, 10, 8), DType::Int64, 10);
  (void)client.to_values(b);
  (void)c;
  return {client.metrics().messages_sent, client.fetch_server_stats().arrays_created};
}

bool close_rel(double a, double b, double tol) {
  const double scale = std::max({std::abs(a), std::abs(b), 1.0});
  return std::abs(a - b) <= tol * scale;
}

}  // namespace

int main() {
  criterion(1, "sample program: base 8 msgs / 5 arrays, opt 4 msgs / 2 arrays",
            [](std::string& detail) {
              TcpArrayServer server{ServerOptions{}, 0};
              server.start_background();
              Counts base, opt;
              {
                TcpTransport t("127.0.0.1", server.port());
                LazyClient client(t, ClientConfig::baseline(), "fig2-base");
                base = run_sample_program(client);
              }
              {
                TcpTransport t("127.0.0.1", server.port());
                LazyClient client(t, ClientConfig::optimized(), "fig2-opt");
                opt = run_sample_program(client);
              }
              server.stop();
              std::ostringstream os;
              os << "base " << base.messages << " msgs / " << base.arrays
                 << " arrays; opt " << opt.messages << " msgs / " << opt.arrays
                 << " arrays";
              detail = os.str();
              return base.messages == 8 && base.arrays == 5 && opt.messages == 4 &&
                     opt.arrays == 2;
            });

  criterion(2, "reuse example: exactly 3 server arrays, final add stored into S1",
            [](std::string& detail) {
              ArrayServer server;
              LocalTransport transport(server);
              LazyClient client(transport, ClientConfig::optimized(), "ex1");
              ArrayHandle a = client.create_array(FillSpec::randint(0, 10, 1), DType::Int64, 10);
              ArrayHandle b = client.create_array(FillSpec::randint(0, 10, 2), DType::Int64, 10);
              ArrayHandle c = client.create_array(FillSpec::randint(0, 10, 3), DType::Int64, 10);
              ArrayHandle c2 = client.binop("add", b, a);
              client.release(c);
              ArrayHandle a2 = client.binop("add", c2, a);
              client.release(a);
              (void)client.to_values(a2);

              const auto arrays = client.fetch_server_stats().arrays_created;
              const auto& tr = client.trace();
              bool store_into_first = false;
              std::string first_created;
              for (const auto& e : tr)
                if (e.cmd == "create" && first_created.empty()) first_created = e.result;
              const TraceEntry* last_add = nullptr;
              for (const auto& e : tr)
                if (e.op == "add") last_add = &e;
              store_into_first = last_add && last_add->cmd == "binop_store" &&
                                 last_add->dest == first_created;
              std::ostringstream os;
              os << arrays << " arrays; final add "
                 << (last_add ? last_add->cmd : std::string("missing")) << " dest "
                 << (last_add ? last_add->dest : std::string());
              detail = os.str();
              return arrays == 3 && store_into_first;
            });

  criterion(3, "delayed computation: optimized saves exactly 3 messages and 3 arrays",
            [](std::string& detail) {
              auto run = [](ClientConfig cfg) {
                ArrayServer server;
                LocalTransport transport(server);
                LazyClient client(transport, cfg, "ex2");
                ArrayHandle a = client.create_array(FillSpec::randint(0, 10, 1), DType::Int64, 10);
                ArrayHandle b = client.create_array(FillSpec::randint(0, 10, 2), DType::Int64, 10);
                ArrayHandle e = client.create_array(FillSpec::randint(0, 10, 3), DType::Int64, 10);
                ArrayHandle f = client.create_array(FillSpec::randint(0, 10, 4), DType::Int64, 10);
                ArrayHandle c = client.binop("add", b, a);
                ArrayHandle d = client.binop("add", e, f);
                (void)client.to_values(d);
                (void)c;
                return Counts{client.metrics().messages_sent,
                              client.fetch_server_stats().arrays_created};
              };
              const Counts base = run(ClientConfig::baseline());
              const Counts opt = run(ClientConfig::optimized());
              std::ostringstream os;
              os << "messages " << base.messages << "->" << opt.messages << ", arrays "
                 << base.arrays << "->" << opt.arrays;
              detail = os.str();
              return base.messages - opt.messages == 3 && base.arrays - opt.arrays == 3;
            });

  criterion(4, "common subexpression: one multiply reaches the server, one cache hit",
            [](std::string& detail) {
              ArrayServer server;
              LocalTransport transport(server);
              LazyClient client(transport, ClientConfig::optimized(), "ex3");
              ArrayHandle a = client.create_array(FillSpec::randint(0, 10, 5), DType::Int64, 10);
              ArrayHandle b = client.binop("mul", a, a);
              ArrayHandle c = client.binop("mul", a, a);
              ArrayHandle d = client.binop("add", b, c);
              (void)client.to_values(d);
              int muls = 0;
              for (const auto& e : client.trace())
                if (e.op == "mul") ++muls;
              const auto hits = client.metrics().cache_hits_expr;
              std::ostringstream os;
              os << muls << " multiply message(s), " << hits << " expr cache hit(s)";
              detail = os.str();
              return muls == 1 && hits == 1;
            });

  criterion(5, "taxi chain: 4 reductions optimized vs 7 baseline, equal scalars",
            [](std::string& detail) {
              auto run = [](ClientConfig cfg, std::vector<Scalar>& values) {
                ArrayServer server;
                LocalTransport transport(server);
                LazyClient client(transport, cfg, "taxi");
                ArrayHandle a =
                    client.create_array(FillSpec::randint(0, 100, 7), DType::Int64, 1000);
                values = taxi_chain(client, a);
                client.release(a);
                return std::pair{client.metrics().reduces_sent,
                                 client.metrics().messages_sent};
              };
              std::vector<Scalar> base_values, opt_values;
              const auto [base_reduces, base_msgs] =
                  run(ClientConfig::baseline(), base_values);
              const auto [opt_reduces, opt_msgs] =
                  run(ClientConfig::optimized(), opt_values);
              bool equal = base_values.size() == 6 && opt_values.size() == 6;
              for (std::size_t i = 0; equal && i < 6; ++i)
                equal = base_values[i].dtype == opt_values[i].dtype &&
                        close_rel(base_values[i].to_double(), opt_values[i].to_double(),
                                  1e-12);
              std::ostringstream os;
              os << "reduces " << base_reduces << "->" << opt_reduces << ", messages "
                 << base_msgs << "->" << opt_msgs;
              detail = os.str();
              return base_reduces == 7 && opt_reduces == 4 && opt_msgs < base_msgs && equal;
            });

  criterion(6, "oracle agreement on 21 random graphs (tc exact, bc 1e-9)",
            [](std::string& detail) {
              int graphs = 0;
              for (std::uint64_t seed = 1; seed <= 7; ++seed) {
                for (const double p : {0.08, 0.2, 0.45}) {
                  const std::int64_t n = 16 + static_cast<std::int64_t>(seed - 1) * 8;
                  const EdgeList g = make_gnp(n, p, seed * 101);
                  ++graphs;

                  ArrayServer server;
                  LocalTransport transport(server);
                  LazyClient client(transport, ClientConfig::optimized(), "oracle");
                  const std::int64_t expected = oracle_triangles(g);
                  if (tc_dense(client, g) != expected) return false;
                  if (tc_sparse(client, g) != expected) return false;

                  const BcResult bc = bc_single_source(client, g, 0);
                  const BcOracleResult want = oracle_bc(g, 0);
                  for (std::size_t v = 0; v < want.sigma.size(); ++v) {
                    if (bc.paths[v] != want.sigma[v]) return false;
                    if (std::abs(bc.delta[v] - want.delta[v]) > 1e-9) return false;
                  }
                }
              }
              detail = std::to_string(graphs) + " graphs, n up to 64";
              return graphs >= 20;
            });

  criterion(7, "array-creation ratios: sparse >= 2 on gnp:64:0.1, dense above that floor",
            [](std::string& detail) {
              auto created = [](ClientConfig cfg, const EdgeList& g, bool dense) {
                ArrayServer server;
                LocalTransport transport(server);
                LazyClient client(transport, cfg, "ratio");
                if (dense)
                  (void)tc_dense(client, g);
                else
                  (void)tc_sparse(client, g);
                return client.fetch_server_stats().arrays_created;
              };
              const EdgeList sparse_graph = parse_input_spec("gnp:64:0.1:3").graph;
              const double sparse_ratio =
                  static_cast<double>(created(ClientConfig::baseline(), sparse_graph, false)) /
                  static_cast<double>(created(ClientConfig::optimized(), sparse_graph, false));
              const EdgeList dense_graph = make_complete(16);
              const double dense_ratio =
                  static_cast<double>(created(ClientConfig::baseline(), dense_graph, true)) /
                  static_cast<double>(created(ClientConfig::optimized(), dense_graph, true));
              std::ostringstream os;
              os << "sparse ratio " << sparse_ratio << ", dense ratio " << dense_ratio;
              detail = os.str();
              return sparse_ratio >= 2.0 && dense_ratio > 2.0;
            });

  criterion(8, "equivalence fuzz: 1000 programs x 64 flag combinations",
            [](std::string& detail) {
              for (std::uint64_t seed = 1; seed <= 1000; ++seed) {
                fuzz::RunStats base_stats;
                const fuzz::Observation base =
                    fuzz::run_program(seed, ClientConfig::baseline(), &base_stats);
                for (unsigned bits = 0; bits < 64; ++bits) {
                  fuzz::RunStats stats;
                  const fuzz::Observation got =
                      fuzz::run_program(seed, fuzz::config_from_bits(bits), &stats);
                  if (!fuzz::observations_match(base, got)) {
                    detail = "divergence at seed " + std::to_string(seed) + " flags " +
                             std::to_string(bits);
                    return false;
                  }
                  if (stats.messages_sent > base_stats.messages_sent ||
                      stats.arrays_created > base_stats.arrays_created) {
                    detail = "monotonicity violated at seed " + std::to_string(seed) +
                             " flags " + std::to_string(bits);
                    return false;
                  }
                }
              }
              detail = "64000 runs";
              return true;
            });

  criterion(9, "premature-overwrite program prints baseline values under all flags",
            [](std::string& detail) {
              std::vector<std::int64_t> expect_a2, expect_c;
              for (std::size_t i = 0; i < 8; ++i) {
                const auto ai = rand_range_i64(21, i, 0, 100);
                const auto bi = rand_range_i64(22, i, 0, 100);
                const auto di = rand_range_i64(23, i, 0, 100);
                expect_a2.push_back(di + ai);
                expect_c.push_back(bi + ai);
              }
              for (unsigned bits = 0; bits < 64; ++bits) {
                ArrayServer server;
                LocalTransport transport(server);
                LazyClient client(transport, fuzz::config_from_bits(bits), "regress");
                ArrayHandle a = client.create_array(FillSpec::randint(0, 100, 21), DType::Int64, 8);
                ArrayHandle b = client.create_array(FillSpec::randint(0, 100, 22), DType::Int64, 8);
                ArrayHandle d = client.create_array(FillSpec::randint(0, 100, 23), DType::Int64, 8);
                ArrayHandle c = client.binop("add", b, a);
                ArrayHandle a2 = client.binop("add", d, a);
                client.release(a);
                if (std::get<0>(client.to_values(a2)) != expect_a2 ||
                    std::get<0>(client.to_values(c)) != expect_c) {
                  detail = "mismatch at flags " + std::to_string(bits);
                  return false;
                }
              }
              detail = "64 flag combinations";
              return true;
            });

  std::printf("%s: %d criteria failed\n", g_failures ? "FAIL" : "PASS", g_failures);
  return g_failures ? 1 : 0;
}
