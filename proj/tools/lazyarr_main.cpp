// lazyarr command line: serve | bench | repl | report.
//
// Exit codes: 0 success, 1 verification failure, 2 usage error,
// 3 connection error.

#include <unistd.h>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "lazyarr/bench.hpp"
#include "lazyarr/repl.hpp"
#include "lazyarr/tcp_server.hpp"

namespace {

using namespace lazyarr;

std::atomic<TcpArrayServer*> g_serve_instance{nullptr};

void on_signal(int) {
  if (auto* server = g_serve_instance.load()) server->request_stop();
}

// Owns whichever transport the run uses; --local spins up an in-process
// server so no external process is needed.
struct Connection {
  std::unique_ptr<ArrayServer> local_server;
  std::unique_ptr<Transport> transport;

  static Connection open(bool local, const std::string& host, std::uint16_t port) {
    Connection c;
    if (local) {
      c.local_server = std::make_unique<ArrayServer>();
      c.transport = std::make_unique<LocalTransport>(*c.local_server);
    } else {
      c.transport = std::make_unique<TcpTransport>(host, port);
    }
    return c;
  }
};

struct FlagOverride {
  CLI::Option* opt = nullptr;
  bool value = false;

  void apply(bool& slot) const {
    if (opt && opt->count() > 0) slot = value;
  }
};

struct BenchFlags {
  FlagOverride lazy, dead_elim, store_reuse, array_cache, cse, reduce_memo;

  void attach(CLI::App* app) {
    auto add = [&](const char* name, FlagOverride& f) {
      f.opt = app->add_flag(std::string("--") + name + ",!--no-" + name, f.value,
                            std::string("override the ") + name + " optimization");
    };
    add("lazy", lazy);
    add("dead-elim", dead_elim);
    add("store-reuse", store_reuse);
    add("array-cache", array_cache);
    add("cse", cse);
    add("reduce-memo", reduce_memo);
  }

  ClientConfig resolve(const std::string& mode) const {
    if (mode != "base" && mode != "opt") fail("usage error", "mode must be base or opt");
    ClientConfig cfg =
        (mode == "opt" ? ClientConfig::optimized() : ClientConfig::baseline()).with_env();
    lazy.apply(cfg.lazy);
    dead_elim.apply(cfg.dead_elim);
    store_reuse.apply(cfg.store_reuse);
    array_cache.apply(cfg.array_cache);
    cse.apply(cfg.cse);
    reduce_memo.apply(cfg.reduce_memo);
    return cfg;
  }
};

bool values_close(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    const double x = a.get<double>();
    const double y = b.get<double>();
    const double scale = std::max({std::abs(x), std::abs(y), 1.0});
    return std::abs(x - y) <= 1e-12 * scale;
  }
  if (a.is_array() && b.is_array()) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!values_close(a[i], b[i])) return false;
    return true;
  }
  if (a.is_object() && b.is_object()) {
    if (a.size() != b.size()) return false;
    for (auto it = a.begin(); it != a.end(); ++it)
      if (!b.contains(it.key()) || !values_close(it.value(), b[it.key()])) return false;
    return true;
  }
  return a == b;
}

void emit_report(const BenchReport& report, const std::string& output_path) {
  const std::string line = report.to_json().dump();
  std::cout << line << "\n";
  if (!output_path.empty()) {
    std::ofstream out(output_path, std::ios::app);
    if (!out) fail("usage error", "cannot open output file '" + output_path + "'");
    out << line << "\n";
  }
}

int run_serve(std::uint16_t port, std::int64_t budget, const std::string& log_level) {
  ServerOptions opts;
  opts.element_budget = budget;
  TcpArrayServer server(opts, port, log_level_from_name(log_level));
  g_serve_instance.store(&server);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.serve();
  g_serve_instance.store(nullptr);
  return 0;
}

int run_bench(const std::string& benchmark, const std::string& input_spec,
              const std::string& mode, const BenchFlags& flags, std::int64_t source,
              bool check_pair, const std::string& output_path, bool local,
              const std::string& host, std::uint16_t port) {
  const InputSpec input = parse_input_spec(input_spec);

  auto run_mode = [&](const std::string& mode_name) {
    Connection conn = Connection::open(local, host, port);
    LazyClient client(*conn.transport, flags.resolve(mode_name), "bench");
    return run_benchmark(client, benchmark, input, source, mode_name);
  };

  BenchReport report = run_mode(mode);
  emit_report(report, output_path);
  bool ok = !report.oracle_checked || report.oracle_ok;

  if (check_pair) {
    const std::string other = mode == "base" ? "opt" : "base";
    BenchReport pair = run_mode(other);
    emit_report(pair, output_path);
    ok = ok && (!pair.oracle_checked || pair.oracle_ok);
    ok = ok && values_close(report.result, pair.result);
    const BenchReport& base = mode == "base" ? report : pair;
    const BenchReport& opt = mode == "base" ? pair : report;
    ok = ok && opt.metrics.messages_sent <= base.metrics.messages_sent;
  }
  return ok ? 0 : 1;
}

int run_repl(const std::string& mode, const BenchFlags& flags, std::uint64_t seed,
             bool local, const std::string& host, std::uint16_t port) {
  Connection conn = Connection::open(local, host, port);
  LazyClient client(*conn.transport, flags.resolve(mode), "repl");
  Repl repl(client, seed);
  repl.run(std::cin, std::cout, ::isatty(STDIN_FILENO));
  return 0;
}

double ms(std::int64_t ns) { return static_cast<double>(ns) / 1e6; }

int run_report(const std::vector<std::string>& paths) {
  std::vector<BenchReport> reports;
  for (const auto& path : paths) {
    std::ifstream in(path);
    if (!in) fail("usage error", "cannot open report file '" + path + "'");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        reports.push_back(BenchReport::from_json(json::parse(line)));
      } catch (const std::exception& e) {
        fail("parse error", "bad report line in '" + path + "': " + e.what());
      }
    }
  }
  if (reports.empty()) fail("usage error", "no reports found");

  std::printf("%-10s %-18s %-5s %9s %8s %8s %8s\n", "benchmark", "input", "mode",
              "messages", "created", "deleted", "stores");
  for (const auto& r : reports)
    std::printf("%-10s %-18s %-5s %9lld %8lld %8lld %8lld\n", r.benchmark.c_str(),
                r.input.c_str(), r.mode.c_str(),
                static_cast<long long>(r.metrics.messages_sent),
                static_cast<long long>(r.metrics.server.arrays_created),
                static_cast<long long>(r.metrics.server.arrays_deleted),
                static_cast<long long>(r.metrics.stores_sent));

  std::printf("\ncost breakdown [ms]\n");
  std::printf("%-10s %-18s %-5s %10s %10s %10s %10s %10s %10s %10s\n", "benchmark",
              "input", "mode", "cli_ovh", "marshal", "transport", "srv_parse",
              "srv_create", "srv_delete", "srv_compute");
  for (const auto& r : reports)
    std::printf("%-10s %-18s %-5s %10.3f %10.3f %10.3f %10.3f %10.3f %10.3f %10.3f\n",
                r.benchmark.c_str(), r.input.c_str(), r.mode.c_str(),
                ms(r.metrics.overhead_ns), ms(r.metrics.marshal_ns),
                ms(r.metrics.transport_ns), ms(r.metrics.server.parse_ns),
                ms(r.metrics.server.create_ns), ms(r.metrics.server.delete_ns),
                ms(r.metrics.server.compute_ns));

  bool any_pair = false;
  for (const auto& base : reports) {
    if (base.mode != "base") continue;
    for (const auto& opt : reports) {
      if (opt.mode != "opt" || opt.benchmark != base.benchmark || opt.input != base.input)
        continue;
      if (!any_pair) {
        std::printf("\nbase/opt ratios\n");
        std::printf("%-10s %-18s %10s %10s\n", "benchmark", "input", "messages", "arrays");
        any_pair = true;
      }
      auto ratio = [](std::int64_t b, std::int64_t o) {
        return o > 0 ? static_cast<double>(b) / static_cast<double>(o) : 0.0;
      };
      std::printf("%-10s %-18s %10.2f %10.2f\n", base.benchmark.c_str(),
                  base.input.c_str(),
                  ratio(base.metrics.messages_sent, opt.metrics.messages_sent),
                  ratio(base.metrics.server.arrays_created,
                        opt.metrics.server.arrays_created));
      break;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lazyarr: a deferred-execution array client/server"};
  app.require_subcommand(1);

  std::string host = "127.0.0.1";
  std::uint16_t port = 5555;
  std::uint64_t seed = 0;
  app.add_option("--host", host, "server host");
  app.add_option("--port", port, "server port");
  app.add_option("--seed", seed, "base seed for generated data");

  auto* serve = app.add_subcommand("serve", "run the array server");
  serve->fallthrough();
  std::int64_t budget = std::int64_t{1} << 26;
  std::string log_level = "info";
  serve->add_option("--element-budget", budget, "total live elements allowed");
  serve->add_option("--log-level", log_level, "error|info|debug");

  auto* bench = app.add_subcommand("bench", "run a benchmark and print its report");
  bench->fallthrough();
  std::string benchmark, input_spec, mode = "opt", output_path;
  std::int64_t source = 0;
  bool check_pair = false, local = false;
  bench->add_option("benchmark", benchmark, "tc-dense|tc-sparse|bc|taxi")->required();
  bench->add_option("--input", input_spec,
                    "kn:N | path:N | star:N | gnp:N:P:SEED | rand:N:LO:HI:SEED | file.mtx")
      ->required();
  bench->add_option("--mode", mode, "base|opt");
  bench->add_option("--source", source, "BC source vertex");
  bench->add_flag("--check-pair", check_pair, "also run the other mode and compare");
  bench->add_option("--output", output_path, "append the JSON report to this file");
  bench->add_flag("--local", local, "run against an in-process server");
  BenchFlags bench_flags;
  bench_flags.attach(bench);

  auto* repl = app.add_subcommand("repl", "interactive session");
  repl->fallthrough();
  std::string repl_mode = "opt";
  bool repl_local = false;
  repl->add_option("--mode", repl_mode, "base|opt");
  repl->add_flag("--local", repl_local, "run against an in-process server");
  BenchFlags repl_flags;
  repl_flags.attach(repl);

  auto* report = app.add_subcommand("report", "compare saved benchmark reports");
  report->fallthrough();
  std::vector<std::string> report_paths;
  report->add_option("paths", report_paths, "BenchReport JSON files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (serve->parsed()) return run_serve(port, budget, log_level);
    if (bench->parsed())
      return run_bench(benchmark, input_spec, mode, bench_flags, source, check_pair,
                       output_path, local, host, port);
    if (repl->parsed()) return run_repl(repl_mode, repl_flags, seed, repl_local, host, port);
    if (report->parsed()) return run_report(report_paths);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "lazyarr: %s\n", e.what());
    const std::string what = e.what();
    if (what.rfind("connection error", 0) == 0) return 3;
    if (what.rfind("usage error", 0) == 0) return 2;
    return 1;
  }
  return 2;
}
