#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include "lazyarr/client.hpp"
#include "lazyarr/tcp_server.hpp"

using namespace lazyarr;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string output;  // stdout only
};

CmdResult run_cmd(const std::string& command) {
  CmdResult result;
  FILE* pipe = ::popen(command.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf;
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe))
    result.output.append(buf.data(), n);
  const int status = ::pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

const std::string kBin = LAZYARR_BIN;

}  // namespace

TEST_CASE("bench tc-dense on K4 reports the triangle count") {
  const CmdResult r = run_cmd(kBin + " bench tc-dense --input kn:4 --mode opt --local");
  CHECK(r.exit_code == 0);
  const json report = json::parse(r.output);
  CHECK(report.at("result").get<std::int64_t>() == 4);
  CHECK(report.at("oracle_ok").get<bool>());
  CHECK(report.at("mode") == "opt");
}

TEST_CASE("bench taxi pair matches and opt sends strictly fewer messages") {
  const CmdResult r = run_cmd(
      kBin + " bench taxi --input rand:1000:0:100:7 --mode base --check-pair --local");
  CHECK(r.exit_code == 0);
  std::istringstream lines(r.output);
  std::string base_line, opt_line;
  REQUIRE(std::getline(lines, base_line));
  REQUIRE(std::getline(lines, opt_line));
  const json base = json::parse(base_line);
  const json opt = json::parse(opt_line);
  CHECK(base.at("result") == opt.at("result"));
  CHECK(opt.at("metrics").at("messages_sent").get<std::int64_t>() <
        base.at("metrics").at("messages_sent").get<std::int64_t>());
}

TEST_CASE("bench bc on a path graph") {
  const CmdResult r =
      run_cmd(kBin + " bench bc --input path:3 --source 0 --mode opt --local");
  CHECK(r.exit_code == 0);
  const json report = json::parse(r.output);
  CHECK(report.at("result").at("delta") == json(std::vector<double>{0.0, 1.0, 0.0}));
}

TEST_CASE("bench rejects unknown benchmarks with a usage error") {
  const CmdResult r = run_cmd(kBin + " bench frobnicate --input kn:4 --local 2>/dev/null");
  CHECK(r.exit_code == 2);
}

TEST_CASE("per-flag overrides change the config") {
  const CmdResult r = run_cmd(
      kBin + " bench tc-dense --input kn:4 --mode opt --no-cse --local");
  CHECK(r.exit_code == 0);
  const json report = json::parse(r.output);
  CHECK_FALSE(report.at("flags").at("cse").get<bool>());
  CHECK(report.at("flags").at("lazy").get<bool>());
}

TEST_CASE("report renders a comparison table with ratios") {
  const std::string path = "/tmp/lazyarr_report_test.jsonl";
  std::remove(path.c_str());
  CmdResult base = run_cmd(kBin + " bench tc-sparse --input gnp:64:0.1:3 --mode base --local --output " + path);
  CmdResult opt = run_cmd(kBin + " bench tc-sparse --input gnp:64:0.1:3 --mode opt --local --output " + path);
  REQUIRE(base.exit_code == 0);
  REQUIRE(opt.exit_code == 0);
  const CmdResult table = run_cmd(kBin + " report " + path);
  CHECK(table.exit_code == 0);
  CHECK(table.output.find("base/opt ratios") != std::string::npos);
  CHECK(table.output.find("tc-sparse") != std::string::npos);
  CHECK(table.output.find("cost breakdown") != std::string::npos);

  // The arrays ratio in the table must be at least 2 for this input.
  const json b = json::parse(base.output);
  const json o = json::parse(opt.output);
  const double ratio =
      b.at("metrics").at("server").at("arrays_created").get<double>() /
      o.at("metrics").at("server").at("arrays_created").get<double>();
  CHECK(ratio >= 2.0);

  // A lone report renders without the ratio section.
  const std::string solo = "/tmp/lazyarr_report_solo.jsonl";
  {
    std::ofstream out(solo);
    out << base.output;
  }
  const CmdResult solo_table = run_cmd(kBin + " report " + solo);
  CHECK(solo_table.exit_code == 0);
  CHECK(solo_table.output.find("base/opt ratios") == std::string::npos);
  std::remove(solo.c_str());
  std::remove(path.c_str());
}

TEST_CASE("repl runs a scripted session deterministically") {
  const std::string script =
      "A = randint(0, 10, 10)\\n"
      "B = (A*A)+(A*A)\\n"
      "C = randint(0, 10, 10)\\n"
      "print(B)\\n"
      "stats\\n";
  const std::string cmd = "printf '" + script + "' | " + kBin + " repl --local";
  const CmdResult first = run_cmd(cmd);
  CHECK(first.exit_code == 0);
  CHECK(first.output.find("\"messages_sent\":4") != std::string::npos);
  CHECK(first.output.find("\"arrays_created\":2") != std::string::npos);
  const CmdResult second = run_cmd(cmd);
  CHECK(first.output == second.output);
}

TEST_CASE("serve accepts a connection and exits cleanly on shutdown") {
  // Pick a free ephemeral port first.
  const std::uint16_t port = [] {
    TcpArrayServer probe{ServerOptions{}, 0};
    return probe.port();
  }();
  const std::string cmd = kBin + " serve --port " + std::to_string(port) +
                          " --log-level error & echo $!; wait $!; echo exit=$?";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  // Give the server a moment, then connect and shut it down.
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  {
    TcpTransport transport("127.0.0.1", port);
    LazyClient client(transport, ClientConfig::baseline(), "shutdowner");
    ArrayHandle a = client.create_array(FillSpec::arange(), DType::Int64, 3);
    CHECK(client.reduce("sum", a).as_i64() == 3);
    client.shutdown_server();
  }
  std::string out;
  std::array<char, 256> buf;
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) out.append(buf.data(), n);
  ::pclose(pipe);
  CHECK(out.find("exit=0") != std::string::npos);
}

TEST_CASE("bench exits 3 when the server is unreachable") {
  const CmdResult r = run_cmd(
      kBin + " --port 1 bench tc-dense --input kn:4 --mode opt 2>/dev/null");
  CHECK(r.exit_code == 3);
}

TEST_CASE("matrix market file input works end to end") {
  const std::string path = "/tmp/lazyarr_k4.mtx";
  {
    std::ofstream mtx(path);
    mtx << "%%MatrixMarket matrix coordinate pattern symmetric\n"
        << "4 4 6\n"
        << "2 1\n3 1\n4 1\n3 2\n4 2\n4 3\n";
  }
  const CmdResult r =
      run_cmd(kBin + " bench tc-sparse --input " + path + " --mode opt --local");
  CHECK(r.exit_code == 0);
  CHECK(json::parse(r.output).at("result").get<std::int64_t>() == 4);
  std::remove(path.c_str());
}
