#include <doctest.h>

#include <sstream>

#include "lazyarr/repl.hpp"

using namespace lazyarr;

namespace {

struct ReplFixture {
  ArrayServer server;
  LocalTransport transport{server};
  LazyClient client;
  Repl repl;

  explicit ReplFixture(ClientConfig cfg = ClientConfig::optimized())
      : client(transport, cfg, "repl-test"), repl(client, 42) {}

  std::string run_script(const std::string& script) {
    std::istringstream in(script);
    std::ostringstream out;
    repl.run(in, out, false);
    return out.str();
  }
};

}  // namespace

TEST_CASE("assignment is lazy; print forces and formats") {
  ReplFixture f;
  const std::string out = f.run_script(
      "A = arange(4)\n"
      "B = A + A\n"
      "print(B)\n");
  CHECK(out == "[0 2 4 6] (int64, size 4)\n");
}

TEST_CASE("the sample session sends four messages and two arrays") {
  ReplFixture f;
  f.run_script(
      "A = randint(0, 10, 10)\n"
      "B = (A*A) + (A*A)\n"
      "C = randint(0, 10, 10)\n"
      "print(B)\n");
  CHECK(f.client.metrics().messages_sent == 4);
  CHECK(f.client.fetch_server_stats().arrays_created == 2);
}

TEST_CASE("reductions and scalar formatting") {
  ReplFixture f;
  const std::string out = f.run_script(
      "A = arange(5)\n"
      "sum(A)\n"
      "min(A)\n"
      "mean(A)\n");
  CHECK(out == "10\n0\n2\n");
}

TEST_CASE("float arithmetic prints shortest round-trip") {
  ReplFixture f;
  const std::string out = f.run_script(
      "A = ones(4)\n"
      "B = A / 2\n"
      "print(B)\n");
  CHECK(out == "[0.5 0.5 0.5 0.5] (float64, size 4)\n");
}

TEST_CASE("errors keep the session alive") {
  ReplFixture f;
  const std::string out = f.run_script(
      "print(Q)\n"
      "A = arange(3)\n"
      "B = A + arange(4)\n"
      "1 + 2\n"
      "A = )(\n"
      "print(A)\n");
  CHECK(out.find("error: name error: undefined name 'Q'") == 0);
  CHECK(out.find("size error") != std::string::npos);
  CHECK(out.find("[0 1 2] (int64, size 3)") != std::string::npos);
}

TEST_CASE("aliasing and del respect refcounts") {
  ReplFixture f;
  const std::string out = f.run_script(
      "A = arange(3)\n"
      "B = A\n"
      "del A\n"
      "print(B)\n"
      "del B\n"
      "print(B)\n");
  CHECK(out.find("[0 1 2] (int64, size 3)") == 0);
  CHECK(out.find("undefined name 'B'") != std::string::npos);
}

TEST_CASE("reassignment releases the old binding") {
  ReplFixture f;
  const std::string out = f.run_script(
      "A = arange(3)\n"
      "A = A + 1\n"
      "print(A)\n");
  CHECK(out == "[1 2 3] (int64, size 3)\n");
}

TEST_CASE("long arrays are truncated to thirty elements") {
  ReplFixture f;
  const std::string out = f.run_script("print(arange(40))\n");
  CHECK(out.find("...") != std::string::npos);
  CHECK(out.find("(int64, size 40)") != std::string::npos);
  CHECK(out.find(" 29 ...") != std::string::npos);
  CHECK(out.find(" 30") == std::string::npos);
}

TEST_CASE("stats statement reports metrics as json") {
  ReplFixture f;
  const std::string out = f.run_script(
      "A = arange(3)\n"
      "print(A)\n"
      "stats\n");
  CHECK(out.find("\"messages_sent\":2") != std::string::npos);
  CHECK(out.find("\"arrays_created\":1") != std::string::npos);
}

TEST_CASE("flush executes pending work without printing") {
  ReplFixture f;
  const std::string out = f.run_script(
      "A = arange(3)\n"
      "flush\n");
  CHECK(out.empty());
  CHECK(f.client.metrics().messages_sent == 1);
}

TEST_CASE("scripted sessions are byte-identical across runs") {
  const std::string script =
      "A = randint(0, 50, 12)\n"
      "B = (A * 3) % 7\n"
      "print(B)\n"
      "sum(B)\n"
      "std(A)\n"
      "C = B // 2\n"
      "print(C)\n"
      "quit\n";
  auto run_once = [&] {
    ReplFixture f;
    return f.run_script(script);
  };
  const std::string first = run_once();
  CHECK(first == run_once());
  CHECK_FALSE(first.empty());
}
