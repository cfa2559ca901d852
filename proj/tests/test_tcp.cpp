#include <doctest.h>

#include <thread>

#include "lazyarr/client.hpp"
#include "lazyarr/tcp_server.hpp"

using namespace lazyarr;

namespace {

// Server on an ephemeral port, torn down with the fixture.
struct TcpFixture {
  TcpArrayServer server{ServerOptions{}, 0};

  TcpFixture() { server.start_background(); }
  ~TcpFixture() { server.stop(); }
};

}  // namespace

TEST_CASE("tcp request-reply round trip") {
  TcpFixture f;
  TcpTransport transport("127.0.0.1", f.server.port());
  LazyClient client(transport, ClientConfig::optimized(), "tcp-test");

  ArrayHandle a = client.create_array(FillSpec::arange(), DType::Int64, 5);
  ArrayHandle b = client.binop("mul", a, a);
  CHECK(std::get<0>(client.to_values(b)) ==
        std::vector<std::int64_t>{0, 1, 4, 9, 16});
  CHECK(client.reduce("sum", b).as_i64() == 30);
  CHECK(client.metrics().messages_sent == 4);
}

TEST_CASE("float and bool payloads survive the wire") {
  TcpFixture f;
  TcpTransport transport("127.0.0.1", f.server.port());
  LazyClient client(transport, ClientConfig::baseline(), "tcp-floats");

  ArrayHandle x = client.create_array(
      FillSpec::values(std::vector<double>{0.1, -0.0, 1e-300, 1.0 / 3.0}),
      DType::Float64, 4);
  ArrayHandle zero_div = client.binop("truediv", x, Scalar::of_f64(0.0));
  const auto inf_values = std::get<1>(client.to_values(zero_div));
  CHECK(std::isinf(inf_values[0]));
  CHECK(std::isnan(inf_values[1]));  // -0.0 / 0.0

  const auto back = std::get<1>(client.to_values(x));
  CHECK(back == std::vector<double>{0.1, -0.0, 1e-300, 1.0 / 3.0});

  ArrayHandle mask = client.binop("gt", x, Scalar::of_f64(0.0));
  CHECK(std::get<2>(client.to_values(mask)) == std::vector<std::uint8_t>{1, 0, 1, 1});
}

TEST_CASE("server errors come back as error replies, not disconnects") {
  TcpFixture f;
  TcpTransport transport("127.0.0.1", f.server.port());
  LazyClient client(transport, ClientConfig::baseline(), "tcp-errors");
  ArrayHandle empty = client.create_array(FillSpec::arange(), DType::Int64, 0);
  CHECK_THROWS_WITH_AS((void)client.reduce("min", empty),
                       doctest::Contains("arithmetic error"), Error);
  // The session is still usable afterwards.
  ArrayHandle a = client.create_array(FillSpec::arange(), DType::Int64, 3);
  CHECK(client.reduce("sum", a).as_i64() == 3);
}

TEST_CASE("concurrent sessions get independent tags and shared state") {
  TcpFixture f;
  auto worker = [&](std::uint64_t seed, std::int64_t& out) {
    TcpTransport transport("127.0.0.1", f.server.port());
    LazyClient client(transport, ClientConfig::optimized(), "worker");
    ArrayHandle a = client.create_array(FillSpec::randint(0, 100, seed), DType::Int64, 64);
    ArrayHandle b = client.binop("add", a, a);
    out = client.reduce("sum", b).as_i64();
  };
  std::int64_t r1 = 0, r2 = 0;
  std::thread t1(worker, 1, std::ref(r1));
  std::thread t2(worker, 2, std::ref(r2));
  t1.join();
  t2.join();
  std::int64_t expect1 = 0, expect2 = 0;
  for (std::uint64_t i = 0; i < 64; ++i) {
    expect1 += 2 * rand_range_i64(1, i, 0, 100);
    expect2 += 2 * rand_range_i64(2, i, 0, 100);
  }
  CHECK(r1 == expect1);
  CHECK(r2 == expect2);
}

TEST_CASE("shutdown command stops the server") {
  TcpArrayServer server{ServerOptions{}, 0};
  server.start_background();
  {
    TcpTransport transport("127.0.0.1", server.port());
    LazyClient client(transport, ClientConfig::baseline(), "closer");
    client.shutdown_server();
  }
  server.stop();  // must not hang
  CHECK_THROWS_WITH_AS(TcpTransport("127.0.0.1", server.port()),
                       doctest::Contains("connection error"), Error);
}

TEST_CASE("binding the same port twice fails") {
  TcpFixture f;
  CHECK_THROWS_WITH_AS(TcpArrayServer(ServerOptions{}, f.server.port()),
                       doctest::Contains("connection error"), Error);
}

TEST_CASE("local and tcp transports count identical messages") {
  auto run = [](Transport& transport) {
    LazyClient client(transport, ClientConfig::optimized(), "parity");
    ArrayHandle a = client.create_array(FillSpec::randint(0, 10, 7), DType::Int64, 10);
    ArrayHandle t1 = client.binop("mul", a, a);
    ArrayHandle t2 = client.binop("mul", a, a);
    ArrayHandle b = client.binop("add", t1, t2);
    client.release(t1);
    client.release(t2);
    (void)client.to_values(b);
    return client.metrics().messages_sent;
  };
  ArrayServer local_server;
  LocalTransport local(local_server);
  const auto local_msgs = run(local);

  TcpFixture f;
  TcpTransport tcp("127.0.0.1", f.server.port());
  CHECK(run(tcp) == local_msgs);
}
