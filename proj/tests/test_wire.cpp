#include <doctest.h>

#include <cstring>

#include "lazyarr/wire.hpp"

using namespace lazyarr;

TEST_CASE("frame encodes length prefix plus body") {
  Request req;
  req.tag = 0;
  req.cmd = "shutdown";
  req.args = json::object();
  const json body = request_to_json(req);
  const auto bytes = encode_frame(body);
  const std::string text = body.dump();
  REQUIRE(bytes.size() == 4 + text.size());
  const std::uint32_t n = (std::uint32_t(bytes[0]) << 24) | (std::uint32_t(bytes[1]) << 16) |
                          (std::uint32_t(bytes[2]) << 8) | std::uint32_t(bytes[3]);
  CHECK(n == text.size());
  CHECK(std::equal(text.begin(), text.end(), bytes.begin() + 4));
}

TEST_CASE("decode is the inverse of encode for schema-valid requests") {
  // A deterministic sample across the command vocabulary.
  std::vector<Request> sample;
  std::uint64_t tag = 1;
  for (const auto& spec : command_schema()) {
    Request r;
    r.tag = tag++;
    r.cmd = spec.cmd;
    r.args = json{{"probe", std::string(spec.cmd)}, {"k", static_cast<std::int64_t>(tag)}};
    sample.push_back(r);
  }
  for (std::uint64_t i = 0; i < 200; ++i) {
    Request r;
    r.tag = mix64(7, i);
    r.cmd = binop_ops()[i % binop_ops().size()];
    r.args = json{{"op", r.cmd},
                  {"left", operand_to_json(OperandRef::of_array("S" + std::to_string(i)))},
                  {"right", operand_to_json(OperandRef::of_scalar(
                                Scalar::of_f64(rand_range_f64(3, i, -10, 10))))}};
    sample.push_back(r);
  }
  for (const auto& r : sample) {
    const Request back = request_from_json(decode_frame(encode_frame(request_to_json(r))));
    CHECK(back.tag == r.tag);
    CHECK(back.cmd == r.cmd);
    CHECK(back.args == r.args);
  }
}

TEST_CASE("reply round-trip preserves status and timing") {
  Reply r;
  r.tag = 42;
  r.ok = false;
  r.error = "dtype error: nope";
  r.timing = {1, 2, 3, 4};
  const Reply back = reply_from_json(decode_frame(encode_frame(reply_to_json(r))));
  CHECK(back.tag == 42);
  CHECK_FALSE(back.ok);
  CHECK(back.error == r.error);
  CHECK(back.timing.parse_ns == 1);
  CHECK(back.timing.compute_ns == 4);
}

TEST_CASE("oversized body is rejected") {
  Request r;
  r.tag = 1;
  r.cmd = "create";
  r.args = json{{"blob", std::string(kMaxFrameBytes + 1, 'x')}};
  CHECK_THROWS_WITH_AS(encode_frame(request_to_json(r)),
                       doctest::Contains("encoding error"), Error);
}

TEST_CASE("frame body must be a JSON object") {
  const auto bytes = encode_frame(json{{"k", 1}});
  auto broken = bytes;
  // Splice in a JSON array body of the same length.
  const std::string arr = "[19386]";
  REQUIRE(arr.size() == bytes.size() - 4);
  std::copy(arr.begin(), arr.end(), broken.begin() + 4);
  CHECK_THROWS_AS((void)decode_frame(broken), Error);
}

TEST_CASE("command schema is the closed documented set") {
  CHECK(command_schema().size() == 16);
  CHECK(find_command("binop") != nullptr);
  CHECK(find_command("create_store") != nullptr);
  CHECK(find_command("frobnicate") == nullptr);

  const std::vector<std::string> expected_binops = {"add", "sub",     "mul", "truediv",
                                                    "floordiv", "mod", "safediv", "eq",
                                                    "ne",  "lt",      "le",  "gt",
                                                    "ge"};
  CHECK(binop_ops() == expected_binops);
  const std::vector<std::string> expected_reduce = {"sum", "prod", "min",
                                                    "max", "any",  "all"};
  CHECK(reduce_ops() == expected_reduce);
}

TEST_CASE("int64 payload values survive exactly") {
  ArrayData data = std::vector<std::int64_t>{INT64_MAX, INT64_MIN, 0, -1, 1ll << 53};
  const ArrayData back = data_from_json(DType::Int64, json::parse(data_to_json(data).dump()));
  CHECK(std::get<0>(back) == std::get<0>(data));
}

TEST_CASE("float64 payloads round-trip bit-exactly with NaN and Inf as strings") {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> values = {0.1,  -0.0,  1e-300, 1.7976931348623157e308,
                                3.25, 1.0 / 3.0, inf, -inf};
  ArrayData data = values;
  const json encoded = json::parse(data_to_json(data).dump());
  CHECK(encoded[6] == "Inf");
  CHECK(encoded[7] == "-Inf");
  const ArrayData decoded = data_from_json(DType::Float64, encoded);
  const auto& back = std::get<1>(decoded);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t a, b;
    std::memcpy(&a, &values[i], 8);
    std::memcpy(&b, &back[i], 8);
    CHECK(a == b);
  }

  const json nan_encoded = f64_to_json(std::nan(""));
  CHECK(nan_encoded == "NaN");
  CHECK(std::isnan(f64_from_json(nan_encoded)));
}

TEST_CASE("operand ref admits exactly one variant") {
  const json arr = operand_to_json(OperandRef::of_array("S1"));
  const OperandRef a = operand_from_json(arr);
  CHECK(a.is_array);
  CHECK(a.array == "S1");

  const json sc = operand_to_json(OperandRef::of_scalar(Scalar::of_i64(5)));
  const OperandRef s = operand_from_json(sc);
  CHECK_FALSE(s.is_array);
  CHECK(s.scalar.as_i64() == 5);

  CHECK_THROWS_AS((void)operand_from_json(json{{"array", "S1"}, {"scalar", 1}}), Error);
  CHECK_THROWS_AS((void)operand_from_json(json::object()), Error);
}

TEST_CASE("fill specs round-trip through JSON") {
  const FillSpec r = FillSpec::randint(0, 10, 7);
  const FillSpec r2 = fill_from_json(json::parse(fill_to_json(r).dump()), DType::Int64);
  CHECK(r2.kind == FillSpec::Kind::RandInt);
  CHECK(r2.lo == 0);
  CHECK(r2.hi == 10);
  CHECK(r2.seed == 7);

  const FillSpec v = FillSpec::values(std::vector<double>{1.5, -2.5});
  const FillSpec v2 = fill_from_json(json::parse(fill_to_json(v).dump()), DType::Float64);
  CHECK(std::get<1>(v2.data) == std::get<1>(v.data));

  CHECK_THROWS_AS((void)fill_from_json(json{{"kind", "mystery"}}, DType::Int64), Error);
}
