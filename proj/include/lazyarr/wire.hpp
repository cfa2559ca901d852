#pragma once

// Request-reply wire format shared by client and server.
//
// A frame is a 4-byte big-endian byte count followed by exactly that many
// bytes of UTF-8 JSON (one object). Requests carry {tag, cmd, args}; replies
// carry {tag, status, payload|error, timing}. Tags are a per-session counter
// and must strictly increase. The command vocabulary is the closed table
// returned by command_schema().
//
// Numeric encoding: int64 values travel as JSON integers (exact); float64
// values as JSON numbers in shortest round-trip form, except NaN/Inf which
// travel as the strings "NaN", "Inf", "-Inf".

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lazyarr/core.hpp"

namespace lazyarr {

using json = nlohmann::json;

inline constexpr std::size_t kMaxFrameBytes = std::size_t{1} << 26;

// ---------------------------------------------------------------------------
// Scalar / array payload encoding
// ---------------------------------------------------------------------------

inline json f64_to_json(double v) {
  if (std::isnan(v)) return "NaN";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  return v;
}

inline double f64_from_json(const json& j) {
  if (j.is_string()) {
    const std::string& s = j.get_ref<const std::string&>();
    if (s == "NaN") return std::nan("");
    if (s == "Inf") return std::numeric_limits<double>::infinity();
    if (s == "-Inf") return -std::numeric_limits<double>::infinity();
    fail("schema error", "bad float encoding '" + s + "'");
  }
  return j.get<double>();
}

// Self-describing scalar: JSON integer = int64, float = float64, bool = bool,
// string = NaN/Inf float.
inline json scalar_to_json(const Scalar& s) {
  switch (s.dtype) {
    case DType::Int64: return s.as_i64();
    case DType::Float64: return f64_to_json(s.as_f64());
    case DType::Bool: return s.as_bool();
  }
  return nullptr;
}

inline Scalar scalar_from_json(const json& j) {
  if (j.is_boolean()) return Scalar::of_bool(j.get<bool>());
  if (j.is_number_integer() || j.is_number_unsigned())
    return Scalar::of_i64(j.get<std::int64_t>());
  if (j.is_number_float() || j.is_string()) return Scalar::of_f64(f64_from_json(j));
  fail("schema error", "bad scalar encoding");
}

inline json data_to_json(const ArrayData& d) {
  json out = json::array();
  switch (d.index()) {
    case 0:
      for (auto v : std::get<0>(d)) out.push_back(v);
      break;
    case 1:
      for (auto v : std::get<1>(d)) out.push_back(f64_to_json(v));
      break;
    default:
      for (auto v : std::get<2>(d)) out.push_back(v != 0);
      break;
  }
  return out;
}

inline ArrayData data_from_json(DType dtype, const json& values) {
  if (!values.is_array()) fail("schema error", "values must be an array");
  switch (dtype) {
    case DType::Int64: {
      std::vector<std::int64_t> v;
      v.reserve(values.size());
      for (const auto& e : values) v.push_back(e.get<std::int64_t>());
      return v;
    }
    case DType::Float64: {
      std::vector<double> v;
      v.reserve(values.size());
      for (const auto& e : values) v.push_back(f64_from_json(e));
      return v;
    }
    case DType::Bool: {
      std::vector<std::uint8_t> v;
      v.reserve(values.size());
      for (const auto& e : values) v.push_back(e.get<bool>() ? 1 : 0);
      return v;
    }
  }
  fail("schema error", "bad dtype");
}

// ---------------------------------------------------------------------------
// Operands and fills
// ---------------------------------------------------------------------------

// Exactly one of {array id, scalar}.
struct OperandRef {
  std::string array;  // server id when non-empty
  Scalar scalar;
  bool is_array = false;

  static OperandRef of_array(std::string id) {
    OperandRef r;
    r.array = std::move(id);
    r.is_array = true;
    return r;
  }
  static OperandRef of_scalar(Scalar s) {
    OperandRef r;
    r.scalar = s;
    return r;
  }
};

inline json operand_to_json(const OperandRef& op) {
  if (op.is_array) return json{{"array", op.array}};
  return json{{"scalar", {{"dtype", dtype_name(op.scalar.dtype)},
                          {"value", scalar_to_json(op.scalar)}}}};
}

inline OperandRef operand_from_json(const json& j) {
  const bool has_array = j.contains("array");
  const bool has_scalar = j.contains("scalar");
  if (has_array == has_scalar)
    fail("schema error", "operand needs exactly one of array/scalar");
  if (has_array) return OperandRef::of_array(j.at("array").get<std::string>());
  const json& s = j.at("scalar");
  DType dt = dtype_from_name(s.at("dtype").get<std::string>());
  Scalar val = scalar_from_json(s.at("value"));
  // Coerce the JSON-inferred dtype to the declared one.
  switch (dt) {
    case DType::Int64:
      if (val.dtype != DType::Int64) fail("schema error", "scalar value/dtype mismatch");
      break;
    case DType::Float64:
      val = Scalar::of_f64(val.to_double());
      break;
    case DType::Bool:
      if (val.dtype != DType::Bool) fail("schema error", "scalar value/dtype mismatch");
      break;
  }
  return OperandRef::of_scalar(val);
}

struct FillSpec {
  enum class Kind { RandInt, Const, Arange, Values };
  Kind kind = Kind::Const;
  std::int64_t lo = 0, hi = 0;   // randint
  std::uint64_t seed = 0;        // randint
  Scalar value;                  // const
  ArrayData data;                // values

  static FillSpec randint(std::int64_t lo, std::int64_t hi, std::uint64_t seed) {
    FillSpec f;
    f.kind = Kind::RandInt;
    f.lo = lo;
    f.hi = hi;
    f.seed = seed;
    return f;
  }
  static FillSpec constant(Scalar v) {
    FillSpec f;
    f.kind = Kind::Const;
    f.value = v;
    return f;
  }
  static FillSpec arange() {
    FillSpec f;
    f.kind = Kind::Arange;
    return f;
  }
  static FillSpec values(ArrayData d) {
    FillSpec f;
    f.kind = Kind::Values;
    f.data = std::move(d);
    return f;
  }
};

inline json fill_to_json(const FillSpec& f) {
  switch (f.kind) {
    case FillSpec::Kind::RandInt:
      return json{{"kind", "randint"}, {"lo", f.lo}, {"hi", f.hi}, {"seed", f.seed}};
    case FillSpec::Kind::Const:
      return json{{"kind", "const"}, {"value", scalar_to_json(f.value)}};
    case FillSpec::Kind::Arange:
      return json{{"kind", "arange"}};
    case FillSpec::Kind::Values:
      return json{{"kind", "values"}, {"data", data_to_json(f.data)}};
  }
  return nullptr;
}

inline FillSpec fill_from_json(const json& j, DType dtype) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "randint")
    return FillSpec::randint(j.at("lo").get<std::int64_t>(),
                             j.at("hi").get<std::int64_t>(),
                             j.at("seed").get<std::uint64_t>());
  if (kind == "const") {
    Scalar v = scalar_from_json(j.at("value"));
    if (dtype == DType::Float64) v = Scalar::of_f64(v.to_double());
    return FillSpec::constant(v);
  }
  if (kind == "arange") return FillSpec::arange();
  if (kind == "values") return FillSpec::values(data_from_json(dtype, j.at("data")));
  fail("schema error", "unknown fill kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Request / Reply
// ---------------------------------------------------------------------------

struct ReplyTiming {
  std::int64_t parse_ns = 0;
  std::int64_t create_ns = 0;
  std::int64_t delete_ns = 0;
  std::int64_t compute_ns = 0;
};

struct Request {
  std::uint64_t tag = 0;
  std::string cmd;
  json args = json::object();
};

struct Reply {
  std::uint64_t tag = 0;
  bool ok = true;
  json payload = json::object();
  std::string error;
  ReplyTiming timing;
};

inline json request_to_json(const Request& r) {
  return json{{"tag", r.tag}, {"cmd", r.cmd}, {"args", r.args}};
}

inline Request request_from_json(const json& j) {
  Request r;
  r.tag = j.at("tag").get<std::uint64_t>();
  r.cmd = j.at("cmd").get<std::string>();
  r.args = j.at("args");
  if (!r.args.is_object()) fail("schema error", "args must be an object");
  return r;
}

inline json reply_to_json(const Reply& r) {
  json j{{"tag", r.tag},
         {"status", r.ok ? "ok" : "error"},
         {"timing",
          {{"parse_ns", r.timing.parse_ns},
           {"create_ns", r.timing.create_ns},
           {"delete_ns", r.timing.delete_ns},
           {"compute_ns", r.timing.compute_ns}}}};
  if (r.ok)
    j["payload"] = r.payload;
  else
    j["error"] = r.error;
  return j;
}

inline Reply reply_from_json(const json& j) {
  Reply r;
  r.tag = j.at("tag").get<std::uint64_t>();
  r.ok = j.at("status").get<std::string>() == "ok";
  if (r.ok)
    r.payload = j.at("payload");
  else
    r.error = j.at("error").get<std::string>();
  const json& t = j.at("timing");
  r.timing.parse_ns = t.at("parse_ns").get<std::int64_t>();
  r.timing.create_ns = t.at("create_ns").get<std::int64_t>();
  r.timing.delete_ns = t.at("delete_ns").get<std::int64_t>();
  r.timing.compute_ns = t.at("compute_ns").get<std::int64_t>();
  return r;
}

// ---------------------------------------------------------------------------
// Frame codec
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> encode_frame(const json& body) {
  std::string text = body.dump();
  if (text.size() > kMaxFrameBytes)
    fail("encoding error", "frame body exceeds " + std::to_string(kMaxFrameBytes) + " bytes");
  std::vector<std::uint8_t> out(4 + text.size());
  const std::uint32_t n = static_cast<std::uint32_t>(text.size());
  out[0] = static_cast<std::uint8_t>(n >> 24);
  out[1] = static_cast<std::uint8_t>(n >> 16);
  out[2] = static_cast<std::uint8_t>(n >> 8);
  out[3] = static_cast<std::uint8_t>(n);
  std::copy(text.begin(), text.end(), out.begin() + 4);
  return out;
}

inline std::uint32_t decode_frame_length(const std::uint8_t header[4]) {
  const std::uint32_t n = (std::uint32_t(header[0]) << 24) |
                          (std::uint32_t(header[1]) << 16) |
                          (std::uint32_t(header[2]) << 8) | std::uint32_t(header[3]);
  if (n > kMaxFrameBytes)
    fail("encoding error", "frame length " + std::to_string(n) + " exceeds limit");
  return n;
}

inline json decode_frame(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) fail("encoding error", "short frame");
  const std::uint32_t n = decode_frame_length(bytes.data());
  if (bytes.size() != 4 + std::size_t{n}) fail("encoding error", "frame length mismatch");
  json body = json::parse(bytes.begin() + 4, bytes.end());
  if (!body.is_object()) fail("encoding error", "frame body must be a JSON object");
  return body;
}

// ---------------------------------------------------------------------------
// Command vocabulary
// ---------------------------------------------------------------------------

struct CommandSpec {
  const char* cmd;
  std::vector<const char*> args;
  std::vector<const char*> payload;
};

inline const std::vector<CommandSpec>& command_schema() {
  static const std::vector<CommandSpec> table = {
      {"connect", {"client_name"}, {"session_id"}},
      {"create", {"dtype", "size", "fill"}, {"server_id"}},
      {"create_store", {"dest", "fill"}, {"server_id"}},
      {"binop", {"op", "left", "right"}, {"server_id", "size", "dtype"}},
      {"binop_store", {"op", "left", "right", "dest"}, {"server_id"}},
      {"unary", {"op", "a"}, {"server_id", "size", "dtype"}},
      {"unary_store", {"op", "a", "dest"}, {"server_id"}},
      {"reduce", {"op", "a"}, {"value"}},
      {"slice", {"a", "start", "stop"}, {"server_id", "size", "dtype"}},
      {"slice_store", {"a", "start", "stop", "dest"}, {"server_id"}},
      {"intersect_size", {"a", "b"}, {"value"}},
      {"fetch", {"a", "start?", "stop?"}, {"dtype", "values"}},
      {"delete", {"a"}, {}},
      {"stats", {}, {"messages_handled", "arrays_created", "arrays_deleted",
                     "parse_ns", "create_ns", "delete_ns", "compute_ns"}},
      {"reset_stats", {}, {}},
      {"shutdown", {}, {}},
  };
  return table;
}

inline const CommandSpec* find_command(const std::string& cmd) {
  for (const auto& spec : command_schema())
    if (cmd == spec.cmd) return &spec;
  return nullptr;
}

inline const std::vector<std::string>& binop_ops() {
  static const std::vector<std::string> ops = {"add", "sub", "mul", "truediv",
                                               "floordiv", "mod", "safediv", "eq",
                                               "ne", "lt", "le", "gt", "ge"};
  return ops;
}

inline const std::vector<std::string>& unary_ops() {
  static const std::vector<std::string> ops = {"neg", "abs", "lognot"};
  return ops;
}

inline const std::vector<std::string>& reduce_ops() {
  static const std::vector<std::string> ops = {"sum", "prod", "min", "max", "any", "all"};
  return ops;
}

}  // namespace lazyarr
