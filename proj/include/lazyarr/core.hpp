#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace lazyarr {

// ---------------------------------------------------------------------------
// Dtypes and scalars
// ---------------------------------------------------------------------------

enum class DType { Int64, Float64, Bool };

inline const char* dtype_name(DType t) {
  switch (t) {
    case DType::Int64: return "int64";
    case DType::Float64: return "float64";
    case DType::Bool: return "bool";
  }
  return "?";
}

inline DType dtype_from_name(const std::string& s) {
  if (s == "int64") return DType::Int64;
  if (s == "float64") return DType::Float64;
  if (s == "bool") return DType::Bool;
  throw std::runtime_error("schema error: unknown dtype '" + s + "'");
}

// A typed scalar value as carried by the protocol (reduce results, fill
// constants, scalar operands).
struct Scalar {
  DType dtype = DType::Int64;
  std::variant<std::int64_t, double, bool> value = std::int64_t{0};

  static Scalar of_i64(std::int64_t v) { return {DType::Int64, v}; }
  static Scalar of_f64(double v) { return {DType::Float64, v}; }
  static Scalar of_bool(bool v) { return {DType::Bool, v}; }

  std::int64_t as_i64() const { return std::get<std::int64_t>(value); }
  double as_f64() const { return std::get<double>(value); }
  bool as_bool() const { return std::get<bool>(value); }

  // Numeric view regardless of underlying dtype.
  double to_double() const {
    switch (dtype) {
      case DType::Int64: return static_cast<double>(as_i64());
      case DType::Float64: return as_f64();
      case DType::Bool: return as_bool() ? 1.0 : 0.0;
    }
    return 0.0;
  }
};

// Element storage for one array. Bool uses uint8 so storage stays contiguous
// and addressable.
using ArrayData = std::variant<std::vector<std::int64_t>, std::vector<double>,
                               std::vector<std::uint8_t>>;

inline DType data_dtype(const ArrayData& d) {
  switch (d.index()) {
    case 0: return DType::Int64;
    case 1: return DType::Float64;
    default: return DType::Bool;
  }
}

inline std::size_t data_size(const ArrayData& d) {
  return std::visit([](const auto& v) { return v.size(); }, d);
}

inline ArrayData make_data(DType t, std::size_t n) {
  switch (t) {
    case DType::Int64: return std::vector<std::int64_t>(n);
    case DType::Float64: return std::vector<double>(n);
    case DType::Bool: return std::vector<std::uint8_t>(n);
  }
  return std::vector<std::int64_t>(n);
}

inline Scalar data_at(const ArrayData& d, std::size_t i) {
  switch (d.index()) {
    case 0: return Scalar::of_i64(std::get<0>(d)[i]);
    case 1: return Scalar::of_f64(std::get<1>(d)[i]);
    default: return Scalar::of_bool(std::get<2>(d)[i] != 0);
  }
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

// One exception type; the message starts with a stable category prefix
// ("schema error:", "dtype error:", "bounds error:", "unknown id:",
// "resource error:", "arithmetic error:") so callers and tests can match on
// the category without a parallel enum.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& category, const std::string& what) {
  throw Error(category + ": " + what);
}

// ---------------------------------------------------------------------------
// Deterministic counter-based RNG
// ---------------------------------------------------------------------------

// splitmix64 finalizer over (seed, index): element i is a pure function of
// the pair, so fills are reproducible and chunk-parallelizable.
inline std::uint64_t mix64(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + (index + 1) * 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::int64_t rand_range_i64(std::uint64_t seed, std::uint64_t index,
                                   std::int64_t lo, std::int64_t hi) {
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo);
  return lo + static_cast<std::int64_t>(mix64(seed, index) % span);
}

inline double rand_range_f64(std::uint64_t seed, std::uint64_t index, double lo,
                             double hi) {
  const double unit = static_cast<double>(mix64(seed, index) >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * unit;
}

// ---------------------------------------------------------------------------
// Number formatting
// ---------------------------------------------------------------------------

// Shortest round-trip decimal form; NaN/Inf spelled like the wire encoding.
inline std::string format_f64(double v) {
  if (std::isnan(v)) return "NaN";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_scalar(const Scalar& s) {
  switch (s.dtype) {
    case DType::Int64: return std::to_string(s.as_i64());
    case DType::Float64: return format_f64(s.as_f64());
    case DType::Bool: return s.as_bool() ? "true" : "false";
  }
  return "";
}

}  // namespace lazyarr
