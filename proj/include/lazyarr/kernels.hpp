#pragma once

// Elementwise kernels, reductions, and the dtype promotion rules. The client
// uses the promotion rules to know result metadata at issue time; the server
// uses the kernels to compute. Keeping both in one header keeps the two sides
// in agreement by construction.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>

#include "lazyarr/core.hpp"

namespace lazyarr {

inline bool is_comparison_op(const std::string& op) {
  return op == "eq" || op == "ne" || op == "lt" || op == "le" || op == "gt" ||
         op == "ge";
}

inline bool is_equality_op(const std::string& op) { return op == "eq" || op == "ne"; }

// Result dtype for a binary op, or throws a dtype error. Arithmetic promotes
// bool to int64 and any float64 operand to a float64 result; truediv/safediv
// always yield float64; floordiv/mod are int64-only.
inline DType binop_result_dtype(const std::string& op, DType a, DType b) {
  const bool any_float = a == DType::Float64 || b == DType::Float64;
  if (op == "add" || op == "sub" || op == "mul")
    return any_float ? DType::Float64 : DType::Int64;
  if (op == "truediv" || op == "safediv") return DType::Float64;
  if (op == "floordiv" || op == "mod") {
    if (a != DType::Int64 || b != DType::Int64)
      fail("dtype error", op + " requires int64 operands");
    return DType::Int64;
  }
  if (is_equality_op(op)) {
    if ((a == DType::Bool) != (b == DType::Bool))
      fail("dtype error", op + " cannot mix bool and numeric");
    return DType::Bool;
  }
  if (is_comparison_op(op)) {
    if (a == DType::Bool || b == DType::Bool)
      fail("dtype error", op + " requires numeric operands");
    return DType::Bool;
  }
  fail("schema error", "unknown binop '" + op + "'");
}

inline DType unary_result_dtype(const std::string& op, DType a) {
  if (op == "neg" || op == "abs") {
    if (a == DType::Bool) fail("dtype error", op + " requires numeric operand");
    return a;
  }
  if (op == "lognot") {
    if (a != DType::Bool) fail("dtype error", "lognot requires bool operand");
    return DType::Bool;
  }
  fail("schema error", "unknown unary op '" + op + "'");
}

// Scalar reduction result dtype. sum/prod over bool count as int64.
inline DType reduce_result_dtype(const std::string& op, DType a) {
  if (op == "any" || op == "all") return DType::Bool;
  if (op == "min" || op == "max") return a;
  if (op == "sum" || op == "prod") return a == DType::Bool ? DType::Int64 : a;
  fail("schema error", "unknown reduce op '" + op + "'");
}

// ---------------------------------------------------------------------------
// Operand views and converting accessors
// ---------------------------------------------------------------------------

struct OperandView {
  const ArrayData* arr = nullptr;
  Scalar scalar;

  bool is_array() const { return arr != nullptr; }
  DType dtype() const { return arr ? data_dtype(*arr) : scalar.dtype; }

  static OperandView of_array(const ArrayData& d) {
    OperandView v;
    v.arr = &d;
    return v;
  }
  static OperandView of_scalar(Scalar s) {
    OperandView v;
    v.scalar = s;
    return v;
  }
};

namespace detail {

// Reads elements of any dtype (or a broadcast scalar) as Out.
template <typename Out>
struct Acc {
  const std::int64_t* pi = nullptr;
  const double* pf = nullptr;
  const std::uint8_t* pb = nullptr;
  Out constant{};

  explicit Acc(const OperandView& v) {
    if (v.is_array()) {
      switch (v.arr->index()) {
        case 0: pi = std::get<0>(*v.arr).data(); break;
        case 1: pf = std::get<1>(*v.arr).data(); break;
        default: pb = std::get<2>(*v.arr).data(); break;
      }
    } else {
      switch (v.scalar.dtype) {
        case DType::Int64: constant = static_cast<Out>(v.scalar.as_i64()); break;
        case DType::Float64: constant = static_cast<Out>(v.scalar.as_f64()); break;
        case DType::Bool: constant = static_cast<Out>(v.scalar.as_bool() ? 1 : 0); break;
      }
    }
  }

  Out at(std::size_t i) const {
    if (pi) return static_cast<Out>(pi[i]);
    if (pf) return static_cast<Out>(pf[i]);
    if (pb) return static_cast<Out>(pb[i] != 0 ? 1 : 0);
    return constant;
  }
};

inline std::int64_t floordiv_i64(std::int64_t a, std::int64_t b) {
  if (b == 0) fail("arithmetic error", "floordiv by zero");
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline std::int64_t mod_i64(std::int64_t a, std::int64_t b) {
  if (b == 0) fail("arithmetic error", "mod by zero");
  std::int64_t r = a % b;
  if (r != 0 && ((r < 0) != (b < 0))) r += b;
  return r;
}

template <typename T, typename F>
void binop_loop(const OperandView& a, const OperandView& b, std::size_t n,
                T* out, F fn) {
  Acc<T> la(a), rb(b);
  for (std::size_t i = 0; i < n; ++i) out[i] = fn(la.at(i), rb.at(i));
}

template <typename T, typename F>
void compare_loop(const OperandView& a, const OperandView& b, std::size_t n,
                  std::uint8_t* out, F fn) {
  Acc<T> la(a), rb(b);
  for (std::size_t i = 0; i < n; ++i) out[i] = fn(la.at(i), rb.at(i)) ? 1 : 0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Binary / unary kernels
// ---------------------------------------------------------------------------

// Computes op(a, b) elementwise into dest, which must already have the result
// dtype and size n. dest may alias an operand: each output element is written
// only after the corresponding input elements are read.
inline void eval_binop_into(const std::string& op, const OperandView& a,
                            const OperandView& b, std::size_t n, ArrayData& dest) {
  const DType out_t = binop_result_dtype(op, a.dtype(), b.dtype());
  if (data_dtype(dest) != out_t || data_size(dest) != n)
    fail("dtype error", "destination does not match result shape");

  using detail::Acc;
  if (op == "add" || op == "sub" || op == "mul") {
    if (out_t == DType::Int64) {
      auto* out = std::get<0>(dest).data();
      if (op == "add")
        detail::binop_loop<std::int64_t>(a, b, n, out, [](auto x, auto y) { return x + y; });
      else if (op == "sub")
        detail::binop_loop<std::int64_t>(a, b, n, out, [](auto x, auto y) { return x - y; });
      else
        detail::binop_loop<std::int64_t>(a, b, n, out, [](auto x, auto y) { return x * y; });
    } else {
      auto* out = std::get<1>(dest).data();
      if (op == "add")
        detail::binop_loop<double>(a, b, n, out, [](auto x, auto y) { return x + y; });
      else if (op == "sub")
        detail::binop_loop<double>(a, b, n, out, [](auto x, auto y) { return x - y; });
      else
        detail::binop_loop<double>(a, b, n, out, [](auto x, auto y) { return x * y; });
    }
    return;
  }
  if (op == "truediv") {
    detail::binop_loop<double>(a, b, n, std::get<1>(dest).data(),
                               [](double x, double y) { return x / y; });
    return;
  }
  if (op == "safediv") {
    detail::binop_loop<double>(a, b, n, std::get<1>(dest).data(),
                               [](double x, double y) { return y == 0.0 ? 0.0 : x / y; });
    return;
  }
  if (op == "floordiv") {
    detail::binop_loop<std::int64_t>(a, b, n, std::get<0>(dest).data(),
                                     detail::floordiv_i64);
    return;
  }
  if (op == "mod") {
    detail::binop_loop<std::int64_t>(a, b, n, std::get<0>(dest).data(), detail::mod_i64);
    return;
  }

  // Comparisons. Use the exact int64 path when no float64 is involved.
  auto* out = std::get<2>(dest).data();
  const bool both_bool = a.dtype() == DType::Bool && b.dtype() == DType::Bool;
  const bool any_float = a.dtype() == DType::Float64 || b.dtype() == DType::Float64;
  auto dispatch = [&](auto cmp) {
    if (any_float)
      detail::compare_loop<double>(a, b, n, out, cmp);
    else
      detail::compare_loop<std::int64_t>(a, b, n, out, cmp);
  };
  if (op == "eq") {
    if (both_bool)
      detail::compare_loop<std::int64_t>(a, b, n, out, [](auto x, auto y) { return x == y; });
    else
      dispatch([](auto x, auto y) { return x == y; });
  } else if (op == "ne") {
    if (both_bool)
      detail::compare_loop<std::int64_t>(a, b, n, out, [](auto x, auto y) { return x != y; });
    else
      dispatch([](auto x, auto y) { return x != y; });
  } else if (op == "lt") {
    dispatch([](auto x, auto y) { return x < y; });
  } else if (op == "le") {
    dispatch([](auto x, auto y) { return x <= y; });
  } else if (op == "gt") {
    dispatch([](auto x, auto y) { return x > y; });
  } else {
    dispatch([](auto x, auto y) { return x >= y; });
  }
}

inline ArrayData eval_binop(const std::string& op, const OperandView& a,
                            const OperandView& b, std::size_t n) {
  ArrayData dest = make_data(binop_result_dtype(op, a.dtype(), b.dtype()), n);
  eval_binop_into(op, a, b, n, dest);
  return dest;
}

inline void eval_unary_into(const std::string& op, const ArrayData& a, ArrayData& dest) {
  const std::size_t n = data_size(a);
  const DType out_t = unary_result_dtype(op, data_dtype(a));
  if (data_dtype(dest) != out_t || data_size(dest) != n)
    fail("dtype error", "destination does not match result shape");
  if (op == "lognot") {
    const auto& in = std::get<2>(a);
    auto& out = std::get<2>(dest);
    for (std::size_t i = 0; i < n; ++i) out[i] = in[i] ? 0 : 1;
    return;
  }
  if (data_dtype(a) == DType::Int64) {
    const auto& in = std::get<0>(a);
    auto& out = std::get<0>(dest);
    if (op == "neg")
      for (std::size_t i = 0; i < n; ++i) out[i] = -in[i];
    else
      for (std::size_t i = 0; i < n; ++i) out[i] = in[i] < 0 ? -in[i] : in[i];
  } else {
    const auto& in = std::get<1>(a);
    auto& out = std::get<1>(dest);
    if (op == "neg")
      for (std::size_t i = 0; i < n; ++i) out[i] = -in[i];
    else
      for (std::size_t i = 0; i < n; ++i) out[i] = std::abs(in[i]);
  }
}

inline ArrayData eval_unary(const std::string& op, const ArrayData& a) {
  ArrayData dest = make_data(unary_result_dtype(op, data_dtype(a)), data_size(a));
  eval_unary_into(op, a, dest);
  return dest;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline constexpr std::size_t kReduceChunk = 4096;

namespace detail {

// Fixed-shape accumulation: left-to-right within each 4096-element chunk,
// chunk results combined left-to-right. Pins float results independent of
// any internal parallelization.
template <typename T, typename F>
T reduce_chunked(std::span<const T> data, T identity, F combine) {
  if (data.empty()) return identity;
  bool have_total = false;
  T total{};
  for (std::size_t base = 0; base < data.size(); base += kReduceChunk) {
    const std::size_t end = std::min(base + kReduceChunk, data.size());
    T acc = data[base];
    for (std::size_t i = base + 1; i < end; ++i) acc = combine(acc, data[i]);
    total = have_total ? combine(total, acc) : acc;
    have_total = true;
  }
  return total;
}

template <typename T>
Scalar reduce_typed(const std::string& op, std::span<const T> v, DType out_t) {
  auto wrap = [&](T x) {
    if constexpr (std::is_same_v<T, double>)
      return Scalar::of_f64(x);
    else
      return Scalar::of_i64(x);
  };
  if (op == "sum") return wrap(reduce_chunked<T>(v, T{0}, [](T a, T b) { return a + b; }));
  if (op == "prod") return wrap(reduce_chunked<T>(v, T{1}, [](T a, T b) { return a * b; }));
  if (v.empty()) fail("arithmetic error", op + " of empty array");
  if (op == "min")
    return wrap(reduce_chunked<T>(v, v[0], [](T a, T b) { return b < a ? b : a; }));
  if (op == "max")
    return wrap(reduce_chunked<T>(v, v[0], [](T a, T b) { return a < b ? b : a; }));
  (void)out_t;
  fail("schema error", "unknown reduce op '" + op + "'");
}

}  // namespace detail

inline Scalar eval_reduce(const std::string& op, const ArrayData& a) {
  const DType in_t = data_dtype(a);
  const DType out_t = reduce_result_dtype(op, in_t);
  if (op == "any" || op == "all") {
    bool numeric_true = false;
    auto test = [&](auto&& vec) {
      for (auto x : vec) {
        const bool t = x != decltype(x){0};
        if (op == "any" && t) return true;
        if (op == "all" && !t) return false;
      }
      return op == "all";
    };
    numeric_true = std::visit(test, a);
    return Scalar::of_bool(numeric_true);
  }
  if (in_t == DType::Bool) {
    // Promote to int64 counts for sum/prod; min/max stay bool.
    const auto& v = std::get<2>(a);
    if (op == "sum") {
      std::int64_t c = 0;
      for (auto x : v) c += x ? 1 : 0;
      return Scalar::of_i64(c);
    }
    if (op == "prod") {
      std::int64_t p = 1;
      for (auto x : v) p *= x ? 1 : 0;
      return Scalar::of_i64(p);
    }
    if (v.empty()) fail("arithmetic error", op + " of empty array");
    bool any_true = false, any_false = false;
    for (auto x : v) (x ? any_true : any_false) = true;
    return Scalar::of_bool(op == "max" ? any_true : !any_false);
  }
  if (in_t == DType::Int64)
    return detail::reduce_typed<std::int64_t>(op, std::get<0>(a), out_t);
  return detail::reduce_typed<double>(op, std::get<1>(a), out_t);
}

// ---------------------------------------------------------------------------
// Slice and set intersection
// ---------------------------------------------------------------------------

inline void eval_slice_into(const ArrayData& a, std::int64_t start, std::int64_t stop,
                            ArrayData& dest) {
  std::visit(
      [&](const auto& in) {
        using Vec = std::decay_t<decltype(in)>;
        auto& out = std::get<Vec>(dest);
        std::copy(in.begin() + start, in.begin() + stop, out.begin());
      },
      a);
}

inline ArrayData eval_slice(const ArrayData& a, std::int64_t start, std::int64_t stop) {
  ArrayData dest = make_data(data_dtype(a), static_cast<std::size_t>(stop - start));
  eval_slice_into(a, start, stop, dest);
  return dest;
}

// |distinct(a) ∩ distinct(b)| via sort-dedup-merge.
inline std::int64_t eval_intersect_size(const std::vector<std::int64_t>& a,
                                        const std::vector<std::int64_t>& b) {
  std::vector<std::int64_t> sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  sa.erase(std::unique(sa.begin(), sa.end()), sa.end());
  std::sort(sb.begin(), sb.end());
  sb.erase(std::unique(sb.begin(), sb.end()), sb.end());
  std::int64_t count = 0;
  std::size_t i = 0, j = 0;
  while (i < sa.size() && j < sb.size()) {
    if (sa[i] < sb[j])
      ++i;
    else if (sb[j] < sa[i])
      ++j;
    else {
      ++count;
      ++i;
      ++j;
    }
  }
  return count;
}

}  // namespace lazyarr
