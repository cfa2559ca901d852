#pragma once

// Eager array executor: owns the symbol table of named server arrays, parses
// commands, runs kernels, and reports metrics. All optimization intelligence
// lives in the client; the server just does what each command says.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>

#include "lazyarr/kernels.hpp"
#include "lazyarr/wire.hpp"

namespace lazyarr {

struct ServerArray {
  std::string id;
  DType dtype = DType::Int64;
  ArrayData data;
  std::uint64_t version = 0;  // bumped on every overwrite

  std::size_t size() const { return data_size(data); }
};

struct ServerMetrics {
  std::int64_t messages_handled = 0;
  std::int64_t arrays_created = 0;
  std::int64_t arrays_deleted = 0;
  std::int64_t parse_ns = 0;
  std::int64_t create_ns = 0;
  std::int64_t delete_ns = 0;
  std::int64_t compute_ns = 0;

  json to_json() const {
    return json{{"messages_handled", messages_handled},
                {"arrays_created", arrays_created},
                {"arrays_deleted", arrays_deleted},
                {"parse_ns", parse_ns},
                {"create_ns", create_ns},
                {"delete_ns", delete_ns},
                {"compute_ns", compute_ns}};
  }
};

struct ServerOptions {
  std::int64_t element_budget = std::int64_t{1} << 26;  // total elements
};

namespace detail {

class StopWatch {
 public:
  StopWatch() : last_(std::chrono::steady_clock::now()) {}
  std::int64_t lap() {
    auto now = std::chrono::steady_clock::now();
    auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(now - last_).count();
    last_ = now;
    return ns;
  }

 private:
  std::chrono::steady_clock::time_point last_;
};

}  // namespace detail

class ArrayServer {
 public:
  // Per-connection state. Tags must strictly increase within a session.
  struct Session {
    std::string id;
    std::uint64_t last_tag = 0;
    bool saw_tag = false;
  };

  explicit ArrayServer(ServerOptions opts = {}) : opts_(opts) {}

  // Dispatches one request under the table lock; never throws.
  Reply handle(const Request& req, Session& session) {
    std::scoped_lock lock(op_mu_);
    Reply reply;
    reply.tag = req.tag;
    ++metrics_.messages_handled;
    if (session.saw_tag && req.tag <= session.last_tag) {
      reply.ok = false;
      reply.error = "schema error: tag " + std::to_string(req.tag) +
                    " does not increase within session";
      return reply;
    }
    session.last_tag = req.tag;
    session.saw_tag = true;
    try {
      dispatch(req, session, reply);
    } catch (const std::exception& e) {
      reply.ok = false;
      reply.payload = json::object();
      reply.error = e.what();
    }
    metrics_.parse_ns += reply.timing.parse_ns;
    metrics_.create_ns += reply.timing.create_ns;
    metrics_.delete_ns += reply.timing.delete_ns;
    metrics_.compute_ns += reply.timing.compute_ns;
    return reply;
  }

  bool shutdown_requested() const { return shutdown_.load(); }

  // --- Typed operations (also exercised directly by tests) ---------------

  std::string exec_create(const FillSpec& fill, DType dtype, std::int64_t size,
                          ReplyTiming* t = nullptr) {
    std::scoped_lock lock(op_mu_);
    return create_locked(fill, dtype, size, t);
  }

  std::string exec_create_store(const std::string& dest, const FillSpec& fill,
                                ReplyTiming* t = nullptr) {
    std::scoped_lock lock(op_mu_);
    ServerArray& d = lookup(dest);
    detail::StopWatch w;
    apply_fill(d.data, d.dtype, fill);
    ++d.version;
    if (t) t->create_ns += w.lap();
    return d.id;
  }

  std::string exec_binop(const std::string& op, const OperandRef& left,
                         const OperandRef& right,
                         const std::optional<std::string>& dest = std::nullopt,
                         ReplyTiming* t = nullptr) {
    std::scoped_lock lock(op_mu_);
    auto [lv, rv] = operand_views(left, right);
    std::size_t n = 0;
    if (lv.is_array()) n = data_size(*lv.arr);
    if (rv.is_array()) {
      const std::size_t rn = data_size(*rv.arr);
      if (lv.is_array() && rn != n)
        fail("size error", "operand sizes " + std::to_string(n) + " and " +
                               std::to_string(rn) + " differ");
      n = rn;
    }
    const DType out_t = binop_result_dtype(op, lv.dtype(), rv.dtype());
    if (dest) {
      ServerArray& d = lookup(*dest);
      if (d.dtype != out_t) fail("dtype error", "store destination dtype mismatch");
      if (d.size() != n) fail("size error", "store destination size mismatch");
      detail::StopWatch w;
      eval_binop_into(op, lv, rv, n, d.data);
      if (t) t->compute_ns += w.lap();
      ++d.version;
      return d.id;
    }
    detail::StopWatch w;
    ArrayData out = make_data(out_t, n);
    if (t) t->create_ns += w.lap();
    eval_binop_into(op, lv, rv, n, out);
    if (t) t->compute_ns += w.lap();
    return register_array(out_t, std::move(out), t);
  }

  std::string exec_unary(const std::string& op, const std::string& a,
                         const std::optional<std::string>& dest = std::nullopt,
                         ReplyTiming* t = nullptr) {
    std::scoped_lock lock(op_mu_);
    ServerArray& src = lookup(a);
    const DType out_t = unary_result_dtype(op, src.dtype);
    if (dest) {
      ServerArray& d = lookup(*dest);
      if (d.dtype != out_t) fail("dtype error", "store destination dtype mismatch");
      if (d.size() != src.size()) fail("size error", "store destination size mismatch");
      detail::StopWatch w;
      eval_unary_into(op, src.data, d.data);
      if (t) t->compute_ns += w.lap();
      ++d.version;
      return d.id;
    }
    detail::StopWatch w;
    ArrayData out = make_data(out_t, src.size());
    if (t) t->create_ns += w.lap();
    eval_unary_into(op, src.data, out);
    if (t) t->compute_ns += w.lap();
    return register_array(out_t, std::move(out), t);
  }

  Scalar exec_reduce(const std::string& op, const std::string& a,
                     ReplyTiming* t = nullptr) {
    std::scoped_lock lock(op_mu_);
    ServerArray& src = lookup(a);
    detail::StopWatch w;
    Scalar out = eval_reduce(op, src.data);
    if (t) t->compute_ns += w.lap();
    return out;
  }

  std::string exec_slice(const std::string& a, std::int64_t start, std::int64_t stop,
                         const std::optional<std::string>& dest = std::nullopt,
                         ReplyTiming* t = nullptr) {
    std::scoped_lock lock(op_mu_);
    ServerArray& src = lookup(a);
    check_range(start, stop, src.size());
    if (dest) {
      if (*dest == a) fail("schema error", "slice destination aliases source");
      ServerArray& d = lookup(*dest);
      if (d.dtype != src.dtype) fail("dtype error", "store destination dtype mismatch");
      if (static_cast<std::int64_t>(d.size()) != stop - start)
        fail("size error", "store destination size mismatch");
      detail::StopWatch w;
      eval_slice_into(src.data, start, stop, d.data);
      if (t) t->compute_ns += w.lap();
      ++d.version;
      return d.id;
    }
    detail::StopWatch w;
    ArrayData out = eval_slice(src.data, start, stop);
    if (t) t->compute_ns += w.lap();
    return register_array(src.dtype, std::move(out), t);
  }

  std::int64_t exec_intersect_size(const std::string& a, const std::string& b,
                                   ReplyTiming* t = nullptr) {
    std::scoped_lock lock(op_mu_);
    ServerArray& sa = lookup(a);
    ServerArray& sb = lookup(b);
    if (sa.dtype != DType::Int64 || sb.dtype != DType::Int64)
      fail("dtype error", "intersect_size requires int64 operands");
    detail::StopWatch w;
    std::int64_t out = eval_intersect_size(std::get<0>(sa.data), std::get<0>(sb.data));
    if (t) t->compute_ns += w.lap();
    return out;
  }

  std::pair<DType, ArrayData> exec_fetch(const std::string& a,
                                         std::optional<std::int64_t> start = {},
                                         std::optional<std::int64_t> stop = {},
                                         ReplyTiming* t = nullptr) {
    std::scoped_lock lock(op_mu_);
    ServerArray& src = lookup(a);
    const std::int64_t lo = start.value_or(0);
    const std::int64_t hi = stop.value_or(static_cast<std::int64_t>(src.size()));
    check_range(lo, hi, src.size());
    detail::StopWatch w;
    ArrayData out = eval_slice(src.data, lo, hi);
    if (t) t->compute_ns += w.lap();
    return {src.dtype, std::move(out)};
  }

  void exec_delete(const std::string& a, ReplyTiming* t = nullptr) {
    std::scoped_lock lock(op_mu_);
    detail::StopWatch w;
    auto it = table_.find(a);
    if (it == table_.end()) fail("unknown id", a);
    live_elements_ -= static_cast<std::int64_t>(it->second.size());
    table_.erase(it);
    ++metrics_.arrays_deleted;
    if (t) t->delete_ns += w.lap();
  }

  ServerMetrics exec_stats() {
    std::scoped_lock lock(op_mu_);
    return metrics_;
  }

  void exec_reset_stats() {
    std::scoped_lock lock(op_mu_);
    metrics_ = ServerMetrics{};
  }

  std::size_t table_size() {
    std::scoped_lock lock(op_mu_);
    return table_.size();
  }

  // Test access to raw contents.
  ArrayData fetch_data(const std::string& id) {
    std::scoped_lock lock(op_mu_);
    return lookup(id).data;
  }
  std::uint64_t array_version(const std::string& id) {
    std::scoped_lock lock(op_mu_);
    return lookup(id).version;
  }

 private:
  void dispatch(const Request& req, Session& session, Reply& reply) {
    detail::StopWatch parse_w;
    const std::string& cmd = req.cmd;
    if (!find_command(cmd)) fail("schema error", "unknown command '" + cmd + "'");
    const json& a = req.args;

    if (cmd == "connect") {
      const auto name = a.at("client_name").get<std::string>();
      (void)name;
      if (session.id.empty()) session.id = "K" + std::to_string(++session_counter_);
      reply.timing.parse_ns += parse_w.lap();
      reply.payload = json{{"session_id", session.id}};
      return;
    }
    if (cmd == "create") {
      const DType dtype = dtype_from_name(a.at("dtype").get<std::string>());
      const std::int64_t size = a.at("size").get<std::int64_t>();
      FillSpec fill = fill_from_json(a.at("fill"), dtype);
      reply.timing.parse_ns += parse_w.lap();
      reply.payload = json{{"server_id", exec_create(fill, dtype, size, &reply.timing)}};
      return;
    }
    if (cmd == "create_store") {
      const auto dest = a.at("dest").get<std::string>();
      const DType dtype = [&] {
        std::scoped_lock lock(op_mu_);
        return lookup(dest).dtype;
      }();
      FillSpec fill = fill_from_json(a.at("fill"), dtype);
      reply.timing.parse_ns += parse_w.lap();
      reply.payload = json{{"server_id", exec_create_store(dest, fill, &reply.timing)}};
      return;
    }
    if (cmd == "binop" || cmd == "binop_store") {
      const auto op = a.at("op").get<std::string>();
      OperandRef left = operand_from_json(a.at("left"));
      OperandRef right = operand_from_json(a.at("right"));
      std::optional<std::string> dest;
      if (cmd == "binop_store") dest = a.at("dest").get<std::string>();
      reply.timing.parse_ns += parse_w.lap();
      const std::string id = exec_binop(op, left, right, dest, &reply.timing);
      if (dest) {
        reply.payload = json{{"server_id", id}};
      } else {
        std::scoped_lock lock(op_mu_);
        ServerArray& out = lookup(id);
        reply.payload = json{{"server_id", id},
                             {"size", static_cast<std::int64_t>(out.size())},
                             {"dtype", dtype_name(out.dtype)}};
      }
      return;
    }
    if (cmd == "unary" || cmd == "unary_store") {
      const auto op = a.at("op").get<std::string>();
      const auto src = a.at("a").get<std::string>();
      std::optional<std::string> dest;
      if (cmd == "unary_store") dest = a.at("dest").get<std::string>();
      reply.timing.parse_ns += parse_w.lap();
      const std::string id = exec_unary(op, src, dest, &reply.timing);
      if (dest) {
        reply.payload = json{{"server_id", id}};
      } else {
        std::scoped_lock lock(op_mu_);
        ServerArray& out = lookup(id);
        reply.payload = json{{"server_id", id},
                             {"size", static_cast<std::int64_t>(out.size())},
                             {"dtype", dtype_name(out.dtype)}};
      }
      return;
    }
    if (cmd == "reduce") {
      const auto op = a.at("op").get<std::string>();
      const auto src = a.at("a").get<std::string>();
      reply.timing.parse_ns += parse_w.lap();
      reply.payload = json{{"value", scalar_to_json(exec_reduce(op, src, &reply.timing))}};
      return;
    }
    if (cmd == "slice" || cmd == "slice_store") {
      const auto src = a.at("a").get<std::string>();
      const auto start = a.at("start").get<std::int64_t>();
      const auto stop = a.at("stop").get<std::int64_t>();
      std::optional<std::string> dest;
      if (cmd == "slice_store") dest = a.at("dest").get<std::string>();
      reply.timing.parse_ns += parse_w.lap();
      const std::string id = exec_slice(src, start, stop, dest, &reply.timing);
      if (dest) {
        reply.payload = json{{"server_id", id}};
      } else {
        std::scoped_lock lock(op_mu_);
        ServerArray& out = lookup(id);
        reply.payload = json{{"server_id", id},
                             {"size", static_cast<std::int64_t>(out.size())},
                             {"dtype", dtype_name(out.dtype)}};
      }
      return;
    }
    if (cmd == "intersect_size") {
      const auto ida = a.at("a").get<std::string>();
      const auto idb = a.at("b").get<std::string>();
      reply.timing.parse_ns += parse_w.lap();
      reply.payload =
          json{{"value", exec_intersect_size(ida, idb, &reply.timing)}};
      return;
    }
    if (cmd == "fetch") {
      const auto src = a.at("a").get<std::string>();
      std::optional<std::int64_t> start, stop;
      if (a.contains("start")) start = a.at("start").get<std::int64_t>();
      if (a.contains("stop")) stop = a.at("stop").get<std::int64_t>();
      reply.timing.parse_ns += parse_w.lap();
      auto [dtype, data] = exec_fetch(src, start, stop, &reply.timing);
      reply.payload = json{{"dtype", dtype_name(dtype)}, {"values", data_to_json(data)}};
      return;
    }
    if (cmd == "delete") {
      const auto src = a.at("a").get<std::string>();
      reply.timing.parse_ns += parse_w.lap();
      exec_delete(src, &reply.timing);
      reply.payload = json::object();
      return;
    }
    if (cmd == "stats") {
      reply.timing.parse_ns += parse_w.lap();
      reply.payload = exec_stats().to_json();
      return;
    }
    if (cmd == "reset_stats") {
      reply.timing.parse_ns += parse_w.lap();
      exec_reset_stats();
      reply.payload = json::object();
      return;
    }
    // shutdown
    reply.timing.parse_ns += parse_w.lap();
    shutdown_.store(true);
    reply.payload = json::object();
  }

  std::string create_locked(const FillSpec& fill, DType dtype, std::int64_t size,
                            ReplyTiming* t) {
    if (size < 0) fail("schema error", "negative array size");
    detail::StopWatch w;
    ArrayData data = make_data(dtype, static_cast<std::size_t>(size));
    apply_fill(data, dtype, fill);
    if (t) t->create_ns += w.lap();
    return register_array(dtype, std::move(data), t);
  }

  std::string register_array(DType dtype, ArrayData data, ReplyTiming* t) {
    detail::StopWatch w;
    const std::int64_t n = static_cast<std::int64_t>(data_size(data));
    if (live_elements_ + n > opts_.element_budget)
      fail("resource error", "element budget exceeded");
    live_elements_ += n;
    ServerArray arr;
    arr.id = "S" + std::to_string(++id_counter_);
    arr.dtype = dtype;
    arr.data = std::move(data);
    const std::string id = arr.id;
    table_.emplace(id, std::move(arr));
    ++metrics_.arrays_created;
    if (t) t->create_ns += w.lap();
    return id;
  }

  void apply_fill(ArrayData& data, DType dtype, const FillSpec& fill) {
    const std::size_t n = data_size(data);
    switch (fill.kind) {
      case FillSpec::Kind::RandInt: {
        if (fill.lo >= fill.hi) fail("schema error", "randint requires lo < hi");
        if (dtype == DType::Int64) {
          auto& v = std::get<0>(data);
          for (std::size_t i = 0; i < n; ++i)
            v[i] = rand_range_i64(fill.seed, i, fill.lo, fill.hi);
        } else if (dtype == DType::Float64) {
          auto& v = std::get<1>(data);
          for (std::size_t i = 0; i < n; ++i)
            v[i] = rand_range_f64(fill.seed, i, static_cast<double>(fill.lo),
                                  static_cast<double>(fill.hi));
        } else {
          fail("dtype error", "randint fill requires numeric dtype");
        }
        return;
      }
      case FillSpec::Kind::Const: {
        if (dtype == DType::Int64) {
          if (fill.value.dtype != DType::Int64)
            fail("dtype error", "const fill value must be int64");
          std::fill(std::get<0>(data).begin(), std::get<0>(data).end(),
                    fill.value.as_i64());
        } else if (dtype == DType::Float64) {
          std::fill(std::get<1>(data).begin(), std::get<1>(data).end(),
                    fill.value.to_double());
        } else {
          if (fill.value.dtype != DType::Bool)
            fail("dtype error", "const fill value must be bool");
          std::fill(std::get<2>(data).begin(), std::get<2>(data).end(),
                    fill.value.as_bool() ? 1 : 0);
        }
        return;
      }
      case FillSpec::Kind::Arange: {
        if (dtype == DType::Int64) {
          auto& v = std::get<0>(data);
          for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::int64_t>(i);
        } else if (dtype == DType::Float64) {
          auto& v = std::get<1>(data);
          for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<double>(i);
        } else {
          fail("dtype error", "arange fill requires numeric dtype");
        }
        return;
      }
      case FillSpec::Kind::Values: {
        if (data_dtype(fill.data) != dtype)
          fail("dtype error", "values fill dtype mismatch");
        if (data_size(fill.data) != n)
          fail("schema error", "values fill length does not match size");
        data = fill.data;
        return;
      }
    }
  }

  ServerArray& lookup(const std::string& id) {
    auto it = table_.find(id);
    if (it == table_.end()) fail("unknown id", id);
    return it->second;
  }

  std::pair<OperandView, OperandView> operand_views(const OperandRef& l,
                                                    const OperandRef& r) {
    if (!l.is_array && !r.is_array)
      fail("schema error", "binop requires at least one array operand");
    auto view = [&](const OperandRef& o) {
      return o.is_array ? OperandView::of_array(lookup(o.array).data)
                        : OperandView::of_scalar(o.scalar);
    };
    return {view(l), view(r)};
  }

  static void check_range(std::int64_t start, std::int64_t stop, std::size_t size) {
    if (start < 0 || stop < start || stop > static_cast<std::int64_t>(size))
      fail("bounds error", "[" + std::to_string(start) + ", " + std::to_string(stop) +
                               ") out of range for size " + std::to_string(size));
  }

  ServerOptions opts_;
  std::recursive_mutex op_mu_;  // serializes whole commands; reentrant for exec_* calls
  std::map<std::string, ServerArray> table_;
  ServerMetrics metrics_;
  std::int64_t live_elements_ = 0;
  std::uint64_t id_counter_ = 0;
  std::uint64_t session_counter_ = 0;
  std::atomic<bool> shutdown_{false};
};

}  // namespace lazyarr
