#pragma once

// The optimizing client. User programs hold ArrayHandles; operations append
// commands to an AST-shaped buffer instead of going to the server. A command
// executes only when some observable result needs it (fetch, reduce, flush,
// buffer overflow). At execution time the client applies, per config flags:
//
//   dead_elim   - released handles whose pending commands feed nothing are
//                 removed from the buffer without ever reaching the server
//   cse         - identical (op, operand-version) commands bind to the
//                 already-computed server array instead of recomputing
//   store_reuse - when every binding of an input's server array dies at the
//                 consuming command, the result is stored into that array
//   array_cache - idle server arrays park in a (size, dtype)-bucketed free
//                 list and are reused by later results instead of deleted
//   reduce_memo - reduction results are cached per (op, array, version)
//
// With every flag off the client degenerates to the eager baseline: one
// message per operation, deletes on release.

#include <cassert>
#include <cstdlib>
#include <deque>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "lazyarr/kernels.hpp"
#include "lazyarr/transport.hpp"
#include "lazyarr/wire.hpp"

namespace lazyarr {

struct ClientConfig {
  bool lazy = false;
  bool dead_elim = false;
  bool store_reuse = false;
  bool array_cache = false;
  bool cse = false;
  bool reduce_memo = false;
  std::size_t buffer_cap = 1024;
  std::size_t freelist_bucket_cap = 64;
  std::int64_t freelist_element_budget = std::int64_t{1} << 24;
  bool paranoid_checks = true;  // scan buffer before every store emission

  static ClientConfig baseline() { return ClientConfig{}; }

  static ClientConfig optimized() {
    ClientConfig c;
    c.lazy = c.dead_elim = c.store_reuse = c.array_cache = c.cse = c.reduce_memo = true;
    return c;
  }

  // LAZYARR_LAZY=0/1 and siblings override the current values.
  ClientConfig with_env() const {
    ClientConfig c = *this;
    auto read = [](const char* name, bool& slot) {
      if (const char* v = std::getenv(name)) {
        if (v[0] == '0' && v[1] == '\0') slot = false;
        if (v[0] == '1' && v[1] == '\0') slot = true;
      }
    };
    read("LAZYARR_LAZY", c.lazy);
    read("LAZYARR_DEAD_ELIM", c.dead_elim);
    read("LAZYARR_STORE_REUSE", c.store_reuse);
    read("LAZYARR_ARRAY_CACHE", c.array_cache);
    read("LAZYARR_CSE", c.cse);
    read("LAZYARR_REDUCE_MEMO", c.reduce_memo);
    return c;
  }

  json flags_json() const {
    return json{{"lazy", lazy},
                {"dead_elim", dead_elim},
                {"store_reuse", store_reuse},
                {"array_cache", array_cache},
                {"cse", cse},
                {"reduce_memo", reduce_memo}};
  }
};

// Client-side proxy: metadata only, no data. Release through the client.
struct ArrayHandle {
  std::string id;
  DType dtype = DType::Int64;
  std::int64_t size = 0;

  bool valid() const { return !id.empty(); }
};

struct ClientMetrics {
  std::int64_t messages_sent = 0;  // workload commands; connect/stats excluded
  std::int64_t creates_sent = 0;
  std::int64_t stores_sent = 0;
  std::int64_t deletes_sent = 0;
  std::int64_t fetches_sent = 0;
  std::int64_t reduces_sent = 0;
  std::int64_t cache_hits_expr = 0;
  std::int64_t cache_hits_reduce = 0;
  std::int64_t freelist_hits = 0;
  std::int64_t buffer_peak = 0;
  std::int64_t overhead_ns = 0;
  std::int64_t marshal_ns = 0;
  std::int64_t transport_ns = 0;
  ServerMetrics server;
  bool have_server_stats = false;

  json to_json() const {
    json j{{"messages_sent", messages_sent},
           {"creates_sent", creates_sent},
           {"stores_sent", stores_sent},
           {"deletes_sent", deletes_sent},
           {"fetches_sent", fetches_sent},
           {"reduces_sent", reduces_sent},
           {"cache_hits_expr", cache_hits_expr},
           {"cache_hits_reduce", cache_hits_reduce},
           {"freelist_hits", freelist_hits},
           {"buffer_peak", buffer_peak},
           {"overhead_ns", overhead_ns},
           {"marshal_ns", marshal_ns},
           {"transport_ns", transport_ns}};
    j["server"] = have_server_stats ? server.to_json() : json();
    return j;
  }
};

// One workload message as the client emitted it.
struct TraceEntry {
  std::string cmd;
  std::string op;      // binop/unary/reduce operator, when the command has one
  std::string dest;    // non-empty for *_store
  std::string result;  // server id for array-producing commands
};

class LazyClient {
 public:
  LazyClient(Transport& transport, ClientConfig cfg, std::string name = "client")
      : transport_(transport), cfg_(cfg) {
    Reply r = send_raw("connect", json{{"client_name", std::move(name)}});
    session_id_ = r.payload.at("session_id").get<std::string>();
  }

  ~LazyClient() {
    try {
      close();
    } catch (...) {
    }
  }

  LazyClient(const LazyClient&) = delete;
  LazyClient& operator=(const LazyClient&) = delete;

  const ClientConfig& config() const { return cfg_; }
  const std::string& session_id() const { return session_id_; }
  const std::vector<TraceEntry>& trace() const { return trace_; }

  // --- Array construction and operations ---------------------------------

  ArrayHandle create_array(const FillSpec& fill, DType dtype, std::int64_t size) {
    ApiTimer timer(*this);
    if (size < 0) fail("argument error", "negative array size");
    validate_fill(fill, dtype, size);
    ClientRecord& rec = new_record(dtype, size);
    BufferCommand cmd;
    cmd.kind = CmdKind::Create;
    cmd.fill = fill;
    finish_issue(cmd, rec);
    return handle_of(rec);
  }

  ArrayHandle binop(const std::string& op, const ArrayHandle& a, const ArrayHandle& b) {
    return binop_impl(op, operand_of(a), operand_of(b));
  }
  ArrayHandle binop(const std::string& op, const ArrayHandle& a, const Scalar& b) {
    return binop_impl(op, operand_of(a), CmdOperand::of_scalar(b));
  }
  ArrayHandle binop(const std::string& op, const Scalar& a, const ArrayHandle& b) {
    return binop_impl(op, CmdOperand::of_scalar(a), operand_of(b));
  }

  ArrayHandle unary(const std::string& op, const ArrayHandle& a) {
    ApiTimer timer(*this);
    ClientRecord& src = live_record(a.id);
    const DType out_t = unary_result_dtype(op, src.dtype);
    ClientRecord& rec = new_record(out_t, src.size);
    BufferCommand cmd;
    cmd.kind = CmdKind::Unary;
    cmd.op = op;
    cmd.inputs.push_back(CmdOperand::of_record(a.id));
    finish_issue(cmd, rec);
    return handle_of(rec);
  }

  ArrayHandle slice(const ArrayHandle& a, std::int64_t start, std::int64_t stop) {
    ApiTimer timer(*this);
    ClientRecord& src = live_record(a.id);
    if (start < 0 || stop < start || stop > src.size)
      fail("bounds error", "slice [" + std::to_string(start) + ", " +
                               std::to_string(stop) + ") out of range for size " +
                               std::to_string(src.size));
    ClientRecord& rec = new_record(src.dtype, stop - start);
    BufferCommand cmd;
    cmd.kind = CmdKind::Slice;
    cmd.inputs.push_back(CmdOperand::of_record(a.id));
    cmd.start = start;
    cmd.stop = stop;
    finish_issue(cmd, rec);
    return handle_of(rec);
  }

  // --- Forcing operations -------------------------------------------------

  Scalar reduce(const std::string& op, const ArrayHandle& a) {
    ApiTimer timer(*this);
    reduce_result_dtype(op, live_record(a.id).dtype);  // early dtype check
    const std::string sid = materialize_record(a.id);
    const std::string key = op + "|" + sid + "@" + std::to_string(registry_.at(sid).version);
    if (cfg_.reduce_memo) {
      auto it = reduce_cache_.find(key);
      if (it != reduce_cache_.end()) {
        ++metrics_.cache_hits_reduce;
        return it->second;
      }
    }
    Reply r = send_counted("reduce", json{{"op", op}, {"a", sid}});
    ++metrics_.reduces_sent;
    Scalar value = scalar_from_json(r.payload.at("value"));
    if (cfg_.reduce_memo) {
      if (reduce_cache_.size() > kCacheEntryCap) reduce_cache_.clear();
      reduce_cache_.emplace(key, value);
    }
    return value;
  }

  std::int64_t intersect_size(const ArrayHandle& a, const ArrayHandle& b) {
    ApiTimer timer(*this);
    live_record(a.id);
    live_record(b.id);
    const std::string sa = materialize_record(a.id);
    const std::string sb = materialize_record(b.id);
    Reply r = send_counted("intersect_size", json{{"a", sa}, {"b", sb}});
    return r.payload.at("value").get<std::int64_t>();
  }

  double mean(const ArrayHandle& a) {
    ApiTimer timer(*this);
    const ClientRecord& rec = live_record(a.id);
    if (rec.size == 0) fail("argument error", "mean of empty array");
    if (rec.dtype == DType::Bool) fail("dtype error", "mean requires numeric dtype");
    return reduce("sum", a).to_double() / static_cast<double>(rec.size);
  }

  double std_dev(const ArrayHandle& a) {
    ApiTimer timer(*this);
    const ClientRecord& rec = live_record(a.id);
    if (rec.size == 0) fail("argument error", "std of empty array");
    if (rec.dtype == DType::Bool) fail("dtype error", "std requires numeric dtype");
    const double m = reduce("sum", a).to_double() / static_cast<double>(rec.size);
    ArrayHandle sq = binop("mul", a, a);
    const double sumsq = reduce("sum", sq).to_double();
    release(sq);
    const double var = sumsq / static_cast<double>(rec.size) - m * m;
    return std::sqrt(var > 0 ? var : 0.0);
  }

  ArrayData to_values(const ArrayHandle& a) {
    ApiTimer timer(*this);
    live_record(a.id);
    const std::string sid = materialize_record(a.id);
    Reply r = send_counted("fetch", json{{"a", sid}});
    ++metrics_.fetches_sent;
    return data_from_json(dtype_from_name(r.payload.at("dtype").get<std::string>()),
                          r.payload.at("values"));
  }

  // --- Handle lifetime ----------------------------------------------------

  ArrayHandle clone(const ArrayHandle& a) {
    ClientRecord& rec = live_record(a.id);
    ++rec.user_refs;
    return handle_of(rec);
  }

  void release(const ArrayHandle& a) {
    ApiTimer timer(*this);
    auto it = records_.find(a.id);
    if (it == records_.end() || it->second.user_refs == 0)
      fail("argument error", "handle already released: " + a.id);
    ClientRecord& rec = it->second;
    if (--rec.user_refs == 0) on_record_dead(rec);
  }

  // Forces the record's deferred command (and transitively its inputs, in
  // buffer order) to execute; returns the bound server id.
  std::string materialize(const ArrayHandle& a) {
    ApiTimer timer(*this);
    return materialize_record(a.id);
  }

  void flush() {
    ApiTimer timer(*this);
    while (!buffer_.empty()) execute_command(buffer_.begin()->first);
  }

  // --- Metrics and lifecycle ----------------------------------------------

  ClientMetrics metrics() const {
    ClientMetrics m = metrics_;
    m.marshal_ns = transport_.marshal_ns();
    m.transport_ns = transport_.transport_ns();
    m.overhead_ns = api_ns_ - m.marshal_ns - m.transport_ns;
    if (m.overhead_ns < 0) m.overhead_ns = 0;
    return m;
  }

  // Pulls a fresh server stats snapshot (not a workload message).
  ServerMetrics fetch_server_stats() {
    Reply r = send_raw("stats", json::object());
    ServerMetrics s;
    s.messages_handled = r.payload.at("messages_handled").get<std::int64_t>();
    s.arrays_created = r.payload.at("arrays_created").get<std::int64_t>();
    s.arrays_deleted = r.payload.at("arrays_deleted").get<std::int64_t>();
    s.parse_ns = r.payload.at("parse_ns").get<std::int64_t>();
    s.create_ns = r.payload.at("create_ns").get<std::int64_t>();
    s.delete_ns = r.payload.at("delete_ns").get<std::int64_t>();
    s.compute_ns = r.payload.at("compute_ns").get<std::int64_t>();
    metrics_.server = s;
    metrics_.have_server_stats = true;
    return s;
  }

  void reset_server_stats() { send_raw("reset_stats", json::object()); }
  void shutdown_server() { send_raw("shutdown", json::object()); }

  // Drops pending work and deletes every server array this session owns.
  void close() {
    if (closed_) return;
    closed_ = true;
    buffer_.clear();
    records_.clear();
    expr_cache_.clear();
    reduce_cache_.clear();
    freelist_.clear();
    for (const auto& [sid, info] : registry_) {
      (void)info;
      send_counted("delete", json{{"a", sid}});
      ++metrics_.deletes_sent;
    }
    registry_.clear();
  }

 private:
  static constexpr std::size_t kCacheEntryCap = 1u << 16;
  static constexpr std::size_t kCseValuesLimit = 256;  // key embeds full data

  enum class CmdKind { Create, Binop, Unary, Slice };
  enum class RecState { Deferred, Materialized };

  struct CmdOperand {
    bool is_record = false;
    std::string record_id;
    Scalar scalar;

    static CmdOperand of_record(std::string id) {
      CmdOperand o;
      o.is_record = true;
      o.record_id = std::move(id);
      return o;
    }
    static CmdOperand of_scalar(Scalar s) {
      CmdOperand o;
      o.scalar = s;
      return o;
    }
  };

  struct BufferCommand {
    std::uint64_t index = 0;
    CmdKind kind = CmdKind::Create;
    std::string op;
    FillSpec fill;                    // Create
    std::vector<CmdOperand> inputs;   // Binop/Unary/Slice
    std::int64_t start = 0, stop = 0; // Slice
    std::string output;
    DType out_dtype = DType::Int64;
    std::int64_t out_size = 0;
  };

  struct ClientRecord {
    std::string id;
    DType dtype = DType::Int64;
    std::int64_t size = 0;
    RecState state = RecState::Deferred;
    std::uint64_t buffer_index = 0;  // defining command while Deferred
    std::string server_id;           // binding while Materialized
    std::uint64_t bind_version = 0;
    int user_refs = 1;
    int pending_refs = 0;  // distinct unexecuted commands reading this record
    std::uint64_t last_use_index = 0;
  };

  struct ServerArrayInfo {
    std::int64_t size = 0;
    DType dtype = DType::Int64;
    std::uint64_t version = 0;
    std::vector<std::string> bound;  // client records bound to this array
    bool idle = false;
    std::uint64_t idle_stamp = 0;
  };

  struct ApiTimer {
    explicit ApiTimer(LazyClient& c) : client(c) {
      if (client.timer_depth_++ == 0) start = std::chrono::steady_clock::now();
    }
    ~ApiTimer() {
      if (--client.timer_depth_ == 0)
        client.api_ns_ += std::chrono::duration_cast<std::chrono::nanoseconds>(
                              std::chrono::steady_clock::now() - start)
                              .count();
    }
    LazyClient& client;
    std::chrono::steady_clock::time_point start;
  };

  // --- Issue path ----------------------------------------------------------

  ArrayHandle binop_impl(const std::string& op, CmdOperand a, CmdOperand b) {
    ApiTimer timer(*this);
    if (!a.is_record && !b.is_record)
      fail("argument error", "binop requires at least one array operand");
    DType lt, rt;
    std::int64_t n = -1;
    for (const CmdOperand* o : {&a, &b}) {
      if (!o->is_record) continue;
      const ClientRecord& rec = live_record(o->record_id);
      if (n >= 0 && rec.size != n)
        fail("size error", "operand sizes " + std::to_string(n) + " and " +
                               std::to_string(rec.size) + " differ");
      n = rec.size;
    }
    lt = a.is_record ? live_record(a.record_id).dtype : a.scalar.dtype;
    rt = b.is_record ? live_record(b.record_id).dtype : b.scalar.dtype;
    const DType out_t = binop_result_dtype(op, lt, rt);
    ClientRecord& rec = new_record(out_t, n);
    BufferCommand cmd;
    cmd.kind = CmdKind::Binop;
    cmd.op = op;
    cmd.inputs = {std::move(a), std::move(b)};
    finish_issue(cmd, rec);
    return handle_of(rec);
  }

  void finish_issue(BufferCommand& cmd, ClientRecord& rec) {
    cmd.output = rec.id;
    cmd.out_dtype = rec.dtype;
    cmd.out_size = rec.size;
    append_command(std::move(cmd), rec);
    if (!cfg_.lazy) materialize_record(rec.id);
  }

  void append_command(BufferCommand cmd, ClientRecord& rec) {
    if (buffer_.size() >= cfg_.buffer_cap && !buffer_.empty())
      execute_command(buffer_.begin()->first);  // overflow: run the oldest
    cmd.index = next_cmd_index_++;
    rec.state = RecState::Deferred;
    rec.buffer_index = cmd.index;
    for (const std::string& rid : distinct_record_inputs(cmd)) {
      ClientRecord& in = records_.at(rid);
      ++in.pending_refs;
      in.last_use_index = cmd.index;
    }
    const std::uint64_t idx = cmd.index;
    buffer_.emplace(idx, std::move(cmd));
    metrics_.buffer_peak =
        std::max<std::int64_t>(metrics_.buffer_peak, static_cast<std::int64_t>(buffer_.size()));
  }

  // --- Materialization core ------------------------------------------------

  std::string materialize_record(const std::string& rid) {
    ClientRecord* rec = find_record(rid);
    if (!rec || (rec->user_refs == 0 && rec->pending_refs == 0))
      fail("argument error", "unknown or freed record " + rid);
    if (rec->state == RecState::Materialized) return rec->server_id;

    // Dependency closure, executed in buffer (issue) order.
    std::vector<std::uint64_t> closure;
    std::vector<std::string> visited;
    collect_closure(rid, closure, visited);
    std::sort(closure.begin(), closure.end());
    for (std::uint64_t idx : closure)
      if (buffer_.count(idx)) execute_command(idx);

    rec = find_record(rid);
    assert(rec && rec->state == RecState::Materialized);
    return rec->server_id;
  }

  void collect_closure(const std::string& rid, std::vector<std::uint64_t>& closure,
                       std::vector<std::string>& visited) {
    const ClientRecord& rec = records_.at(rid);
    if (rec.state != RecState::Deferred) return;
    for (const auto& v : visited)
      if (v == rid) return;
    visited.push_back(rid);
    const BufferCommand& cmd = buffer_.at(rec.buffer_index);
    for (const auto& in : cmd.inputs)
      if (in.is_record) collect_closure(in.record_id, closure, visited);
    closure.push_back(rec.buffer_index);
  }

  void execute_command(std::uint64_t idx) {
    // The command stays in the buffer until emission succeeds, so a server
    // error leaves the output Deferred and the program retryable.
    const BufferCommand& cmd = buffer_.at(idx);
    ClientRecord& out = records_.at(cmd.output);

    // 1. CSE probe.
    const bool cacheable = cfg_.cse && command_is_pure(cmd);
    std::string key;
    if (cacheable) {
      key = cse_key(cmd);
      auto it = expr_cache_.find(key);
      if (it != expr_cache_.end()) {
        auto reg = registry_.find(it->second.first);
        if (reg != registry_.end() && reg->second.version == it->second.second) {
          ++metrics_.cache_hits_expr;
          const std::string cached = it->second.first;
          retire(idx, out, cached);
          return;
        }
        expr_cache_.erase(it);  // stale: result overwritten or deleted
      }
    }

    // 2/3. Store destination: a dying input's array, else a free-list array.
    std::string dest;
    if (cfg_.store_reuse && cmd.kind != CmdKind::Create && cmd.kind != CmdKind::Slice) {
      for (const auto& in : cmd.inputs) {  // slice dest must not alias its source
        if (!in.is_record) continue;
        const ClientRecord& r = records_.at(in.record_id);
        if (r.user_refs != 0 || r.pending_refs != 1) continue;
        if (r.state != RecState::Materialized) continue;
        const ServerArrayInfo& info = registry_.at(r.server_id);
        if (info.size != cmd.out_size || info.dtype != cmd.out_dtype) continue;
        if (!all_bindings_die_here(info, cmd)) continue;
        assert(r.last_use_index == cmd.index);
        dest = r.server_id;
        break;
      }
    }
    bool from_freelist = false;
    if (dest.empty() && cfg_.array_cache) {
      dest = freelist_pop(cmd.out_size, cmd.out_dtype);
      from_freelist = !dest.empty();
    }
    if (!dest.empty() && cfg_.paranoid_checks) assert_no_pending_reader(dest, cmd);

    std::string result;
    try {
      result = emit(cmd, dest);
    } catch (...) {
      // A popped free-list array must not leak; put it back.
      if (from_freelist) freelist_push(dest, registry_.at(dest));
      throw;
    }

    if (!dest.empty()) {
      assert(result == dest);
      ++registry_.at(dest).version;
      if (from_freelist) ++metrics_.freelist_hits;
    } else {
      ServerArrayInfo info;
      info.size = cmd.out_size;
      info.dtype = cmd.out_dtype;
      registry_.emplace(result, std::move(info));
    }

    if (cacheable) {
      if (expr_cache_.size() > kCacheEntryCap) expr_cache_.clear();
      expr_cache_[key] = {result, registry_.at(result).version};
    }
    retire(idx, out, result);
  }

  // Marks the command executed: removes it from the buffer, binds the output,
  // and retires the inputs.
  void retire(std::uint64_t idx, ClientRecord& out, const std::string& sid) {
    BufferCommand cmd = std::move(buffer_.at(idx));
    buffer_.erase(idx);
    bind_output(out, sid);
    consume_inputs(cmd);
    reap_if_dead(out);
  }

  std::string emit(const BufferCommand& cmd, const std::string& dest) {
    json args;
    std::string wire_cmd;
    switch (cmd.kind) {
      case CmdKind::Create:
        if (dest.empty()) {
          wire_cmd = "create";
          args = json{{"dtype", dtype_name(cmd.out_dtype)},
                      {"size", cmd.out_size},
                      {"fill", fill_to_json(cmd.fill)}};
        } else {
          wire_cmd = "create_store";
          args = json{{"dest", dest}, {"fill", fill_to_json(cmd.fill)}};
        }
        break;
      case CmdKind::Binop:
        wire_cmd = dest.empty() ? "binop" : "binop_store";
        args = json{{"op", cmd.op},
                    {"left", operand_to_json(wire_operand(cmd.inputs[0]))},
                    {"right", operand_to_json(wire_operand(cmd.inputs[1]))}};
        if (!dest.empty()) args["dest"] = dest;
        break;
      case CmdKind::Unary:
        wire_cmd = dest.empty() ? "unary" : "unary_store";
        args = json{{"op", cmd.op}, {"a", wire_operand(cmd.inputs[0]).array}};
        if (!dest.empty()) args["dest"] = dest;
        break;
      case CmdKind::Slice:
        wire_cmd = dest.empty() ? "slice" : "slice_store";
        args = json{{"a", wire_operand(cmd.inputs[0]).array},
                    {"start", cmd.start},
                    {"stop", cmd.stop}};
        if (!dest.empty()) args["dest"] = dest;
        break;
    }
    Reply r = send_counted(wire_cmd, args, dest);
    if (wire_cmd == "create" || wire_cmd == "create_store") ++metrics_.creates_sent;
    if (!dest.empty()) ++metrics_.stores_sent;
    return r.payload.at("server_id").get<std::string>();
  }

  OperandRef wire_operand(const CmdOperand& o) const {
    if (!o.is_record) return OperandRef::of_scalar(o.scalar);
    const ClientRecord& rec = records_.at(o.record_id);
    assert(rec.state == RecState::Materialized);
    return OperandRef::of_array(rec.server_id);
  }

  // True when every record bound to the array is read by this command for the
  // last time: no user handle and no other unexecuted reader. Overwriting is
  // safe exactly then.
  bool all_bindings_die_here(const ServerArrayInfo& info, const BufferCommand& cmd) {
    for (const std::string& rid : info.bound) {
      const ClientRecord& r = records_.at(rid);
      if (r.user_refs != 0 || r.pending_refs != 1) return false;
      bool read_here = false;
      for (const auto& in : cmd.inputs)
        if (in.is_record && in.record_id == rid) read_here = true;
      if (!read_here) return false;
    }
    return true;
  }

  void assert_no_pending_reader(const std::string& dest, const BufferCommand& current) {
    for (const auto& [idx, pending] : buffer_) {
      if (idx == current.index) continue;
      for (const auto& in : pending.inputs) {
        if (!in.is_record) continue;
        auto it = records_.find(in.record_id);
        if (it == records_.end() || it->second.state != RecState::Materialized) continue;
        if (it->second.server_id == dest)
          fail("internal error", "premature overwrite of " + dest + " by command " +
                                     std::to_string(current.index));
      }
    }
  }

  // --- Record / array lifetime --------------------------------------------

  void bind_output(ClientRecord& out, const std::string& sid) {
    ServerArrayInfo& info = registry_.at(sid);
    if (info.idle) freelist_remove(sid, info);
    info.bound.push_back(out.id);
    out.state = RecState::Materialized;
    out.server_id = sid;
    out.bind_version = info.version;
  }

  void consume_inputs(const BufferCommand& cmd) {
    for (const std::string& rid : distinct_record_inputs(cmd)) {
      ClientRecord& r = records_.at(rid);
      --r.pending_refs;
      reap_if_dead(r);
    }
  }

  void reap_if_dead(ClientRecord& rec) {
    if (rec.user_refs == 0 && rec.pending_refs == 0) {
      if (rec.state == RecState::Materialized)
        unbind_record(rec);
      else if (cfg_.dead_elim)
        eliminate_command(rec.buffer_index);
      // else: zombie; its command stays until a flush executes it
    }
  }

  void on_record_dead(ClientRecord& rec) {
    if (rec.pending_refs > 0) return;  // shadow: pending commands still read it
    if (rec.state == RecState::Deferred) {
      if (cfg_.dead_elim) eliminate_command(rec.buffer_index);
    } else {
      unbind_record(rec);
    }
  }

  void unbind_record(ClientRecord& rec) {
    const std::string sid = rec.server_id;
    const std::string rid = rec.id;
    ServerArrayInfo& info = registry_.at(sid);
    std::erase(info.bound, rid);
    records_.erase(rid);
    if (info.bound.empty()) {
      if (cfg_.array_cache)
        freelist_push(sid, info);
      else
        delete_array(sid);
    }
  }

  // Removes a never-executed command whose output is dead, cascading into
  // inputs that become unreferenced.
  void eliminate_command(std::uint64_t idx) {
    auto it = buffer_.find(idx);
    assert(it != buffer_.end());
    BufferCommand cmd = std::move(it->second);
    buffer_.erase(it);
    records_.erase(cmd.output);
    for (const std::string& rid : distinct_record_inputs(cmd)) {
      ClientRecord& r = records_.at(rid);
      --r.pending_refs;
      reap_if_dead(r);
    }
  }

  void delete_array(const std::string& sid) {
    send_counted("delete", json{{"a", sid}});
    ++metrics_.deletes_sent;
    registry_.erase(sid);
  }

  // --- Free list -----------------------------------------------------------

  using Bucket = std::pair<std::int64_t, int>;  // (size, dtype)

  static Bucket bucket_key(std::int64_t size, DType t) {
    return {size, static_cast<int>(t)};
  }

  void freelist_push(const std::string& sid, ServerArrayInfo& info) {
    info.idle = true;
    info.idle_stamp = ++idle_stamp_;
    auto& bucket = freelist_[bucket_key(info.size, info.dtype)];
    bucket.push_back(sid);
    idle_elements_ += info.size;
    if (bucket.size() > cfg_.freelist_bucket_cap) {
      const std::string victim = bucket.front();
      bucket.pop_front();
      idle_elements_ -= registry_.at(victim).size;
      delete_array(victim);
    }
    while (idle_elements_ > cfg_.freelist_element_budget) evict_oldest_idle();
  }

  std::string freelist_pop(std::int64_t size, DType t) {
    auto it = freelist_.find(bucket_key(size, t));
    if (it == freelist_.end() || it->second.empty()) return {};
    const std::string sid = it->second.back();  // most recently idled
    it->second.pop_back();
    if (it->second.empty()) freelist_.erase(it);
    ServerArrayInfo& info = registry_.at(sid);
    info.idle = false;
    idle_elements_ -= info.size;
    return sid;
  }

  void freelist_remove(const std::string& sid, ServerArrayInfo& info) {
    auto it = freelist_.find(bucket_key(info.size, info.dtype));
    assert(it != freelist_.end());
    std::erase(it->second, sid);
    if (it->second.empty()) freelist_.erase(it);
    info.idle = false;
    idle_elements_ -= info.size;
  }

  void evict_oldest_idle() {
    std::string victim;
    std::uint64_t best = ~std::uint64_t{0};
    for (const auto& [key, bucket] : freelist_) {
      (void)key;
      if (bucket.empty()) continue;
      const auto& info = registry_.at(bucket.front());
      if (info.idle_stamp < best) {
        best = info.idle_stamp;
        victim = bucket.front();
      }
    }
    if (victim.empty()) return;
    ServerArrayInfo& info = registry_.at(victim);
    freelist_remove(victim, info);
    delete_array(victim);
  }

  // --- Expression cache keys -----------------------------------------------

  bool command_is_pure(const BufferCommand& cmd) const {
    if (cmd.kind != CmdKind::Create) return true;
    if (cmd.fill.kind == FillSpec::Kind::RandInt) return false;
    if (cmd.fill.kind == FillSpec::Kind::Values &&
        data_size(cmd.fill.data) > kCseValuesLimit)
      return false;  // key would need to embed arbitrarily large data
    return true;
  }

  std::string operand_key(const CmdOperand& o) const {
    if (o.is_record) {
      const ClientRecord& r = records_.at(o.record_id);
      return "a:" + r.server_id + "@" +
             std::to_string(registry_.at(r.server_id).version);
    }
    switch (o.scalar.dtype) {
      case DType::Int64: return "si:" + std::to_string(o.scalar.as_i64());
      case DType::Float64: {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(double));
        const double v = o.scalar.as_f64();
        std::memcpy(&bits, &v, sizeof(bits));
        return "sf:" + std::to_string(bits);
      }
      case DType::Bool: return o.scalar.as_bool() ? "sb:1" : "sb:0";
    }
    return "";
  }

  std::string cse_key(const BufferCommand& cmd) const {
    switch (cmd.kind) {
      case CmdKind::Create: {
        std::string key = "create|";
        key += dtype_name(cmd.out_dtype);
        key += "|" + std::to_string(cmd.out_size) + "|";
        switch (cmd.fill.kind) {
          case FillSpec::Kind::Const:
            key += "c:" + operand_key(CmdOperand::of_scalar(cmd.fill.value));
            break;
          case FillSpec::Kind::Arange:
            key += "r";
            break;
          case FillSpec::Kind::Values: {
            key += "v:";
            const std::size_t n = data_size(cmd.fill.data);
            for (std::size_t i = 0; i < n; ++i)
              key += operand_key(CmdOperand::of_scalar(data_at(cmd.fill.data, i))) + ",";
            break;
          }
          case FillSpec::Kind::RandInt:
            assert(false);  // excluded by command_is_pure
            break;
        }
        return key;
      }
      case CmdKind::Binop: {
        std::string l = operand_key(cmd.inputs[0]);
        std::string r = operand_key(cmd.inputs[1]);
        const bool commutative =
            cmd.op == "add" || cmd.op == "mul" || cmd.op == "eq" || cmd.op == "ne";
        if (commutative && r < l) std::swap(l, r);
        return cmd.op + "|" + l + "|" + r;
      }
      case CmdKind::Unary:
        return cmd.op + "|" + operand_key(cmd.inputs[0]);
      case CmdKind::Slice:
        return "slice|" + operand_key(cmd.inputs[0]) + "|" + std::to_string(cmd.start) +
               ":" + std::to_string(cmd.stop);
    }
    return "";
  }

  // --- Plumbing ------------------------------------------------------------

  static std::vector<std::string> distinct_record_inputs(const BufferCommand& cmd) {
    std::vector<std::string> ids;
    for (const auto& in : cmd.inputs) {
      if (!in.is_record) continue;
      bool seen = false;
      for (const auto& id : ids) seen = seen || id == in.record_id;
      if (!seen) ids.push_back(in.record_id);
    }
    return ids;
  }

  ClientRecord& new_record(DType dtype, std::int64_t size) {
    ClientRecord rec;
    rec.id = "C" + std::to_string(++record_counter_);
    rec.dtype = dtype;
    rec.size = size;
    auto [it, inserted] = records_.emplace(rec.id, std::move(rec));
    assert(inserted);
    return it->second;
  }

  ClientRecord* find_record(const std::string& id) {
    auto it = records_.find(id);
    return it == records_.end() ? nullptr : &it->second;
  }

  // A record that a user handle may legitimately reference.
  ClientRecord& live_record(const std::string& id) {
    ClientRecord* rec = find_record(id);
    if (!rec || rec->user_refs == 0)
      fail("argument error", "invalid or released handle " + id);
    return *rec;
  }

  static ArrayHandle handle_of(const ClientRecord& rec) {
    return ArrayHandle{rec.id, rec.dtype, rec.size};
  }

  CmdOperand operand_of(const ArrayHandle& h) {
    live_record(h.id);
    return CmdOperand::of_record(h.id);
  }

  void validate_fill(const FillSpec& fill, DType dtype, std::int64_t size) const {
    switch (fill.kind) {
      case FillSpec::Kind::RandInt:
        if (dtype == DType::Bool) fail("dtype error", "randint fill requires numeric dtype");
        if (fill.lo >= fill.hi) fail("argument error", "randint requires lo < hi");
        return;
      case FillSpec::Kind::Const:
        if (dtype == DType::Int64 && fill.value.dtype != DType::Int64)
          fail("dtype error", "const fill value must be int64");
        if (dtype == DType::Bool && fill.value.dtype != DType::Bool)
          fail("dtype error", "const fill value must be bool");
        return;
      case FillSpec::Kind::Arange:
        if (dtype == DType::Bool) fail("dtype error", "arange fill requires numeric dtype");
        return;
      case FillSpec::Kind::Values:
        if (data_dtype(fill.data) != dtype) fail("dtype error", "values fill dtype mismatch");
        if (static_cast<std::int64_t>(data_size(fill.data)) != size)
          fail("argument error", "values fill length does not match size");
        return;
    }
  }

  Reply send_raw(const std::string& cmd, json args) {
    Request req;
    req.tag = ++tag_counter_;
    req.cmd = cmd;
    req.args = std::move(args);
    Reply r = transport_.roundtrip(req);
    if (!r.ok) throw Error(r.error);
    return r;
  }

  Reply send_counted(const std::string& cmd, json args, const std::string& dest = {}) {
    TraceEntry entry;
    entry.cmd = cmd;
    entry.dest = dest;
    if (args.contains("op")) entry.op = args.at("op").get<std::string>();
    Reply r = send_raw(cmd, std::move(args));
    ++metrics_.messages_sent;
    if (r.payload.is_object() && r.payload.contains("server_id"))
      entry.result = r.payload.at("server_id").get<std::string>();
    trace_.push_back(std::move(entry));
    return r;
  }

  Transport& transport_;
  ClientConfig cfg_;
  std::string session_id_;
  bool closed_ = false;

  std::map<std::string, ClientRecord> records_;
  std::map<std::uint64_t, BufferCommand> buffer_;  // pending commands only
  std::map<std::string, ServerArrayInfo> registry_;
  std::map<Bucket, std::deque<std::string>> freelist_;
  std::unordered_map<std::string, std::pair<std::string, std::uint64_t>> expr_cache_;
  std::unordered_map<std::string, Scalar> reduce_cache_;
  std::vector<TraceEntry> trace_;

  ClientMetrics metrics_;
  std::uint64_t record_counter_ = 0;
  std::uint64_t next_cmd_index_ = 0;
  std::uint64_t tag_counter_ = 0;
  std::uint64_t idle_stamp_ = 0;
  std::int64_t idle_elements_ = 0;
  std::int64_t api_ns_ = 0;
  int timer_depth_ = 0;
};

}  // namespace lazyarr
