#pragma once

// Interactive statement interpreter over the client API. Minimal grammar:
//
//   stmt  := NAME '=' expr | 'print' '(' expr ')' | REDUCE '(' expr ')'
//          | 'stats' | 'flush' | 'del' NAME | 'quit' | 'exit'
//   expr  := term (('+'|'-') term)*
//   term  := atom (('*'|'/'|'//'|'%') atom)*
//   atom  := NUMBER | NAME | call | '(' expr ')'
//   call  := randint(lo,hi,n[,seed]) | arange(n) | zeros(n) | ones(n)
//
// Reassigning or deleting a name releases its prior handle; expression
// temporaries are released immediately after the operation that consumes
// them, mirroring an eager host-language garbage collector.

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "lazyarr/client.hpp"

namespace lazyarr {

class Repl {
 public:
  Repl(LazyClient& client, std::uint64_t seed = 0) : client_(client), seed_(seed) {}

  // Executes statements from `in` until quit/EOF. Output is deterministic for
  // a fixed script and seed.
  void run(std::istream& in, std::ostream& out, bool prompt = false) {
    std::string line;
    while (true) {
      if (prompt) out << ">> " << std::flush;
      if (!std::getline(in, line)) break;
      if (!eval_line(line, out)) break;
    }
  }

  // False when the statement asks to quit.
  bool eval_line(const std::string& line, std::ostream& out) {
    try {
      return eval_checked(line, out);
    } catch (const std::exception& e) {
      out << "error: " << e.what() << "\n";
      return true;
    }
  }

 private:
  struct Value {
    bool is_array = false;
    ArrayHandle handle;
    bool temp = false;  // handle owned by the evaluator, not a binding
    Scalar scalar;
  };

  struct Token {
    enum class Kind { Name, Number, Symbol, End };
    Kind kind = Kind::End;
    std::string text;
    Scalar number;
  };

  bool eval_checked(const std::string& line, std::ostream& out) {
    tokens_ = tokenize(line);
    pos_ = 0;
    if (peek().kind == Token::Kind::End) return true;

    if (peek().kind == Token::Kind::Name) {
      const std::string word = peek().text;
      if (word == "quit" || word == "exit") return false;
      if (word == "stats") {
        advance();
        expect_end();
        client_.fetch_server_stats();
        // Counters only; timing fields would break script reproducibility.
        json full = client_.metrics().to_json();
        json counters = json::object();
        for (auto it = full.begin(); it != full.end(); ++it) {
          if (it.key().ends_with("_ns") || it.key() == "server") continue;
          counters[it.key()] = it.value();
        }
        if (full.at("server").is_object()) {
          json server = json::object();
          for (auto it = full.at("server").begin(); it != full.at("server").end(); ++it)
            if (!it.key().ends_with("_ns")) server[it.key()] = it.value();
          counters["server"] = server;
        }
        out << counters.dump() << "\n";
        return true;
      }
      if (word == "flush") {
        advance();
        expect_end();
        client_.flush();
        return true;
      }
      if (word == "del") {
        advance();
        const std::string name = expect_name();
        expect_end();
        auto it = bindings_.find(name);
        if (it == bindings_.end()) fail("name error", "undefined name '" + name + "'");
        client_.release(it->second);
        bindings_.erase(it);
        return true;
      }
      if (word == "print") {
        advance();
        expect_symbol("(");
        Value v = parse_expr();
        expect_symbol(")");
        expect_end();
        print_value(v, out);
        discard(v);
        return true;
      }
      if (is_reduce_word(word)) {
        advance();
        expect_symbol("(");
        Value v = parse_expr();
        expect_symbol(")");
        expect_end();
        if (!v.is_array) {
          discard(v);
          fail("argument error", word + " needs an array expression");
        }
        Scalar result;
        try {
          if (word == "mean")
            result = Scalar::of_f64(client_.mean(v.handle));
          else if (word == "std")
            result = Scalar::of_f64(client_.std_dev(v.handle));
          else
            result = client_.reduce(word, v.handle);
        } catch (...) {
          discard(v);
          throw;
        }
        discard(v);
        out << format_scalar(result) << "\n";
        return true;
      }
      // Assignment: NAME '=' expr
      if (pos_ + 1 < tokens_.size() && tokens_[pos_ + 1].text == "=") {
        const std::string name = expect_name();
        expect_symbol("=");
        Value v = parse_expr();
        expect_end();
        if (!v.is_array) {
          fail("argument error", "cannot bind a scalar to '" + name + "'");
        }
        ArrayHandle handle = v.temp ? v.handle : client_.clone(v.handle);
        auto it = bindings_.find(name);
        if (it != bindings_.end()) {
          client_.release(it->second);
          it->second = handle;
        } else {
          bindings_.emplace(name, handle);
        }
        return true;
      }
    }
    fail("parse error", "cannot parse statement");
  }

  // --- Expression evaluation ----------------------------------------------

  Value parse_expr() {
    Value lhs = parse_term();
    while (peek().text == "+" || peek().text == "-") {
      const std::string op = advance().text == "+" ? "add" : "sub";
      Value rhs = parse_term();
      lhs = apply(op, lhs, rhs);
    }
    return lhs;
  }

  Value parse_term() {
    Value lhs = parse_atom();
    while (peek().text == "*" || peek().text == "/" || peek().text == "//" ||
           peek().text == "%") {
      const std::string sym = advance().text;
      const std::string op = sym == "*"    ? "mul"
                             : sym == "/"  ? "truediv"
                             : sym == "//" ? "floordiv"
                                           : "mod";
      Value rhs = parse_atom();
      lhs = apply(op, lhs, rhs);
    }
    return lhs;
  }

  Value parse_atom() {
    const Token& tok = peek();
    if (tok.text == "(") {
      advance();
      Value v = parse_expr();
      expect_symbol(")");
      return v;
    }
    if (tok.kind == Token::Kind::Number) {
      Value v;
      v.scalar = advance().number;
      return v;
    }
    if (tok.kind == Token::Kind::Name) {
      const std::string name = advance().text;
      if (peek().text == "(") return parse_call(name);
      auto it = bindings_.find(name);
      if (it == bindings_.end()) fail("name error", "undefined name '" + name + "'");
      Value v;
      v.is_array = true;
      v.handle = it->second;
      return v;
    }
    fail("parse error", "unexpected token '" + tok.text + "'");
  }

  Value parse_call(const std::string& fn) {
    expect_symbol("(");
    std::vector<Scalar> args;
    if (peek().text != ")") {
      args.push_back(expect_number());
      while (peek().text == ",") {
        advance();
        args.push_back(expect_number());
      }
    }
    expect_symbol(")");

    Value v;
    v.is_array = true;
    v.temp = true;
    if (fn == "randint") {
      if (args.size() != 3 && args.size() != 4)
        fail("parse error", "randint(lo, hi, n[, seed])");
      const std::uint64_t seed = args.size() == 4
                                     ? static_cast<std::uint64_t>(args[3].as_i64())
                                     : mix64(seed_, auto_seed_counter_++);
      v.handle = client_.create_array(
          FillSpec::randint(args[0].as_i64(), args[1].as_i64(), seed), DType::Int64,
          args[2].as_i64());
      return v;
    }
    if (fn == "arange" || fn == "zeros" || fn == "ones") {
      if (args.size() != 1) fail("parse error", fn + "(n)");
      const FillSpec fill = fn == "arange" ? FillSpec::arange()
                            : fn == "zeros"
                                ? FillSpec::constant(Scalar::of_i64(0))
                                : FillSpec::constant(Scalar::of_i64(1));
      v.handle = client_.create_array(fill, DType::Int64, args[0].as_i64());
      return v;
    }
    fail("parse error", "unknown function '" + fn + "'");
  }

  Value apply(const std::string& op, Value& a, Value& b) {
    Value out;
    try {
      if (a.is_array && b.is_array)
        out.handle = client_.binop(op, a.handle, b.handle);
      else if (a.is_array)
        out.handle = client_.binop(op, a.handle, b.scalar);
      else if (b.is_array)
        out.handle = client_.binop(op, a.scalar, b.handle);
      else
        fail("argument error", "scalar-only expressions are not supported");
    } catch (...) {
      discard(a);
      discard(b);
      throw;
    }
    out.is_array = true;
    out.temp = true;
    discard(a);
    discard(b);
    return out;
  }

  void discard(Value& v) {
    if (v.is_array && v.temp) client_.release(v.handle);
    v.is_array = false;
    v.temp = false;
  }

  void print_value(const Value& v, std::ostream& out) {
    if (!v.is_array) {
      out << format_scalar(v.scalar) << "\n";
      return;
    }
    const ArrayData data = client_.to_values(v.handle);
    const std::size_t n = data_size(data);
    out << "[";
    const std::size_t shown = std::min<std::size_t>(n, 30);
    for (std::size_t i = 0; i < shown; ++i) {
      if (i) out << " ";
      out << format_scalar(data_at(data, i));
    }
    if (n > shown) out << " ...";
    out << "] (" << dtype_name(data_dtype(data)) << ", size " << n << ")\n";
  }

  // --- Tokenizer -----------------------------------------------------------

  static bool is_reduce_word(const std::string& w) {
    return w == "sum" || w == "prod" || w == "min" || w == "max" || w == "any" ||
           w == "all" || w == "mean" || w == "std";
  }

  static std::vector<Token> tokenize(const std::string& line) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < line.size()) {
      const char c = line[i];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++i;
        continue;
      }
      if (c == '#') break;  // comment to end of line
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        std::size_t j = i;
        while (j < line.size() &&
               (std::isalnum(static_cast<unsigned char>(line[j])) || line[j] == '_'))
          ++j;
        out.push_back({Token::Kind::Name, line.substr(i, j - i), {}});
        i = j;
        continue;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) ||
          (c == '.' && i + 1 < line.size() &&
           std::isdigit(static_cast<unsigned char>(line[i + 1])))) {
        std::size_t j = i;
        bool is_float = false;
        while (j < line.size()) {
          const char d = line[j];
          if (std::isdigit(static_cast<unsigned char>(d))) {
            ++j;
          } else if (d == '.' || d == 'e' || d == 'E') {
            is_float = true;
            ++j;
            if (j < line.size() && (line[j] == '+' || line[j] == '-') &&
                (line[j - 1] == 'e' || line[j - 1] == 'E'))
              ++j;
          } else {
            break;
          }
        }
        const std::string text = line.substr(i, j - i);
        Token tok;
        tok.kind = Token::Kind::Number;
        tok.text = text;
        tok.number = is_float ? Scalar::of_f64(std::stod(text))
                              : Scalar::of_i64(std::stoll(text));
        out.push_back(tok);
        i = j;
        continue;
      }
      if (c == '/' && i + 1 < line.size() && line[i + 1] == '/') {
        out.push_back({Token::Kind::Symbol, "//", {}});
        i += 2;
        continue;
      }
      if (std::string("+-*/%()=,").find(c) != std::string::npos) {
        out.push_back({Token::Kind::Symbol, std::string(1, c), {}});
        ++i;
        continue;
      }
      fail("parse error", std::string("unexpected character '") + c + "'");
    }
    out.push_back({Token::Kind::End, "", {}});
    return out;
  }

  const Token& peek() const { return tokens_[pos_]; }
  const Token& advance() { return tokens_[pos_++]; }

  void expect_symbol(const std::string& s) {
    if (peek().text != s) fail("parse error", "expected '" + s + "'");
    advance();
  }

  std::string expect_name() {
    if (peek().kind != Token::Kind::Name) fail("parse error", "expected a name");
    return advance().text;
  }

  Scalar expect_number() {
    if (peek().kind != Token::Kind::Number) fail("parse error", "expected a number");
    return advance().number;
  }

  void expect_end() {
    if (peek().kind != Token::Kind::End) fail("parse error", "trailing input");
  }

  LazyClient& client_;
  std::uint64_t seed_;
  std::uint64_t auto_seed_counter_ = 0;
  std::map<std::string, ArrayHandle> bindings_;
  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

}  // namespace lazyarr
