#include "machlite/dsl/parser.hpp"

#include <fmt/format.h>

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <set>
#include <unordered_map>

namespace machlite::dsl {

std::string_view to_string(ShiftAxis a) { return a == ShiftAxis::Row ? "row" : "col"; }

const TensorDecl* SourceProgram::find_decl(std::string_view name) const {
  for (const auto& d : declarations)
    if (d.name == name) return &d;
  return nullptr;
}

namespace {

enum class Tok : std::uint8_t { Ident, Int, Float, Punct, Raw, End };

struct Token {
  Tok kind = Tok::End;
  std::string text;
  SourceLoc loc;
  std::size_t offset = 0;
};

struct SyntaxError {
  Diagnostic diag;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    for (;;) {
      skip_space();
      Token t;
      t.loc = {line_, col_};
      t.offset = pos_;
      if (pos_ >= src_.size()) {
        t.kind = Tok::End;
        out.push_back(t);
        return out;
      }
      const char c = src_[pos_];
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        t.kind = Tok::Ident;
        while (pos_ < src_.size() &&
               (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
          t.text += take();
      } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                 (c == '.' && pos_ + 1 < src_.size() &&
                  std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
        lex_number(t);
      } else {
        t.kind = Tok::Punct;
        static constexpr std::string_view two[] = {"+=", "-=", "*=", "/=", ">=",
                                                   "<=", "==", "!="};
        bool matched = false;
        for (auto op : two) {
          if (src_.substr(pos_, 2) == op) {
            t.text = std::string(op);
            take();
            take();
            matched = true;
            break;
          }
        }
        if (!matched && c == '@' && lex_ignore(out, t)) continue;
        if (!matched) {
          static constexpr std::string_view singles = "[](){},:=+-*/<>@;";
          if (singles.find(c) == std::string_view::npos) {
            throw SyntaxError{{t.loc, fmt::format("unexpected character '{}'", c)}};
          }
          t.text = std::string(1, take());
        }
      }
      out.push_back(std::move(t));
    }
  }

 private:
  char take() {
    const char c = src_[pos_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return c;
  }

  void skip_space() {
    while (pos_ < src_.size()) {
      const char c = src_[pos_];
      if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') take();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        take();
      } else {
        break;
      }
    }
  }

  // `@ignore { ... }` bodies are not tokenized: emit '@', 'ignore', '{', the
  // raw text, and '}'.
  bool lex_ignore(std::vector<Token>& out, Token& at) {
    std::size_t p = pos_ + 1;
    while (p < src_.size() && std::isspace(static_cast<unsigned char>(src_[p]))) ++p;
    if (src_.substr(p, 6) != "ignore") return false;
    std::size_t q = p + 6;
    if (q < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[q])) || src_[q] == '_'))
      return false;
    at.text = std::string(1, take());
    out.push_back(at);
    skip_space();
    Token kw{Tok::Ident, {}, {line_, col_}, pos_};
    while (pos_ < q) kw.text += take();
    out.push_back(kw);
    skip_space();
    if (pos_ >= src_.size() || src_[pos_] != '{') return true;  // parser reports it
    Token open{Tok::Punct, "{", {line_, col_}, pos_};
    take();
    out.push_back(open);
    Token raw{Tok::Raw, {}, {line_, col_}, pos_};
    int depth = 1;
    for (;;) {
      if (pos_ >= src_.size())
        throw SyntaxError{{open.loc, "unterminated @ignore block"}};
      const char c = src_[pos_];
      if (c == '{') ++depth;
      if (c == '}' && --depth == 0) break;
      raw.text += take();
    }
    out.push_back(raw);
    Token close{Tok::Punct, "}", {line_, col_}, pos_};
    take();
    out.push_back(close);
    return true;
  }

  void lex_number(Token& t) {
    t.kind = Tok::Int;
    while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_])))
      t.text += take();
    if (pos_ < src_.size() && src_[pos_] == '.') {
      t.kind = Tok::Float;
      t.text += take();
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_])))
        t.text += take();
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      std::size_t look = pos_ + 1;
      if (look < src_.size() && (src_[look] == '+' || src_[look] == '-')) ++look;
      if (look < src_.size() && std::isdigit(static_cast<unsigned char>(src_[look]))) {
        t.kind = Tok::Float;
        while (pos_ < look) t.text += take();
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_])))
          t.text += take();
      }
    }
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

const std::set<std::string, std::less<>>& keywords() {
  static const std::set<std::string, std::less<>> kw = {
      "gs",     "ga",  "ls",      "uls",   "la",    "f32",  "i16",   "out",
      "for",    "in",  "range",   "reduce", "exit_if", "shift", "put", "put_add",
      "take",   "zeros", "random", "row",  "col"};
  return kw;
}

class Parser {
 public:
  Parser(std::string_view src, std::vector<Token> toks) : src_(src), toks_(std::move(toks)) {}

  SourceProgram run() {
    SourceProgram prog;
    int order = 0;
    while (!at_end()) {
      if (is_punct("@")) {
        Pragma p = parse_pragma();
        p.order = order++;
        prog.pragmas.push_back(std::move(p));
      } else if (is_decl_start()) {
        TensorDecl d = parse_decl();
        d.order = order++;
        prog.declarations.push_back(std::move(d));
      } else {
        Stmt s = parse_stmt();
        s.order = order++;
        prog.statements.push_back(std::move(s));
      }
      if (is_punct(";")) advance();
    }
    return prog;
  }

  Diagnostics semantic;

 private:
  // ---- token helpers ----
  const Token& peek(std::size_t k = 0) const {
    return toks_[std::min(pos_ + k, toks_.size() - 1)];
  }
  bool at_end() const { return peek().kind == Tok::End; }
  const Token& advance() { return toks_[pos_ < toks_.size() - 1 ? pos_++ : pos_]; }
  bool is_punct(std::string_view p, std::size_t k = 0) const {
    return peek(k).kind == Tok::Punct && peek(k).text == p;
  }
  bool is_word(std::string_view w, std::size_t k = 0) const {
    return peek(k).kind == Tok::Ident && peek(k).text == w;
  }

  [[noreturn]] void fail(const Token& at, std::string msg) const {
    if (at.kind == Tok::End) msg += " (at end of input)";
    throw SyntaxError{{at.loc, std::move(msg)}};
  }

  void expect_punct(std::string_view p) {
    if (!is_punct(p)) fail(peek(), fmt::format("expected '{}', found '{}'", p, peek().text));
    advance();
  }
  void expect_word(std::string_view w) {
    if (!is_word(w)) fail(peek(), fmt::format("expected '{}', found '{}'", w, peek().text));
    advance();
  }
  std::string expect_ident() {
    if (peek().kind != Tok::Ident || keywords().count(peek().text))
      fail(peek(), fmt::format("expected identifier, found '{}'", peek().text));
    return advance().text;
  }

  // ---- scopes ----
  enum class Binding : std::uint8_t { Decl, Iter, Unroll };

  bool lookup(std::string_view name, Binding* out = nullptr) const {
    for (auto it = scopes_.rbegin(); it != scopes_.rend(); ++it) {
      auto f = it->find(std::string(name));
      if (f != it->end()) {
        if (out) *out = f->second;
        return true;
      }
    }
    return false;
  }

  void require_known(const std::string& name, SourceLoc loc) {
    if (!lookup(name)) semantic.push_back({loc, fmt::format("unknown identifier '{}'", name)});
  }

  // ---- pragmas ----
  Pragma parse_pragma() {
    Pragma p;
    p.loc = peek().loc;
    expect_punct("@");
    const Token& kind = advance();
    if (kind.kind != Tok::Ident || (kind.text != "host" && kind.text != "ignore"))
      fail(kind, fmt::format("unknown pragma '@{}'", kind.text));
    if (kind.text == "host") {
      p.kind = Pragma::Kind::Host;
      expect_punct("{");
      while (!is_punct("}")) {
        if (at_end()) fail(peek(), "unterminated @host block");
        HostDef h;
        h.loc = peek().loc;
        h.name = expect_ident();
        expect_punct("=");
        h.init = parse_init(/*allow_host_ref=*/false);
        if (host_names_.count(h.name) || lookup(h.name))
          semantic.push_back({h.loc, fmt::format("duplicate declaration of '{}'", h.name)});
        host_names_.insert(h.name);
        p.host_defs.push_back(std::move(h));
        if (is_punct(";")) advance();
      }
      expect_punct("}");
    } else {
      p.kind = Pragma::Kind::Ignore;
      if (!is_punct("{")) fail(peek(), "expected '{' after @ignore");
      advance();
      if (peek().kind == Tok::Raw) p.ignored_text = advance().text;
      expect_punct("}");
    }
    return p;
  }

  // ---- declarations ----
  bool is_decl_start() const {
    std::size_t k = is_word("out") ? 1 : 0;
    const Token& t = peek(k);
    if (t.kind != Tok::Ident) return false;
    static const std::set<std::string, std::less<>> kinds = {"gs", "ga", "ls", "uls", "la"};
    return kinds.count(t.text) > 0;
  }

  static OodsKind kind_of(std::string_view w) {
    if (w == "gs") return OodsKind::GS;
    if (w == "ga") return OodsKind::GA;
    if (w == "ls") return OodsKind::LS;
    if (w == "uls") return OodsKind::ULS;
    return OodsKind::LA;
  }

  TensorDecl parse_decl() {
    TensorDecl d;
    d.loc = peek().loc;
    if (is_word("out")) {
      advance();
      d.output = true;
    }
    d.kind = kind_of(advance().text);
    const SourceLoc name_loc = peek().loc;
    d.name = expect_ident();
    if (is_punct("[")) {
      advance();
      d.has_shape = true;
      for (;;) {
        const Token& t = advance();
        if (t.kind != Tok::Int) fail(t, "expected integer extent in shape");
        d.shape.push_back(parse_int(t));
        if (is_punct(",")) {
          advance();
          continue;
        }
        break;
      }
      expect_punct("]");
    }
    // The element type is optional and defaults to f32.
    if (is_word("f32") || is_word("i16")) d.dtype = advance().text == "f32" ? DType::F32 : DType::I16;
    if (is_punct("=")) {
      advance();
      d.init = parse_init(/*allow_host_ref=*/true);
    }
    if (lookup(d.name) || host_names_.count(d.name)) {
      semantic.push_back({name_loc, fmt::format("duplicate declaration of '{}'", d.name)});
    } else {
      scopes_.front()[d.name] = Binding::Decl;
    }
    return d;
  }

  std::int64_t parse_int(const Token& t) const {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (ec != std::errc() || ptr != t.text.data() + t.text.size())
      fail(t, fmt::format("invalid integer '{}'", t.text));
    return v;
  }

  double parse_signed_number(bool* is_float = nullptr) {
    bool neg = false;
    if (is_punct("-")) {
      advance();
      neg = true;
    }
    const Token& t = advance();
    if (t.kind != Tok::Int && t.kind != Tok::Float) fail(t, "expected number");
    if (is_float) *is_float = t.kind == Tok::Float;
    const double v = std::strtod(t.text.c_str(), nullptr);
    return neg ? -v : v;
  }

  InitSpec parse_init(bool allow_host_ref) {
    InitSpec s;
    s.loc = peek().loc;
    if (is_word("zeros")) {
      advance();
      s.kind = InitSpec::Kind::Zeros;
    } else if (is_word("random")) {
      advance();
      s.kind = InitSpec::Kind::Random;
      if (is_punct("(")) {
        advance();
        while (!is_punct(")")) {
          const Token& key = advance();
          if (key.kind != Tok::Ident) fail(key, "expected random() keyword argument");
          expect_punct("=");
          if (key.text == "seed") {
            const Token& t = advance();
            if (t.kind != Tok::Int) fail(t, "seed must be an integer");
            s.seed = parse_int(t);
          } else if (key.text == "lo") {
            s.lo = parse_signed_number();
          } else if (key.text == "hi") {
            s.hi = parse_signed_number();
          } else {
            fail(key, fmt::format("unknown random() argument '{}'", key.text));
          }
          if (is_punct(",")) advance();
        }
        expect_punct(")");
      }
    } else if (is_punct("[")) {
      advance();
      s.kind = InitSpec::Kind::Literal;
      while (!is_punct("]")) {
        s.values.push_back(parse_signed_number());
        if (is_punct(",")) advance();
        else if (!is_punct("]")) fail(peek(), "expected ',' or ']' in literal list");
      }
      expect_punct("]");
    } else if (peek().kind == Tok::Ident && !keywords().count(peek().text)) {
      if (!allow_host_ref) fail(peek(), "host data may not reference other host data");
      s.kind = InitSpec::Kind::HostRef;
      const Token& t = advance();
      s.host_name = t.text;
      if (!host_names_.count(s.host_name))
        semantic.push_back({t.loc, fmt::format("unknown identifier '{}'", s.host_name)});
    } else {
      s.kind = InitSpec::Kind::Constant;
      s.constant = parse_signed_number(&s.constant_is_float);
    }
    return s;
  }

  // ---- statements ----
  std::vector<Stmt> parse_block() {
    expect_punct("{");
    std::vector<Stmt> body;
    int order = 0;
    while (!is_punct("}")) {
      if (at_end()) fail(peek(), "unterminated block");
      if (is_decl_start()) fail(peek(), "declarations are only allowed at top level");
      if (is_punct("@")) fail(peek(), "pragmas are only allowed at top level");
      Stmt s = parse_stmt();
      s.order = order++;
      body.push_back(std::move(s));
      if (is_punct(";")) advance();
    }
    expect_punct("}");
    return body;
  }

  Stmt parse_stmt() {
    Stmt s;
    s.loc = peek().loc;
    if (is_word("for")) {
      advance();
      ForStmt f;
      const SourceLoc iter_loc = peek().loc;
      f.iter = expect_ident();
      expect_word("in");
      const Token& it = advance();
      if (it.kind != Tok::Ident) fail(it, "expected iterable after 'in'");
      f.iterable = it.text;
      const bool compile_time = it.text == "range";
      if (!compile_time) {
        if (keywords().count(it.text)) fail(it, fmt::format("cannot iterate over '{}'", it.text));
        require_known(f.iterable, it.loc);
      }
      if (is_punct("[")) {
        advance();
        f.range = parse_axis();
        expect_punct("]");
      } else if (compile_time) {
        fail(peek(), "range loops need explicit bounds, e.g. range[0:4]");
      }
      if (lookup(f.iter) || host_names_.count(f.iter))
        semantic.push_back({iter_loc, fmt::format("duplicate declaration of '{}'", f.iter)});
      scopes_.push_back({{f.iter, compile_time ? Binding::Unroll : Binding::Iter}});
      f.body = parse_block();
      scopes_.pop_back();
      s.node = std::move(f);
    } else if (is_word("reduce")) {
      advance();
      ReduceStmt r;
      expect_punct("(");
      r.src = parse_access();
      expect_punct(",");
      r.target_loc = peek().loc;
      r.target = expect_ident();
      require_known(r.target, r.target_loc);
      expect_punct(")");
      s.node = std::move(r);
    } else if (is_word("exit_if")) {
      advance();
      ExitStmt e;
      e.lhs = parse_expr();
      const Token& c = advance();
      static const std::unordered_map<std::string, CmpOp> cmps = {
          {">", CmpOp::GT}, {"<", CmpOp::LT},  {">=", CmpOp::GE},
          {"<=", CmpOp::LE}, {"==", CmpOp::EQ}, {"!=", CmpOp::NE}};
      auto f = cmps.find(c.text);
      if (c.kind != Tok::Punct || f == cmps.end()) fail(c, "expected comparison operator");
      e.cmp = f->second;
      e.rhs = parse_expr();
      s.node = std::move(e);
    } else if (is_word("shift")) {
      advance();
      ShiftStmt sh;
      expect_punct("(");
      sh.dst = parse_access();
      expect_punct(",");
      sh.src = parse_access();
      expect_punct(",");
      if (is_word("row")) sh.axis = ShiftAxis::Row;
      else if (is_word("col")) sh.axis = ShiftAxis::Col;
      else fail(peek(), "expected shift axis 'row' or 'col'");
      advance();
      expect_punct(",");
      int sign = 1;
      if (is_punct("+")) {
        advance();
      } else if (is_punct("-")) {
        advance();
        sign = -1;
      }
      const Token& t = advance();
      if (t.kind != Tok::Int || parse_int(t) != 1)
        fail(t, "shift offset must be +1 or -1");
      sh.offset = sign;
      expect_punct(")");
      s.node = std::move(sh);
    } else if (is_word("put") || is_word("put_add")) {
      PutStmt p;
      p.accumulate = advance().text == "put_add";
      expect_punct("(");
      p.dst = parse_access();
      expect_punct(",");
      p.index = parse_access();
      expect_punct(",");
      p.src = parse_access();
      expect_punct(")");
      s.node = std::move(p);
    } else {
      AssignStmt a;
      a.dst = parse_access();
      static const std::unordered_map<std::string, AssignOp> ops = {
          {"=", AssignOp::Set},  {"+=", AssignOp::Add}, {"-=", AssignOp::Sub},
          {"*=", AssignOp::Mul}, {"/=", AssignOp::Div}};
      const Token& t = advance();
      auto f = ops.find(t.text);
      if (t.kind != Tok::Punct || f == ops.end())
        fail(t, fmt::format("expected assignment operator, found '{}'", t.text));
      a.op = f->second;
      a.rhs = parse_expr();
      s.node = std::move(a);
    }
    return s;
  }

  // ---- accesses and slices ----
  AccessRef parse_access() {
    AccessRef a;
    a.loc = peek().loc;
    a.name = expect_ident();
    Binding b{};
    if (!lookup(a.name, &b)) {
      semantic.push_back({a.loc, fmt::format("unknown identifier '{}'", a.name)});
    } else if (b == Binding::Unroll) {
      semantic.push_back(
          {a.loc, fmt::format("'{}' is a compile-time loop variable, not a tensor", a.name)});
    }
    if (is_punct("[")) {
      advance();
      a.subscripted = true;
      for (;;) {
        a.axes.push_back(parse_axis());
        if (is_punct(",")) {
          advance();
          continue;
        }
        break;
      }
      expect_punct("]");
    }
    return a;
  }

  SliceAxis parse_axis() {
    SliceAxis ax;
    ax.loc = peek().loc;
    if (!is_punct(":")) ax.start = parse_cexpr();
    if (!is_punct(":")) {
      if (!ax.start) fail(peek(), "empty subscript");
      ax.is_index = true;
      return ax;
    }
    advance();
    if (!is_punct(":") && !is_punct(",") && !is_punct("]")) {
      Binding b{};
      if (peek().kind == Tok::Ident && !keywords().count(peek().text) &&
          lookup(peek().text, &b) && b != Binding::Unroll && !is_cexpr_continuation(1)) {
        ax.dyn_stop = advance().text;
      } else {
        ax.stop = parse_cexpr();
      }
    }
    if (is_punct(":")) {
      advance();
      ax.step = parse_cexpr();
    }
    return ax;
  }

  bool is_cexpr_continuation(std::size_t k) const {
    return is_punct("+", k) || is_punct("-", k) || is_punct("*", k);
  }

  IntExpr parse_cexpr() {
    IntExpr lhs = parse_cterm();
    while (is_punct("+") || is_punct("-")) {
      IntExpr e;
      e.loc = peek().loc;
      e.kind = advance().text == "+" ? IntExpr::Kind::Add : IntExpr::Kind::Sub;
      e.args.push_back(std::move(lhs));
      e.args.push_back(parse_cterm());
      lhs = std::move(e);
    }
    return lhs;
  }

  IntExpr parse_cterm() {
    IntExpr lhs = parse_cfactor();
    while (is_punct("*")) {
      IntExpr e;
      e.loc = advance().loc;
      e.kind = IntExpr::Kind::Mul;
      e.args.push_back(std::move(lhs));
      e.args.push_back(parse_cfactor());
      lhs = std::move(e);
    }
    return lhs;
  }

  IntExpr parse_cfactor() {
    const Token& t = peek();
    if (t.kind == Tok::Int) {
      advance();
      return IntExpr::literal(parse_int(t), t.loc);
    }
    if (is_punct("-")) {
      advance();
      const Token& n = advance();
      if (n.kind != Tok::Int) fail(n, "expected integer after '-'");
      return IntExpr::literal(-parse_int(n), t.loc);
    }
    if (is_punct("(")) {
      advance();
      IntExpr e = parse_cexpr();
      expect_punct(")");
      return e;
    }
    if (t.kind == Tok::Ident && !keywords().count(t.text)) {
      advance();
      Binding b{};
      if (!lookup(t.text, &b)) {
        semantic.push_back({t.loc, fmt::format("unknown identifier '{}'", t.text)});
      } else if (b == Binding::Decl) {
        semantic.push_back(
            {t.loc, fmt::format("'{}' is not a compile-time value in a slice bound", t.text)});
      }
      IntExpr e;
      e.kind = IntExpr::Kind::Var;
      e.name = t.text;
      e.loc = t.loc;
      return e;
    }
    fail(t, fmt::format("expected slice bound, found '{}'", t.text));
  }

  // ---- expressions ----
  Expr parse_expr() {
    Expr lhs = parse_term();
    while (is_punct("+") || is_punct("-")) {
      Expr e;
      e.loc = peek().loc;
      e.kind = Expr::Kind::Binary;
      e.op = advance().text == "+" ? BinOp::Add : BinOp::Sub;
      e.args.push_back(std::move(lhs));
      e.args.push_back(parse_term());
      lhs = std::move(e);
    }
    return lhs;
  }

  Expr parse_term() {
    Expr lhs = parse_unary();
    while (is_punct("*") || is_punct("/")) {
      Expr e;
      e.loc = peek().loc;
      e.kind = Expr::Kind::Binary;
      e.op = advance().text == "*" ? BinOp::Mul : BinOp::Div;
      e.args.push_back(std::move(lhs));
      e.args.push_back(parse_unary());
      lhs = std::move(e);
    }
    return lhs;
  }

  Expr parse_unary() {
    if (is_punct("-")) {
      const SourceLoc loc = advance().loc;
      if (peek().kind == Tok::Int || peek().kind == Tok::Float) {
        Expr e = parse_primary();
        e.number = -e.number;
        e.loc = loc;
        return e;
      }
      Expr zero;
      zero.kind = Expr::Kind::Number;
      zero.loc = loc;
      Expr e;
      e.kind = Expr::Kind::Binary;
      e.op = BinOp::Sub;
      e.loc = loc;
      e.args.push_back(std::move(zero));
      e.args.push_back(parse_unary());
      return e;
    }
    return parse_primary();
  }

  Expr parse_primary() {
    Expr e;
    const Token& t = peek();
    e.loc = t.loc;
    if (t.kind == Tok::Int || t.kind == Tok::Float) {
      advance();
      e.kind = Expr::Kind::Number;
      e.is_float = t.kind == Tok::Float;
      e.number = std::strtod(t.text.c_str(), nullptr);
      return e;
    }
    if (is_punct("(")) {
      advance();
      Expr inner = parse_expr();
      expect_punct(")");
      return inner;
    }
    if (is_word("take")) {
      advance();
      e.kind = Expr::Kind::Take;
      expect_punct("(");
      Expr src;
      src.kind = Expr::Kind::Access;
      src.loc = peek().loc;
      src.access = parse_access();
      expect_punct(",");
      Expr idx;
      idx.kind = Expr::Kind::Access;
      idx.loc = peek().loc;
      idx.access = parse_access();
      expect_punct(")");
      e.args.push_back(std::move(src));
      e.args.push_back(std::move(idx));
      return e;
    }
    if (t.kind == Tok::Ident && !keywords().count(t.text)) {
      e.kind = Expr::Kind::Access;
      e.access = parse_access();
      return e;
    }
    fail(t, fmt::format("expected expression, found '{}'", t.text));
  }

  std::string_view src_;
  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  std::vector<std::unordered_map<std::string, Binding>> scopes_{1};
  std::set<std::string, std::less<>> host_names_;
};

// ---------------------------------------------------------------- printer

std::string number_text(double v, bool is_float) {
  if (!is_float) return fmt::format("{}", static_cast<std::int64_t>(v));
  std::string s = fmt::format("{}", v);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string print_int(const IntExpr& e, bool nested = false) {
  switch (e.kind) {
    case IntExpr::Kind::Literal: return fmt::format("{}", e.value);
    case IntExpr::Kind::Var: return e.name;
    case IntExpr::Kind::Add:
    case IntExpr::Kind::Sub:
    case IntExpr::Kind::Mul: {
      const char* op = e.kind == IntExpr::Kind::Add ? " + " : e.kind == IntExpr::Kind::Sub ? " - " : " * ";
      std::string s = print_int(e.args[0], true) + op + print_int(e.args[1], true);
      return nested ? "(" + s + ")" : s;
    }
  }
  return "?";
}

std::string print_axis(const SliceAxis& ax) {
  if (ax.is_index) return print_int(*ax.start);
  std::string s;
  if (ax.start) s += print_int(*ax.start);
  s += ":";
  if (ax.dyn_stop) s += *ax.dyn_stop;
  else if (ax.stop) s += print_int(*ax.stop);
  if (ax.step) s += ":" + print_int(*ax.step);
  return s;
}

std::string print_access(const AccessRef& a) {
  std::string s = a.name;
  if (a.subscripted) {
    s += "[";
    for (std::size_t i = 0; i < a.axes.size(); ++i) {
      if (i) s += ", ";
      s += print_axis(a.axes[i]);
    }
    s += "]";
  }
  return s;
}

std::string print_expr(const Expr& e, bool nested = false) {
  switch (e.kind) {
    case Expr::Kind::Number: {
      std::string s = number_text(e.number, e.is_float);
      return (nested && e.number < 0) ? "(" + s + ")" : s;
    }
    case Expr::Kind::Access: return print_access(e.access);
    case Expr::Kind::Take:
      return "take(" + print_access(e.args[0].access) + ", " + print_access(e.args[1].access) + ")";
    case Expr::Kind::Binary: {
      std::string s = print_expr(e.args[0], true) + " " + std::string(symbol(e.op)) + " " +
                      print_expr(e.args[1], true);
      return nested ? "(" + s + ")" : s;
    }
  }
  return "?";
}

std::string print_init(const InitSpec& s) {
  switch (s.kind) {
    case InitSpec::Kind::Zeros: return "zeros";
    case InitSpec::Kind::Constant: return number_text(s.constant, s.constant_is_float);
    case InitSpec::Kind::HostRef: return s.host_name;
    case InitSpec::Kind::Literal: {
      std::string out = "[";
      for (std::size_t i = 0; i < s.values.size(); ++i) {
        if (i) out += ", ";
        out += fmt::format("{}", s.values[i]);
      }
      return out + "]";
    }
    case InitSpec::Kind::Random: {
      std::vector<std::string> args;
      if (s.seed) args.push_back(fmt::format("seed={}", *s.seed));
      if (s.lo) args.push_back(fmt::format("lo={}", *s.lo));
      if (s.hi) args.push_back(fmt::format("hi={}", *s.hi));
      if (args.empty()) return "random";
      return fmt::format("random({})", fmt::join(args, ", "));
    }
  }
  return "?";
}

void print_stmt(const Stmt& s, int indent, std::string& out) {
  const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, AssignStmt>) {
          static constexpr std::string_view ops[] = {"=", "+=", "-=", "*=", "/="};
          out += pad + print_access(n.dst) + " " + std::string(ops[static_cast<int>(n.op)]) +
                 " " + print_expr(n.rhs) + "\n";
        } else if constexpr (std::is_same_v<T, ForStmt>) {
          out += pad + "for " + n.iter + " in " + n.iterable;
          if (n.range) out += "[" + print_axis(*n.range) + "]";
          out += " {\n";
          for (const auto& b : n.body) print_stmt(b, indent + 1, out);
          out += pad + "}\n";
        } else if constexpr (std::is_same_v<T, ReduceStmt>) {
          out += pad + "reduce(" + print_access(n.src) + ", " + n.target + ")\n";
        } else if constexpr (std::is_same_v<T, ExitStmt>) {
          out += pad + "exit_if " + print_expr(n.lhs) + " " + std::string(symbol(n.cmp)) + " " +
                 print_expr(n.rhs) + "\n";
        } else if constexpr (std::is_same_v<T, ShiftStmt>) {
          out += pad + "shift(" + print_access(n.dst) + ", " + print_access(n.src) + ", " +
                 std::string(to_string(n.axis)) + ", " + (n.offset > 0 ? "+1" : "-1") + ")\n";
        } else if constexpr (std::is_same_v<T, PutStmt>) {
          out += pad + (n.accumulate ? "put_add(" : "put(") + print_access(n.dst) + ", " +
                 print_access(n.index) + ", " + print_access(n.src) + ")\n";
        }
      },
      s.node);
}

}  // namespace

ParseResult parse(std::string_view text) {
  ParseResult result;
  try {
    Lexer lexer(text);
    Parser parser(text, lexer.run());
    SourceProgram prog = parser.run();
    if (!parser.semantic.empty()) {
      result.diagnostics = std::move(parser.semantic);
      return result;
    }
    result.program = std::move(prog);
  } catch (const SyntaxError& e) {
    result.diagnostics.push_back(e.diag);
  }
  return result;
}

std::string print(const SourceProgram& program) {
  struct Item {
    int order;
    int which;
    std::size_t idx;
  };
  std::vector<Item> items;
  for (std::size_t i = 0; i < program.declarations.size(); ++i)
    items.push_back({program.declarations[i].order, 0, i});
  for (std::size_t i = 0; i < program.statements.size(); ++i)
    items.push_back({program.statements[i].order, 1, i});
  for (std::size_t i = 0; i < program.pragmas.size(); ++i)
    items.push_back({program.pragmas[i].order, 2, i});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.order < b.order; });

  std::string out;
  for (const auto& it : items) {
    if (it.which == 0) {
      const auto& d = program.declarations[it.idx];
      if (d.output) out += "out ";
      out += std::string(to_string(d.kind)) + " " + d.name;
      if (d.has_shape) out += fmt::format("[{}]", fmt::join(d.shape, ", "));
      out += " " + std::string(to_string(d.dtype));
      if (d.init) out += " = " + print_init(*d.init);
      out += "\n";
    } else if (it.which == 1) {
      print_stmt(program.statements[it.idx], 0, out);
    } else {
      const auto& p = program.pragmas[it.idx];
      if (p.kind == Pragma::Kind::Host) {
        out += "@host {\n";
        for (const auto& h : p.host_defs) out += "  " + h.name + " = " + print_init(h.init) + "\n";
        out += "}\n";
      } else {
        out += "@ignore {" + p.ignored_text + "}\n";
      }
    }
  }
  return out;
}

}  // namespace machlite::dsl
