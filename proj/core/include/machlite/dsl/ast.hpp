#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "machlite/common.hpp"

namespace machlite::dsl {

// Integer expression used in slice bounds; may reference unrolled loop variables.
struct IntExpr {
  enum class Kind : std::uint8_t { Literal, Var, Add, Sub, Mul };
  Kind kind = Kind::Literal;
  std::int64_t value = 0;
  std::string name;
  std::vector<IntExpr> args;
  SourceLoc loc;

  static IntExpr literal(std::int64_t v, SourceLoc l = {}) {
    IntExpr e;
    e.value = v;
    e.loc = l;
    return e;
  }
  bool operator==(const IntExpr& o) const {
    return kind == o.kind && value == o.value && name == o.name && args == o.args;
  }
};

// One axis of a subscript. An absent bound means "from the edge".
struct SliceAxis {
  std::optional<IntExpr> start;
  std::optional<IntExpr> stop;
  std::optional<IntExpr> step;
  bool is_index = false;                // `[3]`, shorthand for `3:4`
  std::optional<std::string> dyn_stop;  // stop given by an LS identifier
  SourceLoc loc;

  bool operator==(const SliceAxis& o) const {
    return start == o.start && stop == o.stop && step == o.step &&
           is_index == o.is_index && dyn_stop == o.dyn_stop;
  }
};

struct AccessRef {
  std::string name;
  bool subscripted = false;
  std::vector<SliceAxis> axes;
  SourceLoc loc;

  bool operator==(const AccessRef& o) const {
    return name == o.name && subscripted == o.subscripted && axes == o.axes;
  }
};

struct Expr {
  enum class Kind : std::uint8_t { Number, Access, Binary, Take };
  Kind kind = Kind::Number;
  double number = 0.0;
  bool is_float = false;  // literal was written with a decimal point or exponent
  AccessRef access;
  BinOp op = BinOp::Add;
  std::vector<Expr> args;  // Binary: lhs, rhs. Take: source, index.
  SourceLoc loc;

  bool operator==(const Expr& o) const {
    return kind == o.kind && number == o.number && is_float == o.is_float &&
           access == o.access && op == o.op && args == o.args;
  }
};

struct InitSpec {
  enum class Kind : std::uint8_t { Zeros, Constant, Random, Literal, HostRef };
  Kind kind = Kind::Zeros;
  double constant = 0.0;
  bool constant_is_float = false;
  std::optional<std::int64_t> seed;
  std::optional<double> lo;
  std::optional<double> hi;
  std::vector<double> values;
  std::string host_name;
  SourceLoc loc;

  bool operator==(const InitSpec& o) const {
    return kind == o.kind && constant == o.constant &&
           constant_is_float == o.constant_is_float && seed == o.seed && lo == o.lo &&
           hi == o.hi && values == o.values && host_name == o.host_name;
  }
};

struct TensorDecl {
  std::string name;
  OodsKind kind = OodsKind::GS;
  std::vector<std::int64_t> shape;
  bool has_shape = false;
  DType dtype = DType::F32;
  std::optional<InitSpec> init;
  bool output = false;
  int order = 0;
  SourceLoc loc;

  bool operator==(const TensorDecl& o) const {
    return name == o.name && kind == o.kind && shape == o.shape &&
           has_shape == o.has_shape && dtype == o.dtype && init == o.init &&
           output == o.output && order == o.order;
  }
};

enum class AssignOp : std::uint8_t { Set, Add, Sub, Mul, Div };
enum class ShiftAxis : std::uint8_t { Row, Col };

std::string_view to_string(ShiftAxis a);

struct Stmt;

struct AssignStmt {
  AccessRef dst;
  AssignOp op = AssignOp::Set;
  Expr rhs;
  bool operator==(const AssignStmt&) const = default;
};

struct ForStmt {
  std::string iter;
  std::string iterable;  // a GA name, or `range` for a compile-time loop
  std::optional<SliceAxis> range;
  std::vector<Stmt> body;
  bool operator==(const ForStmt&) const;
};

struct ReduceStmt {
  AccessRef src;
  std::string target;
  SourceLoc target_loc;
  bool operator==(const ReduceStmt& o) const { return src == o.src && target == o.target; }
};

struct ExitStmt {
  Expr lhs;
  CmpOp cmp = CmpOp::GT;
  Expr rhs;
  bool operator==(const ExitStmt&) const = default;
};

struct ShiftStmt {
  AccessRef dst;
  AccessRef src;
  ShiftAxis axis = ShiftAxis::Col;
  int offset = 1;
  bool operator==(const ShiftStmt&) const = default;
};

struct PutStmt {
  AccessRef dst;
  AccessRef index;
  AccessRef src;
  bool accumulate = false;
  bool operator==(const PutStmt&) const = default;
};

struct Stmt {
  std::variant<AssignStmt, ForStmt, ReduceStmt, ExitStmt, ShiftStmt, PutStmt> node;
  int order = 0;
  SourceLoc loc;
  bool operator==(const Stmt& o) const { return node == o.node && order == o.order; }
};

inline bool ForStmt::operator==(const ForStmt& o) const {
  return iter == o.iter && iterable == o.iterable && range == o.range && body == o.body;
}

struct HostDef {
  std::string name;
  InitSpec init;
  SourceLoc loc;
  bool operator==(const HostDef& o) const { return name == o.name && init == o.init; }
};

struct Pragma {
  enum class Kind : std::uint8_t { Host, Ignore };
  Kind kind = Kind::Host;
  std::vector<HostDef> host_defs;
  std::string ignored_text;  // raw body of an @ignore block, kept for printing
  int order = 0;
  SourceLoc loc;
  bool operator==(const Pragma& o) const {
    return kind == o.kind && host_defs == o.host_defs && order == o.order;
  }
};

// Parsed program. Items keep their source order through `order` so the three
// lists can be interleaved again for printing and def-before-use checks.
struct SourceProgram {
  std::vector<TensorDecl> declarations;
  std::vector<Stmt> statements;
  std::vector<Pragma> pragmas;

  const TensorDecl* find_decl(std::string_view name) const;
  bool operator==(const SourceProgram&) const = default;
};

}  // namespace machlite::dsl
