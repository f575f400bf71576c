#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "machlite/common.hpp"
#include "machlite/dsl/ast.hpp"

namespace machlite {

// Worker field dimensions. dim0 of a tensor maps to x (width), dim1 to y.
struct GridConfig {
  int width = 10;
  int height = 10;
  bool operator==(const GridConfig&) const = default;
};

// A strided rectangle of worker PEs, half-open on both axes.
struct PeRegion {
  int x0 = 0, x1 = 0, xs = 1;
  int y0 = 0, y1 = 0, ys = 1;

  static PeRegion full(int w, int h) { return {0, w, 1, 0, h, 1}; }
  int count_x() const { return x1 > x0 ? (x1 - x0 + xs - 1) / xs : 0; }
  int count_y() const { return y1 > y0 ? (y1 - y0 + ys - 1) / ys : 0; }
  int count() const { return count_x() * count_y(); }
  bool contains(int x, int y) const {
    return x >= x0 && x < x1 && (x - x0) % xs == 0 && y >= y0 && y < y1 && (y - y0) % ys == 0;
  }
  bool operator==(const PeRegion&) const = default;
};

// Contiguous run of elements in the flattened memory axes of a tensor.
// With a dynamic stop, the per-PE length is stop_value - start and `length`
// holds the static upper bound extent - start.
struct MemSpan {
  int start = 0;
  int length = 1;
  int dyn_var = -1;  // variable index (IL) or memloc id (IRG) of the LS stop
  int dyn_extent = 0;
  bool dynamic() const { return dyn_var >= 0; }
  bool operator==(const MemSpan&) const = default;
};

// Destination or source access of one operand: PE participation plus memory.
struct Slice {
  PeRegion region;
  MemSpan mem;
  bool operator==(const Slice&) const = default;
};

}  // namespace machlite

namespace machlite::dsl {

struct VarInfo {
  std::string name;
  OodsKind kind = OodsKind::GS;
  DType dtype = DType::F32;
  std::vector<std::int64_t> shape;  // LA: [X, Y, m...]; LS: [X, Y]; GA: dims
  bool output = false;
  std::optional<InitSpec> init;
  std::optional<InitSpec> host_init;  // resolved @host definition, if init names one
  int host_ordinal = -1;
  int ordinal = 0;
  SourceLoc loc;

  // Elements per PE for worker kinds, total elements for controller kinds.
  int elements() const;
  PeRegion declared_region(const GridConfig& grid) const;
  bool operator==(const VarInfo& o) const {
    return name == o.name && kind == o.kind && dtype == o.dtype && shape == o.shape &&
           output == o.output && init == o.init && host_init == o.host_init &&
           host_ordinal == o.host_ordinal && ordinal == o.ordinal;
  }
};

// A leaf operand after typing.
struct Operand {
  enum class Kind : std::uint8_t {
    Literal,   // immediate constant
    Var,       // declared variable access
    Iterator,  // element of the enclosing device loop's GA at the current index
    GaAtIter,  // another GA indexed by a device loop's current index
  };
  Kind kind = Kind::Literal;
  DType dtype = DType::F32;
  Scalar literal;
  int var = -1;
  int loop = -1;  // device loop id for Iterator / GaAtIter
  Slice slice;    // worker: region + memory; controller: mem.start is the element
  bool adapts = false;  // unsubscripted LS/ULS; takes the region of its context

  bool operator==(const Operand&) const = default;
};

struct TExpr {
  enum class Kind : std::uint8_t { Leaf, Binary, Take };
  Kind kind = Kind::Leaf;
  Operand leaf;
  BinOp op = BinOp::Add;
  std::vector<TExpr> args;
  DType dtype = DType::F32;
  Placement placement = Placement::Controller;
  // For worker expressions: the shared region and length of vector operands.
  Slice shape;
  bool has_vector = false;  // any non-adapting worker vector operand inside
  SourceLoc loc;
  bool operator==(const TExpr& o) const {
    return kind == o.kind && leaf == o.leaf && op == o.op && args == o.args &&
           dtype == o.dtype && placement == o.placement && shape == o.shape &&
           has_vector == o.has_vector;
  }
};

struct TStmt;

struct TAssign {
  Operand dst;
  TExpr rhs;
  bool operator==(const TAssign&) const = default;
};

struct TDeviceLoop {
  int id = 0;
  int ga_var = -1;
  int start = 0, stop = 0, step = 1;
  std::string iter_name;
  std::vector<TStmt> body;
  bool operator==(const TDeviceLoop&) const;
};

// Compile-time loop; one typed copy of the body per iteration value.
struct TStaticLoop {
  std::string var;
  std::vector<std::int64_t> values;
  std::vector<std::vector<TStmt>> iterations;
  bool operator==(const TStaticLoop&) const;
};

struct TReduce {
  Operand src;
  int target = -1;
  bool operator==(const TReduce&) const = default;
};

struct TExit {
  TExpr lhs;
  CmpOp cmp = CmpOp::GT;
  TExpr rhs;
  int loop = -1;
  bool operator==(const TExit&) const = default;
};

struct TShift {
  Operand dst, src;
  ShiftAxis axis = ShiftAxis::Col;
  int offset = 1;
  bool operator==(const TShift&) const = default;
};

struct TPut {
  Operand dst, index, src;
  bool accumulate = false;
  bool operator==(const TPut&) const = default;
};

struct TStmt {
  std::variant<TAssign, TDeviceLoop, TStaticLoop, TReduce, TExit, TShift, TPut> node;
  SourceLoc loc;
  bool operator==(const TStmt& o) const { return node == o.node; }
};

inline bool TDeviceLoop::operator==(const TDeviceLoop& o) const {
  return id == o.id && ga_var == o.ga_var && start == o.start && stop == o.stop &&
         step == o.step && iter_name == o.iter_name && body == o.body;
}
inline bool TStaticLoop::operator==(const TStaticLoop& o) const {
  return var == o.var && values == o.values && iterations == o.iterations;
}

struct TypedProgram {
  GridConfig grid;
  std::vector<VarInfo> vars;  // declaration order
  std::vector<TStmt> body;
  int device_loops = 0;

  int find_var(std::string_view name) const;
  bool operator==(const TypedProgram&) const = default;
};

// One IL statement. Static loops are gone and every worker access carries
// explicit participation.
struct ILStmt;

struct ILLoop {
  int id = 0;
  int ga_var = -1;
  int start = 0, stop = 0, step = 1;
  std::vector<ILStmt> body;
  bool operator==(const ILLoop&) const;
};

struct ILStmt {
  std::variant<TAssign, ILLoop, TReduce, TExit, TShift, TPut> node;
  SourceLoc loc;
  bool operator==(const ILStmt& o) const { return node == o.node; }
};

inline bool ILLoop::operator==(const ILLoop& o) const {
  return id == o.id && ga_var == o.ga_var && start == o.start && stop == o.stop &&
         step == o.step && body == o.body;
}

struct ILVar {
  VarInfo info;
  bool initialized = false;
  std::vector<Scalar> data;  // frozen init, row-major over the declared shape
  bool operator==(const ILVar& o) const {
    return info.name == o.info.name && initialized == o.initialized && data == o.data;
  }
};

struct ILProgram {
  GridConfig grid;
  std::vector<ILVar> vars;
  std::vector<ILStmt> body;
  int device_loops = 0;
  bool operator==(const ILProgram&) const = default;
};

struct AnalyzeResult {
  std::optional<TypedProgram> program;
  Diagnostics diagnostics;
  bool ok() const { return program.has_value(); }
};

AnalyzeResult analyze(const SourceProgram& program, const GridConfig& grid);

// Total. `seed` feeds declarations initialized with unseeded `random`.
ILProgram lower_to_il(const TypedProgram& typed, std::uint64_t seed = 0);

// Helper used by backends and tests: deterministic init data for a spec.
std::vector<Scalar> generate_init(const InitSpec& spec, DType dtype, std::size_t count,
                                  std::uint64_t run_seed, int ordinal);

}  // namespace machlite::dsl
