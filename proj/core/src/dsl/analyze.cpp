#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "machlite/dsl/typed.hpp"

namespace machlite::dsl {

int VarInfo::elements() const {
  std::int64_t n = 1;
  switch (kind) {
    case OodsKind::GS:
    case OodsKind::LS:
    case OodsKind::ULS: return 1;
    case OodsKind::GA:
      for (auto d : shape) n *= d;
      return static_cast<int>(n);
    case OodsKind::LA:
      for (std::size_t i = 2; i < shape.size(); ++i) n *= shape[i];
      return static_cast<int>(n);
  }
  return 1;
}

PeRegion VarInfo::declared_region(const GridConfig& grid) const {
  if ((kind == OodsKind::LA || kind == OodsKind::LS) && shape.size() >= 2)
    return {0, static_cast<int>(shape[0]), 1, 0, static_cast<int>(shape[1]), 1};
  return PeRegion::full(grid.width, grid.height);
}

int TypedProgram::find_var(std::string_view name) const {
  for (std::size_t i = 0; i < vars.size(); ++i)
    if (vars[i].name == name) return static_cast<int>(i);
  return -1;
}

namespace {

struct AnalyzeError {
  Diagnostic diag;
};

[[noreturn]] void error(SourceLoc loc, std::string msg) { throw AnalyzeError{{loc, std::move(msg)}}; }

std::string region_str(const PeRegion& r) {
  std::string s = fmt::format("[{}:{}", r.x0, r.x1);
  if (r.xs != 1) s += fmt::format(":{}", r.xs);
  s += fmt::format(", {}:{}", r.y0, r.y1);
  if (r.ys != 1) s += fmt::format(":{}", r.ys);
  return s + "]";
}

bool is_integral(double v) { return std::floor(v) == v; }

struct DeviceLoopCtx {
  int id;
  std::string iter;
  int ga_var;
  int start, stop, step;
};

class Analyzer {
 public:
  Analyzer(const SourceProgram& src, const GridConfig& grid) : src_(src), grid_(grid) {}

  TypedProgram run() {
    if (grid_.width < 2 || grid_.height < 2 || grid_.width % 2 || grid_.height % 2)
      error({}, fmt::format("worker grid {}x{} must have even dimensions of at least 2",
                            grid_.width, grid_.height));
    TypedProgram out;
    out.grid = grid_;
    collect_hosts();
    bool any_output = false;
    for (const auto& d : src_.declarations) any_output |= d.output;
    for (const auto& d : src_.declarations) {
      VarInfo v = check_decl(d);
      if (!any_output) v.output = true;
      vars_.push_back(std::move(v));
    }
    for (std::size_t i = 0; i < vars_.size(); ++i)
      if (vars_[i].init) defined_.insert(static_cast<int>(i));
    out.body = type_block(src_.statements);
    for (std::size_t i = 0; i < vars_.size(); ++i)
      if (vars_[i].output && !defined_.count(static_cast<int>(i)))
        error(vars_[i].loc, fmt::format("output '{}' is neither initialized nor fully written",
                                        vars_[i].name));
    out.vars = vars_;
    out.device_loops = next_loop_;
    return out;
  }

 private:
  // ---------------------------------------------------------------- decls
  void collect_hosts() {
    for (const auto& p : src_.pragmas) {
      if (p.kind != Pragma::Kind::Host) continue;
      for (const auto& h : p.host_defs) hosts_[h.name] = {&h, p.order};
    }
  }

  void check_init(const InitSpec& init, DType dtype, std::size_t count, SourceLoc loc) {
    switch (init.kind) {
      case InitSpec::Kind::Zeros: return;
      case InitSpec::Kind::Constant:
        if (dtype == DType::I16 && (!is_integral(init.constant) || init.constant_is_float ||
                                    init.constant < -32768 || init.constant > 32767))
          error(init.loc, "i16 initial value must be an integer in [-32768, 32767]");
        return;
      case InitSpec::Kind::Literal:
        if (init.values.size() != count)
          error(init.loc, fmt::format("literal initializer has {} values, expected {}",
                                      init.values.size(), count));
        if (dtype == DType::I16)
          for (double v : init.values)
            if (!is_integral(v) || v < -32768 || v > 32767)
              error(init.loc, "i16 literal values must be integers in [-32768, 32767]");
        return;
      case InitSpec::Kind::Random: {
        const double lo = init.lo.value_or(0.0);
        const double hi = init.hi.value_or(dtype == DType::F32 ? 1.0 : 100.0);
        if (!(hi > lo)) error(init.loc, "random() requires hi > lo");
        if (dtype == DType::I16 &&
            (!is_integral(lo) || !is_integral(hi) || lo < -32768 || hi > 32768))
          error(init.loc, "i16 random bounds must be integers within the i16 range");
        if (init.seed && *init.seed < 0) error(init.loc, "random seed must be non-negative");
        return;
      }
      case InitSpec::Kind::HostRef: error(loc, "host data may not reference other host data");
    }
  }

  static bool reserved_name(const std::string& n) {
    auto digits_after = [&](std::size_t k) {
      return n.size() > k && std::all_of(n.begin() + static_cast<std::ptrdiff_t>(k), n.end(),
                                         [](char c) { return c >= '0' && c <= '9'; });
    };
    return (n[0] == 't' && digits_after(1)) || (n.rfind("mask", 0) == 0 && digits_after(4));
  }

  VarInfo check_decl(const TensorDecl& d) {
    if (reserved_name(d.name))
      error(d.loc, fmt::format("'{}' is reserved for compiler temporaries", d.name));
    VarInfo v;
    v.name = d.name;
    v.kind = d.kind;
    v.dtype = d.dtype;
    v.shape = d.shape;
    v.output = d.output;
    v.init = d.init;
    v.ordinal = d.order;
    v.loc = d.loc;
    const auto rank = d.shape.size();
    for (auto e : d.shape)
      if (e < 1) error(d.loc, fmt::format("'{}': extents must be positive", d.name));
    switch (d.kind) {
      case OodsKind::GS:
        if (d.has_shape) error(d.loc, fmt::format("'{}': gs has rank 0 and takes no shape", d.name));
        break;
      case OodsKind::ULS:
        if (d.has_shape) error(d.loc, fmt::format("'{}': uls has rank 0 and takes no shape", d.name));
        break;
      case OodsKind::GA:
        if (rank < 1) error(d.loc, fmt::format("'{}': ga requires rank >= 1", d.name));
        break;
      case OodsKind::LS:
        if (d.has_shape && rank != 2)
          error(d.loc, fmt::format("'{}': ls shape must be rank 2 over the worker grid", d.name));
        if (!d.has_shape) v.shape = {grid_.width, grid_.height};
        break;
      case OodsKind::LA:
        if (rank < 3)
          error(d.loc, fmt::format("'{}': la requires rank >= 3, got rank {}", d.name, rank));
        break;
    }
    if (d.kind == OodsKind::LA || d.kind == OodsKind::LS) {
      if (v.shape[0] > grid_.width || v.shape[1] > grid_.height)
        error(d.loc, fmt::format("'{}': PE extent {}x{} exceeds the {}x{} worker grid", d.name,
                                 v.shape[0], v.shape[1], grid_.width, grid_.height));
    }
    std::int64_t elems = 1;
    if (d.kind == OodsKind::LA)
      for (std::size_t i = 2; i < rank; ++i) elems *= v.shape[i];
    else if (d.kind == OodsKind::GA)
      for (auto e : v.shape) elems *= e;
    if (elems > 24576) error(d.loc, fmt::format("'{}': {} elements per PE is too large", d.name, elems));
    std::size_t total = static_cast<std::size_t>(elems);
    if (d.kind == OodsKind::LA || d.kind == OodsKind::LS)
      total *= static_cast<std::size_t>(v.shape[0] * v.shape[1]);
    if (d.init) {
      if (d.init->kind == InitSpec::Kind::HostRef) {
        auto it = hosts_.find(d.init->host_name);
        if (it == hosts_.end()) error(d.init->loc, fmt::format("unknown identifier '{}'", d.init->host_name));
        check_init(it->second.first->init, d.dtype, total, d.init->loc);
        v.host_init = it->second.first->init;
        v.host_ordinal = it->second.second;
      } else {
        check_init(*d.init, d.dtype, total, d.loc);
      }
    }
    return v;
  }

  // ---------------------------------------------------------------- helpers
  std::int64_t eval_int(const IntExpr& e) const {
    switch (e.kind) {
      case IntExpr::Kind::Literal: return e.value;
      case IntExpr::Kind::Var: {
        auto it = statics_.find(e.name);
        if (it == statics_.end())
          error(e.loc, fmt::format("'{}' is not a compile-time value", e.name));
        return it->second;
      }
      case IntExpr::Kind::Add: return eval_int(e.args[0]) + eval_int(e.args[1]);
      case IntExpr::Kind::Sub: return eval_int(e.args[0]) - eval_int(e.args[1]);
      case IntExpr::Kind::Mul: return eval_int(e.args[0]) * eval_int(e.args[1]);
    }
    return 0;
  }

  struct Range {
    int start, stop, step;
  };

  Range axis_range(const SliceAxis& ax, std::int64_t extent, const std::string& what, int axis) const {
    if (ax.dyn_stop) error(ax.loc, fmt::format("{}: dynamic stop is only allowed on the memory axis", what));
    std::int64_t start = ax.start ? eval_int(*ax.start) : 0;
    std::int64_t stop = ax.is_index ? start + 1 : (ax.stop ? eval_int(*ax.stop) : extent);
    std::int64_t step = ax.step ? eval_int(*ax.step) : 1;
    if (step < 1) error(ax.loc, fmt::format("{}: slice step must be >= 1", what));
    if (start < 0 || stop > extent || start > stop)
      error(ax.loc, fmt::format("{}: slice {}:{} on axis {} is outside extent {}", what, start,
                                stop, axis, extent));
    return {static_cast<int>(start), static_cast<int>(stop), static_cast<int>(step)};
  }

  const DeviceLoopCtx* find_iter(std::string_view name) const {
    for (auto it = loops_.rbegin(); it != loops_.rend(); ++it)
      if (it->iter == name) return &*it;
    return nullptr;
  }

  void require_defined(int var, SourceLoc loc) const {
    if (!defined_.count(var))
      error(loc, fmt::format("'{}' is read before it is fully written", vars_[var].name));
  }

  // Resolve an access into an operand. Reads check definedness.
  Operand resolve(const AccessRef& a, bool is_read) {
    Operand op;
    if (const auto* it = find_iter(a.name)) {
      if (a.subscripted) error(a.loc, fmt::format("loop element '{}' takes no subscript", a.name));
      if (!is_read) error(a.loc, fmt::format("loop element '{}' cannot be assigned", a.name));
      op.kind = Operand::Kind::Iterator;
      op.loop = it->id;
      op.var = it->ga_var;
      op.dtype = vars_[it->ga_var].dtype;
      return op;
    }
    const int vi = find(a.name, a.loc);
    const VarInfo& v = vars_[vi];
    op.kind = Operand::Kind::Var;
    op.var = vi;
    op.dtype = v.dtype;
    if (is_read) require_defined(vi, a.loc);
    switch (v.kind) {
      case OodsKind::GS:
      case OodsKind::ULS:
        if (a.subscripted)
          error(a.loc, fmt::format("'{}' is a {} scalar and takes no subscript", v.name, to_string(v.kind)));
        op.slice.region = v.declared_region(grid_);
        op.slice.mem = {0, 1};
        op.adapts = v.kind == OodsKind::ULS;
        return op;
      case OodsKind::GA: {
        if (!a.subscripted) error(a.loc, fmt::format("global array '{}' must be indexed", v.name));
        if (a.axes.size() == 1 && !a.axes[0].is_index)
          error(a.loc, fmt::format("global array '{}' must be indexed by a constant or a loop element", v.name));
        if (a.axes.size() == 1 && a.axes[0].start && a.axes[0].start->kind == IntExpr::Kind::Var &&
            !statics_.count(a.axes[0].start->name)) {
          const auto* it = find_iter(a.axes[0].start->name);
          if (!it) error(a.loc, fmt::format("'{}' is not a loop element", a.axes[0].start->name));
          if (v.shape.size() != 1)
            error(a.loc, fmt::format("'{}' must be rank 1 to be indexed by a loop element", v.name));
          int last = it->start + ((it->stop - it->start - 1) / it->step) * it->step;
          if (it->stop > it->start && last >= v.shape[0])
            error(a.loc, fmt::format("loop index reaches {} but '{}' has extent {}", last, v.name, v.shape[0]));
          op.kind = Operand::Kind::GaAtIter;
          op.loop = it->id;
          return op;
        }
        if (a.axes.size() != v.shape.size())
          error(a.loc, fmt::format("'{}' has rank {} but {} indices were given", v.name,
                                   v.shape.size(), a.axes.size()));
        std::int64_t flat = 0;
        for (std::size_t i = 0; i < a.axes.size(); ++i) {
          if (!a.axes[i].is_index)
            error(a.loc, fmt::format("global array '{}' must be indexed by constants", v.name));
          auto r = axis_range(a.axes[i], v.shape[i], v.name, static_cast<int>(i));
          flat = flat * v.shape[i] + r.start;
        }
        op.slice.mem = {static_cast<int>(flat), 1};
        return op;
      }
      case OodsKind::LS:
      case OodsKind::LA:
        break;
    }
    const std::size_t rank = v.kind == OodsKind::LS ? 2 : v.shape.size();
    if (a.axes.size() > rank)
      error(a.loc, fmt::format("'{}' has rank {} but {} subscripts were given", v.name, rank, a.axes.size()));
    if (!a.subscripted && v.kind == OodsKind::LS) op.adapts = true;
    PeRegion r = v.declared_region(grid_);
    if (a.axes.size() >= 1) {
      auto rx = axis_range(a.axes[0], v.shape[0], v.name, 0);
      r.x0 = rx.start, r.x1 = rx.stop, r.xs = rx.step;
    }
    if (a.axes.size() >= 2) {
      auto ry = axis_range(a.axes[1], v.shape[1], v.name, 1);
      r.y0 = ry.start, r.y1 = ry.stop, r.ys = ry.step;
    }
    op.slice.region = r;
    op.slice.mem = {0, 1};
    if (v.kind == OodsKind::LA) op.slice.mem = memory_span(a, v);
    return op;
  }

  MemSpan memory_span(const AccessRef& a, const VarInfo& v) {
    const std::size_t naxes = v.shape.size() - 2;
    std::vector<int> starts(naxes), lens(naxes);
    std::optional<int> dyn_var;
    for (std::size_t j = 0; j < naxes; ++j) {
      const std::int64_t extent = v.shape[j + 2];
      starts[j] = 0;
      lens[j] = static_cast<int>(extent);
      if (j + 2 >= a.axes.size()) continue;
      const SliceAxis& ax = a.axes[j + 2];
      if (ax.step && eval_int(*ax.step) != 1)
        error(ax.loc, fmt::format("'{}': memory axes do not take a step", v.name));
      if (ax.dyn_stop) {
        if (naxes != 1)
          error(ax.loc, fmt::format("'{}': dynamic stop requires a rank-3 la", v.name));
        const int sv = find(*ax.dyn_stop, ax.loc);
        if (vars_[sv].kind != OodsKind::LS || vars_[sv].dtype != DType::I16)
          error(ax.loc, fmt::format("dynamic stop '{}' must be an i16 ls", *ax.dyn_stop));
        require_defined(sv, ax.loc);
        const std::int64_t start = ax.start ? eval_int(*ax.start) : 0;
        if (start < 0 || start > extent)
          error(ax.loc, fmt::format("'{}': slice start {} outside extent {}", v.name, start, extent));
        dyn_var = sv;
        starts[j] = static_cast<int>(start);
        lens[j] = static_cast<int>(extent - start);
        continue;
      }
      SliceAxis plain = ax;
      plain.step.reset();
      auto r = axis_range(plain, extent, v.name, static_cast<int>(j + 2));
      starts[j] = r.start;
      lens[j] = r.stop - r.start;
    }
    int q = -1;
    for (std::size_t j = 0; j < naxes; ++j)
      if (lens[j] != v.shape[j + 2]) q = static_cast<int>(j);
    for (int j = 0; j < q; ++j)
      if (lens[j] != 1)
        error(a.loc, fmt::format("'{}': memory slice is not contiguous", v.name));
    MemSpan m;
    std::int64_t stride = 1, flat = 0, len = 1;
    for (int j = static_cast<int>(naxes) - 1; j >= 0; --j) {
      flat += starts[j] * stride;
      len *= lens[j];
      stride *= v.shape[j + 2];
    }
    m.start = static_cast<int>(flat);
    m.length = static_cast<int>(len);
    if (dyn_var) {
      m.dyn_var = *dyn_var;
      m.dyn_extent = static_cast<int>(v.shape[2]);
    }
    return m;
  }

  int find(const std::string& name, SourceLoc loc) const {
    for (std::size_t i = 0; i < vars_.size(); ++i)
      if (vars_[i].name == name) return static_cast<int>(i);
    error(loc, fmt::format("unknown identifier '{}'", name));
  }

  Placement placement_of_leaf(const Operand& op) const {
    switch (op.kind) {
      case Operand::Kind::Literal: return Placement::Controller;
      case Operand::Kind::Iterator:
      case Operand::Kind::GaAtIter: return Placement::Controller;
      case Operand::Kind::Var: return machlite::placement_of(vars_[op.var].kind);
    }
    return Placement::Controller;
  }

  // Element type of an expression from its non-literal leaves, if any.
  std::optional<DType> infer_dtype(const Expr& e) {
    switch (e.kind) {
      case Expr::Kind::Number: return std::nullopt;
      case Expr::Kind::Access: {
        if (const auto* it = find_iter(e.access.name)) return vars_[it->ga_var].dtype;
        return vars_[find(e.access.name, e.access.loc)].dtype;
      }
      case Expr::Kind::Take: return infer_dtype(e.args[0]);
      case Expr::Kind::Binary: {
        auto a = infer_dtype(e.args[0]);
        auto b = infer_dtype(e.args[1]);
        if (a && b && *a != *b)
          error(e.loc, fmt::format("mixed element types {} and {}", to_string(*a), to_string(*b)));
        return a ? a : b;
      }
    }
    return std::nullopt;
  }

  static bool same_shape(const Slice& a, const Slice& b) {
    return a.region == b.region && a.mem.length == b.mem.length && a.mem.dyn_var == b.mem.dyn_var &&
           (!a.mem.dynamic() || a.mem.start == b.mem.start);
  }

  static std::string shape_str(const Slice& s) {
    return fmt::format("{} x {}", region_str(s.region), s.mem.length);
  }

  TExpr make_leaf(Operand op, SourceLoc loc) {
    TExpr t;
    t.kind = TExpr::Kind::Leaf;
    t.dtype = op.dtype;
    t.placement = placement_of_leaf(op);
    t.loc = loc;
    if (t.placement == Placement::Worker && !op.adapts) {
      t.has_vector = true;
      t.shape = op.slice;
    }
    t.leaf = std::move(op);
    return t;
  }

  TExpr type_expr(const Expr& e, DType dt) {
    switch (e.kind) {
      case Expr::Kind::Number: {
        Operand op;
        op.kind = Operand::Kind::Literal;
        op.dtype = dt;
        if (dt == DType::I16) {
          if (!is_integral(e.number) || e.is_float || e.number < -32768 || e.number > 32767)
            error(e.loc, "i16 literal must be an integer in [-32768, 32767]");
          op.literal = Scalar::i16(static_cast<std::int64_t>(e.number));
        } else {
          op.literal = Scalar::f32(static_cast<float>(e.number));
        }
        return make_leaf(op, e.loc);
      }
      case Expr::Kind::Access: return make_leaf(resolve(e.access, true), e.loc);
      case Expr::Kind::Take: {
        TExpr src = make_leaf(resolve(e.args[0].access, true), e.args[0].loc);
        TExpr idx = make_leaf(resolve(e.args[1].access, true), e.args[1].loc);
        auto worker_vec = [&](const TExpr& t, const char* role) {
          if (t.leaf.kind != Operand::Kind::Var ||
              (vars_[t.leaf.var].kind != OodsKind::LA && vars_[t.leaf.var].kind != OodsKind::LS))
            error(t.loc, fmt::format("take() {} must be an la or ls access", role));
          if (t.leaf.slice.mem.dynamic()) error(t.loc, "take() operands cannot use a dynamic stop");
        };
        worker_vec(src, "source");
        worker_vec(idx, "index");
        if (idx.dtype != DType::I16) error(idx.loc, "take() index must be i16");
        if (src.leaf.slice.region != idx.leaf.slice.region)
          error(e.loc, fmt::format("take() source region {} differs from index region {}",
                                   region_str(src.leaf.slice.region), region_str(idx.leaf.slice.region)));
        if (src.dtype != dt)
          error(e.loc, fmt::format("mixed element types {} and {}", to_string(src.dtype), to_string(dt)));
        TExpr t;
        t.kind = TExpr::Kind::Take;
        t.dtype = src.dtype;
        t.placement = Placement::Worker;
        t.has_vector = true;
        t.shape = idx.leaf.slice;
        t.loc = e.loc;
        t.args.push_back(std::move(src));
        t.args.push_back(std::move(idx));
        return t;
      }
      case Expr::Kind::Binary: {
        if (dt == DType::I16 && e.op == BinOp::Div)
          error(e.loc, "division is not supported for i16");
        TExpr a = type_expr(e.args[0], dt);
        TExpr b = type_expr(e.args[1], dt);
        if (a.kind == TExpr::Kind::Leaf && b.kind == TExpr::Kind::Leaf &&
            a.leaf.kind == Operand::Kind::Literal && b.leaf.kind == Operand::Kind::Literal) {
          Operand op;
          op.kind = Operand::Kind::Literal;
          op.dtype = dt;
          op.literal = apply(e.op, a.leaf.literal, b.leaf.literal);
          return make_leaf(op, e.loc);
        }
        TExpr t;
        t.kind = TExpr::Kind::Binary;
        t.op = e.op;
        t.dtype = dt;
        t.loc = e.loc;
        t.placement = (a.placement == Placement::Worker || b.placement == Placement::Worker)
                          ? Placement::Worker
                          : Placement::Controller;
        if (a.has_vector && b.has_vector && !same_shape(a.shape, b.shape))
          error(e.loc, fmt::format("shape mismatch: {} vs {}", shape_str(a.shape), shape_str(b.shape)));
        t.has_vector = a.has_vector || b.has_vector;
        t.shape = a.has_vector ? a.shape : b.shape;
        t.args.push_back(std::move(a));
        t.args.push_back(std::move(b));
        return t;
      }
    }
    error(e.loc, "bad expression");
  }

  static bool uniform_only(const TExpr& t, const std::vector<VarInfo>& vars) {
    if (t.kind == TExpr::Kind::Take) return false;
    if (t.kind == TExpr::Kind::Leaf) {
      if (t.leaf.kind != Operand::Kind::Var) return true;
      const auto k = vars[t.leaf.var].kind;
      return k == OodsKind::ULS || k == OodsKind::GS || k == OodsKind::GA;
    }
    return uniform_only(t.args[0], vars) && uniform_only(t.args[1], vars);
  }

  // An unsubscripted ls takes the region of its context; that region has to
  // lie inside the ls declaration.
  void check_adapting(const TExpr& t, const PeRegion& ctx) const {
    if (t.kind != TExpr::Kind::Leaf) {
      for (const auto& a : t.args) check_adapting(a, ctx);
      return;
    }
    if (!t.leaf.adapts || vars_[t.leaf.var].kind != OodsKind::LS) return;
    const PeRegion d = vars_[t.leaf.var].declared_region(grid_);
    if (ctx.x0 < d.x0 || ctx.x1 > d.x1 || ctx.y0 < d.y0 || ctx.y1 > d.y1)
      error(t.loc, fmt::format("'{}' covers {} but is used over {}", vars_[t.leaf.var].name,
                               region_str(d), region_str(ctx)));
  }

  bool full_write(const Operand& dst) const {
    const VarInfo& v = vars_[dst.var];
    if (v.kind == OodsKind::GS || v.kind == OodsKind::ULS) return true;
    return dst.slice.region == v.declared_region(grid_) && dst.slice.mem.start == 0 &&
           dst.slice.mem.length == v.elements() && !dst.slice.mem.dynamic();
  }

  Operand resolve_worker(const AccessRef& a, bool is_read, const char* what) {
    Operand op = resolve(a, is_read);
    if (op.kind != Operand::Kind::Var ||
        (vars_[op.var].kind != OodsKind::LA && vars_[op.var].kind != OodsKind::LS))
      error(a.loc, fmt::format("{} must be an la or ls access", what));
    return op;
  }

  // ---------------------------------------------------------------- stmts
  std::vector<TStmt> type_block(const std::vector<Stmt>& stmts) {
    std::vector<TStmt> out;
    for (const auto& s : stmts) {
      TStmt t;
      t.loc = s.loc;
      bool keep = true;
      std::visit([&](const auto& n) { keep = type_stmt(n, s.loc, t); }, s.node);
      if (keep) out.push_back(std::move(t));
    }
    return out;
  }

  bool type_stmt(const AssignStmt& s, SourceLoc loc, TStmt& out) {
    Operand dst;
    if (find_iter(s.dst.name)) error(s.dst.loc, fmt::format("loop element '{}' cannot be assigned", s.dst.name));
    const int vi = find(s.dst.name, s.dst.loc);
    const VarInfo& v = vars_[vi];
    if (v.kind == OodsKind::GA) error(s.dst.loc, fmt::format("global array '{}' is read-only", v.name));
    dst = resolve(s.dst, s.op != AssignOp::Set);
    Expr rhs_src = s.rhs;
    if (s.op != AssignOp::Set) {
      Expr lhs;
      lhs.kind = Expr::Kind::Access;
      lhs.access = s.dst;
      lhs.loc = s.dst.loc;
      Expr bin;
      bin.kind = Expr::Kind::Binary;
      bin.op = static_cast<BinOp>(static_cast<int>(s.op) - 1);
      bin.loc = loc;
      bin.args.push_back(std::move(lhs));
      bin.args.push_back(std::move(rhs_src));
      rhs_src = std::move(bin);
    }
    if (auto inferred = infer_dtype(rhs_src); inferred && *inferred != v.dtype)
      error(loc, fmt::format("cannot assign {} to {} '{}'", to_string(*inferred), to_string(v.dtype), v.name));
    TExpr rhs = type_expr(rhs_src, v.dtype);
    if (v.kind == OodsKind::GS) {
      if (rhs.placement != Placement::Controller)
        error(loc, fmt::format("gs '{}' can only be assigned controller values", v.name));
    } else if (v.kind == OodsKind::ULS) {
      if (!uniform_only(rhs, vars_))
        error(loc, fmt::format("uls '{}' may only take uls, gs, or literal operands", v.name));
    } else {
      if (rhs.has_vector && !same_shape(rhs.shape, dst.slice))
        error(loc, fmt::format("shape mismatch: destination {} vs source {}", shape_str(dst.slice),
                               shape_str(rhs.shape)));
    }
    check_adapting(rhs, dst.slice.region);
    if (full_write(dst)) mark_written(vi);
    out.node = TAssign{std::move(dst), std::move(rhs)};
    return true;
  }

  bool type_stmt(const ForStmt& s, SourceLoc loc, TStmt& out) {
    if (s.iterable == "range") {
      TStaticLoop sl;
      sl.var = s.iter;
      const auto& ax = *s.range;
      if (ax.dyn_stop || !ax.stop) error(ax.loc, "range loops need a constant stop");
      std::int64_t start = ax.start ? eval_int(*ax.start) : 0;
      std::int64_t stop = ax.is_index ? start + 1 : eval_int(*ax.stop);
      std::int64_t step = ax.step ? eval_int(*ax.step) : 1;
      if (step < 1) error(ax.loc, "range step must be >= 1");
      if (stop - start > 4096) error(ax.loc, "range loop is too long to unroll");
      for (std::int64_t i = start; i < stop; i += step) {
        statics_[s.iter] = i;
        sl.values.push_back(i);
        sl.iterations.push_back(type_block(s.body));
      }
      statics_.erase(s.iter);
      out.node = std::move(sl);
      return true;
    }
    const int gi = find(s.iterable, loc);
    const VarInfo& ga = vars_[gi];
    if (ga.kind != OodsKind::GA || ga.shape.size() != 1)
      error(loc, fmt::format("device loops iterate over a rank-1 ga; '{}' is {}", ga.name, to_string(ga.kind)));
    require_defined(gi, loc);
    Range r{0, static_cast<int>(ga.shape[0]), 1};
    if (s.range) r = axis_range(*s.range, ga.shape[0], ga.name, 0);
    TDeviceLoop dl;
    dl.id = next_loop_++;
    dl.ga_var = gi;
    dl.start = r.start;
    dl.stop = r.stop;
    dl.step = r.step;
    dl.iter_name = s.iter;
    loops_.push_back({dl.id, s.iter, gi, r.start, r.stop, r.step});
    const auto before = defined_;
    exits_seen_.push_back(false);
    fully_written_.emplace_back();
    dl.body = type_block(s.body);
    const auto written = fully_written_.back();
    fully_written_.pop_back();
    exits_seen_.pop_back();
    loops_.pop_back();
    defined_ = before;
    if (r.stop > r.start)
      for (int w : written) defined_.insert(w);
    out.node = std::move(dl);
    return true;
  }

  bool type_stmt(const ReduceStmt& s, SourceLoc loc, TStmt& out) {
    Operand src = resolve_worker(s.src, true, "reduce() source");
    if (src.slice.mem.dynamic()) error(s.src.loc, "reduce() does not accept a dynamic stop");
    const int ti = find(s.target, s.target_loc);
    const VarInfo& t = vars_[ti];
    if (t.kind != OodsKind::ULS && t.kind != OodsKind::GS)
      error(s.target_loc, fmt::format("reduce() target '{}' must be a uls or gs", t.name));
    if (t.dtype != src.dtype)
      error(loc, fmt::format("reduce() of {} into {} '{}'", to_string(src.dtype), to_string(t.dtype), t.name));
    mark_written(ti);
    out.node = TReduce{std::move(src), ti};
    return true;
  }

  bool type_stmt(const ExitStmt& s, SourceLoc loc, TStmt& out) {
    if (loops_.empty()) error(loc, "exit_if is only allowed inside a device loop");
    auto a = infer_dtype(s.lhs);
    auto b = infer_dtype(s.rhs);
    if (a && b && *a != *b)
      error(loc, fmt::format("mixed element types {} and {}", to_string(*a), to_string(*b)));
    const DType dt = a ? *a : (b ? *b : DType::F32);
    TExit e;
    e.lhs = type_expr(s.lhs, dt);
    e.rhs = type_expr(s.rhs, dt);
    e.cmp = s.cmp;
    e.loop = loops_.back().id;
    if (e.lhs.placement != Placement::Controller || e.rhs.placement != Placement::Controller)
      error(loc, "exit_if compares controller values (gs, ga elements, loop elements, literals)");
    exits_seen_.back() = true;
    out.node = std::move(e);
    return true;
  }

  bool type_stmt(const ShiftStmt& s, SourceLoc loc, TStmt& out) {
    Operand dst = resolve_worker(s.dst, false, "shift() destination");
    Operand src = resolve_worker(s.src, true, "shift() source");
    if (dst.slice.mem.dynamic() || src.slice.mem.dynamic())
      error(loc, "shift() does not accept a dynamic stop");
    if (dst.dtype != src.dtype) error(loc, "shift() operands differ in element type");
    if (dst.slice.region != src.slice.region || dst.slice.mem.length != src.slice.mem.length)
      error(loc, fmt::format("shape mismatch: destination {} vs source {}", shape_str(dst.slice),
                             shape_str(src.slice)));
    out.node = TShift{std::move(dst), std::move(src), s.axis, s.offset};
    return true;
  }

  bool type_stmt(const PutStmt& s, SourceLoc loc, TStmt& out) {
    Operand dst = resolve_worker(s.dst, true, "put() destination");
    Operand idx = resolve_worker(s.index, true, "put() index");
    Operand src = resolve_worker(s.src, true, "put() source");
    if (dst.slice.mem.dynamic() || idx.slice.mem.dynamic() || src.slice.mem.dynamic())
      error(loc, "put() does not accept a dynamic stop");
    if (idx.dtype != DType::I16) error(s.index.loc, "put() index must be i16");
    if (dst.dtype != src.dtype) error(loc, "put() source and destination differ in element type");
    if (idx.slice.region != dst.slice.region || src.slice.region != dst.slice.region)
      error(loc, "put() operands must share one PE region");
    if (idx.slice.mem.length != src.slice.mem.length)
      error(loc, fmt::format("put() index length {} differs from source length {}",
                             idx.slice.mem.length, src.slice.mem.length));
    out.node = TPut{std::move(dst), std::move(idx), std::move(src), s.accumulate};
    return true;
  }

  void mark_written(int var) {
    defined_.insert(var);
    if (!fully_written_.empty() && !exits_seen_.back()) fully_written_.back().insert(var);
  }

  const SourceProgram& src_;
  GridConfig grid_;
  std::vector<VarInfo> vars_;
  std::map<std::string, std::pair<const HostDef*, int>> hosts_;
  std::map<std::string, std::int64_t> statics_;
  std::vector<DeviceLoopCtx> loops_;
  std::set<int> defined_;
  std::vector<bool> exits_seen_;
  std::vector<std::set<int>> fully_written_;
  int next_loop_ = 0;
};

}  // namespace

AnalyzeResult analyze(const SourceProgram& program, const GridConfig& grid) {
  AnalyzeResult r;
  try {
    Analyzer a(program, grid);
    r.program = a.run();
  } catch (const AnalyzeError& e) {
    r.diagnostics.push_back(e.diag);
  }
  return r;
}

}  // namespace machlite::dsl
