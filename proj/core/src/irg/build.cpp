#include <fmt/format.h>

#include <algorithm>
#include <map>
#include <set>

#include "machlite/irg/irg.hpp"

namespace machlite::irg {

using dsl::ILLoop;
using dsl::ILProgram;
using dsl::ILStmt;
using dsl::Operand;
using dsl::TExpr;

namespace {

int round_even(int words) { return std::max(2, (words + 1) / 2 * 2); }

PeRegion controller_region() { return {0, 0, 1, 0, 0, 1}; }

class Builder {
 public:
  explicit Builder(const ILProgram& il) : il_(il) {
    g_.grid = il.grid;
    for (std::size_t i = 0; i < il.vars.size(); ++i) add_var(static_cast<int>(i));
  }

  IRGraph run() {
    scopes_.push_back({&g_.root, {}, -1, {}});
    for (const auto& s : il_.body) stmt(s);
    scopes_.pop_back();
    g_.max_id = next_id_ - 1;
    return std::move(g_);
  }

 private:
  struct Scope {
    Graph* graph;
    std::map<int, int> last_def;  // memloc -> producing node id
    int loop_node;
    std::set<int> written;
  };

  struct LoopInfo {
    int node = 0;
    int ga = -1;
    int iter = -1;
    int load_node = 0;
    int extent = 0;
  };

  // ---------------------------------------------------------------- memlocs
  void add_var(int vi) {
    const auto& v = il_.vars[static_cast<std::size_t>(vi)];
    MemLoc m;
    m.id = static_cast<int>(g_.memlocs.size());
    m.name = v.info.name;
    m.kind = v.info.output ? MemKind::Output : MemKind::Persistent;
    m.role = MemRole::Variable;
    m.placement = placement_of(v.info.kind);
    m.dtype = v.info.dtype;
    m.oods = v.info.kind;
    m.shape = v.info.shape;
    m.elements = v.info.elements();
    m.size_words = round_even(m.elements * words_per_element(m.dtype));
    m.initialized = v.initialized;
    m.var = vi;
    m.init = v.data;
    var_mem_.push_back(m.id);
    g_.memlocs.push_back(std::move(m));
  }

  int add_temp(Placement p, DType dt, int elements) {
    MemLoc m;
    m.id = static_cast<int>(g_.memlocs.size());
    m.name = fmt::format("t{}", ++temps_);
    m.kind = MemKind::Temporary;
    m.role = MemRole::Temp;
    m.placement = p;
    m.dtype = dt;
    m.oods = p == Placement::Controller ? OodsKind::GS : OodsKind::LA;
    if (p == Placement::Worker)
      m.shape = {il_.grid.width, il_.grid.height, elements};
    m.elements = elements;
    m.size_words = round_even(elements * words_per_element(dt));
    g_.memlocs.push_back(std::move(m));
    return g_.memlocs.back().id;
  }

  int mask_for(const std::vector<std::uint8_t>& bits, const PeRegion& r) {
    auto it = masks_.find(bits);
    if (it != masks_.end()) return it->second;
    MemLoc m;
    m.id = static_cast<int>(g_.memlocs.size());
    m.name = fmt::format("mask{}", masks_.size());
    m.kind = MemKind::Persistent;
    m.role = MemRole::Mask;
    m.placement = Placement::Worker;
    m.dtype = DType::I16;
    m.oods = OodsKind::LS;
    m.shape = {il_.grid.width, il_.grid.height};
    m.elements = 1;
    m.size_words = 2;
    m.initialized = true;
    m.mask_region = r;
    m.mask_bits = bits;
    for (auto b : bits) m.init.push_back(Scalar::i16(b));
    g_.memlocs.push_back(std::move(m));
    masks_[bits] = g_.memlocs.back().id;
    return g_.memlocs.back().id;
  }

  int mask_for(const PeRegion& r) {
    const int w = il_.grid.width, h = il_.grid.height;
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(w * h));
    for (int x = 0; x < w; ++x)
      for (int y = 0; y < h; ++y) bits[static_cast<std::size_t>(x * h + y)] = r.contains(x, y);
    return mask_for(bits, r);
  }

  // Shift masks: PEs in r whose neighbour in the given direction is also in r.
  int neighbour_mask(const PeRegion& r, int dx, int dy) {
    const int w = il_.grid.width, h = il_.grid.height;
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(w * h));
    for (int x = 0; x < w; ++x)
      for (int y = 0; y < h; ++y)
        bits[static_cast<std::size_t>(x * h + y)] = r.contains(x, y) && r.contains(x + dx, y + dy);
    return mask_for(bits, r);
  }

  // ---------------------------------------------------------------- nodes
  Scope& scope() { return scopes_.back(); }

  int last_def(int mem) {
    auto& ld = scope().last_def;
    auto it = ld.find(mem);
    return it == ld.end() ? 0 : it->second;
  }

  Node& emit(Node n) {
    n.id = next_id_++;
    if (n.result >= 0) {
      scope().last_def[n.result] = n.id;
      if (g_.memlocs[static_cast<std::size_t>(n.result)].role == MemRole::Variable)
        scope().written.insert(n.result);
    }
    scope().graph->nodes.push_back(std::move(n));
    return scope().graph->nodes.back();
  }

  MemSpan map_span(MemSpan m) const {
    if (m.dynamic()) m.dyn_var = var_mem_[static_cast<std::size_t>(m.dyn_var)];
    return m;
  }

  Slice controller_slice(int element = 0) const { return {controller_region(), {element, 1}}; }

  Edge mem_edge(int mem, Slice s) {
    Edge e;
    e.memloc = mem;
    e.src = last_def(mem);
    e.slice = s;
    return e;
  }

  Edge leaf_edge(const Operand& op, const PeRegion& ctx) {
    switch (op.kind) {
      case Operand::Kind::Literal: {
        Edge e;
        e.memloc = -1;
        e.imm = op.literal;
        e.slice = controller_slice();
        return e;
      }
      case Operand::Kind::Iterator: {
        const LoopInfo& li = loops_.at(op.loop);
        Edge e;
        e.memloc = li.iter;
        e.src = li.load_node;
        e.slice = controller_slice();
        return e;
      }
      case Operand::Kind::GaAtIter: {
        const LoopInfo& li = loops_.at(op.loop);
        const int ga = var_mem_[static_cast<std::size_t>(op.var)];
        const int t = add_temp(Placement::Controller, op.dtype, 1);
        Node n;
        n.op = Op::LoadGA;
        n.placement = Placement::Controller;
        n.dtype = op.dtype;
        n.result = t;
        n.dest = controller_slice();
        n.loop = li.node;
        n.ga = ga;
        n.in.push_back(mem_edge(ga, {controller_region(), {0, mem(ga).elements}}));
        const int id = emit(std::move(n)).id;
        Edge e;
        e.memloc = t;
        e.src = id;
        e.slice = controller_slice();
        return e;
      }
      case Operand::Kind::Var: break;
    }
    const int m = var_mem_[static_cast<std::size_t>(op.var)];
    if (mem(m).placement == Placement::Controller)
      return mem_edge(m, {controller_region(), {op.slice.mem.start, 1}});
    if (op.adapts) return mem_edge(m, {ctx, {0, 1}});
    return mem_edge(m, {op.slice.region, map_span(op.slice.mem)});
  }

  const MemLoc& mem(int id) const { return g_.memlocs[static_cast<std::size_t>(id)]; }

  // Edge for a subexpression; interior nodes get a temp.
  Edge operand(const TExpr& e, const PeRegion& ctx) {
    if (e.kind == TExpr::Kind::Leaf) return leaf_edge(e.leaf, ctx);
    if (e.placement == Placement::Controller) {
      const int t = add_temp(Placement::Controller, e.dtype, 1);
      const int id = compute(e, t, controller_slice());
      Edge out;
      out.memloc = t;
      out.src = id;
      out.slice = controller_slice();
      return out;
    }
    Slice dest{ctx, {0, 1}};
    int elements = 1;
    if (e.has_vector) {
      dest.mem = map_span(e.shape.mem);
      if (dest.mem.dynamic()) {
        elements = dest.mem.dyn_extent;
      } else {
        dest.mem.start = 0;
        elements = dest.mem.length;
      }
    }
    const int t = add_temp(Placement::Worker, e.dtype, elements);
    const int id = compute(e, t, dest);
    Edge out;
    out.memloc = t;
    out.src = id;
    out.slice = dest;
    return out;
  }

  static bool fusable(const TExpr& e) {
    if (e.kind != TExpr::Kind::Binary || e.op == BinOp::Div) return false;
    const TExpr& a = e.args[0];
    const TExpr& b = e.args[1];
    return a.kind == TExpr::Kind::Take && b.kind == TExpr::Kind::Leaf &&
           b.leaf.kind == Operand::Kind::Var && b.has_vector && b.shape == a.shape;
  }

  // Emits the node computing `e` (a Binary or Take) into `result` over `dest`.
  int compute(const TExpr& e, int result, Slice dest) {
    Node n;
    n.dtype = e.dtype;
    n.result = result;
    n.dest = dest;
    n.loc = e.loc;
    n.placement = e.placement;
    const PeRegion& ctx = dest.region;
    if (e.kind == TExpr::Kind::Take || fusable(e)) {
      const TExpr& take = e.kind == TExpr::Kind::Take ? e : e.args[0];
      n.op = Op::Gather;
      n.placement = Placement::Worker;
      n.in.push_back(leaf_edge(take.args[0].leaf, ctx));
      n.in.push_back(leaf_edge(take.args[1].leaf, ctx));
      if (e.kind == TExpr::Kind::Binary) {
        n.fused = true;
        n.binop = e.op;
        n.in.push_back(leaf_edge(e.args[1].leaf, ctx));
      }
    } else {
      n.op = Op::Binary;
      n.binop = e.op;
      n.in.push_back(operand(e.args[0], ctx));
      n.in.push_back(operand(e.args[1], ctx));
    }
    for (std::size_t i = 0; i < n.in.size(); ++i) n.in[i].arg = static_cast<int>(i);
    if (n.placement == Placement::Worker) n.masks = {mask_for(ctx)};
    return emit(std::move(n)).id;
  }

  int copy(int result, Slice dest, Edge src, DType dt, SourceLoc loc) {
    Node n;
    n.op = Op::Copy;
    n.dtype = dt;
    n.result = result;
    n.dest = dest;
    n.loc = loc;
    n.placement = mem(result).placement;
    n.in.push_back(std::move(src));
    if (n.placement == Placement::Worker) n.masks = {mask_for(dest.region)};
    return emit(std::move(n)).id;
  }

  Slice dst_slice(const Operand& dst) const {
    const int m = var_mem_[static_cast<std::size_t>(dst.var)];
    if (mem(m).placement == Placement::Controller) return controller_slice();
    Slice s = dst.slice;
    s.mem = map_span(s.mem);
    return s;
  }

  // ---------------------------------------------------------------- stmts
  void stmt(const ILStmt& s) {
    std::visit([&](const auto& n) { this->on(n, s.loc); }, s.node);
  }

  void on(const dsl::TAssign& a, SourceLoc loc) {
    const int dm = var_mem_[static_cast<std::size_t>(a.dst.var)];
    const Slice dest = dst_slice(a.dst);
    const TExpr& rhs = a.rhs;
    if (rhs.kind == TExpr::Kind::Leaf) {
      copy(dm, dest, leaf_edge(rhs.leaf, dest.region), rhs.dtype, loc);
      return;
    }
    if (mem(dm).placement == Placement::Controller) {
      compute(rhs, dm, dest);
      return;
    }
    if (rhs.placement == Placement::Controller) {
      copy(dm, dest, operand(rhs, dest.region), rhs.dtype, loc);
      return;
    }
    const bool wide = dest.mem.length > 1 || dest.mem.dynamic();
    if (wide && !rhs.has_vector) {
      copy(dm, dest, operand(rhs, dest.region), rhs.dtype, loc);
      return;
    }
    compute(rhs, dm, dest);
  }

  void on(const dsl::TReduce& r, SourceLoc loc) {
    const int tm = var_mem_[static_cast<std::size_t>(r.target)];
    const int sm = var_mem_[static_cast<std::size_t>(r.src.var)];
    Node n;
    n.op = Op::Reduce;
    n.placement = Placement::Worker;
    n.dtype = r.src.dtype;
    n.result = tm;
    n.dest = mem(tm).placement == Placement::Controller
                 ? controller_slice()
                 : Slice{PeRegion::full(il_.grid.width, il_.grid.height), {0, 1}};
    n.loc = loc;
    const PeRegion region =
        r.src.adapts ? il_.vars[static_cast<std::size_t>(r.src.var)].info.declared_region(il_.grid)
                     : r.src.slice.region;
    if (r.src.adapts)
      n.in.push_back(mem_edge(sm, {region, {0, 1}}));
    else
      n.in.push_back(leaf_edge(r.src, region));
    n.masks = {mask_for(region)};
    emit(std::move(n));
  }

  void on(const dsl::TExit& x, SourceLoc loc) {
    const PeRegion none = controller_region();
    Node n;
    n.op = Op::Exit;
    n.placement = Placement::Controller;
    n.dtype = x.lhs.dtype;
    n.cmp = x.cmp;
    n.loc = loc;
    n.in.push_back(operand(x.lhs, none));
    n.in.push_back(operand(x.rhs, none));
    n.in[1].arg = 1;
    n.loop = loops_.at(x.loop).node;
    n.dest = controller_slice();
    emit(std::move(n));
  }

  void on(const dsl::TShift& s, SourceLoc loc) {
    const int dm = var_mem_[static_cast<std::size_t>(s.dst.var)];
    const Slice dest = dst_slice(s.dst);
    Edge src = leaf_edge(s.src, dest.region);
    if (s.src.var == s.dst.var) {
      // send and receive buffers must not alias
      const int t = add_temp(Placement::Worker, s.src.dtype, src.slice.mem.length);
      const Slice ts{dest.region, {0, src.slice.mem.length}};
      const int id = copy(t, ts, src, s.src.dtype, loc);
      src = Edge{id, 0, t, ts, {}};
    }
    Node n;
    n.op = Op::Shift;
    n.placement = Placement::Worker;
    n.dtype = s.dst.dtype;
    n.result = dm;
    n.dest = dest;
    n.axis = s.axis;
    n.offset = s.offset;
    n.loc = loc;
    const int dx = s.axis == dsl::ShiftAxis::Col ? s.offset : 0;
    const int dy = s.axis == dsl::ShiftAxis::Row ? s.offset : 0;
    n.in.push_back(src);
    Edge prior = mem_edge(dm, dest);
    prior.arg = 1;
    n.in.push_back(prior);
    n.masks = {neighbour_mask(dest.region, dx, dy), neighbour_mask(dest.region, -dx, -dy)};
    emit(std::move(n));
  }

  void on(const dsl::TPut& p, SourceLoc loc) {
    const int dm = var_mem_[static_cast<std::size_t>(p.dst.var)];
    const Slice dest = dst_slice(p.dst);
    Node n;
    n.op = Op::Scatter;
    n.placement = Placement::Worker;
    n.dtype = p.dst.dtype;
    n.result = dm;
    n.dest = dest;
    n.accumulate = p.accumulate;
    n.loc = loc;
    n.in.push_back(leaf_edge(p.src, dest.region));
    n.in.push_back(leaf_edge(p.index, dest.region));
    n.in.push_back(mem_edge(dm, dest));
    for (std::size_t i = 0; i < n.in.size(); ++i) n.in[i].arg = static_cast<int>(i);
    n.masks = {mask_for(dest.region)};
    emit(std::move(n));
  }

  // Variables referenced anywhere in a loop body, and whether the loop
  // element is read.
  void scan(const std::vector<ILStmt>& body, int loop_id, std::set<int>& vars, bool& uses_iter) const {
    auto op = [&](const Operand& o) {
      if (o.kind == Operand::Kind::Var || o.kind == Operand::Kind::GaAtIter) vars.insert(var_mem_[o.var]);
      if (o.kind == Operand::Kind::Iterator && o.loop == loop_id) uses_iter = true;
      if (o.kind == Operand::Kind::Var && o.slice.mem.dynamic()) vars.insert(var_mem_[o.slice.mem.dyn_var]);
    };
    std::function<void(const TExpr&)> expr = [&](const TExpr& e) {
      if (e.kind == TExpr::Kind::Leaf) op(e.leaf);
      for (const auto& a : e.args) expr(a);
    };
    for (const auto& s : body) {
      std::visit(
          [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, dsl::TAssign>) {
              op(n.dst);
              expr(n.rhs);
            } else if constexpr (std::is_same_v<T, ILLoop>) {
              vars.insert(var_mem_[n.ga_var]);
              scan(n.body, loop_id, vars, uses_iter);
            } else if constexpr (std::is_same_v<T, dsl::TReduce>) {
              op(n.src);
              vars.insert(var_mem_[n.target]);
            } else if constexpr (std::is_same_v<T, dsl::TExit>) {
              expr(n.lhs);
              expr(n.rhs);
            } else if constexpr (std::is_same_v<T, dsl::TShift>) {
              op(n.dst);
              op(n.src);
            } else if constexpr (std::is_same_v<T, dsl::TPut>) {
              op(n.dst);
              op(n.index);
              op(n.src);
            }
          },
          s.node);
    }
  }

  Slice full_slice(int m) const {
    const MemLoc& ml = mem(m);
    if (ml.placement == Placement::Controller) return {controller_region(), {0, ml.elements}};
    const auto& vi = il_.vars[static_cast<std::size_t>(ml.var)].info;
    return {vi.declared_region(il_.grid), {0, ml.elements}};
  }

  void on(const ILLoop& l, SourceLoc loc) {
    std::set<int> vars;
    bool uses_iter = false;
    const int ga = var_mem_[static_cast<std::size_t>(l.ga_var)];
    vars.insert(ga);
    scan(l.body, l.id, vars, uses_iter);

    std::vector<std::pair<int, int>> exports;  // memloc, export node id
    for (int m : vars) {
      Node x;
      x.op = Op::TransferExport;
      x.placement = mem(m).placement;
      x.dtype = mem(m).dtype;
      x.dest = full_slice(m);
      x.loc = loc;
      x.in.push_back(mem_edge(m, full_slice(m)));
      exports.emplace_back(m, emit(std::move(x)).id);
    }

    LoopInfo li;
    li.ga = ga;
    li.extent = mem(ga).elements;
    Node ln;
    ln.op = Op::Loop;
    ln.placement = Placement::Controller;
    ln.dtype = mem(ga).dtype;
    ln.ga = ga;
    ln.start = l.start;
    ln.stop = l.stop;
    ln.step = l.step;
    ln.loc = loc;
    ln.dest = controller_slice();
    if (uses_iter) ln.iter = li.iter = add_temp(Placement::Controller, mem(ga).dtype, 1);
    Graph* parent = scope().graph;
    const int loop_id = emit(std::move(ln)).id;
    parent->nodes.back().loop = loop_id;
    li.node = loop_id;

    Graph& sub = parent->subgraphs[loop_id];
    scopes_.push_back({&sub, {}, loop_id, {}});
    for (auto [m, xid] : exports) {
      Node im;
      im.op = Op::TransferImport;
      im.placement = mem(m).placement;
      im.dtype = mem(m).dtype;
      im.dest = full_slice(m);
      im.loc = loc;
      Edge e;
      e.src = xid;
      e.memloc = m;
      e.slice = full_slice(m);
      im.in.push_back(e);
      const int iid = emit(std::move(im)).id;
      scope().last_def[m] = iid;
      parent->transfers.push_back({m, xid, iid, loop_id});
    }
    if (uses_iter) {
      Node ld;
      ld.op = Op::LoadGA;
      ld.placement = Placement::Controller;
      ld.dtype = mem(ga).dtype;
      ld.result = li.iter;
      ld.dest = controller_slice();
      ld.loop = loop_id;
      ld.ga = ga;
      ld.loc = loc;
      ld.in.push_back(mem_edge(ga, {controller_region(), {0, li.extent}}));
      li.load_node = emit(std::move(ld)).id;
    }
    loops_[l.id] = li;
    for (const auto& s : l.body) stmt(s);
    loops_.erase(l.id);
    const std::set<int> written = scope().written;
    scopes_.pop_back();
    for (int m : written) {
      scope().last_def[m] = loop_id;
      scope().written.insert(m);
    }
  }

  const ILProgram& il_;
  IRGraph g_;
  std::vector<int> var_mem_;
  std::map<std::vector<std::uint8_t>, int> masks_;
  std::vector<Scope> scopes_;
  std::map<int, LoopInfo> loops_;  // IL loop id -> info, for loops being built
  int next_id_ = 1;
  int temps_ = 0;
};

}  // namespace

IRGraph build(const ILProgram& il) { return Builder(il).run(); }

}  // namespace machlite::irg
