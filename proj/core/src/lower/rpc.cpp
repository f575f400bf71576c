#include <fmt/format.h>

#include "machlite/lower/vm.hpp"

namespace machlite::lower {

using irg::Edge;
using irg::IRGraph;
using irg::Node;
using irg::Op;

std::string_view to_string(Kernel k) {
  switch (k) {
    case Kernel::Copy: return "copy";
    case Kernel::FillSc: return "fill_sc";
    case Kernel::FillImm: return "fill_imm";
    case Kernel::ArAr: return "ar_ar";
    case Kernel::ArSc: return "ar_sc";
    case Kernel::ScAr: return "sc_ar";
    case Kernel::ArImm: return "ar_imm";
    case Kernel::ImmAr: return "imm_ar";
    case Kernel::Gather: return "gather";
    case Kernel::Scatter: return "scatter";
    case Kernel::Shift: return "shift";
    case Kernel::ReduceSum: return "reduce_sum";
    case Kernel::ReduceBroadcast: return "reduce_broadcast";
  }
  return "?";
}

namespace {

int base_arity(const RpcDef& r) {
  switch (r.kernel) {
    case Kernel::Copy:
    case Kernel::FillSc: return 4;
    case Kernel::FillImm:
    case Kernel::ArAr:
    case Kernel::ArSc:
    case Kernel::ScAr: return 5;
    case Kernel::ArImm:
    case Kernel::ImmAr: return 6;
    case Kernel::Gather: return r.fused ? 7 : 6;
    case Kernel::Scatter: return 6;
    case Kernel::Shift: return 5;
    case Kernel::ReduceSum: return 4;
    case Kernel::ReduceBroadcast: return 1;
  }
  return 0;
}

RpcDef finish(RpcDef r) {
  r.arity = base_arity(r) + (r.dyn ? 2 : 0);
  r.name = rpc_name(r);
  return r;
}

enum class Cls { V, S, I };

Cls classify(const IRGraph& g, const Edge& e, const Slice& dest) {
  if (e.literal() || g.mem(e.memloc).placement == Placement::Controller) return Cls::I;
  const bool wide = dest.mem.length > 1 || dest.mem.dynamic();
  if (wide && e.slice.mem.length == 1 && !e.slice.mem.dynamic()) return Cls::S;
  return Cls::V;
}

[[noreturn]] void unsupported(const Node& n, std::string_view what) {
  throw ProgramError(n.loc, fmt::format("node {}: unsupported operand combination for {}", n.id, what));
}

}  // namespace

std::string rpc_name(const RpcDef& r) {
  const std::string dt(to_string(r.dtype));
  std::string base;
  switch (r.kernel) {
    case Kernel::Copy: base = "ar_copy_" + dt; break;
    case Kernel::FillSc: base = "fill_sc_" + dt; break;
    case Kernel::FillImm: base = "fill_imm_" + dt; break;
    case Kernel::ArAr:
    case Kernel::ArSc:
    case Kernel::ScAr:
    case Kernel::ArImm:
    case Kernel::ImmAr: base = fmt::format("{}_{}_{}", to_string(r.kernel), to_string(r.op), dt); break;
    case Kernel::Gather:
      base = fmt::format("gather_{}_{}", r.fused ? to_string(r.op) : "copy", dt);
      break;
    case Kernel::Scatter: base = fmt::format("scatter_{}_{}", r.accumulate ? "add" : "put", dt); break;
    case Kernel::Shift:
      base = fmt::format("shift_{}_{}_{}", r.axis == dsl::ShiftAxis::Row ? "row" : "col",
                         r.offset > 0 ? "p1" : "m1", dt);
      break;
    case Kernel::ReduceSum: base = "ar_reduce_sum_" + dt; break;
    case Kernel::ReduceBroadcast: base = "special_reduce_broadcast_" + dt; break;
  }
  return r.dyn ? base + "_dyn" : base;
}

std::optional<RpcDef> rpc_from_name(std::string_view name) {
  std::string s(name);
  RpcDef r;
  if (s.size() > 4 && s.compare(s.size() - 4, 4, "_dyn") == 0) {
    r.dyn = true;
    s.resize(s.size() - 4);
  }
  if (s.size() < 4) return std::nullopt;
  const std::string dt = s.substr(s.size() - 3);
  if (dt == "f32") r.dtype = DType::F32;
  else if (dt == "i16") r.dtype = DType::I16;
  else return std::nullopt;
  std::string stem = s.substr(0, s.size() - 4);
  auto parse_op = [&](std::string_view o) -> std::optional<BinOp> {
    for (BinOp b : {BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div})
      if (to_string(b) == o) return b;
    return std::nullopt;
  };
  auto starts = [&](std::string_view p) { return stem.rfind(p, 0) == 0; };
  if (stem == "ar_copy") r.kernel = Kernel::Copy;
  else if (stem == "fill_sc") r.kernel = Kernel::FillSc;
  else if (stem == "fill_imm") r.kernel = Kernel::FillImm;
  else if (stem == "ar_reduce_sum") r.kernel = Kernel::ReduceSum;
  else if (stem == "special_reduce_broadcast") r.kernel = Kernel::ReduceBroadcast;
  else if (starts("gather_")) {
    r.kernel = Kernel::Gather;
    const std::string o = stem.substr(7);
    if (o != "copy") {
      auto op = parse_op(o);
      if (!op) return std::nullopt;
      r.fused = true;
      r.op = *op;
    }
  } else if (starts("scatter_")) {
    r.kernel = Kernel::Scatter;
    const std::string o = stem.substr(8);
    if (o == "add") r.accumulate = true;
    else if (o != "put") return std::nullopt;
  } else if (starts("shift_")) {
    r.kernel = Kernel::Shift;
    const std::string o = stem.substr(6);
    if (o == "col_p1") { r.axis = dsl::ShiftAxis::Col; r.offset = 1; }
    else if (o == "col_m1") { r.axis = dsl::ShiftAxis::Col; r.offset = -1; }
    else if (o == "row_p1") { r.axis = dsl::ShiftAxis::Row; r.offset = 1; }
    else if (o == "row_m1") { r.axis = dsl::ShiftAxis::Row; r.offset = -1; }
    else return std::nullopt;
  } else {
    bool found = false;
    for (Kernel k : {Kernel::ArAr, Kernel::ArSc, Kernel::ScAr, Kernel::ArImm, Kernel::ImmAr}) {
      const std::string p = std::string(to_string(k)) + "_";
      if (!starts(p)) continue;
      auto op = parse_op(stem.substr(p.size()));
      if (!op) return std::nullopt;
      r.kernel = k;
      r.op = *op;
      found = true;
      break;
    }
    if (!found) return std::nullopt;
  }
  r = finish(r);
  if (r.name != name) return std::nullopt;
  return r;
}

RpcDef signature(const IRGraph& g, const Node& n) {
  RpcDef r;
  r.dtype = n.dtype;
  r.dyn = n.dest.mem.dynamic();
  switch (n.op) {
    case Op::Copy:
      switch (classify(g, n.in[0], n.dest)) {
        case Cls::V: r.kernel = Kernel::Copy; break;
        case Cls::S: r.kernel = Kernel::FillSc; break;
        case Cls::I: r.kernel = Kernel::FillImm; break;
      }
      break;
    case Op::Binary: {
      r.op = n.binop;
      const Cls a = classify(g, n.in[0], n.dest), b = classify(g, n.in[1], n.dest);
      if (a == Cls::V && b == Cls::V) r.kernel = Kernel::ArAr;
      else if (a == Cls::V && b == Cls::S) r.kernel = Kernel::ArSc;
      else if (a == Cls::S && b == Cls::V) r.kernel = Kernel::ScAr;
      else if (a == Cls::V && b == Cls::I) r.kernel = Kernel::ArImm;
      else if (a == Cls::I && b == Cls::V) r.kernel = Kernel::ImmAr;
      else unsupported(n, to_string(n.binop));
      break;
    }
    case Op::Gather:
      r.kernel = Kernel::Gather;
      r.fused = n.fused;
      if (n.fused) {
        r.op = n.binop;
        if (classify(g, n.in[2], n.dest) != Cls::V) unsupported(n, "gather");
      }
      break;
    case Op::Scatter:
      r.kernel = Kernel::Scatter;
      r.accumulate = n.accumulate;
      break;
    case Op::Shift:
      r.kernel = Kernel::Shift;
      r.axis = n.axis;
      r.offset = n.offset;
      break;
    case Op::Reduce: r.kernel = Kernel::ReduceSum; break;
    default: throw InternalError(fmt::format("node {} ({}) has no worker kernel", n.id, irg::to_string(n.op)));
  }
  return finish(r);
}

int RpcTable::find(std::string_view name) const {
  for (const auto& r : rpcs)
    if (r.name == name) return r.id;
  return -1;
}

RpcTable build_rpc_table(const IRGraph& g, int task_table_size) {
  RpcTable t;
  auto add = [&](RpcDef r) {
    if (t.find(r.name) >= 0) return;
    r.id = static_cast<int>(t.rpcs.size());
    t.rpcs.push_back(std::move(r));
  };
  irg::ordered_walk(g, [&](const Node& n, int) {
    if (n.placement != Placement::Worker || n.op == Op::TransferExport || n.op == Op::TransferImport ||
        n.op == Op::Loop)
      return;
    add(signature(g, n));
    if (n.op == Op::Reduce && g.mem(n.result).placement == Placement::Worker) {
      RpcDef b;
      b.kernel = Kernel::ReduceBroadcast;
      b.dtype = n.dtype;
      add(finish(b));
    }
  });
  const int slots = std::max(2, task_table_size);
  if (static_cast<int>(t.rpcs.size()) > slots)
    for (const auto& r : t.rpcs) {
      const bool direct = r.id < slots - 1;
      t.virtual_tasks.push_back({r.id, direct ? r.id : slots - 1, direct ? 0 : r.id - (slots - 1)});
    }
  return t;
}

}  // namespace machlite::lower
