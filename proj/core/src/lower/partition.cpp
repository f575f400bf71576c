#include <fmt/format.h>

#include <numeric>

#include "machlite/lower/vm.hpp"
#include "machlite/ref/interp.hpp"

namespace machlite::lower {

using irg::Edge;
using irg::Graph;
using irg::IRGraph;
using irg::MemRole;
using irg::Node;
using irg::Op;

std::string_view to_string(ExecOp op) {
  switch (op) {
    case ExecOp::IterInit: return "iter_init";
    case ExecOp::IterTest: return "iter_test";
    case ExecOp::IterNext: return "iter_next";
    case ExecOp::LoadGA: return "load_ga";
    case ExecOp::GsOp: return "gs_op";
    case ExecOp::CmpBranch: return "cmp_branch";
    case ExecOp::Splice: return "splice";
    case ExecOp::Broadcast: return "broadcast";
    case ExecOp::RecvReduced: return "recv_reduced";
    case ExecOp::Halt: return "halt";
  }
  return "?";
}

namespace {

std::string_view gs_name(GsOp g) {
  switch (g) {
    case GsOp::Copy: return "copy";
    case GsOp::Add: return "add";
    case GsOp::Sub: return "sub";
    case GsOp::Mul: return "mul";
    case GsOp::Div: return "div";
  }
  return "?";
}

std::string arg_text(const ExecArg& a) {
  return a.imm ? fmt::format("#{}:{:#x}", a.value.dtype == DType::F32 ? "f32" : "i16", a.value.bits)
               : fmt::format("@{}", a.addr);
}

}  // namespace

std::string format_instr(const ExecInstr& i) {
  const auto dt = to_string(i.dtype);
  switch (i.op) {
    case ExecOp::IterInit: return fmt::format("iter_init loop={} a={}", i.loop, i.a);
    case ExecOp::IterTest: return fmt::format("iter_test loop={} a={} target={}", i.loop, i.a, i.target);
    case ExecOp::IterNext: return fmt::format("iter_next loop={} a={} target={}", i.loop, i.a, i.target);
    case ExecOp::LoadGA:
      return fmt::format("load_ga dtype={} loop={} dst={} src={}", dt, i.loop, i.dst, i.src);
    case ExecOp::GsOp:
      return i.gs == GsOp::Copy
                 ? fmt::format("gs_op gs={} dtype={} dst={} x={}", gs_name(i.gs), dt, i.dst, arg_text(i.x))
                 : fmt::format("gs_op gs={} dtype={} dst={} x={} y={}", gs_name(i.gs), dt, i.dst,
                               arg_text(i.x), arg_text(i.y));
    case ExecOp::CmpBranch:
      return fmt::format("cmp_branch cmp={} dtype={} loop={} x={} y={} target={}", to_string(i.cmp), dt,
                         i.loop, arg_text(i.x), arg_text(i.y), i.target);
    case ExecOp::Splice:
      return fmt::format("splice a={} b={} src={} half={}", i.a, i.b, i.src, i.half);
    case ExecOp::Broadcast: return fmt::format("broadcast a={}", i.a);
    case ExecOp::RecvReduced: return fmt::format("recv_reduced dtype={} dst={} a={}", dt, i.dst, i.a);
    case ExecOp::Halt: return "halt";
  }
  return "?";
}

namespace {

class Partitioner {
 public:
  Partitioner(const IRGraph& g, const mem::SymbolTable& st, const RpcTable& rpcs)
      : g_(g), st_(st), rpcs_(rpcs) {}

  Partition run() {
    walk(g_.root);
    flush();
    ExecInstr h;
    h.op = ExecOp::Halt;
    out_.exec.push_back(h);
    return std::move(out_);
  }

 private:
  int wpe(int m) const { return words_per_element(g_.mem(m).dtype); }
  int addr(int m, int elem = 0) const { return st_.at(m) + elem * wpe(m); }
  int addr(const Edge& e) const { return addr(e.memloc, e.slice.mem.start); }

  bool controller_valued(const Node& n) const {
    for (const auto& e : n.in)
      if (!e.literal() && g_.mem(e.memloc).placement == Placement::Controller) return true;
    return false;
  }

  ExecArg exec_arg(const Edge& e) const {
    ExecArg a;
    if (e.literal()) {
      a.imm = true;
      a.value = e.imm;
    } else {
      a.addr = addr(e);
    }
    return a;
  }

  int pc() const { return static_cast<int>(out_.exec.size()); }
  ExecInstr& emit(ExecInstr i) {
    out_.exec.push_back(i);
    return out_.exec.back();
  }

  void flush() {
    if (pending_.ctrl.empty()) return;
    pending_.index = static_cast<int>(out_.sections.size());
    ExecInstr b;
    b.op = ExecOp::Broadcast;
    b.a = pending_.index;
    for (const auto& sp : pending_.splices) {
      ExecInstr s;
      s.op = ExecOp::Splice;
      s.a = pending_.index;
      s.b = sp.position;
      s.src = sp.address;
      s.half = sp.half;
      emit(s);
    }
    out_.sections.push_back(std::move(pending_));
    pending_ = {};
    emit(b);
  }

  void push_word(int w) { pending_.args.push_back(static_cast<std::uint16_t>(w)); }

  void push_imm(const Edge& e) {
    if (e.literal()) {
      push_word(static_cast<int>(e.imm.bits & 0xffff));
      push_word(e.imm.dtype == DType::F32 ? static_cast<int>(e.imm.bits >> 16) : 0);
      return;
    }
    const int a = addr(e);
    const int pos = static_cast<int>(pending_.args.size());
    pending_.splices.push_back({pos, a, 0});
    if (g_.mem(e.memloc).dtype == DType::F32) pending_.splices.push_back({pos + 1, a, 1});
    push_word(0);
    push_word(0);
  }

  void push_len(const Node& n) {
    const MemSpan& s = n.dest.mem;
    if (!s.dynamic()) {
      push_word(s.length);
      return;
    }
    push_word(s.start);
    push_word(addr(s.dyn_var));
    push_word(s.dyn_extent);
  }

  void push_rpc(const std::string& name) {
    const int id = rpcs_.find(name);
    if (id < 0) throw InternalError("rpc '" + name + "' missing from the table");
    pending_.ctrl.push_back(id);
  }

  void worker(const Node& n) {
    const RpcDef sig = signature(g_, n);
    const bool splice = controller_valued(n);
    if (splice) flush();
    push_rpc(sig.name);
    pending_.nodes.push_back(n.id);
    const int dst = n.result >= 0 ? addr(n.result, n.dest.mem.start) : 0;
    const int mask = n.masks.empty() ? 0 : addr(n.masks[0]);
    switch (sig.kernel) {
      case Kernel::Copy:
      case Kernel::FillSc:
        push_word(addr(n.in[0]));
        push_word(dst);
        push_word(mask);
        push_len(n);
        break;
      case Kernel::FillImm:
        push_imm(n.in[0]);
        push_word(dst);
        push_word(mask);
        push_len(n);
        break;
      case Kernel::ArAr:
      case Kernel::ArSc:
      case Kernel::ScAr:
        push_word(addr(n.in[0]));
        push_word(addr(n.in[1]));
        push_word(dst);
        push_word(mask);
        push_len(n);
        break;
      case Kernel::ArImm:
        push_word(addr(n.in[0]));
        push_imm(n.in[1]);
        push_word(dst);
        push_word(mask);
        push_len(n);
        break;
      case Kernel::ImmAr:
        push_imm(n.in[0]);
        push_word(addr(n.in[1]));
        push_word(dst);
        push_word(mask);
        push_len(n);
        break;
      case Kernel::Gather:
        push_word(addr(n.in[0]));
        if (sig.fused) push_word(addr(n.in[2]));
        push_word(addr(n.in[1]));
        push_word(dst);
        push_word(mask);
        push_word(n.dest.mem.length);
        push_word(n.in[0].slice.mem.length);
        break;
      case Kernel::Scatter:
        push_word(addr(n.in[0]));
        push_word(addr(n.in[1]));
        push_word(dst);
        push_word(mask);
        push_word(n.in[1].slice.mem.length);
        push_word(n.dest.mem.length);
        break;
      case Kernel::Shift:
        push_word(addr(n.in[0]));
        push_word(dst);
        push_word(addr(n.masks[0]));
        push_word(addr(n.masks[1]));
        push_word(n.dest.mem.length);
        break;
      case Kernel::ReduceSum: {
        const bool local = g_.mem(n.result).placement == Placement::Worker;
        push_word(local ? 1 : 0);
        push_word(addr(n.in[0]));
        push_word(mask);
        push_word(n.in[0].slice.mem.length);
        if (local) {
          RpcDef b;
          b.kernel = Kernel::ReduceBroadcast;
          b.dtype = n.dtype;
          push_rpc(rpc_name(b));
          push_word(addr(n.result));
        } else {
          flush();
          ExecInstr r;
          r.op = ExecOp::RecvReduced;
          r.dtype = n.dtype;
          r.dst = addr(n.result);
          r.a = 4;
          emit(r);
        }
        break;
      }
      case Kernel::ReduceBroadcast: break;
    }
    if (splice) flush();
  }

  void controller(const Node& n) {
    ExecInstr i;
    i.dtype = n.dtype;
    switch (n.op) {
      case Op::Copy:
        i.op = ExecOp::GsOp;
        i.gs = GsOp::Copy;
        i.dst = addr(n.result, n.dest.mem.start);
        i.x = exec_arg(n.in[0]);
        break;
      case Op::Binary:
        i.op = ExecOp::GsOp;
        i.gs = static_cast<GsOp>(static_cast<int>(n.binop) + 1);
        i.dst = addr(n.result, n.dest.mem.start);
        i.x = exec_arg(n.in[0]);
        i.y = exec_arg(n.in[1]);
        break;
      case Op::LoadGA:
        i.op = ExecOp::LoadGA;
        i.loop = n.loop;
        i.dst = addr(n.result);
        i.src = addr(n.ga);
        break;
      case Op::Exit:
        flush();
        i.op = ExecOp::CmpBranch;
        i.cmp = n.cmp;
        i.loop = n.loop;
        i.x = exec_arg(n.in[0]);
        i.y = exec_arg(n.in[1]);
        exits_[n.loop].push_back(pc());
        break;
      default: throw InternalError(fmt::format("unexpected controller node {}", irg::to_string(n.op)));
    }
    emit(i);
  }

  void loop(const Node& n, const Graph& body) {
    flush();
    ExecInstr init;
    init.op = ExecOp::IterInit;
    init.loop = n.id;
    init.a = n.start;
    emit(init);
    const int head = pc();
    ExecInstr test;
    test.op = ExecOp::IterTest;
    test.loop = n.id;
    test.a = n.stop;
    emit(test);
    walk(body);
    flush();
    ExecInstr next;
    next.op = ExecOp::IterNext;
    next.loop = n.id;
    next.a = n.step;
    next.target = head;
    emit(next);
    const int end = pc();
    out_.exec[static_cast<std::size_t>(head)].target = end;
    for (int at : exits_[n.id]) out_.exec[static_cast<std::size_t>(at)].target = end;
  }

  void walk(const Graph& gr) {
    for (const auto& n : gr.nodes) {
      switch (n.op) {
        case Op::TransferExport:
        case Op::TransferImport: break;
        case Op::Loop: loop(n, gr.subgraphs.at(n.id)); break;
        default:
          if (n.placement == Placement::Worker) worker(n);
          else controller(n);
      }
    }
  }

  const IRGraph& g_;
  const mem::SymbolTable& st_;
  const RpcTable& rpcs_;
  Partition out_;
  Section pending_;
  std::map<int, std::vector<int>> exits_;
};

}  // namespace

Partition partition(const IRGraph& g, const mem::SymbolTable& st, const RpcTable& rpcs) {
  return Partitioner(g, st, rpcs).run();
}

std::pair<int, int> split_range(int n, int parts, int k) {
  const int base = n / parts, extra = n % parts;
  const int begin = k * base + std::min(k, extra);
  return {begin, begin + base + (k < extra ? 1 : 0)};
}

int RespAssignment::words() const {
  int w = 0;
  for (const auto& c : chunks) w += c.words();
  return w;
}

std::vector<RespAssignment> distribute(const std::vector<Section>& sections, int n_resp) {
  std::vector<RespAssignment> out(static_cast<std::size_t>(n_resp));
  for (int k = 0; k < n_resp; ++k) {
    RespAssignment& r = out[static_cast<std::size_t>(k)];
    r.position = k;
    int offset = 0;
    for (const auto& s : sections) {
      Chunk c;
      c.section = s.index;
      std::tie(c.ctrl_begin, c.ctrl_end) = split_range(static_cast<int>(s.ctrl.size()), n_resp, k);
      std::tie(c.args_begin, c.args_end) = split_range(static_cast<int>(s.args.size()), n_resp, k);
      c.offset = offset;
      offset += c.words();
      r.chunks.push_back(c);
    }
  }
  return out;
}

std::vector<MaskEntry> build_masks(const IRGraph& g, const mem::SymbolTable& st) {
  std::vector<MaskEntry> out;
  for (const auto& m : g.memlocs)
    if (m.role == MemRole::Mask && st.address.count(m.id)) out.push_back({m.id, st.at(m.id), m.mask_bits});
  return out;
}

namespace {

void put_scalar(std::vector<std::uint16_t>& w, std::size_t at, const Scalar& s) {
  w[at] = static_cast<std::uint16_t>(s.bits & 0xffff);
  if (s.dtype == DType::F32) w[at + 1] = static_cast<std::uint16_t>(s.bits >> 16);
}

InitBlock init_block(const IRGraph& g, const irg::MemLoc& m, int address) {
  InitBlock b;
  b.space = m.placement;
  b.address = address;
  b.words_per_pe = m.size_words;
  const int wpe = words_per_element(m.dtype);
  const int w = g.grid.width, h = g.grid.height;
  if (m.placement == Placement::Controller) {
    b.words.assign(static_cast<std::size_t>(m.size_words), 0);
    for (int k = 0; k < m.elements; ++k)
      put_scalar(b.words, static_cast<std::size_t>(k * wpe), m.init[static_cast<std::size_t>(k)]);
    return b;
  }
  b.words.assign(static_cast<std::size_t>(w * h * m.size_words), 0);
  auto slot = [&](int pe, int k) { return static_cast<std::size_t>(pe * m.size_words + k * wpe); };
  if (m.role == MemRole::Mask) {
    for (int pe = 0; pe < w * h; ++pe) put_scalar(b.words, slot(pe, 0), m.init[static_cast<std::size_t>(pe)]);
    return b;
  }
  if (m.oods == OodsKind::ULS) {
    for (int pe = 0; pe < w * h; ++pe) put_scalar(b.words, slot(pe, 0), m.init[0]);
    return b;
  }
  const int X = static_cast<int>(m.shape[0]), Y = static_cast<int>(m.shape[1]);
  for (int x = 0; x < X; ++x)
    for (int y = 0; y < Y; ++y)
      for (int k = 0; k < m.elements; ++k)
        put_scalar(b.words, slot(x * h + y, k), m.init[static_cast<std::size_t>((x * Y + y) * m.elements + k)]);
  return b;
}

}  // namespace

VMachineProgram lower(const IRGraph& g, const mem::MemoryMap& map, const mem::SymbolTable& st,
                      const LowerConfig& cfg) {
  VMachineProgram vm;
  vm.field = g.grid;
  vm.config = cfg;
  vm.rpcs = build_rpc_table(g, cfg.task_table_size);
  Partition p = partition(g, st, vm.rpcs);
  vm.sections = std::move(p.sections);
  vm.exec = std::move(p.exec);
  int n = cfg.n_resp;
  for (;;) {
    vm.resp = distribute(vm.sections, n);
    bool fits = true;
    for (const auto& r : vm.resp) fits = fits && r.words() <= cfg.resp_capacity;
    if (fits) break;
    n += 2;
    if (n > 2 * (g.grid.width + cfg.n_resp))
      throw ProgramError(fmt::format("section data does not fit in {} response PEs", n));
  }
  vm.layout = make_layout(g.grid.width, g.grid.height, n, cfg.n_resp);
  vm.masks = build_masks(g, st);
  for (const auto& m : g.memlocs)
    if (m.initialized && st.address.count(m.id)) vm.init.push_back(init_block(g, m, st.at(m.id)));
  const std::vector<bool> taint = ref::reduction_taint(g);
  for (const auto& m : g.memlocs) {
    if (m.role != MemRole::Variable) continue;
    OutputVar v;
    v.name = m.name;
    v.kind = m.oods;
    v.dtype = m.dtype;
    v.shape = m.shape;
    v.elements = m.elements;
    v.address = st.address.count(m.id) ? st.at(m.id) : -1;
    v.output = m.is_output();
    v.tainted = taint[static_cast<std::size_t>(m.id)];
    vm.vars.push_back(std::move(v));
  }
  vm.footprint = map.footprint;
  return vm;
}

}  // namespace machlite::lower
