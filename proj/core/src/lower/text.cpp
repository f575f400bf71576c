#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <sstream>

#include "machlite/lower/vm.hpp"

namespace machlite::lower {

namespace {

std::string hex(int v) { return fmt::format("{:#x}", v); }

template <typename T>
std::string join(const std::vector<T>& v) {
  if (v.empty()) return "-";
  return fmt::format("{}", fmt::join(v, ","));
}

std::string arg_pseudo(const ExecArg& a) {
  if (!a.imm) return fmt::format("mem[{}]", hex(a.addr));
  if (a.value.dtype == DType::F32) return fmt::format("{:.9g}", a.value.as_f32());
  return fmt::format("{}", a.value.as_i16());
}

std::string instr_pseudo(const ExecInstr& i) {
  switch (i.op) {
    case ExecOp::IterInit: return fmt::format("fl_{}_enum = {};", i.loop, i.a);
    case ExecOp::IterTest: return fmt::format("if (!(fl_{}_enum < {})) goto L{};", i.loop, i.a, i.target);
    case ExecOp::IterNext: return fmt::format("fl_{}_enum += {}; goto L{};", i.loop, i.a, i.target);
    case ExecOp::LoadGA:
      return fmt::format("mem[{}] = {}[mem[{}] + fl_{}_enum];", hex(i.dst), to_string(i.dtype), hex(i.src), i.loop);
    case ExecOp::GsOp: {
      static const char* ops[] = {"", "+", "-", "*", "/"};
      if (i.gs == GsOp::Copy) return fmt::format("mem[{}] = {};", hex(i.dst), arg_pseudo(i.x));
      return fmt::format("mem[{}] = {} {} {};", hex(i.dst), arg_pseudo(i.x), ops[static_cast<int>(i.gs)],
                         arg_pseudo(i.y));
    }
    case ExecOp::CmpBranch:
      return fmt::format("if ({} {} {}) goto L{};  // exit loop {}", arg_pseudo(i.x), symbol(i.cmp),
                         arg_pseudo(i.y), i.target, i.loop);
    case ExecOp::Splice:
      return fmt::format("send_message(section {} args[{}] <- mem[{}].{});", i.a, i.b, hex(i.src),
                         i.half ? "hi" : "lo");
    case ExecOp::Broadcast: return fmt::format("ctrl_coord <- {};  // send section {} request", i.a, i.a);
    case ExecOp::RecvReduced:
      return fmt::format("mem[{}] = sum(reduction_3[n={}]);", hex(i.dst), i.a);
    case ExecOp::Halt: return "halt;";
  }
  return "";
}

std::string kernel_body(const RpcDef& r) {
  const std::string dt(to_string(r.dtype));
  const std::string len = r.dyn ? "len = max(0, i16[args[n-2]] - args[n-3]) * i16[mask]"
                                : "len = args[n-1] * i16[mask]";
  const std::string op(r.kernel == Kernel::Gather || r.kernel == Kernel::ArAr || r.kernel == Kernel::ArSc ||
                               r.kernel == Kernel::ScAr || r.kernel == Kernel::ArImm ||
                               r.kernel == Kernel::ImmAr
                           ? symbol(r.op)
                           : "");
  std::string out = fmt::format("rpc {}(args_recv[n={}]) {{\n", r.name, r.arity);
  auto line = [&](const std::string& s) { out += "  " + s + "\n"; };
  switch (r.kernel) {
    case Kernel::Copy:
      line("src = args[0]; dst = args[1]; mask = args[2]; " + len + ";");
      line(fmt::format("for i in [0, len) {{ {0}[dst + i] = {0}[src + i]; }}", dt));
      break;
    case Kernel::FillSc:
      line("sc = args[0]; dst = args[1]; mask = args[2]; " + len + ";");
      line(fmt::format("for i in [0, len) {{ {0}[dst + i] = {0}[sc]; }}", dt));
      break;
    case Kernel::FillImm:
      line("imm = args[0] | args[1] << 16; dst = args[2]; mask = args[3]; " + len + ";");
      line(fmt::format("for i in [0, len) {{ {0}[dst + i] = imm; }}", dt));
      break;
    case Kernel::ArAr:
      line("src0 = args[0]; src1 = args[1]; dst = args[2]; mask = args[3]; " + len + ";");
      line(fmt::format("for i in [0, len) {{ {0}[dst + i] = {0}[src0 + i] {1} {0}[src1 + i]; }}", dt, op));
      break;
    case Kernel::ArSc:
      line("src0 = args[0]; sc = args[1]; dst = args[2]; mask = args[3]; " + len + ";");
      line(fmt::format("for i in [0, len) {{ {0}[dst + i] = {0}[src0 + i] {1} {0}[sc]; }}", dt, op));
      break;
    case Kernel::ScAr:
      line("sc = args[0]; src1 = args[1]; dst = args[2]; mask = args[3]; " + len + ";");
      line(fmt::format("for i in [0, len) {{ {0}[dst + i] = {0}[sc] {1} {0}[src1 + i]; }}", dt, op));
      break;
    case Kernel::ArImm:
      line("src0 = args[0]; imm = args[1] | args[2] << 16; dst = args[3]; mask = args[4]; " + len + ";");
      line(fmt::format("for i in [0, len) {{ {0}[dst + i] = {0}[src0 + i] {1} imm; }}", dt, op));
      break;
    case Kernel::ImmAr:
      line("imm = args[0] | args[1] << 16; src1 = args[2]; dst = args[3]; mask = args[4]; " + len + ";");
      line(fmt::format("for i in [0, len) {{ {0}[dst + i] = imm {1} {0}[src1 + i]; }}", dt, op));
      break;
    case Kernel::Gather:
      line(r.fused ? "s0 = args[0]; s1 = args[1]; index = args[2]; dst = args[3]; mask = args[4];"
                   : "s0 = args[0]; index = args[1]; dst = args[2]; mask = args[3];");
      line("len = args[n-2] * i16[mask]; s0_len = args[n-1];");
      line("loopback <- i16[index : len];  // fused through the router loopback");
      if (r.fused)
        line(fmt::format("for i in [0, len) {{ trap_unless(j = loopback, j < s0_len); {0}[dst + i] = {0}[s0 + j] {1} {0}[s1 + i]; }}",
                         dt, op));
      else
        line(fmt::format("for i in [0, len) {{ trap_unless(j = loopback, j < s0_len); {0}[dst + i] = {0}[s0 + j]; }}", dt));
      break;
    case Kernel::Scatter:
      line("src = args[0]; index = args[1]; dst = args[2]; mask = args[3]; len = args[4] * i16[mask]; dst_len = args[5];");
      line(fmt::format("for i in [0, len) {{ trap_unless(j = i16[index + i], j < dst_len); {0}[dst + j] {1}= {0}[src + i]; }}",
                       dt, r.accumulate ? "+" : ""));
      break;
    case Kernel::Shift:
      line("src = args[0]; dst = args[1]; send = i16[args[2]]; recv = i16[args[3]]; len = args[4];");
      line(fmt::format("advance(tx, rx) to state {};", (r.axis == dsl::ShiftAxis::Row ? 1 : 0) + (r.offset > 0 ? 2 : 0)));
      line(fmt::format("parallel {{ if (send) tx <- {0}[src : len]; if (recv) {0}[dst : len] <- rx; }}", dt));
      line("advance(tx, rx);");
      break;
    case Kernel::ReduceSum:
      line("is_local = args[0]; src = args[1]; mask = args[2]; len = args[3] * i16[mask];");
      line(fmt::format("acc = 0; for i in [0, len) {{ acc += {}[src + i]; }}", dt));
      line("reduction_1 <- acc; if (reduction_reset_mask) reduction_1 <- reset; else reduction_1.flip;");
      break;
    case Kernel::ReduceBroadcast:
      line(fmt::format("dst = args[0]; {}[dst] <- reduction_broadcast;", dt));
      break;
  }
  out += "}\n";
  return out;
}

std::string reduction_body(const RpcDef& r) {
  std::string out = fmt::format("rpc {}(args_recv[n={}]) {{\n", r.name, r.arity);
  if (r.kernel != Kernel::ReduceSum) {
    out += "  // arguments drain; no other work on this PE type\n}\n";
    return out;
  }
  out +=
      "  is_local = args[0];\n"
      "  acc <- reduction_1; for i in [0, n_half) { acc += reduction_1; }\n"
      "  if (!is_inner) { reduction_2 <- acc; if (reduction_reset_mask) reduction_2 <- reset; else reduction_2.flip; }\n"
      "  else {\n"
      "    for i in [0, n_w_half) { acc += reduction_2; }\n"
      "    if (!is_local) { reduction_3 <- acc; }  // send to the E-PE for final accumulation\n"
      "    else if (!is_final) { reduction_4 <- acc; }\n"
      "    else { for i in [0, 3) { acc += reduction_4; } reduction_broadcast <- acc; }\n"
      "  }\n"
      "}\n";
  return out;
}

std::string emit_layout(const VMachineProgram& vm) {
  const FabricLayout& l = vm.layout;
  std::string out;
  out += "// fabric layout\n";
  out += fmt::format(".grid width={} height={} field_w={} field_h={} n_resp={} n_resp_base={}\n", l.width,
                     l.height, l.field_w, l.field_h, l.n_resp, l.n_resp_base);
  out += fmt::format("region workers_upper   x=[{}, {}) y=[0, {})\n", l.field_x0, l.field_x0 + l.field_w,
                     l.field_h / 2);
  out += fmt::format("region reduction_upper x=[{}, {}) y={}\n", l.field_x0, l.field_x0 + l.field_w, l.y_red_upper);
  out += fmt::format("region control         x=[0, {}) y={}\n", l.width, l.y_ctrl);
  out += fmt::format("region reduction_lower x=[{}, {}) y={}\n", l.field_x0, l.field_x0 + l.field_w, l.y_red_lower);
  out += fmt::format("region workers_lower   x=[{}, {}) y=[{}, {})\n", l.field_x0, l.field_x0 + l.field_w,
                     l.y_red_lower + 1, l.height);
  out += fmt::format("paint merge (x={}, y={})\n", l.merge_x, l.y_ctrl);
  out += fmt::format("paint executive (x={}, y={})\n", l.exec_x, l.y_ctrl);
  for (int k = 0; k < l.n_resp; ++k)
    out += fmt::format("paint {} position={} (x={}, y={})\n", k < l.n_resp_base ? "response" : "reserve", k,
                       l.resp_x(k), l.y_ctrl);
  out += "\n// roles: E executive, P response, S reserve, M merge, W worker, R reduction, c control, . idle\n";
  for (int y = 0; y < l.height; ++y) {
    std::string row;
    for (int x = 0; x < l.width; ++x) {
      static const char glyph[] = {'.', 'E', 'P', 'S', 'M', 'W', 'R', 'c'};
      row += glyph[static_cast<int>(l.role(x, y))];
    }
    out += "role " + row + "\n";
  }
  out += "\n// geo-var type (checkerboard phase on c0/c1)\n";
  for (int y = 0; y < l.height; ++y) {
    std::string row;
    for (int x = 0; x < l.width; ++x) {
      const int p = l.phase[static_cast<std::size_t>(l.index(x, y))];
      row += p < 0 ? '.' : static_cast<char>('0' + p);
    }
    out += "type " + row + "\n";
  }
  out += "\n// color routes; multi-state entries are rings advanced in place\n";
  for (int c = 0; c < color::count; ++c) {
    std::string body;
    for (int y = 0; y < l.height; ++y)
      for (int x = 0; x < l.width; ++x) {
        const RouteRing* r = l.ring(x, y, c);
        if (!r) continue;
        std::vector<std::string> states;
        for (const auto& s : *r) states.push_back(format_route(s));
        body += fmt::format("  ({}, {}) [{}{}]\n", x, y, fmt::join(states, "; "), r->size() > 1 ? "; ring" : "");
      }
    if (c == color::message) body = "  all PEs: dimension-ordered X then Y from the header\n";
    if (c == color::ctrl_coord)
      body = fmt::format("  ({}, {}) -> response PEs along the control row\n", l.exec_x, l.y_ctrl);
    if (c == color::ctrl_dist || c == color::args_dist)
      body = fmt::format("  response PEs -> merge ({}, {}) in drain order\n", l.merge_x, l.y_ctrl);
    if (body.empty()) continue;
    out += fmt::format("color {} {}\n{}", c, color_name(c), body);
  }
  return out;
}

std::string emit_exec(const VMachineProgram& vm) {
  std::string out = fmt::format("// executive PE at ({}, {})\ntask exec_main {{\n", vm.layout.exec_x, vm.layout.y_ctrl);
  for (std::size_t pc = 0; pc < vm.exec.size(); ++pc) {
    out += fmt::format("  L{}: {}\n", pc, instr_pseudo(vm.exec[pc]));
    out += "  .i " + format_instr(vm.exec[pc]) + "\n";
  }
  out += "}\n";
  return out;
}

std::string emit_response(const VMachineProgram& vm) {
  std::string out = "// response PEs: section chunks in drain order\n";
  for (const auto& s : vm.sections) {
    out += fmt::format(".section index={} nodes={}\n", s.index, join(s.nodes));
    for (const auto& sp : s.splices)
      out += fmt::format(".splice section={} pos={} src={} half={}\n", s.index, sp.position, sp.address, sp.half);
  }
  for (const auto& r : vm.resp) {
    out += fmt::format("\n// position {} at ({}, {}), {} words\n", r.position, vm.layout.resp_x(r.position),
                       vm.layout.y_ctrl, r.words());
    out += "task resp_load(section = ctrl_coord) {\n";
    out += "  ctrl_dist <- ctrl_table[section]; args_dist <- args_table[section];  // indirect lookup\n";
    out += fmt::format("  {}\n}}\n", r.position + 2 < vm.layout.n_resp ? "flip;" : "reset;");
    for (const auto& c : r.chunks) {
      const Section& s = vm.sections[static_cast<std::size_t>(c.section)];
      std::vector<int> ctrl(s.ctrl.begin() + c.ctrl_begin, s.ctrl.begin() + c.ctrl_end);
      std::vector<int> args(s.args.begin() + c.args_begin, s.args.begin() + c.args_end);
      std::vector<std::string> names;
      for (int id : ctrl) names.push_back(vm.rpcs.rpcs[static_cast<std::size_t>(id)].name);
      out += fmt::format("  // section {}: ctrl {} args {}\n", c.section, names.empty() ? "-" : fmt::format("{}", fmt::join(names, " ")),
                         join(args));
      out += fmt::format(".chunk pos={} section={} offset={} ctrl={} args={}\n", r.position, c.section, c.offset,
                         join(ctrl), join(args));
    }
  }
  return out;
}

std::string emit_merge(const VMachineProgram& vm) {
  std::string out = fmt::format("// merge PE at ({}, {})\n", vm.layout.merge_x, vm.layout.y_ctrl);
  out += fmt::format("// drains {} response PEs: inner left, inner right, then outward\n", vm.layout.n_resp);
  out +=
      "task merge_args {\n"
      "  args <- args_dist;  // recolor, one wavelet per cycle\n"
      "}\n"
      "task merge_ctrl {\n"
      "  ff[] <- ctrl_dist;  // fifo of 1000\n"
      "  ctrl <- control(ff[]);\n"
      "}\n";
  return out;
}

std::string emit_worker(const VMachineProgram& vm) {
  std::string out = "// worker PE kernels\n";
  out += fmt::format(".config n_resp={} resp_capacity={} task_table={}\n", vm.config.n_resp,
                     vm.config.resp_capacity, vm.config.task_table_size);
  out += fmt::format(".field width={} height={}\n", vm.field.width, vm.field.height);
  out += fmt::format(".footprint worker={} controller={}\n", vm.footprint[0], vm.footprint[1]);
  for (const auto& r : vm.rpcs.rpcs) {
    out += fmt::format(".rpc id={} name={} arity={}\n", r.id, r.name, r.arity);
    out += kernel_body(r);
  }
  for (const auto& v : vm.rpcs.virtual_tasks)
    out += fmt::format(".vtask rpc={} hw={} context={}\n", v.rpc, v.hw_task, v.context);
  out += "\n// participation filters\n";
  for (const auto& m : vm.masks) {
    std::string bits;
    for (auto b : m.bits) bits += b ? '1' : '0';
    out += fmt::format(".mask memloc={} addr={} bits={}\n", m.memloc, m.address, bits);
  }
  out += "\n// persistent symbols\n";
  for (const auto& v : vm.vars)
    out += fmt::format(".var name={} kind={} dtype={} shape={} elements={} addr={} output={} tainted={}\n", v.name,
                       to_string(v.kind), to_string(v.dtype), join(v.shape), v.elements, v.address,
                       v.output ? 1 : 0, v.tainted ? 1 : 0);
  out += "\n// initial memory images\n";
  for (const auto& b : vm.init) {
    std::string words;
    words.reserve(b.words.size() * 5);
    for (std::size_t i = 0; i < b.words.size(); ++i) {
      if (i) words += ',';
      words += fmt::format("{:x}", b.words[i]);
    }
    out += fmt::format(".init space={} addr={} per_pe={} words={}\n", to_string(b.space), b.address,
                       b.words_per_pe, words.empty() ? "-" : words);
  }
  return out;
}

std::string emit_reduction(const VMachineProgram& vm) {
  std::string out = "// reduction row kernels\n";
  for (const auto& r : vm.rpcs.rpcs) out += reduction_body(r);
  return out;
}

// ------------------------------------------------------------------ loader

[[noreturn]] void bad(const std::string& file, int line, const std::string& what) {
  throw ProgramError(SourceLoc{line, 1}, fmt::format("{}: {}", file, what));
}

struct Directive {
  std::string name;
  std::map<std::string, std::string> kv;
  std::vector<std::string> words;  // positional tokens after the name
  int line = 0;
};

std::vector<Directive> directives(const std::string& text) {
  std::vector<Directive> out;
  std::istringstream in(text);
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    const auto p = line.find_first_not_of(" \t");
    if (p == std::string::npos || line[p] != '.') continue;
    std::istringstream ls(line.substr(p + 1));
    Directive d;
    d.line = ln;
    ls >> d.name;
    std::string tok;
    while (ls >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) d.words.push_back(tok);
      else d.kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    out.push_back(std::move(d));
  }
  return out;
}

class Reader {
 public:
  Reader(std::string file, const Directive& d) : file_(std::move(file)), d_(d) {}

  const std::string& str(const std::string& k) const {
    auto it = d_.kv.find(k);
    if (it == d_.kv.end()) bad(file_, d_.line, fmt::format("missing '{}' in .{}", k, d_.name));
    return it->second;
  }
  long num(const std::string& k) const { return parse(str(k), 10); }
  long parse(const std::string& s, int base) const {
    long v = 0;
    const char* b = s.data();
    const char* e = b + s.size();
    if (base == 16 && s.size() > 2 && s[0] == '0' && s[1] == 'x') b += 2;
    auto r = std::from_chars(b, e, v, base);
    if (r.ec != std::errc() || r.ptr != e) bad(file_, d_.line, fmt::format("bad number '{}'", s));
    return v;
  }
  std::vector<long> list(const std::string& k, int base = 10) const {
    std::vector<long> out;
    const std::string& s = str(k);
    if (s == "-") return out;
    std::size_t at = 0;
    while (at <= s.size()) {
      const auto c = s.find(',', at);
      out.push_back(parse(s.substr(at, c == std::string::npos ? std::string::npos : c - at), base));
      if (c == std::string::npos) break;
      at = c + 1;
    }
    return out;
  }
  DType dtype(const std::string& k) const {
    const std::string& s = str(k);
    if (s == "f32") return DType::F32;
    if (s == "i16") return DType::I16;
    bad(file_, d_.line, "bad dtype '" + s + "'");
  }
  ExecArg arg(const std::string& k) const {
    const std::string& s = str(k);
    ExecArg a;
    if (!s.empty() && s[0] == '@') {
      a.addr = static_cast<int>(parse(s.substr(1), 10));
      return a;
    }
    if (s.size() > 5 && s[0] == '#' && s[4] == ':') {
      a.imm = true;
      a.value.dtype = s.substr(1, 3) == "f32" ? DType::F32 : DType::I16;
      a.value.bits = static_cast<std::uint32_t>(parse(s.substr(5), 16));
      return a;
    }
    bad(file_, d_.line, "bad operand '" + s + "'");
  }
  [[noreturn]] void fail(const std::string& what) const { bad(file_, d_.line, what); }

 private:
  std::string file_;
  const Directive& d_;
};

const std::string& file(const Listing& l, const std::string& name) {
  auto it = l.find(name);
  if (it == l.end()) throw ProgramError("listing is missing " + name);
  return it->second;
}

ExecInstr parse_instr(const Reader& r, const std::string& op) {
  ExecInstr i;
  auto has = [&](ExecOp o) { return op == to_string(o); };
  if (has(ExecOp::IterInit)) {
    i.op = ExecOp::IterInit;
    i.loop = static_cast<int>(r.num("loop"));
    i.a = static_cast<int>(r.num("a"));
  } else if (has(ExecOp::IterTest) || has(ExecOp::IterNext)) {
    i.op = has(ExecOp::IterTest) ? ExecOp::IterTest : ExecOp::IterNext;
    i.loop = static_cast<int>(r.num("loop"));
    i.a = static_cast<int>(r.num("a"));
    i.target = static_cast<int>(r.num("target"));
  } else if (has(ExecOp::LoadGA)) {
    i.op = ExecOp::LoadGA;
    i.dtype = r.dtype("dtype");
    i.loop = static_cast<int>(r.num("loop"));
    i.dst = static_cast<int>(r.num("dst"));
    i.src = static_cast<int>(r.num("src"));
  } else if (has(ExecOp::GsOp)) {
    i.op = ExecOp::GsOp;
    const std::string& g = r.str("gs");
    static const char* names[] = {"copy", "add", "sub", "mul", "div"};
    bool found = false;
    for (int k = 0; k < 5; ++k)
      if (g == names[k]) {
        i.gs = static_cast<GsOp>(k);
        found = true;
      }
    if (!found) r.fail("bad gs op '" + g + "'");
    i.dtype = r.dtype("dtype");
    i.dst = static_cast<int>(r.num("dst"));
    i.x = r.arg("x");
    if (i.gs != GsOp::Copy) i.y = r.arg("y");
  } else if (has(ExecOp::CmpBranch)) {
    i.op = ExecOp::CmpBranch;
    const std::string& c = r.str("cmp");
    bool found = false;
    for (CmpOp k : {CmpOp::GT, CmpOp::LT, CmpOp::GE, CmpOp::LE, CmpOp::EQ, CmpOp::NE})
      if (c == to_string(k)) {
        i.cmp = k;
        found = true;
      }
    if (!found) r.fail("bad comparison '" + c + "'");
    i.dtype = r.dtype("dtype");
    i.loop = static_cast<int>(r.num("loop"));
    i.x = r.arg("x");
    i.y = r.arg("y");
    i.target = static_cast<int>(r.num("target"));
  } else if (has(ExecOp::Splice)) {
    i.op = ExecOp::Splice;
    i.a = static_cast<int>(r.num("a"));
    i.b = static_cast<int>(r.num("b"));
    i.src = static_cast<int>(r.num("src"));
    i.half = static_cast<int>(r.num("half"));
  } else if (has(ExecOp::Broadcast)) {
    i.op = ExecOp::Broadcast;
    i.a = static_cast<int>(r.num("a"));
  } else if (has(ExecOp::RecvReduced)) {
    i.op = ExecOp::RecvReduced;
    i.dtype = r.dtype("dtype");
    i.dst = static_cast<int>(r.num("dst"));
    i.a = static_cast<int>(r.num("a"));
  } else if (has(ExecOp::Halt)) {
    i.op = ExecOp::Halt;
  } else {
    r.fail("unknown instruction '" + op + "'");
  }
  return i;
}

OodsKind parse_kind(const Reader& r, const std::string& s) {
  for (OodsKind k : {OodsKind::GS, OodsKind::GA, OodsKind::LS, OodsKind::ULS, OodsKind::LA})
    if (s == to_string(k)) return k;
  r.fail("bad variable kind '" + s + "'");
}

}  // namespace

Listing emit_text(const VMachineProgram& vm) {
  Listing l;
  l["layout.paint"] = emit_layout(vm);
  const bool only_halt =
      std::all_of(vm.exec.begin(), vm.exec.end(), [](const ExecInstr& i) { return i.op == ExecOp::Halt; });
  // A program with nothing to run or read back is just the painted grid.
  if (!vm.sections.empty() || !vm.init.empty() || !vm.vars.empty() || !only_halt) {
    l["exec.tsl"] = emit_exec(vm);
    l["response.tsl"] = emit_response(vm);
    l["merge.tsl"] = emit_merge(vm);
    l["worker.tsl"] = emit_worker(vm);
    l["reduction.tsl"] = emit_reduction(vm);
  }
  return l;
}

std::string emit_asm(const Listing& l) {
  std::string out;
  for (const char* name : {"exec.tsl", "response.tsl", "merge.tsl", "worker.tsl", "reduction.tsl"}) {
    auto it = l.find(name);
    if (it == l.end()) continue;
    out += fmt::format("==> {} <==\n{}\n", name, it->second);
  }
  return out;
}

std::string emit_paint(const Listing& l) { return file(l, "layout.paint"); }

VMachineProgram load_text(const Listing& l) {
  VMachineProgram vm;
  for (const auto& d : directives(file(l, "layout.paint"))) {
    if (d.name != "grid") continue;
    Reader r("layout.paint", d);
    vm.layout = make_layout(static_cast<int>(r.num("field_w")), static_cast<int>(r.num("field_h")),
                            static_cast<int>(r.num("n_resp")), static_cast<int>(r.num("n_resp_base")));
    if (vm.layout.width != r.num("width") || vm.layout.height != r.num("height"))
      r.fail("grid size does not match the field and response counts");
  }
  if (vm.layout.width == 0) throw ProgramError("layout.paint: missing .grid");
  vm.field = {vm.layout.field_w, vm.layout.field_h};
  vm.config.n_resp = vm.layout.n_resp_base;
  if (!l.count("exec.tsl")) {
    vm.exec.push_back(ExecInstr{});
    vm.resp = distribute(vm.sections, vm.layout.n_resp);
    return vm;
  }

  for (const auto& d : directives(file(l, "worker.tsl"))) {
    Reader r("worker.tsl", d);
    if (d.name == "config") {
      vm.config.n_resp = static_cast<int>(r.num("n_resp"));
      vm.config.resp_capacity = static_cast<int>(r.num("resp_capacity"));
      vm.config.task_table_size = static_cast<int>(r.num("task_table"));
    } else if (d.name == "field") {
      vm.field = {static_cast<int>(r.num("width")), static_cast<int>(r.num("height"))};
    } else if (d.name == "footprint") {
      vm.footprint = {static_cast<int>(r.num("worker")), static_cast<int>(r.num("controller"))};
    } else if (d.name == "rpc") {
      auto def = rpc_from_name(r.str("name"));
      if (!def) r.fail("unknown rpc '" + r.str("name") + "'");
      def->id = static_cast<int>(r.num("id"));
      if (def->id != static_cast<int>(vm.rpcs.rpcs.size())) r.fail("rpc ids must be dense");
      if (def->arity != r.num("arity")) r.fail("arity does not match the kernel");
      vm.rpcs.rpcs.push_back(*def);
    } else if (d.name == "vtask") {
      vm.rpcs.virtual_tasks.push_back(
          {static_cast<int>(r.num("rpc")), static_cast<int>(r.num("hw")), static_cast<int>(r.num("context"))});
    } else if (d.name == "mask") {
      MaskEntry m;
      m.memloc = static_cast<int>(r.num("memloc"));
      m.address = static_cast<int>(r.num("addr"));
      for (char c : r.str("bits")) m.bits.push_back(c == '1');
      vm.masks.push_back(std::move(m));
    } else if (d.name == "var") {
      OutputVar v;
      v.name = r.str("name");
      v.kind = parse_kind(r, r.str("kind"));
      v.dtype = r.dtype("dtype");
      for (long s : r.list("shape")) v.shape.push_back(s);
      v.elements = static_cast<int>(r.num("elements"));
      v.address = static_cast<int>(r.num("addr"));
      v.output = r.num("output") != 0;
      v.tainted = r.num("tainted") != 0;
      vm.vars.push_back(std::move(v));
    } else if (d.name == "init") {
      InitBlock b;
      const std::string& sp = r.str("space");
      if (sp == to_string(Placement::Worker)) b.space = Placement::Worker;
      else if (sp == to_string(Placement::Controller)) b.space = Placement::Controller;
      else r.fail("bad space '" + sp + "'");
      b.address = static_cast<int>(r.num("addr"));
      b.words_per_pe = static_cast<int>(r.num("per_pe"));
      for (long w : r.list("words", 16)) b.words.push_back(static_cast<std::uint16_t>(w));
      vm.init.push_back(std::move(b));
    }
  }

  for (const auto& d : directives(file(l, "exec.tsl"))) {
    if (d.name != "i") continue;
    Reader r("exec.tsl", d);
    if (d.words.empty()) r.fail("instruction without an opcode");
    vm.exec.push_back(parse_instr(r, d.words[0]));
  }

  std::map<int, std::vector<std::pair<int, Chunk>>> by_section;  // section -> (position, chunk)
  std::map<int, std::vector<std::vector<long>>> chunk_ctrl, chunk_args;
  for (const auto& d : directives(file(l, "response.tsl"))) {
    Reader r("response.tsl", d);
    if (d.name == "section") {
      Section s;
      s.index = static_cast<int>(r.num("index"));
      if (s.index != static_cast<int>(vm.sections.size())) r.fail("section indices must be dense");
      for (long n : r.list("nodes")) s.nodes.push_back(static_cast<int>(n));
      vm.sections.push_back(std::move(s));
    } else if (d.name == "splice") {
      const auto si = static_cast<std::size_t>(r.num("section"));
      if (si >= vm.sections.size()) r.fail("splice for an unknown section");
      vm.sections[si].splices.push_back({static_cast<int>(r.num("pos")), static_cast<int>(r.num("src")),
                                         static_cast<int>(r.num("half"))});
    } else if (d.name == "chunk") {
      const int pos = static_cast<int>(r.num("pos"));
      const int si = static_cast<int>(r.num("section"));
      if (si < 0 || si >= static_cast<int>(vm.sections.size())) r.fail("chunk for an unknown section");
      if (pos != static_cast<int>(by_section[si].size())) r.fail("chunks must follow drain order");
      const auto ctrl = r.list("ctrl");
      const auto args = r.list("args");
      Section& s = vm.sections[static_cast<std::size_t>(si)];
      Chunk c;
      c.section = si;
      c.offset = static_cast<int>(r.num("offset"));
      c.ctrl_begin = static_cast<int>(s.ctrl.size());
      c.args_begin = static_cast<int>(s.args.size());
      for (long v : ctrl) s.ctrl.push_back(static_cast<int>(v));
      for (long v : args) s.args.push_back(static_cast<std::uint16_t>(v));
      c.ctrl_end = static_cast<int>(s.ctrl.size());
      c.args_end = static_cast<int>(s.args.size());
      by_section[si].push_back({pos, c});
    }
  }
  vm.resp.resize(static_cast<std::size_t>(vm.layout.n_resp));
  for (int k = 0; k < vm.layout.n_resp; ++k) vm.resp[static_cast<std::size_t>(k)].position = k;
  for (auto& [si, chunks] : by_section)
    for (auto& [pos, c] : chunks) {
      if (pos >= vm.layout.n_resp) throw ProgramError("response.tsl: chunk position outside the layout");
      vm.resp[static_cast<std::size_t>(pos)].chunks.push_back(c);
    }
  if (vm.resp != distribute(vm.sections, vm.layout.n_resp))
    throw ProgramError("response.tsl: chunks do not follow the even split");
  return vm;
}

}  // namespace machlite::lower
