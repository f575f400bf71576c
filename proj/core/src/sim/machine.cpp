#include "machlite/sim/machine.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <deque>
#include <queue>

namespace machlite::sim {

using lower::Dir;
using lower::Kernel;
using lower::Role;
using lower::RpcDef;
namespace color = lower::color;

std::string_view to_string(WaveKind k) {
  switch (k) {
    case WaveKind::Data: return "data";
    case WaveKind::Advance: return "advance";
    case WaveKind::Flip: return "flip";
    case WaveKind::Reset: return "reset";
    case WaveKind::Header: return "header";
    case WaveKind::Tail: return "tail";
  }
  return "?";
}

std::string_view to_string(TraceEvent::Kind k) {
  using K = TraceEvent::Kind;
  switch (k) {
    case K::Inject: return "inject";
    case K::Hop: return "hop";
    case K::Deliver: return "deliver";
    case K::Drop: return "drop";
    case K::Broadcast: return "broadcast";
    case K::Splice: return "splice";
    case K::RespToMerge: return "resp_to_merge";
    case K::MergeExit: return "merge_exit";
  }
  return "?";
}

std::string format_event(const TraceEvent& e) {
  return fmt::format("{}\t({},{})\t({},{})\t{}\t{}\t{}\t{:#x}", e.cycle, e.src_x, e.src_y, e.dst_x, e.dst_y,
                     lower::color_name(e.color), to_string(e.kind), to_string(e.wave), e.payload);
}

namespace {

constexpr int kRouted = 11;  // colors 0..10 go through routers
constexpr int kMemWords = 24576;
constexpr int kC = static_cast<int>(Dir::C);

struct Wave {
  std::uint32_t payload = 0;
  WaveKind kind = WaveKind::Data;
  std::int64_t ready = 0;
  int msg = -1;
};

struct Fifo {
  std::deque<Wave> q;
  int popped = 0;  // pops this cycle; freed space is visible next cycle
};

struct MsgPort {
  std::array<std::int8_t, 5> claim{-1, -1, -1, -1, -1};   // input -> output
  std::array<std::int8_t, 5> holder{-1, -1, -1, -1, -1};  // output -> input
  std::array<int, 5> remaining{};
};

struct Assembly {
  int msg = -1;
  std::vector<std::uint16_t> words;
};

enum class St : std::uint8_t { Idle, Args, Setup, Body };

struct Proc {
  int pe = 0;
  int x = 0, y = 0;
  int fx = 0, fy = -1;  // field coordinates; fy is -1 on reduction PEs
  bool reduction = false;
  bool upper = true;
  int mem = -1;  // index into the memory pool
  St st = St::Idle;
  int rpc = -1;
  std::vector<std::uint16_t> args;
  std::int64_t t0 = 0, body_t0 = 0;
  std::int64_t arg_wait = 0;
  std::int64_t wait = 0;
  int step = 0;
  int i = 0, n = 0, sent = 0, got = 0;
  int len = 0;
  bool send = false, recv = false;
  Scalar acc;
  int phase = 0;  // c0/c1 ring state this PE has driven its routers to
  int reduce_count = 0, bcast_count = 0, instance = 0;
  int active = 0;  // bodies run with a nonzero length
  bool blocked = false;
  std::int64_t busy = 0, stall = 0;
};

struct RespState {
  int pe = 0;
  int x = 0;
  int hops = 0;
  std::vector<std::uint16_t> mem;
  int section = -1;
  std::int64_t ready_at = 0;
  std::array<int, 2> cursor{};
  std::array<bool, 2> done{};
  std::int64_t busy = 0;
};

struct BusItem {
  std::uint32_t payload = 0;
  bool marker = false;
  std::int64_t ready = 0;
  int section = -1;
  int instance = -1;
};

// A broadcast whose chunks have not all left the merge PE yet.
struct Draining {
  int section = -1;
  int instance = -1;
  std::array<int, 2> markers{};
};

}  // namespace

struct Machine::Impl {
  lower::VMachineProgram vm;
  SimConfig cfg;
  const lower::FabricLayout& l;
  int W, H, N;
  int depth;

  std::vector<Fifo> in;       // ((pe * kRouted) + color) * 5 + dir
  std::vector<Fifo> deliver;  // pe * kRouted + color
  std::vector<const lower::RouteRing*> rings;
  std::vector<std::uint8_t> state, rr, used;
  std::vector<std::int64_t> used_stamp;
  std::vector<int> pending;  // wavelets waiting in a router's input FIFOs
  std::vector<int> active;
  std::vector<char> is_active;
  std::vector<int> touched;
  std::vector<MsgPort> ports;
  std::int64_t live = 0;

  std::vector<std::vector<std::uint16_t>> mem;
  std::vector<int> mem_of;  // pe -> memory index, -1 without memory
  std::vector<Proc> procs;
  std::vector<int> proc_of;

  // executive
  int exec_pe = 0;
  int exec_mem = -1;
  std::size_t pc = 0;
  bool exec_halted = false;
  std::map<int, int> counters;
  std::vector<ref::LoopExit> exits_;
  int exec_recv = 0;
  Scalar exec_acc;
  int exec_reduce_count = 0;
  bool exec_blocked = false;
  std::int64_t exec_busy = 0, exec_stall = 0;

  // control strip
  std::vector<RespState> resp;
  std::vector<int> resp_of;  // pe -> position
  int merge_pe = 0;
  std::array<std::deque<BusItem>, 2> bus;
  std::array<int, 2> sender{};
  std::deque<BusItem> merge_ctrl;
  std::deque<Draining> draining;  // oldest first
  std::int64_t coord_arrival = -1;
  int coord_section = -1;
  int send_section = -1;  // section the response PEs are sending
  int instance = -1;
  int pending_splices = 0;
  std::int64_t merge_busy = 0;
  std::map<std::pair<int, int>, int> vdecode;  // (hw, context) -> rpc
  std::vector<std::uint32_t> vencode;

  // messages
  std::vector<std::deque<Wave>> outbox;
  std::vector<Assembly> assembly;
  std::vector<std::vector<std::vector<std::uint16_t>>> inbox;
  std::vector<MessageRecord> msgs;
  std::vector<int> msg_last_dir;
  std::vector<char> msg_splice;
  int msgs_open = 0;

  std::int64_t now = 0;
  std::int64_t last_progress = 0;
  bool activity = false;
  std::priority_queue<std::int64_t, std::vector<std::int64_t>, std::greater<>> timers;

  Stats st;
  std::vector<TraceEvent> trace;
  std::vector<StripEvent> strip;

  Impl(const lower::VMachineProgram& v, const SimConfig& c)
      : vm(v), cfg(c), l(vm.layout), W(l.width), H(l.height), N(W * H), depth(c.fifo_depth) {
    validate();
    in.resize(static_cast<std::size_t>(N * kRouted * 5));
    deliver.resize(static_cast<std::size_t>(N * kRouted));
    rings.assign(static_cast<std::size_t>(N * kRouted), nullptr);
    state.assign(rings.size(), 0);
    rr.assign(rings.size(), 0);
    used.assign(rings.size(), 0);
    used_stamp.assign(rings.size(), -1);
    pending.assign(rings.size(), 0);
    is_active.assign(rings.size(), 0);
    ports.resize(static_cast<std::size_t>(N));
    mem_of.assign(static_cast<std::size_t>(N), -1);
    proc_of.assign(static_cast<std::size_t>(N), -1);
    resp_of.assign(static_cast<std::size_t>(N), -1);
    outbox.resize(static_cast<std::size_t>(N));
    assembly.resize(static_cast<std::size_t>(N));
    inbox.resize(static_cast<std::size_t>(N));
    for (int p = 0; p < N; ++p)
      for (const auto& [c, ring] : l.routes[static_cast<std::size_t>(p)])
        if (c < kRouted && !ring.empty()) rings[static_cast<std::size_t>(p * kRouted + c)] = &ring;

    exec_pe = l.index(l.exec_x, l.y_ctrl);
    merge_pe = l.index(l.merge_x, l.y_ctrl);
    exec_mem = alloc_mem(exec_pe);
    for (int fx = 0; fx < l.field_w; ++fx)
      for (int fy = 0; fy < l.field_h; ++fy) {
        Proc q;
        q.x = l.grid_x(fx);
        q.y = l.grid_y(fy);
        q.pe = l.index(q.x, q.y);
        q.fx = fx;
        q.fy = fy;
        q.upper = fy < l.field_h / 2;
        q.mem = alloc_mem(q.pe);
        add_proc(q);
      }
    for (int yr : {l.y_red_upper, l.y_red_lower})
      for (int fx = 0; fx < l.field_w; ++fx) {
        Proc q;
        q.x = l.grid_x(fx);
        q.y = yr;
        q.pe = l.index(q.x, q.y);
        q.fx = fx;
        q.reduction = true;
        q.upper = yr == l.y_red_upper;
        add_proc(q);
      }
    load_memory();
    load_strip();
    for (const auto& r : vm.rpcs.rpcs) st.rpcs.push_back({r.name});
  }

  void validate() const {
    auto bad = [](const std::string& s) { throw ProgramError(s); };
    if (cfg.hop_latency < 1 || cfg.hop_latency > 2) bad("hop latency must be 1 or 2 cycles");
    if (cfg.fifo_depth < 1) bad("fifo depth must be positive");
    if (cfg.rpc_setup_cycles < 1) bad("rpc setup cycles must be positive");
    if (cfg.deadlock_window < 1) bad("deadlock window must be positive");
    if (cfg.control_path_latency < 3 + cfg.hop_latency)
      bad(fmt::format("control path latency {} is below the strip minimum of {}", cfg.control_path_latency,
                      3 + cfg.hop_latency));
    if ((cfg.grid_width && cfg.grid_width != l.width) || (cfg.grid_height && cfg.grid_height != l.height))
      bad(fmt::format("layout needs a {}x{} grid, configured {}x{}", l.width, l.height, cfg.grid_width,
                      cfg.grid_height));
    if (l.field_w <= 0 || l.field_h <= 0 || l.roles.size() != static_cast<std::size_t>(l.width * l.height))
      bad("layout has no worker field");
    if (vm.field.width != l.field_w || vm.field.height != l.field_h)
      bad("program field does not match its layout");
    if (static_cast<int>(vm.resp.size()) != l.n_resp) bad("response assignment does not match the layout");
  }

  int alloc_mem(int pe) {
    mem_of[static_cast<std::size_t>(pe)] = static_cast<int>(mem.size());
    mem.emplace_back(static_cast<std::size_t>(kMemWords), 0);
    return static_cast<int>(mem.size()) - 1;
  }

  void add_proc(Proc q) {
    proc_of[static_cast<std::size_t>(q.pe)] = static_cast<int>(procs.size());
    procs.push_back(std::move(q));
  }

  void load_memory() {
    for (const auto& b : vm.init) {
      if (b.space == Placement::Controller) {
        auto& m = mem[static_cast<std::size_t>(exec_mem)];
        if (b.address + static_cast<int>(b.words.size()) > kMemWords)
          throw ProgramError("controller image does not fit executive memory");
        std::copy(b.words.begin(), b.words.end(), m.begin() + b.address);
        continue;
      }
      if (b.address + b.words_per_pe > kMemWords) throw ProgramError("worker image does not fit PE memory");
      for (int fx = 0; fx < l.field_w; ++fx)
        for (int fy = 0; fy < l.field_h; ++fy) {
          const int pe = fx * l.field_h + fy;
          auto& m = mem[static_cast<std::size_t>(mem_of[static_cast<std::size_t>(l.index(l.grid_x(fx), l.grid_y(fy)))])];
          for (int j = 0; j < b.words_per_pe; ++j)
            m[static_cast<std::size_t>(b.address + j)] = b.words[static_cast<std::size_t>(pe * b.words_per_pe + j)];
        }
    }
  }

  void load_strip() {
    for (int k = 0; k < l.n_resp; ++k) {
      RespState r;
      r.x = l.resp_x(k);
      r.pe = l.index(r.x, l.y_ctrl);
      r.hops = std::abs(r.x - l.merge_x);
      const auto& a = vm.resp[static_cast<std::size_t>(k)];
      r.mem.assign(static_cast<std::size_t>(a.words()), 0);
      for (const auto& c : a.chunks) {
        const auto& s = vm.sections[static_cast<std::size_t>(c.section)];
        int at = c.offset;
        for (int j = c.args_begin; j < c.args_end; ++j) r.mem[static_cast<std::size_t>(at++)] = s.args[static_cast<std::size_t>(j)];
        for (int j = c.ctrl_begin; j < c.ctrl_end; ++j)
          r.mem[static_cast<std::size_t>(at++)] = static_cast<std::uint16_t>(s.ctrl[static_cast<std::size_t>(j)]);
      }
      resp_of[static_cast<std::size_t>(r.pe)] = k;
      resp.push_back(std::move(r));
    }
    vencode.resize(vm.rpcs.rpcs.size());
    for (std::size_t i = 0; i < vm.rpcs.rpcs.size(); ++i) vencode[i] = static_cast<std::uint32_t>(i);
    for (const auto& v : vm.rpcs.virtual_tasks) {
      vencode[static_cast<std::size_t>(v.rpc)] = static_cast<std::uint32_t>(v.hw_task | (v.context << 8));
      vdecode[{v.hw_task, v.context}] = v.rpc;
    }
  }

  // ---------------------------------------------------------------- fabric

  int key(int pe, int c) const { return pe * kRouted + c; }
  Fifo& fifo(int pe, int c, int d) { return in[static_cast<std::size_t>(key(pe, c) * 5 + d)]; }
  Fifo& dq(int pe, int c) { return deliver[static_cast<std::size_t>(key(pe, c))]; }
  int px(int pe) const { return pe % W; }
  int py(int pe) const { return pe / W; }

  void timer(std::int64_t t) { timers.push(t); }

  void activate(int k) {
    if (!is_active[static_cast<std::size_t>(k)]) {
      is_active[static_cast<std::size_t>(k)] = 1;
      active.push_back(k);
    }
  }

  void record(TraceEvent::Kind kind, int sp, int dp, int c, const Wave& w) {
    if (!cfg.trace) return;
    trace.push_back({now, px(sp), py(sp), px(dp), py(dp), c, kind, w.kind, w.payload});
  }

  // Processor injection into its own router.
  bool can_inject(int pe, int c) { return static_cast<int>(fifo(pe, c, kC).q.size()) < depth; }
  void inject(int pe, int c, Wave w) {
    w.ready = now + 1;
    fifo(pe, c, kC).q.push_back(w);
    ++pending[static_cast<std::size_t>(key(pe, c))];
    ++live;
    ++st.injected;
    activate(key(pe, c));
    timer(w.ready);
    activity = true;
    record(TraceEvent::Kind::Inject, pe, pe, c, w);
  }

  bool ready(Fifo& f) const { return !f.q.empty() && f.q.front().ready <= now; }
  Wave take(int pe, int c) {
    Fifo& f = dq(pe, c);
    Wave w = f.q.front();
    f.q.pop_front();
    --live;
    ++st.consumed;
    activity = true;
    return w;
  }

  int neighbour(int pe, Dir d) const {
    int x = px(pe), y = py(pe);
    switch (d) {
      case Dir::L: --x; break;
      case Dir::R: ++x; break;
      case Dir::U: --y; break;
      case Dir::D: ++y; break;
      case Dir::C: break;
    }
    if (x < 0 || y < 0 || x >= W || y >= H) return -1;
    return y * W + x;
  }

  // Space check for one output of router `pe` on color c.
  bool has_space(int pe, int c, int o, bool control) {
    if (o == kC) return control || static_cast<int>(dq(pe, c).q.size()) < depth;
    const int nb = neighbour(pe, static_cast<Dir>(o));
    if (nb < 0)
      throw InternalError(fmt::format("PE ({}, {}): {} routes {} off the grid", px(pe), py(pe),
                                      lower::color_name(c), lower::to_string(static_cast<Dir>(o))));
    const Fifo& f = fifo(nb, c, static_cast<int>(lower::opposite(static_cast<Dir>(o))));
    return static_cast<int>(f.q.size()) + f.popped < depth;
  }

  void forward(int pe, int c, int o, Wave w) {
    w.ready = now + cfg.hop_latency;
    timer(w.ready);
    if (o == kC) {
      if (w.kind != WaveKind::Data && c != color::message) {
        ++st.absorbed;
        record(TraceEvent::Kind::Drop, pe, pe, c, w);
        return;
      }
      dq(pe, c).q.push_back(w);
      ++live;
      record(TraceEvent::Kind::Deliver, pe, pe, c, w);
      return;
    }
    const int nb = neighbour(pe, static_cast<Dir>(o));
    const int d = static_cast<int>(lower::opposite(static_cast<Dir>(o)));
    fifo(nb, c, d).q.push_back(w);
    ++pending[static_cast<std::size_t>(key(nb, c))];
    ++live;
    ++st.hops;
    activate(key(nb, c));
    record(TraceEvent::Kind::Hop, pe, nb, c, w);
  }

  void pop_in(int pe, int c, int d) {
    Fifo& f = fifo(pe, c, d);
    f.q.pop_front();
    if (f.popped++ == 0) touched.push_back(key(pe, c) * 5 + d);
    --pending[static_cast<std::size_t>(key(pe, c))];
    --live;
    activity = true;
  }

  static int xy_out(int x, int y, int dx, int dy) {
    if (dx > x) return static_cast<int>(Dir::R);
    if (dx < x) return static_cast<int>(Dir::L);
    if (dy > y) return static_cast<int>(Dir::D);
    if (dy < y) return static_cast<int>(Dir::U);
    return kC;
  }

  bool route_message(int pe, int d, const Wave& w) {
    MsgPort& mp = ports[static_cast<std::size_t>(pe)];
    const int k = key(pe, color::message);
    MessageRecord& r = msgs[static_cast<std::size_t>(w.msg)];
    int o = mp.claim[static_cast<std::size_t>(d)];
    const bool header = o < 0;
    if (header) {
      if (w.kind != WaveKind::Header)
        throw InternalError(fmt::format("PE ({}, {}): message body without a header", px(pe), py(pe)));
      o = xy_out(px(pe), py(pe), r.dst_x, r.dst_y);
      if (mp.holder[static_cast<std::size_t>(o)] >= 0) return false;
    }
    if (used[static_cast<std::size_t>(k)] & (1u << o)) return false;
    if (!has_space(pe, color::message, o, false)) return false;
    Wave moved = w;
    pop_in(pe, color::message, d);
    forward(pe, color::message, o, moved);
    used[static_cast<std::size_t>(k)] |= static_cast<std::uint8_t>(1u << o);
    auto release = [&] {
      mp.holder[static_cast<std::size_t>(o)] = -1;
      mp.claim[static_cast<std::size_t>(d)] = -1;
    };
    if (header) {
      mp.claim[static_cast<std::size_t>(d)] = static_cast<std::int8_t>(o);
      mp.holder[static_cast<std::size_t>(o)] = static_cast<std::int8_t>(d);
      mp.remaining[static_cast<std::size_t>(d)] = r.control_terminated ? -1 : r.length;
      if (o != kC) {
        const bool vertical = o == static_cast<int>(Dir::U) || o == static_cast<int>(Dir::D);
        int& last = msg_last_dir[static_cast<std::size_t>(w.msg)];
        if (vertical && (last == static_cast<int>(Dir::L) || last == static_cast<int>(Dir::R))) {
          r.turn_x = px(pe);
          r.turn_y = py(pe);
        }
        last = o;
        ++r.hops;
        const int nb = neighbour(pe, static_cast<Dir>(o));
        r.path.push_back({px(nb), py(nb)});
      }
      if (!r.control_terminated && r.length == 0) release();
      return true;
    }
    if (r.control_terminated) {
      if (w.kind == WaveKind::Tail) release();
    } else if (--mp.remaining[static_cast<std::size_t>(d)] == 0) {
      release();
    }
    return true;
  }

  void route(int k) {
    const int pe = k / kRouted, c = k % kRouted;
    if (used_stamp[static_cast<std::size_t>(k)] != now) {
      used_stamp[static_cast<std::size_t>(k)] = now;
      used[static_cast<std::size_t>(k)] = 0;
    }
    const std::uint8_t start = rr[static_cast<std::size_t>(k)];
    for (int j = 0; j < 5; ++j) {
      const int d = (start + j) % 5;
      Fifo& f = fifo(pe, c, d);
      if (f.q.empty() || f.q.front().ready > now) continue;
      const Wave w = f.q.front();
      if (c == color::message) {
        if (route_message(pe, d, w)) rr[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>((d + 1) % 5);
        continue;
      }
      const lower::RouteRing* ring = rings[static_cast<std::size_t>(k)];
      if (!ring)
        throw InternalError(fmt::format("PE ({}, {}): wavelet on unrouted color {}", px(pe), py(pe),
                                        lower::color_name(c)));
      std::uint8_t& s = state[static_cast<std::size_t>(k)];
      if (d == kC && (w.kind == WaveKind::Advance || w.kind == WaveKind::Flip)) {
        pop_in(pe, c, d);
        s = static_cast<std::uint8_t>((s + 1) % ring->size());
        ++st.absorbed;
        continue;
      }
      const std::uint8_t outs = (*ring)[s].out[static_cast<std::size_t>(d)];
      if (!outs || (outs & used[static_cast<std::size_t>(k)])) continue;
      const bool control = w.kind != WaveKind::Data;
      bool ok = true;
      int n_out = 0;
      for (int o = 0; o < 5 && ok; ++o)
        if (outs & (1u << o)) {
          ok = has_space(pe, c, o, control);
          ++n_out;
        }
      if (!ok) continue;
      pop_in(pe, c, d);
      for (int o = 0; o < 5; ++o)
        if (outs & (1u << o)) forward(pe, c, o, w);
      st.copies += n_out - 1;
      used[static_cast<std::size_t>(k)] |= outs;
      if (w.kind == WaveKind::Reset) s = 0;
      rr[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>((d + 1) % 5);
    }
  }

  void router_phase() {
    const std::vector<int> keys = active;
    for (int k : keys) route(k);
    std::size_t keep = 0;
    for (int k : active) {
      if (pending[static_cast<std::size_t>(k)] > 0) active[keep++] = k;
      else is_active[static_cast<std::size_t>(k)] = 0;
    }
    active.resize(keep);
    for (int f : touched) in[static_cast<std::size_t>(f)].popped = 0;
    touched.clear();
  }

  // --------------------------------------------------------------- memory

  std::vector<std::uint16_t>& pmem(const Proc& q) {
    if (q.mem < 0) throw InternalError(fmt::format("PE ({}, {}) has no data memory", q.x, q.y));
    return mem[static_cast<std::size_t>(q.mem)];
  }

  static void check(int pe_x, int pe_y, int addr, int words) {
    if (addr < 0 || addr + words > kMemWords)
      throw InternalError(fmt::format("PE ({}, {}): access at {} outside [0, {})", pe_x, pe_y, addr, kMemWords));
  }

  Scalar load(std::vector<std::uint16_t>& m, int x, int y, int addr, DType dt) const {
    const int w = words_per_element(dt);
    check(x, y, addr, w);
    std::uint32_t bits = m[static_cast<std::size_t>(addr)];
    if (w == 2) bits |= static_cast<std::uint32_t>(m[static_cast<std::size_t>(addr + 1)]) << 16;
    return {dt, bits};
  }

  void store(std::vector<std::uint16_t>& m, int x, int y, int addr, Scalar v) const {
    const int w = words_per_element(v.dtype);
    check(x, y, addr, w);
    m[static_cast<std::size_t>(addr)] = static_cast<std::uint16_t>(v.bits & 0xffff);
    if (w == 2) m[static_cast<std::size_t>(addr + 1)] = static_cast<std::uint16_t>(v.bits >> 16);
  }

  Scalar rd(Proc& q, int addr, DType dt) { return load(pmem(q), q.x, q.y, addr, dt); }
  void wr(Proc& q, int addr, Scalar v) { store(pmem(q), q.x, q.y, addr, v); }
  int rd_i16(Proc& q, int addr) { return rd(q, addr, DType::I16).as_i16(); }

  // ----------------------------------------------------------- processors

  const RpcDef& def(int id) const { return vm.rpcs.rpcs[static_cast<std::size_t>(id)]; }

  int decode(std::uint32_t payload) const {
    if (vdecode.empty()) {
      if (payload >= vm.rpcs.rpcs.size()) throw InternalError(fmt::format("dispatch miss for task {}", payload));
      return static_cast<int>(payload);
    }
    auto it = vdecode.find({static_cast<int>(payload & 0xff), static_cast<int>(payload >> 8)});
    if (it == vdecode.end()) throw InternalError(fmt::format("dispatch miss for task {:#x}", payload));
    return it->second;
  }

  void busy(Proc& q, std::int64_t n = 1) {
    q.busy += n;
    activity = true;
  }
  void stall(Proc& q) {
    ++q.stall;
    q.blocked = true;
  }

  void wait(Proc& q, std::int64_t n) {
    if (n <= 0) return;
    q.wait = now + n;
    q.busy += n;
    timer(q.wait);
    activity = true;
  }

  bool stub(const Proc& q) const {
    return q.reduction && def(q.rpc).kernel != Kernel::ReduceSum;
  }

  void finish(Proc& q) {
    if (!q.reduction) {
      RpcStat& s = st.rpcs[static_cast<std::size_t>(q.rpc)];
      ++s.invocations;
      s.setup_cycles += q.body_t0 - q.t0;
      s.body_cycles += now - q.body_t0;
      s.max_setup = std::max(s.max_setup, q.body_t0 - q.t0);
      s.max_body = std::max(s.max_body, now - q.body_t0);
      s.arg_wait += q.arg_wait;
      s.max_setup_busy = std::max(s.max_setup_busy, q.body_t0 - q.t0 - q.arg_wait);
    }
    q.st = St::Idle;
    q.rpc = -1;
  }

  ReductionStat& red(int i) {
    if (static_cast<int>(st.reductions.size()) <= i) st.reductions.resize(static_cast<std::size_t>(i + 1));
    return st.reductions[static_cast<std::size_t>(i)];
  }
  static void at_least(std::int64_t& v, std::int64_t t) { v = std::max(v, t); }
  static void at_most(std::int64_t& v, std::int64_t t) { v = v < 0 ? t : std::min(v, t); }

  void step_proc(Proc& q) {
    q.blocked = false;
    for (;;) {
      if (q.wait > now) return;
      switch (q.st) {
        case St::Idle: {
          Fifo& f = dq(q.pe, color::ctrl);
          if (!ready(f)) return;
          q.rpc = decode(take(q.pe, color::ctrl).payload);
          q.args.clear();
          q.t0 = now;
          q.arg_wait = 0;
          q.st = St::Args;
          busy(q);
          return;
        }
        case St::Args: {
          const RpcDef& r = def(q.rpc);
          if (static_cast<int>(q.args.size()) == r.arity) {
            if (stub(q)) {
              finish(q);
              continue;
            }
            q.st = St::Setup;
            wait(q, std::max(0, cfg.rpc_setup_cycles - r.arity - 1));
            continue;
          }
          if (!ready(dq(q.pe, color::args))) {
            stall(q);
            ++q.arg_wait;
            return;
          }
          q.args.push_back(static_cast<std::uint16_t>(take(q.pe, color::args).payload));
          busy(q);
          return;
        }
        case St::Setup:
          q.st = St::Body;
          q.step = 0;
          q.body_t0 = now;
          continue;
        case St::Body:
          if (!(q.reduction ? reduction_body(q) : worker_body(q))) return;
          finish(q);
          continue;
      }
    }
  }

  int effective_len(Proc& q, int mask_at, int len_at, bool dyn) {
    const auto& a = q.args;
    const int mask = rd_i16(q, a[static_cast<std::size_t>(mask_at)]);
    const int len = effective_len_raw(q, mask, len_at, dyn);
    if (len > 0) ++q.active;
    return len;
  }

  int effective_len_raw(Proc& q, int mask, int len_at, bool dyn) {
    const auto& a = q.args;
    if (mask == 0) return 0;
    if (!dyn) return a[static_cast<std::size_t>(len_at)] * mask;
    const int start = a[static_cast<std::size_t>(len_at)];
    const int extent = a[static_cast<std::size_t>(len_at + 2)];
    const int stop = rd_i16(q, a[static_cast<std::size_t>(len_at + 1)]);
    if (stop < 0 || stop > extent)
      throw ExecutionFault(fmt::format("PE ({}, {}): dynamic stop {} outside [0, {}]", q.fx, q.fy, stop, extent));
    return std::max(0, stop - start) * mask;
  }

  static Scalar imm(DType dt, std::uint16_t lo, std::uint16_t hi) {
    return {dt, dt == DType::F32 ? (static_cast<std::uint32_t>(hi) << 16) | lo : lo};
  }

  // Vector kernels run functionally at body start and then occupy the PE for
  // their modeled duration. Returns true when the body is complete.
  bool worker_body(Proc& q) {
    const RpcDef& r = def(q.rpc);
    const DType dt = r.dtype;
    const int w = words_per_element(dt);
    const auto& a = q.args;
    auto A = [&](int i) { return static_cast<int>(a[static_cast<std::size_t>(i)]); };
    if (q.step == 100) return true;
    switch (r.kernel) {
      case Kernel::Copy:
      case Kernel::FillSc:
      case Kernel::FillImm:
      case Kernel::ArAr:
      case Kernel::ArSc:
      case Kernel::ScAr:
      case Kernel::ArImm:
      case Kernel::ImmAr: {
        const int mask_at = r.kernel == Kernel::Copy || r.kernel == Kernel::FillSc ? 2
                            : r.kernel == Kernel::ArImm || r.kernel == Kernel::ImmAr ? 4
                                                                                      : 3;
        const int len = effective_len(q, mask_at, mask_at + 1, r.dyn);
        for (int k = 0; k < len; ++k) {
          Scalar v;
          int dst = 0;
          switch (r.kernel) {
            case Kernel::Copy: v = rd(q, A(0) + k * w, dt); dst = A(1); break;
            case Kernel::FillSc: v = rd(q, A(0), dt); dst = A(1); break;
            case Kernel::FillImm: v = imm(dt, a[0], a[1]); dst = A(2); break;
            case Kernel::ArAr: v = apply(r.op, rd(q, A(0) + k * w, dt), rd(q, A(1) + k * w, dt)); dst = A(2); break;
            case Kernel::ArSc: v = apply(r.op, rd(q, A(0) + k * w, dt), rd(q, A(1), dt)); dst = A(2); break;
            case Kernel::ScAr: v = apply(r.op, rd(q, A(0), dt), rd(q, A(1) + k * w, dt)); dst = A(2); break;
            case Kernel::ArImm: v = apply(r.op, rd(q, A(0) + k * w, dt), imm(dt, a[1], a[2])); dst = A(3); break;
            case Kernel::ImmAr: v = apply(r.op, imm(dt, a[0], a[1]), rd(q, A(2) + k * w, dt)); dst = A(3); break;
            default: break;
          }
          wr(q, dst + k * w, v);
        }
        q.step = 100;
        wait(q, len);
        return len == 0;
      }
      case Kernel::Gather: {
        const int f = r.fused ? 1 : 0;
        const int len = effective_len(q, 3 + f, 4 + f, false);
        const int s0 = A(0), s1 = A(1), index = A(1 + f), dst = A(2 + f), s0_len = A(5 + f);
        for (int k = 0; k < len; ++k) {
          const int i = rd_i16(q, index + k);
          if (i < 0 || i >= s0_len)
            throw ExecutionFault(fmt::format("PE ({}, {}): gather index {} at element {} outside [0, {})", q.fx,
                                             q.fy, i, k, s0_len));
          Scalar v = rd(q, s0 + i * w, dt);
          if (r.fused) v = apply(r.op, v, rd(q, s1 + k * w, dt));
          wr(q, dst + k * w, v);
        }
        q.step = 100;
        wait(q, 2 * static_cast<std::int64_t>(len));
        return len == 0;
      }
      case Kernel::Scatter: {
        const int len = effective_len(q, 3, 4, false);
        const int src = A(0), index = A(1), dst = A(2), dst_len = A(5);
        for (int k = 0; k < len; ++k) {
          const int i = rd_i16(q, index + k);
          if (i < 0 || i >= dst_len)
            throw ExecutionFault(fmt::format("PE ({}, {}): scatter index {} at element {} outside [0, {})", q.fx,
                                             q.fy, i, k, dst_len));
          Scalar v = rd(q, src + k * w, dt);
          if (r.accumulate) v = apply(BinOp::Add, rd(q, dst + i * w, dt), v);
          wr(q, dst + i * w, v);
        }
        q.step = 100;
        wait(q, 2 * static_cast<std::int64_t>(len));
        return len == 0;
      }
      case Kernel::Shift: return shift_body(q, r);
      case Kernel::ReduceSum: return reduce_send_body(q, r);
      case Kernel::ReduceBroadcast: {
        if (!ready(dq(q.pe, color::reduction_broadcast))) {
          stall(q);
          return false;
        }
        const Wave v = take(q.pe, color::reduction_broadcast);
        wr(q, A(0), {dt, v.payload});
        at_least(red(q.bcast_count).done, now);
        ++q.bcast_count;
        busy(q);
        q.step = 100;
        return false;
      }
    }
    return true;
  }

  int tx_color(const Proc& q) const { return (q.fx + q.fy) % 2 == 0 ? color::c1 : color::c0; }
  int rx_color(const Proc& q) const { return (q.fx + q.fy) % 2 == 0 ? color::c0 : color::c1; }

  bool advance_both(Proc& q) {
    if (!can_inject(q.pe, color::c0) || !can_inject(q.pe, color::c1)) {
      stall(q);
      return false;
    }
    inject(q.pe, color::c0, {0, WaveKind::Advance});
    inject(q.pe, color::c1, {0, WaveKind::Advance});
    q.phase = (q.phase + 1) % 4;
    busy(q);
    return true;
  }

  bool shift_body(Proc& q, const RpcDef& r) {
    const int target = (r.axis == dsl::ShiftAxis::Row ? 1 : 0) + (r.offset > 0 ? 2 : 0);
    const DType dt = r.dtype;
    const int w = words_per_element(dt);
    switch (q.step) {
      case 0:
        q.send = rd_i16(q, q.args[2]) != 0;
        q.recv = rd_i16(q, q.args[3]) != 0;
        q.len = q.args[4];
        q.sent = q.got = 0;
        if ((q.send || q.recv) && q.len > 0) ++q.active;
        q.step = 1;
        [[fallthrough]];
      case 1:
        if (q.phase != target) {
          advance_both(q);
          return false;
        }
        q.step = 2;
        [[fallthrough]];
      case 2: {
        const bool sending = q.send && q.sent < q.len;
        const bool receiving = q.recv && q.got < q.len;
        if (!sending && !receiving) {
          q.step = 3;
          return shift_body(q, r);
        }
        bool did = false;
        if (sending && can_inject(q.pe, tx_color(q))) {
          inject(q.pe, tx_color(q), {rd(q, q.args[0] + q.sent * w, dt).bits});
          ++q.sent;
          did = true;
        }
        if (receiving && ready(dq(q.pe, rx_color(q)))) {
          wr(q, q.args[1] + q.got * w, {dt, take(q.pe, rx_color(q)).payload});
          ++q.got;
          did = true;
        }
        if (did) busy(q);
        else stall(q);
        return false;
      }
      case 3:
        if (advance_both(q)) q.step = 100;
        return false;
      default: return true;
    }
  }

  bool outermost_in_column(const Proc& q) const { return q.fy == 0 || q.fy == l.field_h - 1; }

  bool reduce_send_body(Proc& q, const RpcDef& r) {
    const DType dt = r.dtype;
    const int w = words_per_element(dt);
    switch (q.step) {
      case 0: {
        q.instance = q.reduce_count++;
        at_most(red(q.instance).start, now);
        red(q.instance).to_exec = q.args[0] == 0;
        const int len = effective_len(q, 2, 3, false);
        Scalar acc = dt == DType::F32 ? Scalar::f32(0.0f) : Scalar::i16(0);
        for (int k = 0; k < len; ++k) acc = apply(BinOp::Add, acc, rd(q, q.args[1] + k * w, dt));
        q.acc = acc;
        q.step = 1;
        wait(q, len);
        if (len > 0) return false;
        [[fallthrough]];
      }
      case 1:
        if (!can_inject(q.pe, color::reduction_1)) {
          stall(q);
          return false;
        }
        inject(q.pe, color::reduction_1, {q.acc.bits});
        busy(q);
        q.step = 2;
        return false;
      case 2:
        if (!can_inject(q.pe, color::reduction_1)) {
          stall(q);
          return false;
        }
        inject(q.pe, color::reduction_1, {0, outermost_in_column(q) ? WaveKind::Reset : WaveKind::Flip});
        busy(q);
        q.step = 100;
        return false;
      default: return true;
    }
  }

  // Receives `count` values on color c into q.acc. Returns true when done.
  bool accumulate(Proc& q, int c, int count, DType dt) {
    if (q.got >= count) return true;
    if (!ready(dq(q.pe, c))) {
      stall(q);
      return false;
    }
    q.acc = apply(BinOp::Add, q.acc, {dt, take(q.pe, c).payload});
    ++q.got;
    busy(q);
    return false;
  }

  bool reduction_body(Proc& q) {
    const RpcDef& r = def(q.rpc);
    const DType dt = r.dtype;
    const int m = l.merge_x;
    const bool inner = q.x == m - 1 || q.x == m;
    const bool final_tile = q.x == m && q.upper;
    const bool local = q.args[0] != 0;
    auto send = [&](int c, Wave w, int next) {
      if (!can_inject(q.pe, c)) {
        stall(q);
        return;
      }
      inject(q.pe, c, w);
      busy(q);
      q.step = next;
    };
    switch (q.step) {
      case 0:
        q.instance = q.reduce_count++;
        q.acc = dt == DType::F32 ? Scalar::f32(0.0f) : Scalar::i16(0);
        q.got = 0;
        q.step = 1;
        [[fallthrough]];
      case 1:
        if (!accumulate(q, color::reduction_1, l.field_h / 2, dt)) return false;
        at_least(red(q.instance).stage1, now);
        q.got = 0;
        q.step = inner ? 4 : 2;
        if (inner) return reduction_body(q);
        [[fallthrough]];
      case 2:
        send(color::reduction_2, {q.acc.bits}, 3);
        return false;
      case 3: {
        const bool outermost = q.fx == 0 || q.fx == l.field_w - 1;
        send(color::reduction_2, {0, outermost ? WaveKind::Reset : WaveKind::Flip}, 100);
        return false;
      }
      case 4:
        if (!accumulate(q, color::reduction_2, l.field_w / 2 - 1, dt)) return false;
        at_least(red(q.instance).stage2, now);
        q.got = 0;
        q.step = !local ? 5 : final_tile ? 6 : 7;
        return reduction_body(q);
      case 5:
        send(color::reduction_3, {q.acc.bits}, 100);
        return false;
      case 6:
        if (!accumulate(q, color::reduction_4, 3, dt)) return false;
        at_least(red(q.instance).stage3, now);
        q.step = 8;
        [[fallthrough]];
      case 8:
        send(color::reduction_broadcast, {q.acc.bits}, 100);
        return false;
      case 7:
        send(color::reduction_4, {q.acc.bits}, 100);
        return false;
      default: return true;
    }
  }

  // ------------------------------------------------------------- executive

  std::vector<std::uint16_t>& emem() { return mem[static_cast<std::size_t>(exec_mem)]; }
  Scalar eload(int addr, DType dt) { return load(emem(), l.exec_x, l.y_ctrl, addr, dt); }
  Scalar earg(const lower::ExecArg& a, DType dt) { return a.imm ? a.value : eload(a.addr, dt); }

  // Response PEs have sent everything they were asked for.
  bool resp_idle() const { return coord_arrival < 0 && send_section < 0; }

  // Earliest cycle by which every item already on the buses or queued at the
  // merge PE can have left it, one item per bus per cycle.
  std::int64_t tail_clear() const {
    std::int64_t f = now - 1, g = now - 1;
    for (std::size_t k = 0; k < merge_ctrl.size(); ++k) f = std::max(f + 1, now);
    for (const auto& it : bus[0]) f = std::max(f + 1, it.ready);
    for (const auto& it : bus[1]) g = std::max(g + 1, it.ready);
    return std::max(f, g);
  }

  // A new broadcast may overlap the previous drain when that drain clears
  // before the new section's first bus item is sent.
  bool can_broadcast() {
    if (!resp_idle() || pending_splices > 0) return false;
    if (!can_inject(merge_pe, color::ctrl) || !can_inject(merge_pe, color::args)) return false;
    return draining.empty() || tail_clear() <= now + cfg.control_path_latency - 2 - cfg.hop_latency;
  }

  void log_strip(StripEvent e) {
    e.cycle = now;
    strip.push_back(e);
  }

  void step_exec() {
    exec_blocked = false;
    if (exec_halted) return;
    if (pc >= vm.exec.size()) throw InternalError("executive ran past its program");
    const lower::ExecInstr& i = vm.exec[pc];
    auto done = [&](std::size_t next) {
      pc = next;
      ++exec_busy;
      activity = true;
    };
    auto blocked = [&] {
      ++exec_stall;
      exec_blocked = true;
    };
    switch (i.op) {
      case lower::ExecOp::IterInit:
        counters[i.loop] = i.a;
        done(pc + 1);
        return;
      case lower::ExecOp::IterTest:
        done(counters.at(i.loop) < i.a ? pc + 1 : static_cast<std::size_t>(i.target));
        return;
      case lower::ExecOp::IterNext:
        counters.at(i.loop) += i.a;
        done(static_cast<std::size_t>(i.target));
        return;
      case lower::ExecOp::LoadGA: {
        const int w = words_per_element(i.dtype);
        store(emem(), l.exec_x, l.y_ctrl, i.dst, eload(i.src + counters.at(i.loop) * w, i.dtype));
        done(pc + 1);
        return;
      }
      case lower::ExecOp::GsOp: {
        const Scalar x = earg(i.x, i.dtype);
        const Scalar v = i.gs == lower::GsOp::Copy
                             ? x
                             : apply(static_cast<BinOp>(static_cast<int>(i.gs) - 1), x, earg(i.y, i.dtype));
        store(emem(), l.exec_x, l.y_ctrl, i.dst, v);
        done(pc + 1);
        return;
      }
      case lower::ExecOp::CmpBranch:
        if (compare(i.cmp, earg(i.x, i.dtype), earg(i.y, i.dtype))) {
          exits_.push_back({i.loop, counters.at(i.loop)});
          done(static_cast<std::size_t>(i.target));
        } else {
          done(pc + 1);
        }
        return;
      case lower::ExecOp::Splice: {
        if (!resp_idle()) return blocked();
        int pos = -1, offset = 0;
        for (int k = 0; k < l.n_resp && pos < 0; ++k) {
          const auto& c = vm.resp[static_cast<std::size_t>(k)].chunks[static_cast<std::size_t>(i.a)];
          if (i.b >= c.args_begin && i.b < c.args_end) {
            pos = k;
            offset = c.offset + (i.b - c.args_begin);
          }
        }
        if (pos < 0) throw InternalError(fmt::format("splice outside section {}", i.a));
        const std::uint16_t word = emem()[static_cast<std::size_t>(i.src + i.half)];
        const RespState& r = resp[static_cast<std::size_t>(pos)];
        const int id = open_message(exec_pe, r.pe, {static_cast<std::uint16_t>(offset), word}, Termination::Length);
        msg_splice[static_cast<std::size_t>(id)] = 1;
        ++pending_splices;
        log_strip({StripEvent::Kind::Splice, 0, i.a, instance, i.b, color::args, false, word});
        if (cfg.trace)
          trace.push_back({now, l.exec_x, l.y_ctrl, r.x, l.y_ctrl, color::args, TraceEvent::Kind::Splice,
                           WaveKind::Header, word});
        done(pc + 1);
        return;
      }
      case lower::ExecOp::Broadcast: {
        if (!can_broadcast()) return blocked();
        ++instance;
        send_section = i.a;
        coord_section = i.a;
        coord_arrival = now + cfg.control_path_latency - 3 - cfg.hop_latency;
        timer(coord_arrival);
        sender = {0, 0};
        draining.push_back({i.a, instance, {0, 0}});
        st.sections.push_back({i.a, instance, now, -1, -1});
        log_strip({StripEvent::Kind::Broadcast, 0, i.a, instance, -1, -1, false, 0});
        if (cfg.trace)
          trace.push_back({now, l.exec_x, l.y_ctrl, l.merge_x, l.y_ctrl, color::ctrl_coord,
                           TraceEvent::Kind::Broadcast, WaveKind::Data, static_cast<std::uint32_t>(i.a)});
        done(pc + 1);
        return;
      }
      case lower::ExecOp::RecvReduced: {
        if (exec_recv == 0) exec_acc = i.dtype == DType::F32 ? Scalar::f32(0.0f) : Scalar::i16(0);
        if (!ready(dq(exec_pe, color::reduction_3))) return blocked();
        exec_acc = apply(BinOp::Add, exec_acc, {i.dtype, take(exec_pe, color::reduction_3).payload});
        if (++exec_recv < i.a) {
          ++exec_busy;
          return;
        }
        exec_recv = 0;
        store(emem(), l.exec_x, l.y_ctrl, i.dst, exec_acc);
        ReductionStat& rs = red(exec_reduce_count++);
        rs.stage3 = rs.done = now;
        done(pc + 1);
        return;
      }
      case lower::ExecOp::Halt:
        exec_halted = true;
        activity = true;
        return;
    }
  }

  // ----------------------------------------------------------------- strip

  void step_strip() {
    if (coord_arrival >= 0 && now >= coord_arrival) {
      for (auto& r : resp) {
        r.section = coord_section;
        r.ready_at = now + 2;
        r.cursor = {0, 0};
        r.done = {false, false};
        r.busy += 2;
      }
      timer(now + 2);
      coord_arrival = -1;
      activity = true;
    }
    if (send_section >= 0) send_chunks(send_section);
    if (!draining.empty()) step_merge();
  }

  void send_chunks(int s) {
    for (int b = 0; b < 2; ++b) {
      const int k = sender[static_cast<std::size_t>(b)];
      if (k >= l.n_resp) continue;
      RespState& r = resp[static_cast<std::size_t>(k)];
      if (r.section != s || now < r.ready_at || r.done[static_cast<std::size_t>(b)]) continue;
      if (static_cast<int>(bus[static_cast<std::size_t>(b)].size()) >= depth) continue;
      const auto& c = vm.resp[static_cast<std::size_t>(k)].chunks[static_cast<std::size_t>(s)];
      const int args_len = c.args_end - c.args_begin;
      const int len = b == 0 ? c.ctrl_end - c.ctrl_begin : args_len;
      const int base = b == 0 ? c.offset + args_len : c.offset;
      int& cur = r.cursor[static_cast<std::size_t>(b)];
      BusItem item;
      item.section = s;
      item.instance = instance;
      item.ready = now + static_cast<std::int64_t>(r.hops) * cfg.hop_latency + 1;
      if (cur < len) {
        item.payload = r.mem[static_cast<std::size_t>(base + cur)];
        ++cur;
      } else {
        item.marker = true;
        r.done[static_cast<std::size_t>(b)] = true;
        ++sender[static_cast<std::size_t>(b)];
        if (r.done[0] && r.done[1]) r.section = -1;
      }
      bus[static_cast<std::size_t>(b)].push_back(item);
      timer(item.ready);
      ++r.busy;
      activity = true;
      log_strip({StripEvent::Kind::RespToMerge, 0, s, instance, k, b == 0 ? color::ctrl : color::args, item.marker,
                 item.payload});
      if (cfg.trace)
        trace.push_back({now, r.x, l.y_ctrl, l.merge_x, l.y_ctrl, b == 0 ? color::ctrl_dist : color::args_dist,
                         TraceEvent::Kind::RespToMerge, item.marker ? WaveKind::Flip : WaveKind::Data,
                         item.payload});
    }
    if (sender[0] >= l.n_resp && sender[1] >= l.n_resp) send_section = -1;
  }

  Draining& drain_of(int inst) {
    for (auto& d : draining)
      if (d.instance == inst) return d;
    throw InternalError(fmt::format("bus item for retired broadcast {}", inst));
  }

  void merge_exit(int c, const BusItem& it) {
    SectionStat& ss = st.sections.at(static_cast<std::size_t>(it.instance));
    if (ss.first_exit < 0) ss.first_exit = now;
    ss.last_exit = now;
    log_strip({StripEvent::Kind::MergeExit, 0, it.section, it.instance, -1, c, false, it.payload});
    if (cfg.trace)
      trace.push_back({now, l.merge_x, l.y_ctrl, l.merge_x, l.y_ctrl, c, TraceEvent::Kind::MergeExit, WaveKind::Data,
                       it.payload});
  }

  void step_merge() {
    bool did = false;
    auto& bc = bus[0];
    if (!bc.empty() && bc.front().ready <= now) {
      if (bc.front().marker) {
        ++drain_of(bc.front().instance).markers[0];
        bc.pop_front();
        did = true;
      } else if (static_cast<int>(merge_ctrl.size()) < cfg.merge_fifo) {
        merge_ctrl.push_back(bc.front());
        bc.pop_front();
        did = true;
      }
    }
    if (!merge_ctrl.empty() && can_inject(merge_pe, color::ctrl)) {
      const BusItem it = merge_ctrl.front();
      merge_ctrl.pop_front();
      inject(merge_pe, color::ctrl, {vencode.at(it.payload)});
      merge_exit(color::ctrl, it);
      did = true;
    }
    auto& ba = bus[1];
    if (!ba.empty() && ba.front().ready <= now) {
      if (ba.front().marker) {
        ++drain_of(ba.front().instance).markers[1];
        ba.pop_front();
        did = true;
      } else if (can_inject(merge_pe, color::args)) {
        inject(merge_pe, color::args, {ba.front().payload});
        merge_exit(color::args, ba.front());
        ba.pop_front();
        did = true;
      }
    }
    if (did) {
      ++merge_busy;
      activity = true;
    }
    while (!draining.empty()) {
      const Draining& d = draining.front();
      const bool queued = !merge_ctrl.empty() && merge_ctrl.front().instance == d.instance;
      if (d.markers[0] < l.n_resp || d.markers[1] < l.n_resp || queued) break;
      draining.pop_front();
    }
  }

  // -------------------------------------------------------------- messages

  int open_message(int src, int dst, std::vector<std::uint16_t> payload, Termination t) {
    const int n = static_cast<int>(payload.size());
    const bool control = t == Termination::Control || (t == Termination::Auto && n > kMaxLengthField);
    if (!control && n > kMaxLengthField)
      throw ExecutionFault(fmt::format("message of {} words exceeds the {}-word length field; use control termination",
                                       n, kMaxLengthField));
    MessageRecord r;
    r.id = static_cast<int>(msgs.size());
    r.src_x = px(src);
    r.src_y = py(src);
    r.dst_x = px(dst);
    r.dst_y = py(dst);
    r.length = n;
    r.control_terminated = control;
    r.path.push_back({r.src_x, r.src_y});
    auto& ob = outbox[static_cast<std::size_t>(src)];
    ob.push_back({static_cast<std::uint32_t>(control ? 0 : n), WaveKind::Header, 0, r.id});
    for (auto w : payload) ob.push_back({w, WaveKind::Data, 0, r.id});
    if (control) ob.push_back({0, WaveKind::Tail, 0, r.id});
    r.payload = std::move(payload);
    msgs.push_back(std::move(r));
    msg_last_dir.push_back(-1);
    msg_splice.push_back(0);
    ++msgs_open;
    return static_cast<int>(msgs.size()) - 1;
  }

  void step_messages() {
    for (int pe = 0; pe < N; ++pe) {
      auto& ob = outbox[static_cast<std::size_t>(pe)];
      if (!ob.empty() && can_inject(pe, color::message)) {
        Wave w = ob.front();
        ob.pop_front();
        if (w.kind == WaveKind::Header) msgs[static_cast<std::size_t>(w.msg)].injected = now;
        inject(pe, color::message, w);
      }
    }
    // Deliveries only land on routers that have been active; scan those.
    for (int pe = 0; pe < N; ++pe) {
      Fifo& f = dq(pe, color::message);
      if (!ready(f)) continue;
      const Wave w = take(pe, color::message);
      Assembly& a = assembly[static_cast<std::size_t>(pe)];
      MessageRecord& r = msgs[static_cast<std::size_t>(w.msg)];
      if (w.kind == WaveKind::Header) {
        a.msg = w.msg;
        a.words.clear();
      } else if (w.kind == WaveKind::Data) {
        a.words.push_back(static_cast<std::uint16_t>(w.payload));
      }
      const bool complete = r.control_terminated ? w.kind == WaveKind::Tail
                                                 : static_cast<int>(a.words.size()) == r.length;
      if (!complete) continue;
      r.delivered = now;
      --msgs_open;
      const int k = resp_of[static_cast<std::size_t>(pe)];
      if (k >= 0 && msg_splice[static_cast<std::size_t>(w.msg)]) {
        resp[static_cast<std::size_t>(k)].mem.at(a.words[0]) = a.words[1];
        --pending_splices;
      } else {
        inbox[static_cast<std::size_t>(pe)].push_back(a.words);
      }
      a.msg = -1;
    }
  }

  // --------------------------------------------------------------- driver

  bool finished() const {
    if (!exec_halted || live > 0 || msgs_open > 0 || !draining.empty() || send_section >= 0 || coord_arrival >= 0) return false;
    for (const auto& q : procs)
      if (q.st != St::Idle || q.wait > now) return false;
    return true;
  }

  bool step() {
    if (finished()) return false;
    activity = false;
    router_phase();
    step_exec();
    step_strip();
    for (auto& q : procs) step_proc(q);
    step_messages();
    if (activity) {
      last_progress = now;
    } else {
      while (!timers.empty() && timers.top() <= now) timers.pop();
      if (!timers.empty()) {
        const std::int64_t next = timers.top();
        const std::int64_t skipped = next - now - 1;
        if (skipped > 0) {
          for (auto& q : procs)
            if (q.blocked) q.stall += skipped;
          if (exec_blocked) exec_stall += skipped;
          now += skipped;
        }
        last_progress = next;
      } else if (!finished()) {
        now = last_progress + cfg.deadlock_window;
      }
    }
    ++now;
    if (now - last_progress > cfg.deadlock_window) throw ExecutionFault(deadlock_report());
    if (now > cfg.max_cycles) throw ExecutionFault(fmt::format("cycle limit {} reached", cfg.max_cycles));
    return true;
  }

  std::string deadlock_report() {
    std::string out = fmt::format("deadlock: no progress for {} cycles at cycle {}\n", cfg.deadlock_window, now);
    int shown = 0;
    for (int k = 0; k < N * kRouted && shown < 40; ++k)
      for (int d = 0; d < 5; ++d) {
        const Fifo& f = in[static_cast<std::size_t>(k * 5 + d)];
        if (f.q.empty()) continue;
        const int pe = k / kRouted, c = k % kRouted;
        const auto* ring = rings[static_cast<std::size_t>(k)];
        out += fmt::format("  PE ({}, {}) {} input {}: {} waiting, head {}, route [{}]\n", px(pe), py(pe),
                           lower::color_name(c), lower::to_string(static_cast<Dir>(d)), f.q.size(),
                           to_string(f.q.front().kind),
                           ring ? lower::format_route((*ring)[state[static_cast<std::size_t>(k)]]) : "none");
        ++shown;
      }
    for (int k = 0; k < N * kRouted && shown < 60; ++k) {
      const Fifo& f = deliver[static_cast<std::size_t>(k)];
      if (f.q.empty()) continue;
      out += fmt::format("  PE ({}, {}) {} delivered: {} unread\n", px(k / kRouted), py(k / kRouted),
                         lower::color_name(k % kRouted), f.q.size());
      ++shown;
    }
    for (const auto& q : procs)
      if (q.st != St::Idle && shown++ < 80)
        out += fmt::format("  PE ({}, {}) busy in {} step {}\n", q.x, q.y, def(q.rpc).name, q.step);
    if (!exec_halted) out += fmt::format("  executive at {}: {}\n", pc, lower::format_instr(vm.exec[pc]));
    return out;
  }

  ref::Store collect() {
    ref::Store s;
    for (const auto& v : vm.vars) {
      if (!v.output) continue;
      if (v.address < 0) throw InternalError(fmt::format("output '{}' has no address", v.name));
      ref::VarValue out;
      out.name = v.name;
      out.kind = v.kind;
      out.dtype = v.dtype;
      out.shape = v.shape;
      out.output = true;
      out.tainted = v.tainted;
      const int w = words_per_element(v.dtype);
      auto worker = [&](int fx, int fy, int elem) {
        const int pe = l.index(l.grid_x(fx), l.grid_y(fy));
        return load(mem[static_cast<std::size_t>(mem_of[static_cast<std::size_t>(pe)])], l.grid_x(fx), l.grid_y(fy),
                    v.address + elem * w, v.dtype);
      };
      switch (v.kind) {
        case OodsKind::GS: out.values.push_back(eload(v.address, v.dtype)); break;
        case OodsKind::GA:
          for (int k = 0; k < v.elements; ++k) out.values.push_back(eload(v.address + k * w, v.dtype));
          break;
        case OodsKind::ULS: out.values.push_back(worker(0, 0, 0)); break;
        case OodsKind::LS:
        case OodsKind::LA: {
          const int X = static_cast<int>(v.shape[0]), Y = static_cast<int>(v.shape[1]);
          for (int x = 0; x < X; ++x)
            for (int y = 0; y < Y; ++y)
              for (int k = 0; k < v.elements; ++k) out.values.push_back(worker(x, y, k));
          break;
        }
      }
      s.vars.push_back(std::move(out));
    }
    return s;
  }

  Stats stats() const {
    Stats s = st;
    s.cycles = now;
    std::map<Role, RoleStats> roles;
    for (const auto& q : procs) {
      RoleStats& r = roles[q.reduction ? Role::Reduction : Role::Worker];
      ++r.pes;
      r.busy += q.busy;
      r.stall += q.stall;
    }
    RoleStats& e = roles[Role::Executive];
    e.pes = 1;
    e.busy = exec_busy;
    e.stall = exec_stall;
    RoleStats& m = roles[Role::Merge];
    m.pes = 1;
    m.busy = merge_busy;
    for (const auto& r : resp) {
      RoleStats& rs = roles[l.role(r.x, l.y_ctrl)];
      ++rs.pes;
      rs.busy += r.busy;
    }
    s.roles.assign(roles.begin(), roles.end());
    s.in_flight = live;
    return s;
  }
};

std::string Stats::text() const {
  std::string out = fmt::format("cycles {}\n", cycles);
  for (const auto& [role, r] : roles)
    out += fmt::format("role {} pes {} busy {} stall {}\n", lower::to_string(role), r.pes, r.busy, r.stall);
  std::map<int, std::vector<const SectionStat*>> by;
  for (const auto& s : sections) by[s.section].push_back(&s);
  for (const auto& [idx, list] : by) {
    std::int64_t lo = -1, hi = -1, dlo = -1, dhi = -1;
    for (const auto* s : list) {
      const std::int64_t lat = s->first_exit - s->broadcast, drain = s->last_exit - s->broadcast;
      lo = lo < 0 ? lat : std::min(lo, lat);
      hi = std::max(hi, lat);
      dlo = dlo < 0 ? drain : std::min(dlo, drain);
      dhi = std::max(dhi, drain);
    }
    out += fmt::format("section {} broadcasts {} first_exit_latency {}..{} last_exit_latency {}..{}\n", idx,
                       list.size(), lo, hi, dlo, dhi);
  }
  for (std::size_t i = 0; i < reductions.size(); ++i) {
    const ReductionStat& r = reductions[i];
    out += fmt::format("reduction {} target {} start {} stage1 +{} stage2 +{} stage3 +{} done +{}\n", i,
                       r.to_exec ? "executive" : "workers", r.start, r.stage1 - r.start, r.stage2 - r.start,
                       r.stage3 - r.start, r.done - r.start);
  }
  for (const auto& r : rpcs)
    if (r.invocations)
      out += fmt::format("rpc {} invocations {} setup {} body {} max_setup {} max_body {} arg_wait {}\n", r.name,
                         r.invocations, r.setup_cycles, r.body_cycles, r.max_setup, r.max_body, r.arg_wait);
  out += fmt::format("wavelets injected {} copies {} consumed {} absorbed {} in_flight {} hops {}\n", injected,
                     copies, consumed, absorbed, in_flight, hops);
  return out;
}

Machine::Machine(const lower::VMachineProgram& vm, const SimConfig& cfg) : p_(std::make_unique<Impl>(vm, cfg)) {}
Machine::~Machine() = default;
Machine::Machine(Machine&&) noexcept = default;
Machine& Machine::operator=(Machine&&) noexcept = default;

bool Machine::step() { return p_->step(); }

RunResult Machine::run() {
  while (p_->step()) {
  }
  return {p_->now, p_->exits_};
}

bool Machine::halted() const { return p_->finished(); }
std::int64_t Machine::cycle() const { return p_->now; }
const lower::FabricLayout& Machine::layout() const { return p_->l; }
ref::Store Machine::store() const { return p_->collect(); }
std::vector<ref::LoopExit> Machine::exits() const { return p_->exits_; }
Stats Machine::stats() const { return p_->stats(); }
const std::vector<TraceEvent>& Machine::trace() const { return p_->trace; }
const std::vector<StripEvent>& Machine::strip_log() const { return p_->strip; }
const std::vector<MessageRecord>& Machine::messages() const { return p_->msgs; }

int Machine::send_message(int src_x, int src_y, int dst_x, int dst_y, std::vector<std::uint16_t> payload,
                          Termination t) {
  auto on_grid = [&](int x, int y) { return x >= 0 && y >= 0 && x < p_->W && y < p_->H; };
  if (!on_grid(src_x, src_y) || !on_grid(dst_x, dst_y))
    throw ExecutionFault(fmt::format("message ({}, {}) -> ({}, {}) leaves the {}x{} grid", src_x, src_y, dst_x,
                                     dst_y, p_->W, p_->H));
  return p_->open_message(p_->l.index(src_x, src_y), p_->l.index(dst_x, dst_y), std::move(payload), t);
}

std::vector<std::vector<std::uint16_t>> Machine::inbox(int x, int y) const {
  return p_->inbox[static_cast<std::size_t>(p_->l.index(x, y))];
}

void Machine::inject(int x, int y, int c, WaveKind kind, std::uint32_t payload) {
  if (c < 0 || c >= kRouted || c == color::message) throw InternalError("inject needs a routed, non-message color");
  p_->inject(p_->l.index(x, y), c, {payload, kind});
}

std::vector<int> Machine::participation() const {
  std::vector<int> out(static_cast<std::size_t>(p_->l.field_w * p_->l.field_h), 0);
  for (const auto& q : p_->procs)
    if (!q.reduction) out[static_cast<std::size_t>(q.fx * p_->l.field_h + q.fy)] = q.active;
  return out;
}

int Machine::route_state(int x, int y, int c) const {
  return p_->state[static_cast<std::size_t>(p_->key(p_->l.index(x, y), c))];
}

std::uint16_t Machine::word(int x, int y, int address) const {
  const int m = p_->mem_of[static_cast<std::size_t>(p_->l.index(x, y))];
  if (m < 0) throw InternalError(fmt::format("PE ({}, {}) has no data memory", x, y));
  return p_->mem[static_cast<std::size_t>(m)].at(static_cast<std::size_t>(address));
}

}  // namespace machlite::sim
