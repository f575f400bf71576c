#include "machlite/ref/interp.hpp"

#include <fmt/format.h>

#include <cmath>
#include <map>

namespace machlite::ref {

using irg::Edge;
using irg::Graph;
using irg::IRGraph;
using irg::MemLoc;
using irg::MemRole;
using irg::Node;
using irg::Op;

const VarValue* Store::find(std::string_view name) const {
  for (const auto& v : vars)
    if (v.name == name) return &v;
  return nullptr;
}

namespace {

std::string format_scalar(const Scalar& s) {
  if (s.dtype == DType::I16) return fmt::format("{}", s.as_i16());
  return fmt::format("{:.9g}", s.as_f32());
}

int worker_count(const IRGraph& g) { return g.grid.width * g.grid.height; }

class SymbolicStorage final : public Storage {
 public:
  explicit SymbolicStorage(const IRGraph& g) : g_(g) {
    data_.resize(g.memlocs.size());
    for (const auto& m : g.memlocs) {
      const int pes = m.placement == Placement::Worker ? worker_count(g) : 1;
      data_[static_cast<std::size_t>(m.id)].assign(static_cast<std::size_t>(pes * m.elements),
                                                   m.dtype == DType::F32 ? Scalar::f32(0) : Scalar::i16(0));
    }
  }
  Scalar load(int m, int pe, int elem) const override { return data_.at(index(m, pe, elem)).at(slot(m, pe, elem)); }
  void store(int m, int pe, int elem, Scalar v) override { data_.at(index(m, pe, elem)).at(slot(m, pe, elem)) = v; }

 private:
  std::size_t index(int m, int, int) const { return static_cast<std::size_t>(m); }
  std::size_t slot(int m, int pe, int elem) const {
    const MemLoc& ml = g_.mem(m);
    if (elem < 0 || elem >= ml.elements)
      throw InternalError(fmt::format("element {} outside '{}' ({} elements)", elem, ml.name, ml.elements));
    return static_cast<std::size_t>(pe * ml.elements + elem);
  }
  const IRGraph& g_;
  std::vector<std::vector<Scalar>> data_;
};

class AddressedStorage final : public Storage {
 public:
  AddressedStorage(const IRGraph& g, const mem::SymbolTable& st, const mem::MemConfig& cfg)
      : g_(g), st_(st), worker_cap_(cfg.worker_capacity), ctrl_cap_(cfg.controller_capacity) {
    worker_.assign(static_cast<std::size_t>(worker_count(g)) * static_cast<std::size_t>(worker_cap_), 0);
    ctrl_.assign(static_cast<std::size_t>(ctrl_cap_), 0);
  }

  Scalar load(int m, int pe, int elem) const override {
    const MemLoc& ml = g_.mem(m);
    const std::size_t a = addr(ml, pe, elem);
    const auto& mem = ml.placement == Placement::Worker ? worker_ : ctrl_;
    if (ml.dtype == DType::I16) return Scalar::i16(static_cast<std::int16_t>(mem[a]));
    return Scalar{DType::F32, static_cast<std::uint32_t>(mem[a]) | (static_cast<std::uint32_t>(mem[a + 1]) << 16)};
  }

  void store(int m, int pe, int elem, Scalar v) override {
    const MemLoc& ml = g_.mem(m);
    const std::size_t a = addr(ml, pe, elem);
    auto& mem = ml.placement == Placement::Worker ? worker_ : ctrl_;
    mem[a] = static_cast<std::uint16_t>(v.bits & 0xffff);
    if (ml.dtype == DType::F32) mem[a + 1] = static_cast<std::uint16_t>(v.bits >> 16);
  }

 private:
  std::size_t addr(const MemLoc& ml, int pe, int elem) const {
    if (elem < 0 || elem >= ml.elements)
      throw InternalError(fmt::format("element {} outside '{}' ({} elements)", elem, ml.name, ml.elements));
    const int w = words_per_element(ml.dtype);
    const int word = st_.at(ml.id) + elem * w;
    const int cap = ml.placement == Placement::Worker ? worker_cap_ : ctrl_cap_;
    if (word < 0 || word + w > cap)
      throw InternalError(fmt::format("address {} of '{}' outside memory", word, ml.name));
    const std::size_t base = ml.placement == Placement::Worker
                                 ? static_cast<std::size_t>(pe) * static_cast<std::size_t>(worker_cap_)
                                 : 0;
    return base + static_cast<std::size_t>(word);
  }

  const IRGraph& g_;
  const mem::SymbolTable& st_;
  int worker_cap_;
  int ctrl_cap_;
  std::vector<std::uint16_t> worker_;
  std::vector<std::uint16_t> ctrl_;
};

class Interp {
 public:
  Interp(const IRGraph& g, Storage& s) : g_(g), s_(s), w_(g.grid.width), h_(g.grid.height) {}

  InterpResult run() {
    InterpResult r;
    exec(g_.root);
    r.exits = std::move(exits_);
    r.nodes_executed = executed_;
    return r;
  }

 private:
  enum class Flow { Normal, Exit };

  Flow exec(const Graph& gr) {
    for (const auto& n : gr.nodes) {
      ++executed_;
      switch (n.op) {
        case Op::Loop: {
          const Graph& body = gr.subgraphs.at(n.id);
          for (int c = n.start; c < n.stop; c += n.step) {
            counters_[n.id] = c;
            if (exec(body) == Flow::Exit) {
              if (exit_loop_ == n.id) break;
              return Flow::Exit;
            }
          }
          counters_.erase(n.id);
          break;
        }
        case Op::Exit: {
          const Scalar a = operand(n.in[0], 0, 0);
          const Scalar b = operand(n.in[1], 0, 0);
          if (compare(n.cmp, a, b)) {
            exits_.push_back({n.loop, counters_.at(n.loop)});
            exit_loop_ = n.loop;
            return Flow::Exit;
          }
          break;
        }
        case Op::LoadGA: s_.store(n.result, 0, 0, s_.load(n.ga, 0, counters_.at(n.loop))); break;
        case Op::TransferExport:
        case Op::TransferImport: break;
        case Op::Copy: copy(n); break;
        case Op::Binary: binary(n); break;
        case Op::Gather: gather(n); break;
        case Op::Scatter: scatter(n); break;
        case Op::Shift: shift(n); break;
        case Op::Reduce: reduce(n); break;
      }
    }
    return Flow::Normal;
  }

  int pe_index(int x, int y) const { return x * h_ + y; }

  Scalar operand(const Edge& e, int pe, int k) const {
    if (e.literal()) return e.imm;
    const MemLoc& m = g_.mem(e.memloc);
    if (m.placement == Placement::Controller) return s_.load(e.memloc, 0, e.slice.mem.start);
    const int elem = e.slice.mem.length == 1 && !e.slice.mem.dynamic() ? e.slice.mem.start : e.slice.mem.start + k;
    return s_.load(e.memloc, pe, elem);
  }

  bool active(const Node& n, int mask_slot, int pe) const {
    return s_.load(n.masks.at(static_cast<std::size_t>(mask_slot)), pe, 0).as_i16() != 0;
  }

  int length(const MemSpan& span, int x, int y) const {
    if (!span.dynamic()) return span.length;
    const int stop = s_.load(span.dyn_var, pe_index(x, y), 0).as_i16();
    if (stop < 0 || stop > span.dyn_extent)
      throw ExecutionFault(fmt::format("PE ({}, {}): dynamic stop {} outside [0, {}]", x, y, stop,
                                       span.dyn_extent));
    return std::max(0, stop - span.start);
  }

  template <typename F>
  void for_pes(const Node& n, int mask_slot, F&& f) {
    for (int x = 0; x < w_; ++x)
      for (int y = 0; y < h_; ++y)
        if (active(n, mask_slot, pe_index(x, y))) f(x, y, pe_index(x, y));
  }

  void copy(const Node& n) {
    if (n.placement == Placement::Controller) {
      s_.store(n.result, 0, n.dest.mem.start, operand(n.in[0], 0, 0));
      return;
    }
    for_pes(n, 0, [&](int x, int y, int pe) {
      const int len = length(n.dest.mem, x, y);
      for (int k = 0; k < len; ++k) s_.store(n.result, pe, n.dest.mem.start + k, operand(n.in[0], pe, k));
    });
  }

  void binary(const Node& n) {
    if (n.placement == Placement::Controller) {
      s_.store(n.result, 0, 0, apply(n.binop, operand(n.in[0], 0, 0), operand(n.in[1], 0, 0)));
      return;
    }
    for_pes(n, 0, [&](int x, int y, int pe) {
      const int len = length(n.dest.mem, x, y);
      for (int k = 0; k < len; ++k)
        s_.store(n.result, pe, n.dest.mem.start + k,
                 apply(n.binop, operand(n.in[0], pe, k), operand(n.in[1], pe, k)));
    });
  }

  int index_at(const Edge& idx, int pe, int k) const { return operand(idx, pe, k).as_i16(); }

  void gather(const Node& n) {
    const Edge& s0 = n.in[0];
    const Edge& idx = n.in[1];
    const int s0_len = s0.slice.mem.length;
    for_pes(n, 0, [&](int x, int y, int pe) {
      const int len = n.dest.mem.length;
      for (int k = 0; k < len; ++k) {
        const int i = index_at(idx, pe, k);
        if (i < 0 || i >= s0_len)
          throw ExecutionFault(fmt::format("PE ({}, {}): gather index {} at element {} outside [0, {})", x,
                                           y, i, k, s0_len));
        Scalar v = s_.load(s0.memloc, pe, s0.slice.mem.start + i);
        if (n.fused) v = apply(n.binop, v, operand(n.in[2], pe, k));
        s_.store(n.result, pe, n.dest.mem.start + k, v);
      }
    });
  }

  void scatter(const Node& n) {
    const Edge& src = n.in[0];
    const Edge& idx = n.in[1];
    const int dst_len = n.dest.mem.length;
    for_pes(n, 0, [&](int x, int y, int pe) {
      const int len = idx.slice.mem.length;
      for (int k = 0; k < len; ++k) {
        const int i = index_at(idx, pe, k);
        if (i < 0 || i >= dst_len)
          throw ExecutionFault(fmt::format("PE ({}, {}): scatter index {} at element {} outside [0, {})", x,
                                           y, i, k, dst_len));
        Scalar v = operand(src, pe, k);
        const int at = n.dest.mem.start + i;
        if (n.accumulate) v = apply(BinOp::Add, s_.load(n.result, pe, at), v);
        s_.store(n.result, pe, at, v);
      }
    });
  }

  void shift(const Node& n) {
    const int dx = n.axis == dsl::ShiftAxis::Col ? n.offset : 0;
    const int dy = n.axis == dsl::ShiftAxis::Row ? n.offset : 0;
    const Edge& src = n.in[0];
    for_pes(n, 1, [&](int x, int y, int pe) {
      const int from = pe_index(x - dx, y - dy);
      for (int k = 0; k < n.dest.mem.length; ++k)
        s_.store(n.result, pe, n.dest.mem.start + k, s_.load(src.memloc, from, src.slice.mem.start + k));
    });
  }

  void reduce(const Node& n) {
    const Edge& src = n.in[0];
    double facc = 0.0;
    std::int64_t iacc = 0;
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) {
        const int pe = pe_index(x, y);
        if (!active(n, 0, pe)) continue;
        for (int k = 0; k < src.slice.mem.length; ++k) {
          const Scalar v = operand(src, pe, k);
          if (n.dtype == DType::F32)
            facc += static_cast<double>(v.as_f32());
          else
            iacc += v.as_i16();
        }
      }
    const Scalar r = n.dtype == DType::F32 ? Scalar::f32(static_cast<float>(facc)) : Scalar::i16(iacc);
    if (g_.mem(n.result).placement == Placement::Controller) {
      s_.store(n.result, 0, 0, r);
      return;
    }
    for (int pe = 0; pe < w_ * h_; ++pe) s_.store(n.result, pe, 0, r);
  }

  const IRGraph& g_;
  Storage& s_;
  int w_, h_;
  std::map<int, int> counters_;
  std::vector<LoopExit> exits_;
  int exit_loop_ = -1;
  std::int64_t executed_ = 0;
};

}  // namespace

std::unique_ptr<Storage> make_symbolic_storage(const IRGraph& g) { return std::make_unique<SymbolicStorage>(g); }

std::unique_ptr<Storage> make_addressed_storage(const IRGraph& g, const mem::SymbolTable& st,
                                                const mem::MemConfig& cfg) {
  return std::make_unique<AddressedStorage>(g, st, cfg);
}

void load_initial(const IRGraph& g, Storage& s) {
  const int w = g.grid.width, h = g.grid.height;
  for (const auto& m : g.memlocs) {
    if (!m.initialized) continue;
    if (m.role == MemRole::Mask) {
      for (int pe = 0; pe < w * h; ++pe) s.store(m.id, pe, 0, m.init[static_cast<std::size_t>(pe)]);
      continue;
    }
    switch (m.oods) {
      case OodsKind::GS:
      case OodsKind::GA:
        for (int k = 0; k < m.elements; ++k) s.store(m.id, 0, k, m.init[static_cast<std::size_t>(k)]);
        break;
      case OodsKind::ULS:
        for (int pe = 0; pe < w * h; ++pe) s.store(m.id, pe, 0, m.init[0]);
        break;
      case OodsKind::LS:
      case OodsKind::LA: {
        const int X = static_cast<int>(m.shape[0]), Y = static_cast<int>(m.shape[1]);
        for (int x = 0; x < X; ++x)
          for (int y = 0; y < Y; ++y)
            for (int k = 0; k < m.elements; ++k)
              s.store(m.id, x * h + y, k, m.init[static_cast<std::size_t>((x * Y + y) * m.elements + k)]);
        break;
      }
    }
  }
}

std::vector<bool> reduction_taint(const IRGraph& g) {
  std::vector<bool> t(g.memlocs.size(), false);
  for (bool changed = true; changed;) {
    changed = false;
    irg::ordered_walk(g, [&](const Node& n, int) {
      if (n.result < 0 || t[static_cast<std::size_t>(n.result)]) return;
      bool taint = n.op == Op::Reduce && n.dtype == DType::F32;
      for (const auto& e : n.in)
        if (e.memloc >= 0 && t[static_cast<std::size_t>(e.memloc)]) taint = true;
      if (taint) {
        t[static_cast<std::size_t>(n.result)] = true;
        changed = true;
      }
    });
  }
  return t;
}

Store collect(const IRGraph& g, const Storage& s, const std::vector<bool>& tainted) {
  Store out;
  const int h = g.grid.height;
  for (const auto& m : g.memlocs) {
    if (m.role != MemRole::Variable) continue;
    VarValue v;
    v.name = m.name;
    v.kind = m.oods;
    v.dtype = m.dtype;
    v.shape = m.shape;
    v.output = m.is_output();
    v.tainted = tainted.at(static_cast<std::size_t>(m.id));
    switch (m.oods) {
      case OodsKind::GS:
      case OodsKind::ULS: v.values.push_back(s.load(m.id, 0, 0)); break;
      case OodsKind::GA:
        for (int k = 0; k < m.elements; ++k) v.values.push_back(s.load(m.id, 0, k));
        break;
      case OodsKind::LS:
      case OodsKind::LA: {
        const int X = static_cast<int>(m.shape[0]), Y = static_cast<int>(m.shape[1]);
        for (int x = 0; x < X; ++x)
          for (int y = 0; y < Y; ++y)
            for (int k = 0; k < m.elements; ++k) v.values.push_back(s.load(m.id, x * h + y, k));
        break;
      }
    }
    out.vars.push_back(std::move(v));
  }
  return out;
}

InterpResult interpret_with(const IRGraph& g, Storage& storage) {
  InterpResult r = Interp(g, storage).run();
  r.store = collect(g, storage, reduction_taint(g));
  return r;
}

InterpResult interpret(const IRGraph& g, const mem::SymbolTable* symbols, const mem::MemConfig& cfg) {
  std::unique_ptr<Storage> s = symbols ? make_addressed_storage(g, *symbols, cfg) : make_symbolic_storage(g);
  load_initial(g, *s);
  return interpret_with(g, *s);
}

std::string dump(const Store& s) {
  std::string out;
  for (const auto& v : s.vars) {
    out += fmt::format("var {} {} {} [{}]\n", v.name, to_string(v.kind), to_string(v.dtype),
                       fmt::join(v.kind == OodsKind::GS || v.kind == OodsKind::ULS ? std::vector<std::int64_t>{}
                                                                                    : v.shape,
                                 ", "));
    for (std::size_t i = 0; i < v.values.size(); ++i) {
      out += format_scalar(v.values[i]);
      out += (i + 1) % 10 == 0 || i + 1 == v.values.size() ? '\n' : ' ';
    }
  }
  return out;
}

DiffReport diff(const Store& a, const Store& b, double tol) {
  DiffReport r;
  std::vector<std::string> missing;
  for (const auto& v : a.vars)
    if (v.output && !b.find(v.name)) missing.push_back(v.name);
  for (const auto& v : b.vars)
    if (v.output && !a.find(v.name)) missing.push_back(v.name);
  if (!missing.empty()) {
    r.pass = false;
    r.error = fmt::format("variable sets differ: {}", fmt::join(missing, ", "));
    return r;
  }
  for (const auto& va : a.vars) {
    if (!va.output) continue;
    const VarValue& vb = *b.find(va.name);
    VarDiff d;
    d.name = va.name;
    d.exact = va.dtype == DType::I16 || !(va.tainted || vb.tainted);
    if (va.values.size() != vb.values.size() || va.dtype != vb.dtype) {
      d.pass = false;
      d.first_bad = 0;
      r.pass = false;
      r.vars.push_back(d);
      continue;
    }
    double max_ref = 0.0;
    for (std::size_t i = 0; i < va.values.size(); ++i) {
      const double x = va.values[i].as_double(), y = vb.values[i].as_double();
      max_ref = std::max(max_ref, std::fabs(x));
      const double ad = std::isnan(x) || std::isnan(y) ? (std::isnan(x) && std::isnan(y) ? 0.0 : INFINITY)
                                                        : std::fabs(x - y);
      d.max_abs = std::max(d.max_abs, ad);
      const bool bad = d.exact ? va.values[i].bits != vb.values[i].bits : false;
      if (bad && d.first_bad < 0) d.first_bad = static_cast<std::int64_t>(i);
    }
    d.max_rel = max_ref > 0 ? d.max_abs / max_ref : d.max_abs;
    if (d.exact) {
      d.pass = d.first_bad < 0;
    } else {
      d.pass = d.max_rel <= tol;
      if (!d.pass)
        for (std::size_t i = 0; i < va.values.size(); ++i)
          if (std::fabs(va.values[i].as_double() - vb.values[i].as_double()) > tol * max_ref) {
            d.first_bad = static_cast<std::int64_t>(i);
            break;
          }
    }
    r.pass = r.pass && d.pass;
    r.vars.push_back(d);
  }
  return r;
}

std::string DiffReport::text() const {
  if (!error.empty()) return "error: " + error + "\n";
  std::string out;
  for (const auto& v : vars) {
    out += fmt::format("{:<16} {:<6} max_abs {:.3e} max_rel {:.3e} {}", v.name, v.exact ? "exact" : "tol",
                       v.max_abs, v.max_rel, v.pass ? "ok" : "FAIL");
    if (!v.pass) out += fmt::format(" (first mismatch at index {})", v.first_bad);
    out += '\n';
  }
  out += pass ? "all variables within tolerance\n" : "variables differ\n";
  return out;
}

}  // namespace machlite::ref
