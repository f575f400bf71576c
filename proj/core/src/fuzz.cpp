#include "machlite/fuzz.hpp"

#include <fmt/format.h>

#include <random>
#include <set>
#include <vector>

#include "machlite/driver.hpp"

namespace machlite::fuzz {

namespace {

struct Region {
  int x0, x1, y0, y1;
  bool full;
  std::string text() const {
    if (full) return ":, :";
    return fmt::format("{}:{}, {}:{}", x0, x1, y0, y1);
  }
};

struct Var {
  std::string name;
  OodsKind kind;
  DType dt;
  int extent = 0;  // ga length
};

class Gen {
 public:
  Gen(std::uint64_t seed, const Options& opt) : rng_(seed), opt_(opt) {}

  void setup() {
    W_ = 2 * pick(1, opt_.max_grid / 2);
    H_ = 2 * pick(1, opt_.max_grid / 2);
    M_ = pick(1, opt_.max_mem);
    declare();
  }
  int target() { return pick(3, opt_.max_statements); }
  std::string next() { return statement(0); }

  std::string source(const std::vector<std::string>& body) const {
    std::string s = fmt::format("# generated program, field {}x{}, memory axis {}\n", W_, H_, M_);
    for (const auto& d : decls_) s += d + "\n";
    for (const auto& b : body) s += b;
    return s;
  }
  GridConfig grid() const { return {W_, H_}; }

 private:
  int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool chance(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }
  template <class T>
  const T& one(const std::vector<T>& v) {
    return v[static_cast<std::size_t>(pick(0, static_cast<int>(v.size()) - 1))];
  }

  std::string fresh(const char* stem) { return fmt::format("{}{}", stem, counter_++); }

  void add(OodsKind k, DType dt, const std::string& decl, const std::string& name, int extent = 0) {
    const bool out = chance(k == OodsKind::GA ? 0.1 : 0.5);
    decls_.push_back((out ? "out " : "") + decl);
    vars_.push_back({name, k, dt, extent});
    any_out_ = any_out_ || out;
  }

  std::string f32_init() {
    return fmt::format("random(seed={}, lo=0.5, hi=2.0)", pick(0, 100000));
  }
  std::string i16_init(int lo, int hi) { return fmt::format("random(seed={}, lo={}, hi={})", pick(0, 100000), lo, hi); }

  void declare() {
    const std::string shape = fmt::format("[{}, {}, {}]", W_, H_, M_);
    for (DType dt : {DType::F32, DType::I16}) {
      const bool f = dt == DType::F32;
      const char* t = f ? "f32" : "i16";
      for (int i = 0, n = pick(1, 3); i < n; ++i) {
        auto name = fresh("a");
        add(OodsKind::LA, dt, fmt::format("la {}{} {} = {}", name, shape, t, f ? f32_init() : i16_init(-20, 20)), name);
      }
      for (int i = 0, n = pick(0, 2); i < n; ++i) {
        auto name = fresh("l");
        add(OodsKind::LS, dt, fmt::format("ls {} {} = {}", name, t, f ? f32_init() : i16_init(-20, 20)), name);
      }
      for (int i = 0, n = pick(0, 1); i < n; ++i) {
        auto name = fresh("u");
        add(OodsKind::ULS, dt, fmt::format("uls {} {} = {}", name, t, f ? "1.5" : "3"), name);
      }
      for (int i = 0, n = pick(1, 2); i < n; ++i) {
        auto name = fresh("g");
        add(OodsKind::GS, dt, fmt::format("gs {} {} = {}", name, t, f ? "0.0" : "0"), name);
      }
      if (chance(0.7)) {
        const int n = pick(2, 8);
        auto name = fresh("arr");
        add(OodsKind::GA, dt,
            fmt::format("ga {}[{}] {} = {}", name, n, t, f ? f32_init() : i16_init(0, 10)), name, n);
      }
    }
    idx_ = fresh("ix");
    decls_.push_back(fmt::format("la {}{} i16 = {}", idx_, shape, i16_init(0, M_)));
    dyn_ = fresh("n");
    decls_.push_back(fmt::format("ls {} i16 = {}", dyn_, i16_init(0, M_ + 1)));
    if (!any_out_) {
      decls_.front() = "out " + decls_.front();
    }
  }

  std::vector<const Var*> of(OodsKind k, DType dt) const {
    std::vector<const Var*> v;
    for (const auto& x : vars_)
      if (x.kind == k && x.dt == dt) v.push_back(&x);
    return v;
  }

  Region region() {
    if (chance(0.3)) return {0, W_, 0, H_, true};
    const int x0 = pick(0, W_ - 1), y0 = pick(0, H_ - 1);
    return {x0, pick(x0 + 1, W_), y0, pick(y0 + 1, H_), false};
  }

  std::string mem(int start, int len) { return fmt::format("{}:{}", start, start + len); }

  // Scalar operands a worker expression may use.
  std::string scalar(DType dt, bool in_loop) {
    const bool f = dt == DType::F32;
    for (int tries = 0; tries < 4; ++tries) {
      switch (pick(0, 4)) {
        case 0: return f ? fmt::format("{:.2f}", pick(-200, 200) / 100.0 + 0.005) : fmt::format("{}", pick(-9, 9));
        case 1:
          if (auto v = of(OodsKind::LS, dt); !v.empty()) return one(v)->name;
          break;
        case 2:
          if (auto v = of(OodsKind::ULS, dt); !v.empty()) return one(v)->name;
          break;
        case 3:
          if (auto v = of(OodsKind::GS, dt); !v.empty()) return one(v)->name;
          break;
        case 4:
          if (in_loop && loop_dt_ == dt) return loop_elem_;
          if (auto v = of(OodsKind::GA, dt); !v.empty()) {
            const Var* g = one(v);
            return fmt::format("{}[{}]", g->name, pick(0, g->extent - 1));
          }
          break;
      }
    }
    return f ? "0.75" : "2";
  }

  std::string la_name(DType dt, bool writable) {
    auto v = of(OodsKind::LA, dt);
    std::vector<std::string> names;
    for (const auto* x : v) names.push_back(x->name);
    if (dt == DType::I16 && !writable) names.push_back(idx_);
    return one(names);
  }

  std::string vector(DType dt, const Region& r, int len) {
    return fmt::format("{}[{}, {}]", la_name(dt, false), r.text(), mem(pick(0, M_ - len), len));
  }

  std::string binop(DType dt, bool rhs_literal) {
    static const std::vector<std::string> f = {"+", "-", "*", "/"};
    static const std::vector<std::string> i = {"+", "-", "*"};
    if (dt == DType::F32 && rhs_literal) return one(f);
    return dt == DType::F32 ? one(std::vector<std::string>{"+", "-", "*"}) : one(i);
  }

  std::string divisor_safe(std::string op, std::string rhs) {
    if (op == "/") return fmt::format("{} {:.2f}", op, pick(50, 300) / 100.0 + 0.005);
    return op + " " + rhs;
  }

  std::string elementwise(DType dt, bool in_loop) {
    const Region r = region();
    const int len = pick(1, M_);
    const std::string dst = fmt::format("{}[{}, {}]", la_name(dt, true), r.text(), mem(pick(0, M_ - len), len));
    const std::string assign = one(std::vector<std::string>{"=", "=", "+=", "-=", "*="});
    if (chance(0.15)) {
      std::string src = fmt::format("{}[{}, 0:{}]", la_name(dt, true), r.text(), M_);
      std::string index = fmt::format("{}[{}, {}]", idx_, r.text(), mem(pick(0, M_ - len), len));
      std::string e = fmt::format("take({}, {})", src, index);
      if (chance(0.5)) e += fmt::format(" {} {}", dt == DType::F32 ? one(std::vector<std::string>{"+", "-", "*"}) : "*",
                                        vector(dt, r, len));
      return fmt::format("{} {} {}\n", dst, assign, e);
    }
    if (chance(0.15)) return fmt::format("{} {} {}\n", dst, assign, scalar(dt, in_loop));
    std::string e = vector(dt, r, len);
    if (chance(0.3)) {
      const std::string s = scalar(dt, in_loop);
      e = fmt::format("{} {} {}", s, dt == DType::F32 ? one(std::vector<std::string>{"+", "-", "*"}) : "*", e);
    }
    for (int t = 0, n = pick(0, 2); t < n; ++t) {
      const bool lit = chance(0.3);
      const std::string op = binop(dt, lit);
      const std::string rhs = lit ? scalar(dt, in_loop) : chance(0.6) ? vector(dt, r, len) : scalar(dt, in_loop);
      e = "(" + e + ") " + divisor_safe(op, rhs);
    }
    return fmt::format("{} {} {}\n", dst, assign, e);
  }

  std::string dynamic_stmt(DType dt) {
    const Region r = region();
    const int start = pick(0, M_);
    auto acc = [&](const std::string& name) { return fmt::format("{}[{}, {}:{}]", name, r.text(), start, dyn_); };
    std::string e = acc(la_name(dt, false));
    if (chance(0.7)) e += fmt::format(" {} {}", dt == DType::F32 ? "*" : "+", scalar(dt, false));
    if (chance(0.5)) e += fmt::format(" + {}", acc(la_name(dt, false)));
    return fmt::format("{} = {}\n", acc(la_name(dt, true)), e);
  }

  std::string ls_stmt(DType dt) {
    auto v = of(OodsKind::LS, dt);
    if (v.empty()) return elementwise(dt, false);
    const Region r = region();
    const std::string dst = fmt::format("{}[{}]", one(v)->name, r.text());
    std::string e = fmt::format("{}[{}, {}]", la_name(dt, false), r.text(), pick(0, M_ - 1));
    if (chance(0.5)) e += " + " + one(v)->name;
    return fmt::format("{} {} {}\n", dst, chance(0.5) ? "=" : "+=", e);
  }

  std::string shift_stmt(DType dt) {
    auto v = of(OodsKind::LA, dt);
    if (v.size() < 2) return elementwise(dt, false);
    const Region r = region();
    const int len = pick(1, M_);
    const Var* dst = one(v);
    const Var* src = dst;
    while (src == dst) src = one(v);
    return fmt::format("shift({}[{}, {}], {}[{}, {}], {}, {})\n", dst->name, r.text(), mem(pick(0, M_ - len), len),
                       src->name, r.text(), mem(pick(0, M_ - len), len), chance(0.5) ? "row" : "col",
                       chance(0.5) ? "+1" : "-1");
  }

  std::string put_stmt(DType dt) {
    const Region r = region();
    const int len = pick(1, M_);
    return fmt::format("{}({}[{}, 0:{}], {}[{}, {}], {}[{}, {}])\n", chance(0.5) ? "put" : "put_add",
                       la_name(dt, true), r.text(), M_, idx_, r.text(), mem(pick(0, M_ - len), len),
                       la_name(dt, false), r.text(), mem(pick(0, M_ - len), len));
  }

  std::string reduce_stmt(DType dt) {
    const Region r = region();
    const int len = pick(1, M_);
    std::vector<const Var*> targets = of(OodsKind::ULS, dt);
    for (const auto* g : of(OodsKind::GS, dt)) targets.push_back(g);
    if (targets.empty()) return elementwise(dt, false);
    const Var* t = one(targets);
    if (dt == DType::F32 && t->kind == OodsKind::GS) tainted_.insert(t->name);
    std::string src = chance(0.2) && !of(OodsKind::LS, dt).empty()
                          ? fmt::format("{}[{}]", one(of(OodsKind::LS, dt))->name, r.text())
                          : fmt::format("{}[{}, {}]", la_name(dt, false), r.text(), mem(pick(0, M_ - len), len));
    return fmt::format("reduce({}, {})\n", src, t->name);
  }

  std::string gs_operand(DType dt, bool in_loop, bool* taint) {
    auto gs = of(OodsKind::GS, dt);
    if (chance(0.4) && !gs.empty()) {
      const Var* g = one(gs);
      if (tainted_.count(g->name)) *taint = true;
      return g->name;
    }
    if (in_loop && loop_dt_ == dt && chance(0.5)) return loop_elem_;
    if (auto ga = of(OodsKind::GA, dt); !ga.empty() && chance(0.5)) {
      const Var* a = one(ga);
      return fmt::format("{}[{}]", a->name, pick(0, a->extent - 1));
    }
    return dt == DType::F32 ? fmt::format("{:.2f}", pick(1, 300) / 100.0 + 0.005) : fmt::format("{}", pick(-5, 5));
  }

  std::string gs_stmt(DType dt, bool in_loop) {
    auto gs = of(OodsKind::GS, dt);
    const Var* dst = one(gs);
    bool taint = false;
    std::string a = gs_operand(dt, in_loop, &taint);
    std::string op = binop(dt, true);
    std::string b = op == "/" ? fmt::format("{:.2f}", pick(50, 300) / 100.0 + 0.005) : gs_operand(dt, in_loop, &taint);
    if (taint) tainted_.insert(dst->name);
    // Untainted targets stay untainted only when every operand is.
    return fmt::format("{} = {} {} {}\n", dst->name, a, op, b);
  }

  std::string loop_stmt(int depth) {
    std::vector<const Var*> gas;
    for (const auto& v : vars_)
      if (v.kind == OodsKind::GA) gas.push_back(&v);
    if (gas.empty() || depth > 0) return elementwise(DType::F32, depth > 0);
    const Var* ga = one(gas);
    const std::string elem = fresh("e");
    const std::string saved = loop_elem_;
    const DType saved_dt = loop_dt_;
    loop_elem_ = elem;
    loop_dt_ = ga->dt;
    std::string body;
    const int n = pick(1, 4);
    for (int i = 0; i < n; ++i) body += "  " + statement(depth + 1);
    // Running value with a threshold so the exit fires on some iteration.
    std::vector<const Var*> clean;
    for (const auto* g : of(OodsKind::GS, ga->dt))
      if (!tainted_.count(g->name)) clean.push_back(g);
    if (!clean.empty() && chance(0.7)) {
      const Var* g = one(clean);
      body += fmt::format("  {} = {} + {}\n", g->name, g->name, elem);
      const std::string thr = ga->dt == DType::F32 ? fmt::format("{:.1f}", pick(1, 8) * 1.0)
                                                   : fmt::format("{}", pick(1, 30));
      std::string stmt = fmt::format("  exit_if {} {} {}\n", g->name, chance(0.8) ? ">" : ">=", thr);
      body.insert(chance(0.5) ? 0 : body.size(), stmt);
      if (chance(0.5)) body += "  " + statement(depth + 1);
    }
    loop_elem_ = saved;
    loop_dt_ = saved_dt;
    return fmt::format("for {} in {} {{\n{}}}\n", elem, ga->name, body);
  }

  std::string range_stmt(int depth) {
    std::string body;
    for (int i = 0, n = pick(1, 2); i < n; ++i) body += "  " + statement(depth + 1);
    return fmt::format("for {} in range[0:{}] {{\n{}}}\n", fresh("k"), pick(1, 3), body);
  }

  std::string statement(int depth) {
    const DType dt = chance(0.6) ? DType::F32 : DType::I16;
    const bool in_loop = !loop_elem_.empty();
    const int k = pick(0, 99);
    if (depth == 0 && k < 12) return loop_stmt(depth);
    if (depth == 0 && k < 16) return range_stmt(depth);
    if (k < 45) return elementwise(dt, in_loop);
    if (k < 53) return dynamic_stmt(dt);
    if (k < 60) return ls_stmt(dt);
    if (k < 70) return shift_stmt(dt);
    if (k < 78) return put_stmt(dt);
    if (k < 90) return reduce_stmt(dt);
    return gs_stmt(dt, in_loop);
  }

  std::mt19937_64 rng_;
  Options opt_;
  int W_ = 2, H_ = 2, M_ = 1;
  int counter_ = 0;
  bool any_out_ = false;
  std::vector<std::string> decls_;
  std::vector<Var> vars_;
  std::string idx_, dyn_;
  std::string loop_elem_;
  DType loop_dt_ = DType::F32;
  std::set<std::string> tainted_;
};

int count_nodes(const irg::IRGraph& g) {
  int n = 0;
  irg::ordered_walk(g, [&](const irg::Node&, int) { ++n; });
  return n;
}

}  // namespace

Program generate(std::uint64_t seed, const Options& opt) {
  Gen gen(seed, opt);
  gen.setup();
  Program p;
  p.seed = seed;
  p.grid = gen.grid();
  CompileOptions co;
  co.grid = p.grid;
  std::vector<std::string> body;
  const int want = gen.target();
  // Each candidate statement is kept only if the program still compiles and
  // fits the node budget; a few rejections are normal (e.g. a read of data
  // a put() left partially written).
  for (int tries = 0; static_cast<int>(body.size()) < want && tries < 4 * want; ++tries) {
    body.push_back(gen.next());
    try {
      const Compiled c = compile(gen.source(body), co);
      const int nodes = count_nodes(c.graph);
      if (nodes > opt.max_nodes) {
        body.pop_back();
        continue;
      }
      p.nodes = nodes;
    } catch (const ProgramError&) {
      body.pop_back();
    }
  }
  p.source = gen.source(body);
  if (body.empty()) p.nodes = count_nodes(compile(p.source, co).graph);
  return p;
}

}  // namespace machlite::fuzz
