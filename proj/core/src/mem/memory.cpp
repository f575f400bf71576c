#include "machlite/mem/memory.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <optional>
#include <set>

namespace machlite::mem {

using irg::IRGraph;
using irg::MemLoc;
using irg::Node;

CapacityError::CapacityError(Placement space, int needed, int capacity)
    : ProgramError({{{}, fmt::format("{} memory needs {} words but only {} are available",
                                     to_string(space), needed, capacity)}}),
      space_(space),
      needed_(needed),
      capacity_(capacity) {}

const Lifespan* LifespanTable::find(int memloc) const {
  for (const auto& s : spans)
    if (s.memloc == memloc) return &s;
  return nullptr;
}

const AddressEntry* MemoryMap::find(int memloc) const {
  for (const auto& e : entries)
    if (e.memloc == memloc) return &e;
  return nullptr;
}

int SymbolTable::at(int memloc) const {
  auto it = address.find(memloc);
  if (it == address.end()) throw InternalError(fmt::format("memloc {} has no address", memloc));
  return it->second;
}

LifespanTable compute_lifespans(const IRGraph& g) {
  LifespanTable out;
  const int n_mem = static_cast<int>(g.memlocs.size());
  std::vector<std::vector<int>> refs(static_cast<std::size_t>(n_mem));
  std::vector<std::pair<int, int>> loops;  // subgraph ranges
  irg::ordered_walk(g, [&](const Node& n, int) {
    for (int m : irg::references(n)) {
      if (m < 0 || m >= n_mem) {
        out.diagnostics.push_back(
            {n.loc, fmt::format("node {} references undefined memory location {}", n.id, m)});
        continue;
      }
      refs[static_cast<std::size_t>(m)].push_back(n.id);
    }
    if (n.op == irg::Op::Loop) loops.push_back(g.subgraph_range(n.id));
  });
  for (int m = 0; m < n_mem; ++m) {
    const MemLoc& ml = g.mem(m);
    auto& r = refs[static_cast<std::size_t>(m)];
    std::sort(r.begin(), r.end());
    if (r.empty() && !ml.initialized && !ml.is_output()) continue;
    Lifespan s;
    s.memloc = m;
    s.first = ml.initialized ? 0 : (r.empty() ? g.max_id : r.front());
    s.last = ml.is_output() ? g.max_id : (r.empty() ? s.first : r.back());
    out.spans.push_back(s);
  }
  // A location live on entry to a loop body and used inside it has to stay
  // valid for every iteration.
  for (bool changed = true; changed;) {
    changed = false;
    for (auto& s : out.spans) {
      const auto& r = refs[static_cast<std::size_t>(s.memloc)];
      for (auto [b, e] : loops) {
        if (s.first > b || s.last >= e) continue;
        auto it = std::upper_bound(r.begin(), r.end(), b);
        const bool used_inside = it != r.end() && *it <= e;
        if (used_inside) {
          s.last = e;
          changed = true;
        }
      }
    }
  }
  return out;
}

namespace {
int align_up(int v, int a) { return (v + a - 1) / a * a; }
}  // namespace

BestFit::BestFit(Placement space, int capacity, int base, int bank)
    : space_(space), capacity_(capacity), base_(base), bank_(bank) {}

int BestFit::place(int from, const Request& req) const {
  int c = align_up(from, req.align);
  if (req.no_straddle && c / bank_ != (c + req.size - 1) / bank_) c = align_up(c, bank_);
  return c;
}

int BestFit::alloc(const Request& req, bool* extended_out) {
  std::optional<std::size_t> best;
  int best_start = 0;
  for (std::size_t i = 0; i < free_.size(); ++i) {
    const FreeBlock& b = free_[i];
    const int c = place(b.offset, req);
    if (c + req.size > b.offset + b.size) continue;
    if (!best || b.size < free_[*best].size) {
      best = i;
      best_start = c;
    }
  }
  if (extended_out) *extended_out = !best;
  if (best) {
    take(*best, best_start, req.size);
    return best_start;
  }
  if (!free_.empty()) compact_ = false;
  int from = tail_;
  std::optional<std::size_t> tail_block;
  if (!free_.empty() && free_.back().offset + free_.back().size == tail_) {
    tail_block = free_.size() - 1;
    from = free_.back().offset;
  }
  const int c = place(from, req);
  if (c != from) compact_ = false;
  const int new_tail = c + req.size;
  if (base_ + new_tail > capacity_) throw CapacityError(space_, base_ + new_tail, capacity_);
  if (tail_block) {
    free_[*tail_block].size += new_tail - tail_;
    tail_ = new_tail;
    take(*tail_block, c, req.size);
  } else {
    if (c > tail_) insert({tail_, c - tail_});
    tail_ = new_tail;
  }
  return c;
}

void BestFit::take(std::size_t i, int start, int size) {
  const FreeBlock b = free_[i];
  free_.erase(free_.begin() + static_cast<std::ptrdiff_t>(i));
  if (start > b.offset) insert({b.offset, start - b.offset});
  const int end = start + size, b_end = b.offset + b.size;
  if (b_end > end) insert({end, b_end - end});
}

void BestFit::insert(FreeBlock blk) {
  auto it = std::lower_bound(free_.begin(), free_.end(), blk,
                             [](const FreeBlock& a, const FreeBlock& b) { return a.offset < b.offset; });
  it = free_.insert(it, blk);
  if (it + 1 != free_.end() && it->offset + it->size == (it + 1)->offset) {
    it->size += (it + 1)->size;
    free_.erase(it + 1);
  }
  if (it != free_.begin() && (it - 1)->offset + (it - 1)->size == it->offset) {
    (it - 1)->size += it->size;
    free_.erase(it);
  }
}

MemoryMap plan(const IRGraph& g, const LifespanTable& spans, const MemConfig& cfg) {
  if (!spans.diagnostics.empty()) throw ProgramError(spans.diagnostics);
  MemoryMap map;
  BestFit alloc[2] = {
      BestFit(Placement::Worker, cfg.worker_capacity, cfg.worker_base, cfg.bank_words),
      BestFit(Placement::Controller, cfg.controller_capacity, cfg.controller_base, cfg.bank_words)};
  std::vector<std::vector<const Lifespan*>> starts(static_cast<std::size_t>(g.max_id + 1));
  std::vector<std::vector<const Lifespan*>> ends(static_cast<std::size_t>(g.max_id + 1));
  for (const auto& s : spans.spans) {
    starts[static_cast<std::size_t>(s.first)].push_back(&s);
    ends[static_cast<std::size_t>(s.last)].push_back(&s);
  }
  std::vector<int> entry_of(g.memlocs.size(), -1);
  std::array<int, 2> live{0, 0};
  for (int t = 0; t <= g.max_id; ++t) {
    for (const Lifespan* s : starts[static_cast<std::size_t>(t)]) {
      const MemLoc& m = g.mem(s->memloc);
      const int sp = space_index(m.placement);
      BestFit::Request req{m.size_words, 2, false};
      const bool la = m.placement == Placement::Worker && m.oods == OodsKind::LA;
      if (la && m.size_words >= cfg.bank_words) req.align = cfg.bank_words;
      if (la && m.size_words < cfg.bank_words) req.no_straddle = true;
      bool extended = false;
      const int off = alloc[sp].alloc(req, &extended);
      AddressEntry e;
      e.memloc = m.id;
      e.name = m.name;
      e.space = m.placement;
      e.offset = off;
      e.size_words = m.size_words;
      e.first = s->first;
      e.last = s->last;
      e.alignment = req.align;
      entry_of[static_cast<std::size_t>(m.id)] = static_cast<int>(map.entries.size());
      map.entries.push_back(e);
      live[static_cast<std::size_t>(sp)] += m.size_words;
      map.history.push_back({PlanEvent::Kind::Alloc, t, m.placement, m.id, off, m.size_words,
                             extended, alloc[sp].free_list()});
    }
    for (std::size_t sp = 0; sp < 2; ++sp)
      map.peak_live[sp] = std::max(map.peak_live[sp], live[sp]);
    for (const Lifespan* s : ends[static_cast<std::size_t>(t)]) {
      const AddressEntry& e = map.entries[static_cast<std::size_t>(entry_of[static_cast<std::size_t>(s->memloc)])];
      const int sp = space_index(e.space);
      alloc[sp].release(e.offset, e.size_words);
      live[static_cast<std::size_t>(sp)] -= e.size_words;
      map.history.push_back({PlanEvent::Kind::Free, t, e.space, e.memloc, e.offset, e.size_words,
                             false, alloc[sp].free_list()});
    }
  }
  for (std::size_t sp = 0; sp < 2; ++sp) {
    map.footprint[sp] = alloc[sp].footprint();
    map.compact[sp] = alloc[sp].compact();
  }
  return map;
}

SymbolTable assign_addresses(const MemoryMap& map, int worker_base, int controller_base) {
  SymbolTable st;
  st.base = {worker_base, controller_base};
  for (const auto& e : map.entries)
    st.address[e.memloc] = st.base[static_cast<std::size_t>(space_index(e.space))] + e.offset;
  return st;
}

std::vector<std::pair<int, int>> find_conflicts(const MemoryMap& map) {
  std::vector<std::pair<int, int>> out;
  for (std::size_t i = 0; i < map.entries.size(); ++i)
    for (std::size_t j = i + 1; j < map.entries.size(); ++j) {
      const auto& a = map.entries[i];
      const auto& b = map.entries[j];
      if (a.space != b.space) continue;
      const bool time = a.first <= b.last && b.first <= a.last;
      const bool words = a.offset < b.offset + b.size_words && b.offset < a.offset + a.size_words;
      if (time && words) out.emplace_back(a.memloc, b.memloc);
    }
  return out;
}

std::string format_table(const IRGraph& g, const MemoryMap& map) {
  std::string out = fmt::format("{:<16} {:<10} {:>8} {:>6} {:>11} {:>6}\n", "name", "space",
                                "offset", "size", "lifespan", "align");
  auto sorted = map.entries;
  std::stable_sort(sorted.begin(), sorted.end(), [](const AddressEntry& a, const AddressEntry& b) {
    if (a.space != b.space) return a.space == Placement::Worker;
    return a.offset < b.offset;
  });
  for (const auto& e : sorted)
    out += fmt::format("{:<16} {:<10} {:>#8x} {:>6} {:>11} {:>6}\n", e.name, to_string(e.space),
                       e.offset, e.size_words, fmt::format("{}-{}", e.first, e.last), e.alignment);
  for (Placement p : {Placement::Worker, Placement::Controller}) {
    const auto sp = static_cast<std::size_t>(space_index(p));
    long total = 0;
    for (const auto& e : map.entries)
      if (e.space == p) total += e.size_words;
    const double reuse = map.footprint[sp] ? static_cast<double>(total) / map.footprint[sp] : 0.0;
    out += fmt::format("{} footprint {} words, peak live {} words, reuse ratio {:.2f}\n",
                       to_string(p), map.footprint[sp], map.peak_live[sp], reuse);
  }
  (void)g;
  return out;
}

}  // namespace machlite::mem
