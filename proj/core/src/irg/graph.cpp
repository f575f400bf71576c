#include <fmt/format.h>

#include <map>
#include <nlohmann/json.hpp>
#include <set>

#include "machlite/irg/irg.hpp"

namespace machlite::irg {

std::string_view to_string(MemKind k) {
  switch (k) {
    case MemKind::Persistent: return "persistent";
    case MemKind::Temporary: return "temporary";
    case MemKind::Output: return "output";
  }
  return "?";
}

std::string_view to_string(MemRole r) {
  switch (r) {
    case MemRole::Variable: return "variable";
    case MemRole::Temp: return "temp";
    case MemRole::Mask: return "mask";
  }
  return "?";
}

std::string_view to_string(Op op) {
  switch (op) {
    case Op::Copy: return "copy";
    case Op::Binary: return "binary";
    case Op::Gather: return "gather";
    case Op::Scatter: return "scatter";
    case Op::Shift: return "shift";
    case Op::Reduce: return "reduce";
    case Op::Loop: return "loop";
    case Op::Exit: return "exit";
    case Op::LoadGA: return "load_ga";
    case Op::TransferExport: return "transfer_export";
    case Op::TransferImport: return "transfer_import";
  }
  return "?";
}

void ordered_walk(const Graph& g, const Visitor& visit, int depth) {
  for (const auto& n : g.nodes) {
    visit(n, depth);
    if (n.op == Op::Loop) {
      auto it = g.subgraphs.find(n.id);
      if (it != g.subgraphs.end()) ordered_walk(it->second, visit, depth + 1);
    }
  }
}

void ordered_walk(const IRGraph& g, const Visitor& visit) { ordered_walk(g.root, visit, 0); }

const Node* IRGraph::find(int id) const {
  const Node* found = nullptr;
  ordered_walk(*this, [&](const Node& n, int) {
    if (n.id == id && !found) found = &n;
  });
  return found;
}

std::vector<EdgeRecord> IRGraph::edges() const {
  std::vector<EdgeRecord> out;
  ordered_walk(*this, [&](const Node& n, int) {
    for (const auto& e : n.in) out.push_back({e.src, n.id, e.arg, e.memloc, e.slice});
  });
  return out;
}

namespace {

int max_id_in(const Graph& g) {
  int m = 0;
  ordered_walk(g, [&](const Node& n, int) { m = std::max(m, n.id); });
  return m;
}

const Graph* find_subgraph(const Graph& g, int loop_id) {
  auto it = g.subgraphs.find(loop_id);
  if (it != g.subgraphs.end()) return &it->second;
  for (const auto& [id, sub] : g.subgraphs)
    if (const Graph* r = find_subgraph(sub, loop_id)) return r;
  return nullptr;
}

}  // namespace

std::pair<int, int> IRGraph::subgraph_range(int loop_id) const {
  const Graph* sub = find_subgraph(root, loop_id);
  if (!sub || sub->nodes.empty()) return {loop_id, loop_id};
  return {loop_id, std::max(loop_id, max_id_in(*sub))};
}

std::vector<int> references(const Node& n) {
  std::vector<int> out;
  if (n.result >= 0) out.push_back(n.result);
  if (n.dest.mem.dynamic()) out.push_back(n.dest.mem.dyn_var);
  for (const auto& e : n.in) {
    if (e.memloc >= 0) out.push_back(e.memloc);
    if (e.slice.mem.dynamic()) out.push_back(e.slice.mem.dyn_var);
  }
  for (int m : n.masks) out.push_back(m);
  if (n.ga >= 0) out.push_back(n.ga);
  if (n.iter >= 0) out.push_back(n.iter);
  return out;
}

// ------------------------------------------------------------------ validate

namespace {

std::string node_name(const Node& n) { return fmt::format("node {} ({})", n.id, to_string(n.op)); }

class Validator {
 public:
  explicit Validator(const IRGraph& g) : g_(g) {}

  Diagnostics run() {
    std::map<int, const Node*> seen;
    int prev = 0;
    ordered_walk(g_, [&](const Node& n, int) {
      auto [it, fresh] = seen.emplace(n.id, &n);
      if (!fresh)
        add(fmt::format("duplicate node id {}: {} and {}", n.id, node_name(*it->second), node_name(n)));
      else if (n.id <= prev)
        add(fmt::format("{} follows node {} in walk order", node_name(n), prev));
      prev = std::max(prev, n.id);
    });
    ids_ = seen;
    check_graph(g_.root, nullptr, -1);
    for (const auto& m : g_.memlocs)
      if (m.role == MemRole::Temp && m.kind == MemKind::Output)
        add(fmt::format("temporary '{}' is marked output", m.name));
    for (std::size_t i = 0; i < g_.memlocs.size(); ++i)
      if (g_.memlocs[i].id != static_cast<int>(i))
        add(fmt::format("memloc '{}' has id {} at index {}", g_.memlocs[i].name, g_.memlocs[i].id, i));
    return std::move(diags_);
  }

 private:
  void add(std::string msg) { diags_.push_back({{}, std::move(msg)}); }

  bool valid_mem(int m) const { return m >= 0 && m < static_cast<int>(g_.memlocs.size()); }

  void check_graph(const Graph& g, const Graph* parent, int loop_id) {
    std::pair<int, int> range{0, 0};
    if (loop_id >= 0) range = g_.subgraph_range(loop_id);
    std::set<int> imported;
    for (const auto& n : g.nodes)
      if (n.op == Op::TransferImport && !n.in.empty()) imported.insert(n.in[0].memloc);
    for (const auto& n : g.nodes) {
      check_node(n);
      if (loop_id >= 0) check_scope(n, range, imported);
      if (n.op == Op::Loop) {
        if (!g.subgraphs.count(n.id)) add(fmt::format("{} has no subgraph", node_name(n)));
        if (n.loop != n.id) add(fmt::format("{} refers to loop {}", node_name(n), n.loop));
      }
      if (n.op == Op::TransferImport && loop_id < 0)
        add(fmt::format("{} appears outside a loop body", node_name(n)));
    }
    for (const auto& [id, sub] : g.subgraphs) {
      bool ok = false;
      for (const auto& n : g.nodes) ok |= n.id == id && n.op == Op::Loop;
      if (!ok) add(fmt::format("subgraph keyed {} has no loop node in its parent", id));
      check_graph(sub, &g, id);
    }
    for (const auto& t : g.transfers) {
      if (!ids_.count(t.export_node) || !ids_.count(t.import_node))
        add(fmt::format("transfer of memloc {} names a missing node", t.memloc));
    }
    (void)parent;
  }

  void check_node(const Node& n) {
    if (n.result >= 0 && !valid_mem(n.result))
      add(fmt::format("{} has invalid result memloc {}", node_name(n), n.result));
    for (int m : n.masks)
      if (!valid_mem(m) || g_.memlocs[static_cast<std::size_t>(m)].role != MemRole::Mask)
        add(fmt::format("{} has invalid mask memloc {}", node_name(n), m));
    std::set<int> args;
    for (const auto& e : n.in) {
      if (e.src >= n.id)
        add(fmt::format("edge {} -> {} (arg {}) does not point forward", e.src, n.id, e.arg));
      else if (e.src != 0 && !ids_.count(e.src))
        add(fmt::format("edge into {} comes from missing node {}", node_name(n), e.src));
      if (e.memloc >= 0 && !valid_mem(e.memloc))
        add(fmt::format("edge into {} has invalid memloc {}", node_name(n), e.memloc));
      if (e.slice.mem.dynamic() && !valid_mem(e.slice.mem.dyn_var))
        add(fmt::format("edge into {} has invalid dynamic stop {}", node_name(n), e.slice.mem.dyn_var));
      if (!args.insert(e.arg).second)
        add(fmt::format("{} has two edges at arg {}", node_name(n), e.arg));
    }
    for (int i = 0; i < static_cast<int>(args.size()); ++i)
      if (!args.count(i)) {
        add(fmt::format("{} has non-dense arg positions", node_name(n)));
        break;
      }
  }

  // Inside a loop body every variable must come through an import.
  void check_scope(const Node& n, std::pair<int, int> range, const std::set<int>& imported) {
    auto is_var = [&](int m) {
      return valid_mem(m) && g_.memlocs[static_cast<std::size_t>(m)].role == MemRole::Variable;
    };
    if (n.op == Op::TransferImport) return;
    for (const auto& e : n.in) {
      if (!is_var(e.memloc)) continue;
      if (!imported.count(e.memloc) && (e.src < range.first || e.src > range.second))
        add(fmt::format("{} reads '{}' across a loop boundary without a transfer", node_name(n),
                        g_.memlocs[static_cast<std::size_t>(e.memloc)].name));
    }
    if (is_var(n.result) && !imported.count(n.result))
      add(fmt::format("{} writes '{}' across a loop boundary without a transfer", node_name(n),
                      g_.memlocs[static_cast<std::size_t>(n.result)].name));
  }

  const IRGraph& g_;
  std::map<int, const Node*> ids_;
  Diagnostics diags_;
};

}  // namespace

Diagnostics validate(const IRGraph& g) { return Validator(g).run(); }

// ------------------------------------------------------------------ json

namespace {

using nlohmann::ordered_json;

ordered_json slice_json(const IRGraph& g, const Slice& s) {
  ordered_json j;
  const auto& r = s.region;
  j["pe"] = {r.x0, r.x1, r.xs, r.y0, r.y1, r.ys};
  j["mem"] = {s.mem.start, s.mem.length};
  if (s.mem.dynamic()) j["dyn_stop"] = g.mem(s.mem.dyn_var).name;
  return j;
}

ordered_json scalar_json(const Scalar& s) {
  if (s.dtype == DType::I16) return s.as_i16();
  return s.as_f32();
}

ordered_json graph_json(const IRGraph& g, const Graph& gr) {
  ordered_json nodes = ordered_json::array();
  for (const auto& n : gr.nodes) {
    ordered_json j;
    j["id"] = n.id;
    j["op"] = std::string(to_string(n.op));
    j["placement"] = std::string(to_string(n.placement));
    j["dtype"] = std::string(to_string(n.dtype));
    j["ri"] = n.result >= 0 ? ordered_json(g.mem(n.result).name) : ordered_json();
    j["dest"] = slice_json(g, n.dest);
    ordered_json attrs = ordered_json::object();
    switch (n.op) {
      case Op::Binary: attrs["op"] = std::string(to_string(n.binop)); break;
      case Op::Gather:
        attrs["fused"] = n.fused;
        if (n.fused) attrs["op"] = std::string(to_string(n.binop));
        break;
      case Op::Scatter: attrs["accumulate"] = n.accumulate; break;
      case Op::Shift:
        attrs["axis"] = std::string(dsl::to_string(n.axis));
        attrs["offset"] = n.offset;
        break;
      case Op::Reduce:
        attrs["target"] = std::string(to_string(g.mem(n.result).oods));
        break;
      case Op::Loop:
        attrs["ga"] = g.mem(n.ga).name;
        attrs["start"] = n.start;
        attrs["stop"] = n.stop;
        attrs["step"] = n.step;
        attrs["iter"] = n.iter >= 0 ? ordered_json(g.mem(n.iter).name) : ordered_json();
        break;
      case Op::Exit:
        attrs["cmp"] = std::string(to_string(n.cmp));
        attrs["loop"] = n.loop;
        break;
      case Op::LoadGA:
        attrs["ga"] = g.mem(n.ga).name;
        attrs["loop"] = n.loop;
        break;
      default: break;
    }
    j["attrs"] = attrs;
    ordered_json edges = ordered_json::array();
    for (const auto& e : n.in) {
      ordered_json ej;
      ej["src"] = e.src;
      ej["arg"] = e.arg;
      if (e.literal())
        ej["imm"] = scalar_json(e.imm);
      else
        ej["mem"] = g.mem(e.memloc).name;
      ej["slice"] = slice_json(g, e.slice);
      edges.push_back(ej);
    }
    j["edges"] = edges;
    ordered_json masks = ordered_json::array();
    for (int m : n.masks) masks.push_back(g.mem(m).name);
    j["masks"] = masks;
    if (n.op == Op::Loop) {
      auto it = gr.subgraphs.find(n.id);
      if (it != gr.subgraphs.end()) j["subgraph"] = graph_json(g, it->second);
    }
    nodes.push_back(j);
  }
  ordered_json out;
  out["nodes"] = nodes;
  ordered_json transfers = ordered_json::array();
  for (const auto& t : gr.transfers)
    transfers.push_back({{"mem", g.mem(t.memloc).name},
                         {"export", t.export_node},
                         {"import", t.import_node},
                         {"loop", t.loop_node}});
  out["transfers"] = transfers;
  return out;
}

}  // namespace

std::string to_json(const IRGraph& g, int indent) {
  ordered_json j;
  j["grid"] = {g.grid.width, g.grid.height};
  ordered_json mems = ordered_json::array();
  for (const auto& m : g.memlocs) {
    ordered_json mj;
    mj["id"] = m.id;
    mj["name"] = m.name;
    mj["kind"] = std::string(to_string(m.kind));
    mj["role"] = std::string(to_string(m.role));
    mj["placement"] = std::string(to_string(m.placement));
    mj["dtype"] = std::string(to_string(m.dtype));
    mj["oods"] = std::string(to_string(m.oods));
    mj["shape"] = m.shape;
    mj["elements"] = m.elements;
    mj["size_words"] = m.size_words;
    mj["initialized"] = m.initialized;
    mems.push_back(mj);
  }
  j["memlocs"] = mems;
  j["graph"] = graph_json(g, g.root);
  return j.dump(indent);
}

}  // namespace machlite::irg
