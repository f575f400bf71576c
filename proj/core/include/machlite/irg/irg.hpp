#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "machlite/common.hpp"
#include "machlite/dsl/typed.hpp"

namespace machlite::irg {

enum class MemKind : std::uint8_t { Persistent, Temporary, Output };

enum class MemRole : std::uint8_t {
  Variable,  // a declared program variable
  Temp,      // compiler-created intermediate
  Mask,      // participation filter: one i16 0/1 per worker PE
};

std::string_view to_string(MemKind k);
std::string_view to_string(MemRole r);

struct MemLoc {
  int id = -1;
  std::string name;
  MemKind kind = MemKind::Persistent;
  MemRole role = MemRole::Variable;
  Placement placement = Placement::Worker;
  DType dtype = DType::F32;
  OodsKind oods = OodsKind::LA;       // kind of the variable, or of the temp's storage
  std::vector<std::int64_t> shape;    // declared shape for variables
  int elements = 1;                   // per PE (worker) or total (controller)
  int size_words = 2;                 // elements * word width, rounded up to even
  bool initialized = false;
  int var = -1;                       // IL variable index for Variable memlocs
  std::vector<Scalar> init;           // frozen init data, row-major over the full shape
  PeRegion mask_region;               // region the mask was first built from
  std::vector<std::uint8_t> mask_bits;  // masks: x * height + y

  bool is_output() const { return kind == MemKind::Output; }
};

enum class Op : std::uint8_t {
  Copy,     // dst = src (vector copy, or fill from a scalar / immediate)
  Binary,   // dst = a op b
  Gather,   // dst[k] = s0[index[k]] (op s1[k])
  Scatter,  // dst[index[k]] = src[k] (or +=)
  Shift,    // nearest-neighbour exchange along a grid axis
  Reduce,   // global sum of a worker slice into a ULS or GS
  Loop,     // device loop over a GA; body in a subgraph
  Exit,     // conditional exit of the enclosing device loop
  LoadGA,   // controller temp = GA[loop counter]
  TransferExport,
  TransferImport,
};

std::string_view to_string(Op op);

struct Edge {
  int src = 0;        // producing node id; 0 means the value on entry (init data)
  int arg = 0;        // dense position on the consuming node
  int memloc = -1;    // -1 for an immediate literal
  Slice slice;
  Scalar imm;
  bool literal() const { return memloc < 0; }
};

struct Node {
  int id = 0;
  Op op = Op::Copy;
  Placement placement = Placement::Worker;
  DType dtype = DType::F32;
  int result = -1;  // result memloc (RI); -1 for none
  Slice dest;
  std::vector<Edge> in;
  std::vector<int> masks;  // mask memlocs: [participation] or [send, recv] for shifts

  BinOp binop = BinOp::Add;  // Binary; Gather when fused
  bool fused = false;        // Gather with a second source
  bool accumulate = false;   // Scatter add
  dsl::ShiftAxis axis = dsl::ShiftAxis::Col;
  int offset = 1;
  CmpOp cmp = CmpOp::GT;

  // Loop: iteration space and the controller temp holding the current element.
  // Exit / LoadGA: the loop they refer to.
  int loop = -1;
  int ga = -1;
  int start = 0, stop = 0, step = 1;
  int iter = -1;

  SourceLoc loc;
};

// Export/import pair for a variable referenced inside a loop body.
struct Transfer {
  int memloc = -1;
  int export_node = 0;
  int import_node = 0;
  int loop_node = 0;
};

struct Graph {
  std::vector<Node> nodes;
  std::map<int, Graph> subgraphs;  // keyed by loop node id
  std::vector<Transfer> transfers;  // for the subgraphs directly inside this graph
};

// Flat edge view, for consumers that prefer an edge list.
struct EdgeRecord {
  int src = 0;
  int dst = 0;
  int arg = 0;
  int memloc = -1;
  Slice slice;
};

struct IRGraph {
  GridConfig grid;
  Graph root;
  std::vector<MemLoc> memlocs;
  int max_id = 0;

  const MemLoc& mem(int id) const { return memlocs.at(static_cast<std::size_t>(id)); }
  const Node* find(int id) const;
  std::vector<EdgeRecord> edges() const;
  // First and last node id covered by the subgraph of a loop node.
  std::pair<int, int> subgraph_range(int loop_id) const;
};

IRGraph build(const dsl::ILProgram& il);

// Visits nodes in ascending id order, entering a loop's subgraph right after
// the loop node. `depth` is 0 for the root graph.
using Visitor = std::function<void(const Node&, int depth)>;
void ordered_walk(const IRGraph& g, const Visitor& visit);
void ordered_walk(const Graph& g, const Visitor& visit, int depth = 0);

Diagnostics validate(const IRGraph& g);

std::string to_json(const IRGraph& g, int indent = 2);

// Memlocs read or written by a node, including masks and dynamic stop vars.
std::vector<int> references(const Node& n);

}  // namespace machlite::irg
