#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "machlite/irg/irg.hpp"
#include "machlite/lower/layout.hpp"
#include "machlite/mem/memory.hpp"

namespace machlite::lower {

// Worker kernel families. Operand classes: ar = vector, sc = per-PE scalar,
// imm = immediate carried in the arguments vector.
enum class Kernel : std::uint8_t {
  Copy,       // src, dst, mask, len
  FillSc,     // sc, dst, mask, len
  FillImm,    // lo, hi, dst, mask, len
  ArAr,       // a, b, dst, mask, len
  ArSc,       // a, sc, dst, mask, len
  ScAr,       // sc, b, dst, mask, len
  ArImm,      // a, lo, hi, dst, mask, len
  ImmAr,      // lo, hi, b, dst, mask, len
  Gather,     // s0, [s1], index, dst, mask, len, s0_len
  Scatter,    // src, index, dst, mask, len, dst_len
  Shift,      // src, dst, send_mask, recv_mask, len
  ReduceSum,  // is_local, src, mask, len
  ReduceBroadcast,  // dst
};

std::string_view to_string(Kernel k);

struct RpcDef {
  int id = 0;
  std::string name;
  Kernel kernel = Kernel::Copy;
  DType dtype = DType::F32;
  BinOp op = BinOp::Add;
  bool fused = false;       // gather with a second operand
  bool accumulate = false;  // scatter add
  bool dyn = false;         // len replaced by start, stop_addr, extent
  dsl::ShiftAxis axis = dsl::ShiftAxis::Col;
  int offset = 1;
  int arity = 0;

  bool operator==(const RpcDef&) const = default;
};

std::string rpc_name(const RpcDef& r);
// Inverse of rpc_name; nullopt for an unknown name.
std::optional<RpcDef> rpc_from_name(std::string_view name);

struct VirtualTask {
  int rpc = 0;
  int hw_task = 0;  // hardware slot dispatching this RPC
  int context = 0;  // index within the slot's context table
  bool operator==(const VirtualTask&) const = default;
};

struct RpcTable {
  std::vector<RpcDef> rpcs;  // indexed by id
  std::vector<VirtualTask> virtual_tasks;  // empty when rpcs fit the task table
  int find(std::string_view name) const;
  bool operator==(const RpcTable&) const = default;
};

// One RPC per distinct kernel signature, ids in first-use order.
// Throws ProgramError for an unsupported operand combination.
RpcTable build_rpc_table(const irg::IRGraph& g, int task_table_size = 16);

// Kernel signature that lowers node n.
RpcDef signature(const irg::IRGraph& g, const irg::Node& n);

// Word of an arguments vector that the executive fills at run time from a
// controller value.
struct SplicePoint {
  int position = 0;  // index into the section's args vector
  int address = 0;   // controller address of the value
  int half = 0;      // 0 low word, 1 high word
  bool operator==(const SplicePoint&) const = default;
};

struct Section {
  int index = 0;
  std::vector<int> ctrl;             // RPC ids
  std::vector<std::uint16_t> args;
  std::vector<int> nodes;            // IRG nodes lowered into the section
  std::vector<SplicePoint> splices;
  bool operator==(const Section&) const = default;
};

enum class ExecOp : std::uint8_t {
  IterInit,     // counter[loop] = a
  IterTest,     // if !(counter[loop] < a) goto target
  IterNext,     // counter[loop] += a; goto target
  LoadGA,       // mem[dst] = mem[src + counter[loop] * wpe]
  GsOp,         // mem[dst] = x (op y)
  CmpBranch,    // if x cmp y: record exit of loop, goto target
  Splice,       // write mem[src + half] into section a, args position b
  Broadcast,    // broadcast section a
  RecvReduced,  // mem[dst] = sum of a values arriving on reduction_3
  Halt,
};

std::string_view to_string(ExecOp op);

enum class GsOp : std::uint8_t { Copy, Add, Sub, Mul, Div };

struct ExecArg {
  bool imm = false;
  int addr = 0;
  Scalar value;
  bool operator==(const ExecArg&) const = default;
};

struct ExecInstr {
  ExecOp op = ExecOp::Halt;
  DType dtype = DType::F32;
  int loop = -1;  // loop node id
  int a = 0, b = 0;
  int dst = 0, src = 0, half = 0;
  int target = 0;
  GsOp gs = GsOp::Copy;
  CmpOp cmp = CmpOp::GT;
  ExecArg x, y;
  bool operator==(const ExecInstr&) const = default;
};

std::string format_instr(const ExecInstr& i);

struct Partition {
  std::vector<Section> sections;
  std::vector<ExecInstr> exec;
};

// Splits the graph into broadcast sections at control flow, at worker nodes
// with controller-valued arguments, and after GS-target reductions.
Partition partition(const irg::IRGraph& g, const mem::SymbolTable& st, const RpcTable& rpcs);

// The chunk of one section held by one response PE.
struct Chunk {
  int section = 0;
  int ctrl_begin = 0, ctrl_end = 0;
  int args_begin = 0, args_end = 0;
  int offset = 0;  // word offset of the args chunk in the PE's memory; ctrl follows
  int words() const { return (ctrl_end - ctrl_begin) + (args_end - args_begin); }
  bool operator==(const Chunk&) const = default;
};

struct RespAssignment {
  int position = 0;  // drain position
  std::vector<Chunk> chunks;  // one per section
  int words() const;
  bool operator==(const RespAssignment&) const = default;
};

// [begin, end) of chunk k when n items are split evenly over `parts`;
// inner positions take the remainder.
std::pair<int, int> split_range(int n, int parts, int k);

std::vector<RespAssignment> distribute(const std::vector<Section>& sections, int n_resp);

struct MaskEntry {
  int memloc = -1;
  int address = 0;
  std::vector<std::uint8_t> bits;  // field x * height + y
  bool operator==(const MaskEntry&) const = default;
};

std::vector<MaskEntry> build_masks(const irg::IRGraph& g, const mem::SymbolTable& st);

// Initial contents of a memory region. Worker blocks hold words_per_pe
// words for each field PE in x * height + y order.
struct InitBlock {
  Placement space = Placement::Worker;
  int address = 0;
  int words_per_pe = 0;
  std::vector<std::uint16_t> words;
  bool operator==(const InitBlock&) const = default;
};

// Where a program variable lives, for reading results back.
struct OutputVar {
  std::string name;
  OodsKind kind = OodsKind::LA;
  DType dtype = DType::F32;
  std::vector<std::int64_t> shape;
  int elements = 1;
  int address = 0;
  bool output = false;
  bool tainted = false;
  bool operator==(const OutputVar&) const = default;
};

struct LowerConfig {
  int n_resp = 4;
  int resp_capacity = 3000;  // words per response PE
  int task_table_size = 16;
  bool operator==(const LowerConfig&) const = default;
};

struct VMachineProgram {
  GridConfig field;
  LowerConfig config;
  FabricLayout layout;
  RpcTable rpcs;
  std::vector<Section> sections;
  std::vector<RespAssignment> resp;  // indexed by drain position
  std::vector<ExecInstr> exec;
  std::vector<MaskEntry> masks;
  std::vector<InitBlock> init;
  std::vector<OutputVar> vars;
  std::array<int, 2> footprint{0, 0};

  bool operator==(const VMachineProgram&) const = default;
};

VMachineProgram lower(const irg::IRGraph& g, const mem::MemoryMap& map, const mem::SymbolTable& st,
                      const LowerConfig& cfg = {});

// Text listings keyed by file name: exec.tsl, response.tsl, merge.tsl,
// worker.tsl, reduction.tsl, layout.paint.
using Listing = std::map<std::string, std::string>;
Listing emit_text(const VMachineProgram& vm);
std::string emit_asm(const Listing& l);    // all kernel files concatenated
std::string emit_paint(const Listing& l);

// Rebuilds a program from emit_text output. Throws ProgramError on malformed input.
VMachineProgram load_text(const Listing& l);

}  // namespace machlite::lower
