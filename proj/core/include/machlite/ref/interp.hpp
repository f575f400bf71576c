#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "machlite/irg/irg.hpp"
#include "machlite/mem/memory.hpp"

namespace machlite::ref {

// Final value of one program variable, row-major over its declared shape.
// ULS and GS hold a single value.
struct VarValue {
  std::string name;
  OodsKind kind = OodsKind::LA;
  DType dtype = DType::F32;
  std::vector<std::int64_t> shape;
  bool output = false;
  bool tainted = false;  // depends on an f32 reduction
  std::vector<Scalar> values;
};

struct Store {
  std::vector<VarValue> vars;
  const VarValue* find(std::string_view name) const;
};

// Text form shared by both backends.
std::string dump(const Store& s);

// Memory behind the interpreter. `pe` is x * height + y for worker memlocs
// and 0 for controller memlocs.
class Storage {
 public:
  virtual ~Storage() = default;
  virtual Scalar load(int memloc, int pe, int elem) const = 0;
  virtual void store(int memloc, int pe, int elem, Scalar v) = 0;
};

// One dense array per memory location.
std::unique_ptr<Storage> make_symbolic_storage(const irg::IRGraph& g);
// Flat 16-bit word memories (one per worker PE plus the controller) indexed
// through planned addresses; catches planner aliasing.
std::unique_ptr<Storage> make_addressed_storage(const irg::IRGraph& g, const mem::SymbolTable& st,
                                                const mem::MemConfig& cfg = {});

struct LoopExit {
  int loop = 0;     // loop node id
  int counter = 0;  // GA index the exit fired on
  bool operator==(const LoopExit&) const = default;
};

struct InterpResult {
  Store store;
  std::vector<LoopExit> exits;
  std::int64_t nodes_executed = 0;
};

// Evaluates the graph in id order. With `symbols`, storage goes through the
// planned addresses instead of per-location arrays. Throws ExecutionFault.
InterpResult interpret(const irg::IRGraph& g, const mem::SymbolTable* symbols = nullptr,
                       const mem::MemConfig& cfg = {});

// Runs the graph against caller-provided storage (already initialized).
InterpResult interpret_with(const irg::IRGraph& g, Storage& storage);

// Writes every initialized memloc's data into `storage`.
void load_initial(const irg::IRGraph& g, Storage& storage);

// Reads variables back out of storage in store form.
Store collect(const irg::IRGraph& g, const Storage& storage, const std::vector<bool>& tainted);

// Memlocs whose value depends on an f32 reduction, computed over the graph.
std::vector<bool> reduction_taint(const irg::IRGraph& g);

struct VarDiff {
  std::string name;
  bool exact = true;  // bit-exact comparison required
  double max_abs = 0.0;
  double max_rel = 0.0;  // normwise: max |a-b| / max |ref|
  std::int64_t first_bad = -1;
  bool pass = true;
};

struct DiffReport {
  bool pass = true;
  std::string error;  // set on variable-set mismatch
  std::vector<VarDiff> vars;
  std::string text() const;
};

DiffReport diff(const Store& ref, const Store& other, double tol = 1e-5);

}  // namespace machlite::ref
