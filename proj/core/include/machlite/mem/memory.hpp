#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "machlite/common.hpp"
#include "machlite/irg/irg.hpp"

namespace machlite::mem {

struct MemConfig {
  int worker_capacity = 24576;  // 16-bit words per worker PE
  int controller_capacity = 24576;
  int bank_words = 3072;
  int worker_base = 0;
  int controller_base = 0;
};

class CapacityError : public ProgramError {
 public:
  CapacityError(Placement space, int needed, int capacity);
  Placement space() const { return space_; }
  int needed() const { return needed_; }
  int capacity() const { return capacity_; }

 private:
  Placement space_;
  int needed_;
  int capacity_;
};

struct Lifespan {
  int memloc = -1;
  int first = 0;
  int last = 0;
};

struct LifespanTable {
  std::vector<Lifespan> spans;  // memlocs that need storage, by memloc id
  Diagnostics diagnostics;
  const Lifespan* find(int memloc) const;
};

LifespanTable compute_lifespans(const irg::IRGraph& g);

inline int space_index(Placement p) { return p == Placement::Worker ? 0 : 1; }

struct AddressEntry {
  int memloc = -1;
  std::string name;
  Placement space = Placement::Worker;
  int offset = 0;
  int size_words = 0;
  int first = 0;
  int last = 0;
  int alignment = 2;  // 2 for word pairs, bank_words for bank-aligned
};

struct FreeBlock {
  int offset = 0;
  int size = 0;
  bool operator==(const FreeBlock&) const = default;
};

struct PlanEvent {
  enum class Kind : std::uint8_t { Alloc, Free };
  Kind kind = Kind::Alloc;
  int time = 0;
  Placement space = Placement::Worker;
  int memloc = -1;
  int offset = 0;
  int size = 0;
  bool extended = false;  // the allocation moved the high-water mark
  std::vector<FreeBlock> free_after;
};

struct MemoryMap {
  std::vector<AddressEntry> entries;
  std::array<int, 2> footprint{0, 0};   // indexed by space_index
  std::array<int, 2> peak_live{0, 0};
  // False when some tail extension happened while free blocks existed, or
  // needed alignment padding; when true, footprint == peak_live.
  std::array<bool, 2> compact{true, true};
  std::vector<PlanEvent> history;

  const AddressEntry* find(int memloc) const;
};

// Best-fit allocator for one memory space. Free blocks stay sorted by offset
// and coalesce on release; ties between equal-size blocks go to the lowest
// offset.
class BestFit {
 public:
  struct Request {
    int size = 0;
    int align = 2;
    bool no_straddle = false;  // keep the block inside one bank
  };

  BestFit(Placement space, int capacity, int base = 0, int bank_words = 3072);

  // Throws CapacityError past the capacity.
  int alloc(const Request& req, bool* extended = nullptr);
  int alloc(int size) { return alloc(Request{size}); }
  void release(int offset, int size) { insert({offset, size}); }

  int footprint() const { return tail_; }
  const std::vector<FreeBlock>& free_list() const { return free_; }
  // False once the tail grew while free blocks existed, or for padding.
  bool compact() const { return compact_; }

 private:
  int place(int from, const Request& req) const;
  void take(std::size_t i, int start, int size);
  void insert(FreeBlock blk);

  Placement space_;
  int capacity_;
  int base_;
  int bank_;
  int tail_ = 0;
  bool compact_ = true;
  std::vector<FreeBlock> free_;
};

// Best-fit planning in node order. Throws CapacityError.
MemoryMap plan(const irg::IRGraph& g, const LifespanTable& spans, const MemConfig& cfg = {});

struct SymbolTable {
  std::map<int, int> address;  // memloc -> absolute word address in its space
  std::array<int, 2> base{0, 0};
  int at(int memloc) const;
};

SymbolTable assign_addresses(const MemoryMap& map, int worker_base = 0, int controller_base = 0);

// Table for `--emit mem`.
std::string format_table(const irg::IRGraph& g, const MemoryMap& map);

// True when two entries in one space overlap both in time and in words.
std::vector<std::pair<int, int>> find_conflicts(const MemoryMap& map);

}  // namespace machlite::mem
