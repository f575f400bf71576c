#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "machlite/lower/vm.hpp"
#include "machlite/ref/interp.hpp"

namespace machlite::sim {

struct SimConfig {
  int hop_latency = 1;             // cycles per router hop (1 or 2)
  int control_path_latency = 10;   // executive broadcast to first merge exit
  int rpc_setup_cycles = 55;       // ctrl read + argument read + kernel setup
  int fifo_depth = 4;              // per color, per router input
  int grid_width = 0, grid_height = 0;  // 0 takes the layout size
  std::uint64_t seed = 0;
  std::int64_t deadlock_window = 10000;
  std::int64_t max_cycles = 200'000'000;
  int merge_fifo = 1000;           // merge PE control buffer
  bool trace = false;              // record every wavelet event
};

enum class WaveKind : std::uint8_t { Data, Advance, Flip, Reset, Header, Tail };
std::string_view to_string(WaveKind k);

struct TraceEvent {
  enum class Kind : std::uint8_t { Inject, Hop, Deliver, Drop, Broadcast, Splice, RespToMerge, MergeExit };
  std::int64_t cycle = 0;
  int src_x = 0, src_y = 0, dst_x = 0, dst_y = 0;
  int color = 0;
  Kind kind = Kind::Hop;
  WaveKind wave = WaveKind::Data;
  std::uint32_t payload = 0;
};
std::string_view to_string(TraceEvent::Kind k);
std::string format_event(const TraceEvent& e);

// Control strip events, always recorded. `section` is the section index,
// `instance` counts broadcasts.
struct StripEvent {
  enum class Kind : std::uint8_t { Broadcast, Splice, RespToMerge, MergeExit };
  Kind kind = Kind::Broadcast;
  std::int64_t cycle = 0;
  int section = -1;
  int instance = -1;
  int position = -1;  // drain position (RespToMerge) or args index (Splice)
  int color = -1;     // lower::color::ctrl or lower::color::args
  bool marker = false;  // end-of-chunk marker on the response bus
  std::uint32_t payload = 0;
};

enum class Termination : std::uint8_t { Auto, Length, Control };

struct MessageRecord {
  int id = 0;
  int src_x = 0, src_y = 0, dst_x = 0, dst_y = 0;
  int length = 0;
  bool control_terminated = false;
  int hops = 0;
  std::vector<std::pair<int, int>> path;  // routers the header visited, source first
  int turn_x = -1, turn_y = -1;           // where the header switched from X to Y
  std::int64_t injected = -1, delivered = -1;
  std::vector<std::uint16_t> payload;
};

struct RoleStats {
  int pes = 0;
  std::int64_t busy = 0;
  std::int64_t stall = 0;
};

struct SectionStat {
  int section = 0;
  int instance = 0;
  std::int64_t broadcast = -1;
  std::int64_t first_exit = -1;
  std::int64_t last_exit = -1;
};

struct ReductionStat {
  bool to_exec = false;
  std::int64_t start = -1;   // first reduction RPC body on a worker
  std::int64_t stage1 = -1;  // column drains complete
  std::int64_t stage2 = -1;  // row drains complete at the inner PEs
  std::int64_t stage3 = -1;  // final tile or executive holds the sum
  std::int64_t done = -1;    // every worker holds the broadcast result
};

struct RpcStat {
  std::string name;
  std::int64_t invocations = 0;  // summed over worker PEs
  std::int64_t setup_cycles = 0;
  std::int64_t body_cycles = 0;
  std::int64_t max_setup = 0;
  std::int64_t max_body = 0;
  std::int64_t arg_wait = 0;        // setup cycles stalled on argument delivery
  std::int64_t max_setup_busy = 0;  // setup excluding argument-delivery stalls
};

struct Stats {
  std::int64_t cycles = 0;
  std::vector<std::pair<lower::Role, RoleStats>> roles;
  std::vector<SectionStat> sections;
  std::vector<ReductionStat> reductions;
  std::vector<RpcStat> rpcs;  // indexed by RPC id
  // Wavelet conservation: injected + copies = consumed + absorbed + in_flight.
  std::int64_t injected = 0;
  std::int64_t copies = 0;    // extra copies made by multicast routes
  std::int64_t consumed = 0;  // read by processors
  std::int64_t absorbed = 0;  // control wavelets applied or dropped at routers
  std::int64_t in_flight = 0;
  std::int64_t hops = 0;
  std::string text() const;
};

struct RunResult {
  std::int64_t cycles = 0;
  std::vector<ref::LoopExit> exits;
};

class Machine {
 public:
  // Loads the program: paints routes, writes initial memory images.
  // Throws ProgramError on a layout/grid mismatch or invalid config.
  Machine(const lower::VMachineProgram& vm, const SimConfig& cfg = {});
  ~Machine();
  Machine(Machine&&) noexcept;
  Machine& operator=(Machine&&) noexcept;

  // One global cycle. Returns false once the machine has halted.
  bool step();
  // Steps to halt. Throws ExecutionFault on a kernel fault or deadlock.
  RunResult run();

  bool halted() const;
  std::int64_t cycle() const;
  const lower::FabricLayout& layout() const;

  // Output variables read back from PE memory.
  ref::Store store() const;
  std::vector<ref::LoopExit> exits() const;
  Stats stats() const;
  const std::vector<TraceEvent>& trace() const;
  const std::vector<StripEvent>& strip_log() const;
  const std::vector<MessageRecord>& messages() const;

  // Header-routed message from one PE to another. Auto picks length
  // termination up to 31 words and control termination beyond. Throws
  // ExecutionFault for an off-grid endpoint or a length-terminated message
  // over 31 words.
  int send_message(int src_x, int src_y, int dst_x, int dst_y, std::vector<std::uint16_t> payload,
                   Termination t = Termination::Auto);
  // Messages fully received by PEs without a message handler.
  std::vector<std::vector<std::uint16_t>> inbox(int x, int y) const;

  // Queues a wavelet on a router's processor input.
  void inject(int x, int y, int color, WaveKind kind, std::uint32_t payload = 0);
  int route_state(int x, int y, int color) const;

  std::uint16_t word(int x, int y, int address) const;

  // Kernel bodies each field PE ran with a nonzero effective length,
  // indexed fx * field_h + fy.
  std::vector<int> participation() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> p_;
};

// Largest payload a length-terminated message can carry.
constexpr int kMaxLengthField = 31;

}  // namespace machlite::sim
