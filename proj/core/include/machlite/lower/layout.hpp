#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "machlite/dsl/typed.hpp"

namespace machlite::lower {

// Router ports. U is toward y - 1, D toward y + 1.
enum class Dir : std::uint8_t { C, L, R, U, D };
constexpr int kDirs = 5;
constexpr std::uint8_t bit(Dir d) { return static_cast<std::uint8_t>(1u << static_cast<int>(d)); }
std::string_view to_string(Dir d);
Dir opposite(Dir d);

namespace color {
constexpr int ctrl = 0;
constexpr int args = 1;
constexpr int reduction_1 = 2;  // column drain to the reduction rows
constexpr int reduction_2 = 3;  // row drain to the inner reduction PEs
constexpr int reduction_4 = 4;  // inner PEs to the final tile
constexpr int reduction_3 = 5;  // inner PEs to the executive
constexpr int reduction_broadcast = 6;
constexpr int c0 = 7;
constexpr int c1 = 8;
constexpr int loopback = 9;
constexpr int message = 10;
constexpr int ctrl_coord = 11;  // executive to response PEs
constexpr int ctrl_dist = 12;   // response bus, control half
constexpr int args_dist = 13;   // response bus, argument half
constexpr int count = 24;
}  // namespace color

std::string_view color_name(int c);

enum class Role : std::uint8_t { Idle, Executive, Response, Reserve, Merge, Worker, Reduction, ControlPass };
std::string_view to_string(Role r);

// One routing state: for each input port, the set of output ports.
struct RouteState {
  std::array<std::uint8_t, kDirs> out{};
  bool operator==(const RouteState&) const = default;
};

// States a router cycles through on one color; index 0 is the reset state.
using RouteRing = std::vector<RouteState>;

struct FabricLayout {
  int width = 0, height = 0;      // whole grid
  int field_w = 0, field_h = 0;   // worker field
  int field_x0 = 0;
  int y_red_upper = 0, y_ctrl = 0, y_red_lower = 0;
  int merge_x = 0, exec_x = 0;
  int n_resp = 0;       // response PEs including reserves
  int n_resp_base = 0;  // requested response PEs
  std::vector<Role> roles;                           // y * width + x
  std::vector<std::map<int, RouteRing>> routes;      // per PE, by color
  std::vector<std::int8_t> phase;                    // checkerboard 0/1, -1 off-field

  int index(int x, int y) const { return y * width + x; }
  Role role(int x, int y) const { return roles[static_cast<std::size_t>(index(x, y))]; }
  // Grid coordinates of field PE (fx, fy).
  int grid_x(int fx) const { return field_x0 + fx; }
  int grid_y(int fy) const { return fy < field_h / 2 ? fy : fy + 3; }
  // Response PE column for drain position k: alternating sides, inside out.
  int resp_x(int k) const { return k % 2 == 0 ? merge_x - 1 - k / 2 : merge_x + 1 + k / 2; }
  const RouteRing* ring(int x, int y, int c) const;

  bool operator==(const FabricLayout&) const = default;
};

// Grid geometry for a field of fw x fh workers served by n_resp response PEs.
// Throws ProgramError for an empty or odd-sized field.
FabricLayout make_layout(int fw, int fh, int n_resp, int n_resp_base = -1);

std::string format_route(const RouteState& s);

}  // namespace machlite::lower
