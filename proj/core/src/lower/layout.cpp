#include "machlite/lower/layout.hpp"

#include <fmt/format.h>

namespace machlite::lower {

std::string_view to_string(Dir d) {
  switch (d) {
    case Dir::C: return "C";
    case Dir::L: return "L";
    case Dir::R: return "R";
    case Dir::U: return "U";
    case Dir::D: return "D";
  }
  return "?";
}

Dir opposite(Dir d) {
  switch (d) {
    case Dir::L: return Dir::R;
    case Dir::R: return Dir::L;
    case Dir::U: return Dir::D;
    case Dir::D: return Dir::U;
    case Dir::C: return Dir::C;
  }
  return Dir::C;
}

std::string_view color_name(int c) {
  switch (c) {
    case color::ctrl: return "ctrl";
    case color::args: return "args";
    case color::reduction_1: return "reduction_1";
    case color::reduction_2: return "reduction_2";
    case color::reduction_4: return "reduction_4";
    case color::reduction_3: return "reduction_3";
    case color::reduction_broadcast: return "reduction_broadcast";
    case color::c0: return "c0";
    case color::c1: return "c1";
    case color::loopback: return "loopback";
    case color::message: return "message";
    case color::ctrl_coord: return "ctrl_coord";
    case color::ctrl_dist: return "ctrl_color_dist";
    case color::args_dist: return "args_color_dist";
    default: return "unused";
  }
}

std::string_view to_string(Role r) {
  switch (r) {
    case Role::Idle: return "idle";
    case Role::Executive: return "executive";
    case Role::Response: return "response";
    case Role::Reserve: return "reserve";
    case Role::Merge: return "merge";
    case Role::Worker: return "worker";
    case Role::Reduction: return "reduction";
    case Role::ControlPass: return "control";
  }
  return "?";
}

const RouteRing* FabricLayout::ring(int x, int y, int c) const {
  const auto& m = routes[static_cast<std::size_t>(index(x, y))];
  auto it = m.find(c);
  return it == m.end() ? nullptr : &it->second;
}

std::string format_route(const RouteState& s) {
  std::string out;
  for (int i = 0; i < kDirs; ++i) {
    if (!s.out[static_cast<std::size_t>(i)]) continue;
    if (!out.empty()) out += ' ';
    out += to_string(static_cast<Dir>(i));
    out += '>';
    for (int o = 0; o < kDirs; ++o)
      if (s.out[static_cast<std::size_t>(i)] & (1u << o)) out += to_string(static_cast<Dir>(o));
  }
  return out;
}

namespace {

RouteState state(std::initializer_list<std::pair<Dir, std::uint8_t>> moves) {
  RouteState s;
  for (auto [in, outs] : moves) s.out[static_cast<std::size_t>(in)] |= outs;
  return s;
}

class Painter {
 public:
  explicit Painter(FabricLayout& l) : l_(l) {}

  void set(int x, int y, int c, RouteRing ring) {
    l_.routes[static_cast<std::size_t>(l_.index(x, y))][c] = std::move(ring);
  }
  void add(int x, int y, int c, Dir in, std::uint8_t outs) {
    auto& ring = l_.routes[static_cast<std::size_t>(l_.index(x, y))][c];
    if (ring.empty()) ring.emplace_back();
    ring[0].out[static_cast<std::size_t>(in)] |= outs;
  }

 private:
  FabricLayout& l_;
};

}  // namespace

FabricLayout make_layout(int fw, int fh, int n_resp, int n_resp_base) {
  if (fw <= 0 || fh <= 0) throw ProgramError("layout needs at least one worker PE");
  if (fw % 2 || fh % 2)
    throw ProgramError(fmt::format("worker field {}x{} must have even dimensions", fw, fh));
  if (n_resp < 2 || n_resp % 2)
    throw ProgramError(fmt::format("response PE count {} must be even and at least 2", n_resp));
  FabricLayout l;
  l.field_w = fw;
  l.field_h = fh;
  l.n_resp = n_resp;
  l.n_resp_base = n_resp_base < 0 ? n_resp : n_resp_base;
  l.field_x0 = n_resp / 2;
  l.width = std::max(fw + n_resp, fw / 2 + n_resp + 2);
  l.height = fh + 3;
  l.y_red_upper = fh / 2;
  l.y_ctrl = fh / 2 + 1;
  l.y_red_lower = fh / 2 + 2;
  l.merge_x = l.field_x0 + fw / 2;
  l.exec_x = l.width - 1;
  const std::size_t n = static_cast<std::size_t>(l.width * l.height);
  l.roles.assign(n, Role::Idle);
  l.routes.assign(n, {});
  l.phase.assign(n, -1);

  const int x0 = l.field_x0, x1 = l.field_x0 + fw;
  const int yu = l.y_red_upper, yc = l.y_ctrl, yl = l.y_red_lower;
  const int m = l.merge_x;
  auto at = [&](int x, int y) -> std::size_t { return static_cast<std::size_t>(l.index(x, y)); };

  for (int fx = 0; fx < fw; ++fx)
    for (int fy = 0; fy < fh; ++fy) {
      const int x = l.grid_x(fx), y = l.grid_y(fy);
      l.roles[at(x, y)] = Role::Worker;
      l.phase[at(x, y)] = static_cast<std::int8_t>((fx + fy) % 2);
    }
  for (int x = x0; x < x1; ++x) {
    l.roles[at(x, yu)] = Role::Reduction;
    l.roles[at(x, yl)] = Role::Reduction;
  }
  for (int x = 0; x < l.width; ++x) l.roles[at(x, yc)] = Role::ControlPass;
  l.roles[at(m, yc)] = Role::Merge;
  l.roles[at(l.exec_x, yc)] = Role::Executive;
  for (int k = 0; k < n_resp; ++k)
    l.roles[at(l.resp_x(k), yc)] = k < l.n_resp_base ? Role::Response : Role::Reserve;

  Painter p(l);
  const std::uint8_t C = bit(Dir::C), L = bit(Dir::L), R = bit(Dir::R), U = bit(Dir::U), D = bit(Dir::D);

  // ctrl and args: multicast tree rooted at the merge PE.
  for (int c : {color::ctrl, color::args}) {
    p.add(m, yc, c, Dir::C, U | D);
    for (int half = 0; half < 2; ++half) {
      const int yr = half == 0 ? yu : yl;
      const Dir from_ctrl = half == 0 ? Dir::D : Dir::U;
      const std::uint8_t away = half == 0 ? U : D;
      for (int x = x0; x < x1; ++x) {
        std::uint8_t outs = C | away;
        if (x == m) {
          if (x > x0) outs |= L;
          if (x + 1 < x1) outs |= R;
          p.add(x, yr, c, from_ctrl, outs);
        } else if (x < m) {
          if (x > x0) outs |= L;
          p.add(x, yr, c, Dir::R, outs);
        } else {
          if (x + 1 < x1) outs |= R;
          p.add(x, yr, c, Dir::L, outs);
        }
      }
      for (int fx = 0; fx < fw; ++fx)
        for (int k = 0; k < fh / 2; ++k) {
          // k counts outward from the reduction row
          const int fy = half == 0 ? fh / 2 - 1 - k : fh / 2 + k;
          const bool last = k == fh / 2 - 1;
          p.add(l.grid_x(fx), l.grid_y(fy), c, half == 0 ? Dir::D : Dir::U,
                static_cast<std::uint8_t>(C | (last ? 0 : away)));
        }
    }
  }

  // reduction_1: systolic column drain, closest worker first.
  for (int fx = 0; fx < fw; ++fx) {
    const int x = l.grid_x(fx);
    for (int fy = 0; fy < fh; ++fy) {
      const bool upper = fy < fh / 2;
      const Dir out = upper ? Dir::D : Dir::U;
      const Dir from_far = upper ? Dir::U : Dir::D;
      p.set(x, l.grid_y(fy), color::reduction_1,
            {state({{Dir::C, bit(out)}}), state({{from_far, bit(out)}})});
    }
    p.set(x, yu, color::reduction_1, {state({{Dir::U, C}})});
    p.set(x, yl, color::reduction_1, {state({{Dir::D, C}})});
  }

  // reduction_2: row drain toward the two inner columns m-1 and m.
  for (int yr : {yu, yl}) {
    for (int x = x0; x < m - 1; ++x)
      p.set(x, yr, color::reduction_2, {state({{Dir::C, R}}), state({{Dir::L, R}})});
    p.set(m - 1, yr, color::reduction_2, {state({{Dir::L, C}})});
    p.set(m, yr, color::reduction_2, {state({{Dir::R, C}})});
    for (int x = m + 1; x < x1; ++x)
      p.set(x, yr, color::reduction_2, {state({{Dir::C, L}}), state({{Dir::R, L}})});
  }

  // reduction_4: inner PEs to the final tile (m, yu).
  p.set(m - 1, yu, color::reduction_4, {state({{Dir::C, R}})});
  p.set(m, yu, color::reduction_4, {state({{Dir::L, C}, {Dir::D, C}})});
  p.set(m - 1, yl, color::reduction_4, {state({{Dir::C, R}})});
  p.set(m, yl, color::reduction_4, {state({{Dir::C, U}, {Dir::L, U}})});
  p.set(m, yc, color::reduction_4, {state({{Dir::D, U}})});

  // reduction_3: inner PEs to the executive along the control row.
  p.set(m - 1, yu, color::reduction_3, {state({{Dir::C, D}})});
  p.set(m, yu, color::reduction_3, {state({{Dir::C, D}})});
  p.set(m - 1, yl, color::reduction_3, {state({{Dir::C, U}})});
  p.set(m, yl, color::reduction_3, {state({{Dir::C, U}})});
  p.set(m - 1, yc, color::reduction_3, {state({{Dir::U, R}, {Dir::D, R}})});
  p.set(m, yc, color::reduction_3, {state({{Dir::L, R}, {Dir::U, R}, {Dir::D, R}})});
  for (int x = m + 1; x < l.exec_x; ++x) p.set(x, yc, color::reduction_3, {state({{Dir::L, R}})});
  p.set(l.exec_x, yc, color::reduction_3, {state({{Dir::L, C}})});

  // reduction_broadcast: final tile to every worker.
  {
    const int c = color::reduction_broadcast;
    std::uint8_t root = U | D;
    if (m > x0) root |= L;
    if (m + 1 < x1) root |= R;
    p.add(m, yu, c, Dir::C, root);
    p.add(m, yc, c, Dir::U, D);
    std::uint8_t lower = D;
    if (m > x0) lower |= L;
    if (m + 1 < x1) lower |= R;
    p.add(m, yl, c, Dir::U, lower);
    for (int half = 0; half < 2; ++half) {
      const int yr = half == 0 ? yu : yl;
      const std::uint8_t away = half == 0 ? U : D;
      for (int x = x0; x < x1; ++x) {
        if (x == m) continue;
        if (x < m) p.add(x, yr, c, Dir::R, static_cast<std::uint8_t>(away | (x > x0 ? L : 0)));
        else p.add(x, yr, c, Dir::L, static_cast<std::uint8_t>(away | (x + 1 < x1 ? R : 0)));
      }
      for (int fx = 0; fx < fw; ++fx)
        for (int k = 0; k < fh / 2; ++k) {
          const int fy = half == 0 ? fh / 2 - 1 - k : fh / 2 + k;
          const bool last = k == fh / 2 - 1;
          p.add(l.grid_x(fx), l.grid_y(fy), c, half == 0 ? Dir::D : Dir::U,
                static_cast<std::uint8_t>(C | (last ? 0 : away)));
        }
    }
  }

  // c0 / c1: checkerboard neighbour exchange. A ring state s serves
  // s = 0 col -1, 1 row -1, 2 col +1, 3 row +1.
  const RouteRing rx = {state({{Dir::R, C}}), state({{Dir::D, C}}), state({{Dir::L, C}}), state({{Dir::U, C}})};
  const RouteRing tx = {state({{Dir::C, L}}), state({{Dir::C, U}}), state({{Dir::C, R}}), state({{Dir::C, D}})};
  for (int fx = 0; fx < fw; ++fx)
    for (int fy = 0; fy < fh; ++fy) {
      const int x = l.grid_x(fx), y = l.grid_y(fy);
      const bool even = (fx + fy) % 2 == 0;
      p.set(x, y, even ? color::c0 : color::c1, rx);
      p.set(x, y, even ? color::c1 : color::c0, tx);
      p.set(x, y, color::loopback, {state({{Dir::C, C}})});
    }
  for (int x = x0; x < x1; ++x)
    for (int y : {yu, yc, yl})
      for (int c : {color::c0, color::c1}) p.set(x, y, c, {state({{Dir::U, D}, {Dir::D, U}})});

  return l;
}

}  // namespace machlite::lower
