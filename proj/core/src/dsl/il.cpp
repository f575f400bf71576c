#include <cmath>
#include <random>

#include "machlite/dsl/typed.hpp"

namespace machlite::dsl {

std::vector<Scalar> generate_init(const InitSpec& spec, DType dtype, std::size_t count,
                                  std::uint64_t run_seed, int ordinal) {
  auto make = [dtype](double v) {
    return dtype == DType::F32 ? Scalar::f32(static_cast<float>(v))
                               : Scalar::i16(static_cast<std::int64_t>(v));
  };
  std::vector<Scalar> out;
  out.reserve(count);
  switch (spec.kind) {
    case InitSpec::Kind::Zeros:
    case InitSpec::Kind::HostRef:
      out.assign(count, make(0.0));
      break;
    case InitSpec::Kind::Constant:
      out.assign(count, make(spec.constant));
      break;
    case InitSpec::Kind::Literal:
      for (std::size_t i = 0; i < count; ++i)
        out.push_back(make(i < spec.values.size() ? spec.values[i] : 0.0));
      break;
    case InitSpec::Kind::Random: {
      std::mt19937 eng;
      if (spec.seed) {
        eng.seed(static_cast<std::uint32_t>(*spec.seed));
      } else {
        std::seed_seq seq{static_cast<std::uint32_t>(run_seed),
                          static_cast<std::uint32_t>(run_seed >> 32),
                          static_cast<std::uint32_t>(ordinal)};
        eng.seed(seq);
      }
      if (dtype == DType::F32) {
        const float lo = static_cast<float>(spec.lo.value_or(0.0));
        const float hi = static_cast<float>(spec.hi.value_or(1.0));
        for (std::size_t i = 0; i < count; ++i) {
          const float u = static_cast<float>(eng() >> 8) * 0x1p-24f;
          float v = lo + (hi - lo) * u;
          if (v >= hi) v = std::nextafter(hi, lo);
          out.push_back(Scalar::f32(v));
        }
      } else {
        const auto lo = static_cast<std::int64_t>(spec.lo.value_or(0.0));
        const auto hi = static_cast<std::int64_t>(spec.hi.value_or(100.0));
        const auto span = static_cast<std::uint32_t>(hi - lo);
        for (std::size_t i = 0; i < count; ++i) out.push_back(Scalar::i16(lo + eng() % span));
      }
      break;
    }
  }
  return out;
}

namespace {

void flatten(const std::vector<TStmt>& in, std::vector<ILStmt>& out) {
  for (const auto& s : in) {
    if (const auto* sl = std::get_if<TStaticLoop>(&s.node)) {
      for (const auto& it : sl->iterations) flatten(it, out);
      continue;
    }
    if (const auto* dl = std::get_if<TDeviceLoop>(&s.node)) {
      ILLoop l;
      l.id = dl->id;
      l.ga_var = dl->ga_var;
      l.start = dl->start;
      l.stop = dl->stop;
      l.step = dl->step;
      flatten(dl->body, l.body);
      out.push_back({std::move(l), s.loc});
      continue;
    }
    ILStmt is;
    is.loc = s.loc;
    std::visit(
        [&](const auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (!std::is_same_v<T, TStaticLoop> && !std::is_same_v<T, TDeviceLoop>)
            is.node = n;
        },
        s.node);
    out.push_back(std::move(is));
  }
}

}  // namespace

ILProgram lower_to_il(const TypedProgram& typed, std::uint64_t seed) {
  ILProgram il;
  il.grid = typed.grid;
  il.device_loops = typed.device_loops;
  for (const auto& v : typed.vars) {
    ILVar iv;
    iv.info = v;
    iv.initialized = v.init.has_value();
    if (iv.initialized) {
      std::size_t count = static_cast<std::size_t>(v.elements());
      if (v.kind == OodsKind::LA || v.kind == OodsKind::LS)
        count *= static_cast<std::size_t>(v.shape[0] * v.shape[1]);
      const bool host = v.init->kind == InitSpec::Kind::HostRef;
      iv.data = generate_init(host ? *v.host_init : *v.init, v.dtype, count, seed,
                              host ? v.host_ordinal : v.ordinal);
    }
    il.vars.push_back(std::move(iv));
  }
  flatten(typed.body, il.body);
  return il;
}

}  // namespace machlite::dsl
