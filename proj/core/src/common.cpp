#include "machlite/common.hpp"

#include <fmt/format.h>

namespace machlite {

std::string_view to_string(DType t) { return t == DType::F32 ? "f32" : "i16"; }

std::string_view to_string(OodsKind k) {
  switch (k) {
    case OodsKind::GS: return "gs";
    case OodsKind::GA: return "ga";
    case OodsKind::LS: return "ls";
    case OodsKind::ULS: return "uls";
    case OodsKind::LA: return "la";
  }
  return "?";
}

std::string_view to_string(Placement p) {
  return p == Placement::Controller ? "controller" : "worker";
}

std::string Diagnostic::str() const {
  return fmt::format("{}:{}: {}", loc.line, loc.column, message);
}

std::string format_diagnostics(const Diagnostics& diags, std::string_view file) {
  std::string out;
  for (const auto& d : diags) {
    if (!file.empty()) out += fmt::format("{}:", file);
    out += d.str();
    out += '\n';
  }
  return out;
}

ProgramError::ProgramError(Diagnostics diags)
    : std::runtime_error(diags.empty() ? "program error" : diags.front().str()),
      diags_(std::move(diags)) {}

ProgramError::ProgramError(SourceLoc loc, std::string message)
    : ProgramError(Diagnostics{Diagnostic{loc, std::move(message)}}) {}

std::string_view to_string(BinOp op) {
  switch (op) {
    case BinOp::Add: return "add";
    case BinOp::Sub: return "sub";
    case BinOp::Mul: return "mul";
    case BinOp::Div: return "div";
  }
  return "?";
}

std::string_view symbol(BinOp op) {
  switch (op) {
    case BinOp::Add: return "+";
    case BinOp::Sub: return "-";
    case BinOp::Mul: return "*";
    case BinOp::Div: return "/";
  }
  return "?";
}

std::string_view to_string(CmpOp op) {
  switch (op) {
    case CmpOp::GT: return "GT";
    case CmpOp::LT: return "LT";
    case CmpOp::GE: return "GE";
    case CmpOp::LE: return "LE";
    case CmpOp::EQ: return "EQ";
    case CmpOp::NE: return "NE";
  }
  return "?";
}

std::string_view symbol(CmpOp op) {
  switch (op) {
    case CmpOp::GT: return ">";
    case CmpOp::LT: return "<";
    case CmpOp::GE: return ">=";
    case CmpOp::LE: return "<=";
    case CmpOp::EQ: return "==";
    case CmpOp::NE: return "!=";
  }
  return "?";
}

Scalar apply(BinOp op, Scalar a, Scalar b) {
  if (a.dtype != b.dtype) throw InternalError("apply: mixed element types");
  if (a.dtype == DType::F32) {
    // volatile keeps the compiler from contracting into FMA or reassociating.
    volatile float x = a.as_f32();
    volatile float y = b.as_f32();
    float r = 0.0f;
    switch (op) {
      case BinOp::Add: r = x + y; break;
      case BinOp::Sub: r = x - y; break;
      case BinOp::Mul: r = x * y; break;
      case BinOp::Div: r = x / y; break;
    }
    return Scalar::f32(r);
  }
  const std::int64_t x = a.as_i16();
  const std::int64_t y = b.as_i16();
  switch (op) {
    case BinOp::Add: return Scalar::i16(x + y);
    case BinOp::Sub: return Scalar::i16(x - y);
    case BinOp::Mul: return Scalar::i16(x * y);
    case BinOp::Div: break;
  }
  throw InternalError("apply: i16 division is not supported");
}

bool compare(CmpOp op, Scalar a, Scalar b) {
  const double x = a.as_double();
  const double y = b.as_double();
  switch (op) {
    case CmpOp::GT: return x > y;
    case CmpOp::LT: return x < y;
    case CmpOp::GE: return x >= y;
    case CmpOp::LE: return x <= y;
    case CmpOp::EQ: return x == y;
    case CmpOp::NE: return x != y;
  }
  return false;
}

}  // namespace machlite
