#pragma once

#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace machlite {

// Element types. Memory is a store of 16-bit words; f32 occupies two.
enum class DType : std::uint8_t { F32, I16 };

// Object-oriented data structure kinds.
enum class OodsKind : std::uint8_t { GS, GA, LS, ULS, LA };

enum class Placement : std::uint8_t { Controller, Worker };

inline constexpr int words_per_element(DType t) { return t == DType::F32 ? 2 : 1; }

std::string_view to_string(DType t);
std::string_view to_string(OodsKind k);
std::string_view to_string(Placement p);

inline constexpr Placement placement_of(OodsKind k) {
  return (k == OodsKind::GS || k == OodsKind::GA) ? Placement::Controller
                                                  : Placement::Worker;
}

struct SourceLoc {
  int line = 0;
  int column = 0;
};

struct Diagnostic {
  SourceLoc loc;
  std::string message;

  std::string str() const;
};

using Diagnostics = std::vector<Diagnostic>;

std::string format_diagnostics(const Diagnostics& diags, std::string_view file = {});

// Raised for user-facing program errors (exit code 1 in the CLI).
class ProgramError : public std::runtime_error {
 public:
  explicit ProgramError(Diagnostics diags);
  ProgramError(SourceLoc loc, std::string message);
  explicit ProgramError(std::string message) : ProgramError(SourceLoc{}, std::move(message)) {}
  const Diagnostics& diagnostics() const { return diags_; }

 private:
  Diagnostics diags_;
};

// Raised when an internal invariant breaks (exit code 2 in the CLI).
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Raised when a program faults at run time (bad index, dynamic stop out of
// range, deadlock). Exit code 1 in the CLI.
class ExecutionFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::uint32_t f32_bits(float v) { return std::bit_cast<std::uint32_t>(v); }
inline float bits_f32(std::uint32_t b) { return std::bit_cast<float>(b); }

inline std::int16_t wrap_i16(std::int64_t v) {
  return static_cast<std::int16_t>(static_cast<std::uint16_t>(v & 0xffff));
}

// A scalar held as raw bits so f32 and i16 values travel through one type.
struct Scalar {
  DType dtype = DType::F32;
  std::uint32_t bits = 0;

  static Scalar f32(float v) { return {DType::F32, f32_bits(v)}; }
  static Scalar i16(std::int64_t v) {
    return {DType::I16, static_cast<std::uint16_t>(wrap_i16(v))};
  }
  float as_f32() const { return bits_f32(bits); }
  std::int16_t as_i16() const { return static_cast<std::int16_t>(bits & 0xffff); }
  double as_double() const { return dtype == DType::F32 ? as_f32() : as_i16(); }
  bool operator==(const Scalar&) const = default;
};

enum class BinOp : std::uint8_t { Add, Sub, Mul, Div };
enum class CmpOp : std::uint8_t { GT, LT, GE, LE, EQ, NE };

std::string_view to_string(BinOp op);
std::string_view to_string(CmpOp op);
std::string_view symbol(BinOp op);
std::string_view symbol(CmpOp op);

// Shared arithmetic so every backend agrees bit for bit on elementwise ops.
Scalar apply(BinOp op, Scalar a, Scalar b);
bool compare(CmpOp op, Scalar a, Scalar b);

}  // namespace machlite
