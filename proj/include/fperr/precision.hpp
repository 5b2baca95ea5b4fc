#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace fperr {

/// IEEE binary format of a node. Stored-mantissa widths are 10/23/52,
/// so the unit roundoff is 2^-(p+1): 2^-11, 2^-24, 2^-53.
enum class Precision : uint8_t { fp16, fp32, fp64 };

constexpr double kU16 = 0x1p-11;
constexpr double kU32 = 0x1p-24;
constexpr double kU64 = 0x1p-53;

constexpr double unit_roundoff(Precision p) {
  switch (p) {
    case Precision::fp16: return kU16;
    case Precision::fp32: return kU32;
    default: return kU64;
  }
}

constexpr const char* precision_name(Precision p) {
  switch (p) {
    case Precision::fp16: return "fl16";
    case Precision::fp32: return "fl32";
    default: return "fl64";
  }
}

/// True when the consumer is strictly narrower than the producer,
/// i.e. the edge performs a value-changing down-cast.
constexpr bool is_downcast(Precision producer, Precision consumer) {
  return unit_roundoff(consumer) > unit_roundoff(producer);
}

/// Round-to-nearest-even of a double to an 11-bit significand. Assumes the
/// value is in fp16's normal range; subnormals and overflow are out of scope.
inline double round_to_fp16(double v) {
  if (v == 0.0 || !std::isfinite(v)) return v;
  int e;
  double m = std::frexp(v, &e);          // m in [0.5, 1)
  double scaled = std::ldexp(m, 11);     // 11 significand bits
  return std::ldexp(std::nearbyint(scaled), e - 11);
}

/// Round a double to the given working precision (identity for fp64).
inline double round_to(double v, Precision p) {
  switch (p) {
    case Precision::fp64: return v;
    case Precision::fp32: return static_cast<double>(static_cast<float>(v));
    default: return round_to_fp16(v);
  }
}

}  // namespace fperr
