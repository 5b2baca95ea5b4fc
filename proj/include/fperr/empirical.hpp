#pragma once

#include <cstdint>

#include "fperr/taylor.hpp"

namespace fperr::emp {

struct SampleConfig {
  long n_samples = 100000;
  uint64_t seed = 42;
  enum class Strategy : uint8_t { Uniform } strategy = Strategy::Uniform;
};

struct EmpiricalReport {
  double shadow_max = 0.0;
  double profiled_max = 0.0;
  double rigorous_bound = 0.0;
  bool ordering_ok = true;
  long skipped_samples = 0;
};

/// Max over samples of |working-precision evaluation - >=113-bit shadow
/// evaluation| across all outputs. Working evaluation rounds after every
/// operator at the node's precision and applies down-casts per edge; a sample
/// whose fp branch decision diverges from the exact one also compares against
/// the shadow value forced along the fp path. Domain-failing samples are
/// skipped and counted.
double shadow_test(const Problem& p, const SampleConfig& cfg, long* skipped = nullptr);

/// Max over samples of the error expression Sum |coeff(x)| * noise at high
/// precision, guard-respecting: gray-zone samples take the worst consistent
/// branch choice.
double profile_error_expr(taylor::Analysis& a, const SampleConfig& cfg, long* skipped = nullptr);

EmpiricalReport check_ordering(double shadow_max, double profiled_max, double rigorous);

/// Deterministic counter-based uniform sampler (reduction order independent).
double sample_uniform(uint64_t seed, uint64_t stream, double lo, double hi);

}  // namespace fperr::emp
