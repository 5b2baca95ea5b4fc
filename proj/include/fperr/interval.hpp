#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fperr/errors.hpp"

namespace fperr {

/// Operator kinds shared by the DAG and the interval library.
enum class OpKind : uint8_t {
  Input,
  Const,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Sqrt,
  Sin,
  Cos,
  Exp,
  Log,
  PowInt,
  Select,
};

const char* op_name(OpKind op);
int op_arity(OpKind op);  // Select reports 3 (then, else, guard handled separately)

/// Closed real interval with outward-rounded endpoints.
///
/// Directed rounding is realized through error-free transformations: the
/// round-to-nearest result plus its exact residual (two_sum / fma) tells
/// whether the true value lies above or below, and the endpoint is nudged one
/// ulp outward only when the operation was inexact. This matches hardware
/// directed rounding bit for bit on +,-,*,/ and sqrt.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  Interval() = default;
  Interval(double lo, double hi);
  static Interval point(double v) { return Interval(v, v); }

  bool degenerate() const { return lo == hi; }
  bool contains(double p) const { return lo <= p && p <= hi; }
  bool contains(const Interval& o) const { return lo <= o.lo && o.hi <= hi; }
  std::string str() const;
};

Interval iv_add(const Interval& a, const Interval& b);
Interval iv_sub(const Interval& a, const Interval& b);
Interval iv_mul(const Interval& a, const Interval& b);
Interval iv_div(const Interval& a, const Interval& b);  // throws DomainViolation on 0-crossing
Interval iv_neg(const Interval& a);
Interval iv_abs(const Interval& a);
Interval iv_sqrt(const Interval& a);  // throws DomainViolation when lo < 0
Interval iv_log(const Interval& a);   // throws DomainViolation when lo <= 0
Interval iv_exp(const Interval& a);
Interval iv_sin(const Interval& a);
Interval iv_cos(const Interval& a);
Interval iv_pow_int(const Interval& a, long n);
Interval iv_max(const Interval& a, const Interval& b);
Interval iv_scale(const Interval& a, double s);

/// apply with uniform arity checking; Select takes (then, else, ...) and
/// returns the hull of the branches.
Interval interval_apply(OpKind op, const std::vector<Interval>& args, long pow_exp = 0);

double iv_mag(const Interval& x);    // max(|lo|, |hi|)
double iv_width(const Interval& x);  // hi - lo rounded up
bool iv_contains(const Interval& x, double p);
Interval iv_hull(const Interval& a, const Interval& b);
std::pair<Interval, Interval> iv_split(const Interval& x);

// Directed-rounding scalar helpers (exposed for tests and the optimizer).
double add_rd(double a, double b);
double add_ru(double a, double b);
double sub_rd(double a, double b);
double sub_ru(double a, double b);
double mul_rd(double a, double b);
double mul_ru(double a, double b);
double div_rd(double a, double b);
double div_ru(double a, double b);

}  // namespace fperr
