#include "fperr/interval.hpp"

#include <quadmath.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace fperr {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

inline double next_up(double x) {
  return x == kInf ? x : std::nextafter(x, kInf);
}
inline double next_down(double x) {
  return x == -kInf ? x : std::nextafter(x, -kInf);
}

// two_sum: a + b = s + err exactly (err is the rounding residual).
inline double sum_err(double a, double b, double s) {
  double bb = s - a;
  return (a - (s - bb)) + (b - bb);
}

inline double dir(double result, double err, bool up) {
  if (!std::isfinite(result)) return result;  // overflow already outward
  if (err == 0.0) return result;
  return up ? (err > 0.0 ? next_up(result) : result)
            : (err < 0.0 ? next_down(result) : result);
}

// Transcendental endpoints go through __float128; one double ulp of outward
// slack covers the <=1-ulp accuracy of libquadmath.
inline double q_rd(__float128 v) { return next_down(static_cast<double>(v)); }
inline double q_ru(__float128 v) { return next_up(static_cast<double>(v)); }

}  // namespace

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Input: return "input";
    case OpKind::Const: return "const";
    case OpKind::Add: return "+";
    case OpKind::Sub: return "-";
    case OpKind::Mul: return "*";
    case OpKind::Div: return "/";
    case OpKind::Neg: return "neg";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Sin: return "sin";
    case OpKind::Cos: return "cos";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::PowInt: return "pow";
    case OpKind::Select: return "select";
  }
  return "?";
}

int op_arity(OpKind op) {
  switch (op) {
    case OpKind::Input:
    case OpKind::Const: return 0;
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul:
    case OpKind::Div: return 2;
    case OpKind::Neg:
    case OpKind::Sqrt:
    case OpKind::Sin:
    case OpKind::Cos:
    case OpKind::Exp:
    case OpKind::Log:
    case OpKind::PowInt: return 1;
    case OpKind::Select: return 3;
  }
  return 0;
}

Interval::Interval(double l, double h) : lo(l), hi(h) {
  if (std::isnan(l) || std::isnan(h) || l > h)
    throw DomainViolation("invalid interval endpoints [" + std::to_string(l) + "," +
                          std::to_string(h) + "]");
}

std::string Interval::str() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "[%.17g, %.17g]", lo, hi);
  return buf;
}

double add_rd(double a, double b) { double s = a + b; return dir(s, sum_err(a, b, s), false); }
double add_ru(double a, double b) { double s = a + b; return dir(s, sum_err(a, b, s), true); }
double sub_rd(double a, double b) { return add_rd(a, -b); }
double sub_ru(double a, double b) { return add_ru(a, -b); }
double mul_rd(double a, double b) { double p = a * b; return dir(p, std::fma(a, b, -p), false); }
double mul_ru(double a, double b) { double p = a * b; return dir(p, std::fma(a, b, -p), true); }

double div_rd(double a, double b) {
  double q = a / b;
  if (!std::isfinite(q)) return q;
  double r = std::fma(q, b, -a);  // q*b - a; true - q has sign of (-r/b)
  double err = (b > 0) ? -r : r;
  return dir(q, err, false);
}
double div_ru(double a, double b) {
  double q = a / b;
  if (!std::isfinite(q)) return q;
  double r = std::fma(q, b, -a);
  double err = (b > 0) ? -r : r;
  return dir(q, err, true);
}

namespace {
double sqrt_rd(double a) {
  double s = std::sqrt(a);
  double r = std::fma(s, s, -a);  // s*s - a; true - s has sign of -r
  return dir(s, -r, false);
}
double sqrt_ru(double a) {
  double s = std::sqrt(a);
  double r = std::fma(s, s, -a);
  return dir(s, -r, true);
}

double pow_mag_ru(double m, long n) {  // m >= 0
  double acc = 1.0;
  for (long i = 0; i < n; ++i) acc = mul_ru(acc, m);
  return acc;
}
double pow_mag_rd(double m, long n) {
  double acc = 1.0;
  for (long i = 0; i < n; ++i) acc = mul_rd(acc, m);
  return acc;
}
}  // namespace

Interval iv_add(const Interval& a, const Interval& b) {
  return Interval(add_rd(a.lo, b.lo), add_ru(a.hi, b.hi));
}
Interval iv_sub(const Interval& a, const Interval& b) {
  return Interval(sub_rd(a.lo, b.hi), sub_ru(a.hi, b.lo));
}
Interval iv_neg(const Interval& a) { return Interval(-a.hi, -a.lo); }

Interval iv_mul(const Interval& a, const Interval& b) {
  double lo = std::min(std::min(mul_rd(a.lo, b.lo), mul_rd(a.lo, b.hi)),
                       std::min(mul_rd(a.hi, b.lo), mul_rd(a.hi, b.hi)));
  double hi = std::max(std::max(mul_ru(a.lo, b.lo), mul_ru(a.lo, b.hi)),
                       std::max(mul_ru(a.hi, b.lo), mul_ru(a.hi, b.hi)));
  return Interval(lo, hi);
}

Interval iv_div(const Interval& a, const Interval& b) {
  if (b.lo <= 0.0 && b.hi >= 0.0)
    throw DomainViolation("division by interval containing zero " + b.str());
  double lo = std::min(std::min(div_rd(a.lo, b.lo), div_rd(a.lo, b.hi)),
                       std::min(div_rd(a.hi, b.lo), div_rd(a.hi, b.hi)));
  double hi = std::max(std::max(div_ru(a.lo, b.lo), div_ru(a.lo, b.hi)),
                       std::max(div_ru(a.hi, b.lo), div_ru(a.hi, b.hi)));
  return Interval(lo, hi);
}

Interval iv_abs(const Interval& a) {
  if (a.lo >= 0.0) return a;
  if (a.hi <= 0.0) return Interval(-a.hi, -a.lo);
  return Interval(0.0, std::max(-a.lo, a.hi));
}

Interval iv_sqrt(const Interval& a) {
  if (a.lo < 0.0) throw DomainViolation("sqrt of negative range " + a.str());
  return Interval(sqrt_rd(a.lo), sqrt_ru(a.hi));
}

Interval iv_log(const Interval& a) {
  if (a.lo <= 0.0) throw DomainViolation("log of non-positive range " + a.str());
  return Interval(q_rd(logq(static_cast<__float128>(a.lo))),
                  q_ru(logq(static_cast<__float128>(a.hi))));
}

Interval iv_exp(const Interval& a) {
  double lo = q_rd(expq(static_cast<__float128>(a.lo)));
  return Interval(std::max(0.0, lo), q_ru(expq(static_cast<__float128>(a.hi))));
}

namespace {

// sin over [lo,hi], entirely via quad arithmetic. Quadrant analysis on
// k = floor(x / (pi/2)); quad pi error times |k| <= 4e6 stays below 1e-27,
// absorbed by the one-ulp outward step.
Interval sin_core(double dlo, double dhi) {
  if (!(std::abs(dlo) <= 1e6 && std::abs(dhi) <= 1e6)) return Interval(-1.0, 1.0);
  __float128 lo = dlo, hi = dhi;
  __float128 half_pi = M_PI_2q;
  __float128 klo = floorq(lo / half_pi), khi = floorq(hi / half_pi);
  if (khi - klo >= 4) return Interval(-1.0, 1.0);
  double smin = 1.0, smax = -1.0;
  double slo = static_cast<double>(sinq(lo)), shi = static_cast<double>(sinq(hi));
  smin = std::min(std::min(slo, shi), smin);
  smax = std::max(std::max(slo, shi), smax);
  // interior extrema at odd multiples of pi/2
  for (long long k = (long long)klo; k <= (long long)khi; ++k) {
    __float128 crit = (k + 1) * half_pi;  // boundary between quadrant k and k+1
    if (crit > lo && crit < hi) {
      long long m = k + 1;
      if (((m % 4) + 4) % 4 == 1) smax = 1.0;  // pi/2 + 2*pi*j
      if (((m % 4) + 4) % 4 == 3) smin = -1.0;
    }
  }
  return Interval(std::max(-1.0, next_down(smin)), std::min(1.0, next_up(smax)));
}

}  // namespace

Interval iv_sin(const Interval& a) { return sin_core(a.lo, a.hi); }

Interval iv_cos(const Interval& a) {
  // cos(x) = sin(x + pi/2): shift with outward endpoints
  if (!(std::abs(a.lo) <= 1e6 && std::abs(a.hi) <= 1e6)) return Interval(-1.0, 1.0);
  double lo = static_cast<double>(static_cast<__float128>(a.lo) + M_PI_2q);
  double hi = static_cast<double>(static_cast<__float128>(a.hi) + M_PI_2q);
  Interval s = sin_core(next_down(lo), next_up(hi));
  return Interval(std::max(-1.0, s.lo), std::min(1.0, s.hi));
}

Interval iv_pow_int(const Interval& a, long n) {
  if (n == 0) return Interval(1.0, 1.0);
  if (n < 0) return iv_div(Interval(1.0, 1.0), iv_pow_int(a, -n));
  if (n == 1) return a;
  bool odd = (n % 2) != 0;
  if (odd) {
    double lo = a.lo < 0 ? -pow_mag_ru(-a.lo, n) : pow_mag_rd(a.lo, n);
    double hi = a.hi < 0 ? -pow_mag_rd(-a.hi, n) : pow_mag_ru(a.hi, n);
    return Interval(lo, hi);
  }
  if (a.lo >= 0.0) return Interval(pow_mag_rd(a.lo, n), pow_mag_ru(a.hi, n));
  if (a.hi <= 0.0) return Interval(pow_mag_rd(-a.hi, n), pow_mag_ru(-a.lo, n));
  return Interval(0.0, pow_mag_ru(std::max(-a.lo, a.hi), n));
}

Interval iv_max(const Interval& a, const Interval& b) {
  return Interval(std::max(a.lo, b.lo), std::max(a.hi, b.hi));
}

Interval iv_scale(const Interval& a, double s) {
  if (s >= 0.0) return Interval(mul_rd(a.lo, s), mul_ru(a.hi, s));
  return Interval(mul_rd(a.hi, s), mul_ru(a.lo, s));
}

Interval interval_apply(OpKind op, const std::vector<Interval>& args, long pow_exp) {
  switch (op) {
    case OpKind::Add: return iv_add(args.at(0), args.at(1));
    case OpKind::Sub: return iv_sub(args.at(0), args.at(1));
    case OpKind::Mul: return iv_mul(args.at(0), args.at(1));
    case OpKind::Div: return iv_div(args.at(0), args.at(1));
    case OpKind::Neg: return iv_neg(args.at(0));
    case OpKind::Sqrt: return iv_sqrt(args.at(0));
    case OpKind::Sin: return iv_sin(args.at(0));
    case OpKind::Cos: return iv_cos(args.at(0));
    case OpKind::Exp: return iv_exp(args.at(0));
    case OpKind::Log: return iv_log(args.at(0));
    case OpKind::PowInt: return iv_pow_int(args.at(0), pow_exp);
    case OpKind::Select: return iv_hull(args.at(0), args.at(1));
    default: throw Error("interval_apply: leaf op");
  }
}

double iv_mag(const Interval& x) { return std::max(std::abs(x.lo), std::abs(x.hi)); }

double iv_width(const Interval& x) { return sub_ru(x.hi, x.lo); }

bool iv_contains(const Interval& x, double p) { return x.contains(p); }

Interval iv_hull(const Interval& a, const Interval& b) {
  return Interval(std::min(a.lo, b.lo), std::max(a.hi, b.hi));
}

std::pair<Interval, Interval> iv_split(const Interval& x) {
  double mid = x.lo + 0.5 * (x.hi - x.lo);
  if (!std::isfinite(mid)) mid = 0.5 * x.lo + 0.5 * x.hi;
  if (mid <= x.lo || mid >= x.hi) mid = std::nextafter(x.lo, x.hi);
  return {Interval(x.lo, mid), Interval(mid, x.hi)};
}

}  // namespace fperr
