#pragma once

#include <gmpxx.h>
#include <quadmath.h>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "fperr/errors.hpp"
#include "fperr/interval.hpp"
#include "fperr/precision.hpp"

namespace fperr::sym {

using AtomId = uint32_t;

enum class AtomKind : uint8_t { Var, Recip, Sqrt, Sin, Cos, Exp, Log, NodeRef };

class SymExpr;

/// Resolves the value of a deferred (kept-factored) DAG node during
/// evaluation. Keys are scope-qualified node ids.
class NodeContext {
 public:
  virtual ~NodeContext() = default;
  virtual Interval node_interval(uint64_t key,
                                 const std::unordered_map<AtomId, Interval>& env) const = 0;
  virtual __float128 node_quad(uint64_t key,
                               const std::unordered_map<AtomId, __float128>& env) const = 0;
  virtual int node_op_count(uint64_t key) const = 0;
};

struct AtomData {
  AtomKind kind;
  std::string name;                    // Var
  std::shared_ptr<const SymExpr> arg;  // kernels
  uint64_t node_key = 0;               // NodeRef
};

/// Process-global interning table for atoms. Insertions are synchronized;
/// lookups of existing data are lock-free after publication.
class AtomTable {
 public:
  static AtomTable& instance();
  AtomId var(const std::string& name);
  AtomId kernel(AtomKind k, const SymExpr& arg);
  AtomId node_ref(uint64_t key);
  const AtomData& data(AtomId id) const;

 private:
  mutable std::shared_mutex mu_;
  std::vector<std::unique_ptr<AtomData>> atoms_;
  std::map<std::string, AtomId> var_ids_;
  std::map<std::string, AtomId> kernel_ids_;
  std::map<uint64_t, AtomId> node_ids_;
};

struct Term {
  mpq_class coeff;
  std::vector<std::pair<AtomId, int32_t>> pw;  // sorted by atom id, exponents nonzero
  double coeff_lo = 0.0, coeff_hi = 0.0;       // outward double enclosure of coeff

  void seal();  // fills coeff_lo/hi
};

/// Assigns stable names (v0, v1, ...) to variables in first-occurrence order
/// of a deterministic serialization; used for renaming-normalized digests.
struct Renamer {
  std::unordered_map<AtomId, std::string> names;
  int next = 0;
  const std::string& name_for(AtomId id);
};

/// Canonical symbolic real expression: a sum of terms, each a rational
/// coefficient times a power product of atoms. Atoms are input/free variables
/// and opaque kernels (recip, sqrt, sin, cos, exp, log) over canonical
/// arguments. Construction maintains the canonical form, so canonicalization
/// is idempotent by design. Instances are immutable and cheap to copy.
class SymExpr {
 public:
  SymExpr() = default;  // zero

  static SymExpr constant(const mpq_class& q);
  static SymExpr constant(double d);  // exact conversion
  static SymExpr var(const std::string& name);
  static SymExpr from_atom(AtomId id, int32_t exp = 1);
  static SymExpr node_ref(uint64_t key);

  bool is_zero() const { return !terms_ || terms_->empty(); }
  bool is_constant() const;
  std::optional<mpq_class> as_constant() const;  // nullopt unless constant
  /// Single term whose atoms are plain powers (invertible monomial)?
  bool is_monomial() const;
  size_t term_count() const { return terms_ ? terms_->size() : 0; }
  const std::vector<Term>& terms() const;

  friend SymExpr add(const SymExpr& a, const SymExpr& b);
  friend SymExpr sub(const SymExpr& a, const SymExpr& b);
  friend SymExpr neg(const SymExpr& a);
  friend SymExpr mul(const SymExpr& a, const SymExpr& b);
  friend SymExpr pow_int(const SymExpr& a, int32_t k);
  friend SymExpr div(const SymExpr& a, const SymExpr& b);
  friend SymExpr kernel(AtomKind k, const SymExpr& arg);

  bool operator==(const SymExpr& o) const;
  bool operator!=(const SymExpr& o) const { return !(*this == o); }

  /// Collects the variable atoms (not kernels) occurring anywhere, including
  /// inside kernel arguments.
  void collect_vars(std::vector<AtomId>& out) const;
  bool references_node_refs() const;

  std::string str() const;                 // human-readable, deterministic
  std::string serialize(Renamer* r) const; // digest form when r != nullptr

  static SymExpr make(std::vector<Term> t);

  double eval_double(const std::unordered_map<AtomId, double>& env,
                     const NodeContext* ctx = nullptr) const;
  __float128 eval_quad(const std::unordered_map<AtomId, __float128>& env,
                       const NodeContext* ctx = nullptr) const;
  Interval eval_interval(const std::unordered_map<AtomId, Interval>& env,
                         const NodeContext* ctx = nullptr) const;

 private:
  explicit SymExpr(std::shared_ptr<const std::vector<Term>> t) : terms_(std::move(t)) {}
  std::shared_ptr<const std::vector<Term>> terms_;
};

SymExpr add(const SymExpr& a, const SymExpr& b);
SymExpr sub(const SymExpr& a, const SymExpr& b);
SymExpr neg(const SymExpr& a);
SymExpr mul(const SymExpr& a, const SymExpr& b);
SymExpr pow_int(const SymExpr& a, int32_t k);
SymExpr div(const SymExpr& a, const SymExpr& b);
SymExpr kernel(AtomKind k, const SymExpr& arg);
inline SymExpr recip(const SymExpr& a) { return div(SymExpr::constant(mpq_class(1)), a); }

/// Hard ceiling on expansion (predicted term count of a product); exceeding
/// it raises ExpressionTooLarge. Distinct from maxOpCount throttling.
void set_expand_limit(size_t limit);
size_t expand_limit();

/// Number of arithmetic operators in the fully expanded canonical form.
/// Counting rule (fixed local convention): per term, (#factors - 1) multiply
/// or divide ops where #factors counts each atom plus a non-unit coefficient
/// and atoms with negative exponent contribute a divide; plus one pow op per
/// atom with |exponent| >= 2; plus (#terms - 1) adds; plus the op count of
/// each distinct kernel argument, counted once.
int64_t op_count(const SymExpr& e, const NodeContext* ctx = nullptr);

/// Simultaneous substitution of atoms, followed by canonicalization.
SymExpr substitute(const SymExpr& e, const std::unordered_map<AtomId, SymExpr>& bindings);

/// Partial derivative of a primitive operator with respect to one argument.
SymExpr diff_primitive(OpKind op, int which, const std::vector<SymExpr>& args, long pow_exp = 0);

enum class EvalMode : uint8_t { High, Working };

/// Point evaluation. Working mode rounds after every primitive of the
/// canonical form (left-to-right within a term, term by term for the sum) at
/// the given precision; High mode evaluates in >= 113-bit arithmetic.
double eval_point(const SymExpr& e, const std::unordered_map<AtomId, double>& point,
                  EvalMode mode, Precision prec = Precision::fp64,
                  const NodeContext* ctx = nullptr);

// Exact rational <-> float helpers.
mpq_class rational_of(double d);
Interval rational_to_interval(const mpq_class& q);
__float128 rational_to_quad(const mpq_class& q);

}  // namespace fperr::sym
