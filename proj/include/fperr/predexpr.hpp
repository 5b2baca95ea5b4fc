#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fperr/dag.hpp"
#include "fperr/gopt.hpp"
#include "fperr/symexpr.hpp"

namespace fperr {

/// Branch guard: a positive boolean combination of weakened select-branch
/// literals. Lit(s, true) is the select's weakened predicate P^w, Lit(s,
/// false) the independently weakened complement (not P)^w; the two overlap on
/// the gray zone. Negation maps Lit(s, p) to Lit(s, !p) (the weakened
/// complement, a sound enlargement) and applies De Morgan elsewhere.
struct Guard {
  enum class Kind : uint8_t { True, False, Lit, And, Or };
  Kind kind = Kind::True;
  NodeId select = 0;
  bool positive = true;
  std::vector<Guard> kids;

  static Guard make_true() { return Guard{}; }
  static Guard make_false();
  static Guard lit(NodeId s, bool pos);
  static Guard conj(const Guard& a, const Guard& b);
  static Guard disj(const Guard& a, const Guard& b);
  static Guard negate(const Guard& g);

  bool is_true() const { return kind == Kind::True; }
  bool is_false() const { return kind == Kind::False; }

  /// Deterministic structural key (used for syntactic-equality merging).
  std::string key() const;
  std::string str() const;  // P<id>^w / (~P<id>)^w rendering

  /// Pure two-valued evaluation under a branch-choice assignment
  /// (selects missing from the choice read as true).
  bool eval_choice(const std::map<NodeId, bool>& choice) const;

  /// Three-valued evaluation given per-literal certainty.
  gopt::Certainty eval(const std::function<gopt::Certainty(NodeId, bool)>& lit_fn) const;

  void collect_selects(std::vector<NodeId>& out) const;
};

struct PredCase {
  Guard guard;
  sym::SymExpr expr;
};

/// Finite set of (guard, expression) pairs: "if P then E" bundles.
/// Guards within one expression are syntactically distinct; a point where no
/// guard holds denotes contribution 0.
struct PredicatedExpr {
  std::vector<PredCase> cases;

  static PredicatedExpr always(sym::SymExpr e);
  bool empty() const { return cases.empty(); }
  /// Hull applied when the case count exceeds the cap: all guards coarsened
  /// to True (every case everywhere-possible), a sound loss of precision.
  void cap_cases(size_t cap = 64);
};

using Combine2 = std::function<sym::SymExpr(const sym::SymExpr&, const sym::SymExpr&)>;

/// Conditional accumulation operator over case sets. Pairwise, per the
/// four-way case split: (Pi and Pj) carries combine(Ei, Ej); (Pi and not Pj)
/// carries Ei; (not Pi and Pj) carries Ej; the doubly-negative case carries 0
/// and is dropped. Syntactically equal guards merge by the combiner without
/// case-splitting. An empty side acts as the identity.
PredicatedExpr bowtie(const PredicatedExpr& a, const PredicatedExpr& b, const Combine2& combine);

/// Product composition for value/derivative case sets: every case pair whose
/// guards are jointly satisfiable contributes combine(Ei, Ej) under the
/// conjunction. (No complement cases: composition is only defined where both
/// sides are.)
PredicatedExpr pe_product(const PredicatedExpr& a, const PredicatedExpr& b,
                          const Combine2& combine);

PredicatedExpr pe_map(const PredicatedExpr& a,
                      const std::function<sym::SymExpr(const sym::SymExpr&)>& f);

/// n-ary product composition (for multi-argument primitives).
PredicatedExpr pe_product_n(const std::vector<const PredicatedExpr*>& args,
                            const std::function<sym::SymExpr(const std::vector<sym::SymExpr>&)>& f);

}  // namespace fperr
