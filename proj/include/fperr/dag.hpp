#pragma once

#include <gmpxx.h>

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fperr/interval.hpp"
#include "fperr/precision.hpp"
#include "fperr/symexpr.hpp"

namespace fperr {

using NodeId = uint32_t;

enum class CmpOp : uint8_t { Lt, Le, Gt, Ge };
const char* cmp_name(CmpOp c);

/// Boolean combination of atomic comparisons over dag-expressible operands.
/// Atoms reference dag nodes; weakening fills the per-atom slack pair.
struct Predicate {
  enum class Kind : uint8_t { True, Atom, Not, And, Or };
  Kind kind = Kind::True;
  NodeId lhs = 0, rhs = 0;  // Atom operands (dag nodes)
  CmpOp cmp = CmpOp::Le;
  std::optional<std::pair<double, double>> weakening_slack;  // (left, right), >= 0
  std::vector<Predicate> kids;

  static Predicate make_true() { return Predicate{}; }
  static Predicate atom(NodeId l, CmpOp c, NodeId r);
  static Predicate negate(Predicate p);
  static Predicate conj(Predicate a, Predicate b);
  static Predicate disj(Predicate a, Predicate b);
  void collect_atoms(std::vector<const Predicate*>& out) const;
  void collect_atoms_mut(std::vector<Predicate*>& out);
};

struct Node {
  NodeId id = 0;
  OpKind op = OpKind::Const;
  std::vector<NodeId> children;  // Select: [then, else, guard operands...]
  long pow_exp = 0;              // PowInt exponent
  Precision precision = Precision::fp64;
  double delta_bound = 0.0;               // A_delta
  std::vector<double> cast_bounds;        // A_Delta, parallel to children
  std::optional<Predicate> guard;         // Select only
  std::string var;                        // Input: variable name
  mpq_class cval;                         // Const: snapped exact value

  size_t value_arity() const { return op == OpKind::Select ? 2 : children.size(); }
};

/// Post-order-numbered expression graph. Children always have smaller ids;
/// ids are dense 0..n-1.
struct Dag {
  std::vector<Node> nodes;
  std::vector<NodeId> roots;
  uint64_t scope = 0;  // unique per problem, qualifies NodeRef keys

  uint64_t node_key(NodeId id) const { return (scope << 32) | id; }
  const Node& at(NodeId id) const { return nodes.at(id); }
};

/// Metadata a free variable carries after abstraction.
struct FreeVarMeta {
  Interval value_range;
  double error_bound = 0.0;
  NodeId origin = 0;
};

struct Problem {
  Dag dag;
  std::map<std::string, Interval> input_domains;
  std::set<std::string> rounded_inputs;
  std::vector<NodeId> outputs;
  std::vector<std::string> output_names;
  // named bindings in declaration order (name, node)
  std::vector<std::pair<std::string, NodeId>> bindings;
  std::map<std::string, Precision> input_precisions;
  std::map<std::string, FreeVarMeta> free_var_meta;
  std::map<std::string, std::string> config_overrides;

  NodeId binding(const std::string& name) const;
  std::unordered_map<sym::AtomId, Interval> interval_env() const;
};

/// Validates or restores the post-order invariant: iterative DFS from the
/// roots, left-to-right children first. Throws on cycles.
Dag post_order_number(const Dag& dag);

/// Fills cast_bounds on every edge: u(consumer) on a down-cast, 0 otherwise.
/// Guard-operand edges of selects carry no cast (their error is handled by
/// predicate weakening). Idempotent.
Dag infer_cast_map(Dag dag);

/// Flat enumeration of the edge cast bounds in (consumer id, child position)
/// order, with a trailing 0 for each root (a root has no consuming context).
std::vector<double> cast_bound_list(const Dag& dag);

/// Naive interval evaluation of the factored dag (no canonicalization):
/// selects evaluate to the hull of their branches.
std::vector<Interval> eval_dag_intervals(const Problem& p);

void validate_problem(const Problem& p);

}  // namespace fperr
