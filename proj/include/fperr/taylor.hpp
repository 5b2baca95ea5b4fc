#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fperr/dag.hpp"
#include "fperr/gopt.hpp"
#include "fperr/predexpr.hpp"

namespace fperr::taylor {

struct AnalysisConfig {
  gopt::OptConfig opt;
  int64_t max_op_count = 30000;
  /// Local-rounding multiplier for operators whose correct rounding IEEE does
  /// not guarantee (sin, cos, exp, log); 1.0 unless overridden.
  std::map<OpKind, double> delta_multiplier;
  gopt::MemoCache* cache = nullptr;
  bool relative_estimates = true;
};

struct ErrorTerm {
  enum class Kind : uint8_t { Rounding, Cast, AbstractedConstant };
  Guard guard;
  sym::SymExpr coeff;  // (d out / d node) * fwd(node); just the derivative for
                       // abstracted constants
  double noise = 0.0;
  NodeId source = 0;
  Kind kind = Kind::Rounding;
};

struct ErrorAccumulator {
  NodeId output = 0;
  std::vector<ErrorTerm> terms;
  std::vector<NodeId> selects;  // sorted distinct selects mentioned by guards
};

struct GuardBound {
  std::string guard;
  double bound = 0.0;
};

struct OutputReport {
  std::string name;
  NodeId output = 0;
  double absolute_bound = 0.0;
  std::optional<double> relative_estimate;
  std::vector<GuardBound> guards;
  long queries = 0;
  long cache_hits = 0;
  double seconds = 0.0;
  std::string mode = "direct";
  std::string error;  // nonempty when this output failed
};

struct BoundReport {
  std::vector<OutputReport> outputs;
  long queries = 0;
  long cache_hits = 0;
  double seconds = 0.0;
  std::string mode = "direct";

  double max_bound() const;
};

/// Per-problem pass state: forward symbolic values, per-target reverse
/// derivatives, select weakening, and the deferred-node evaluation context.
class Analysis : public sym::NodeContext {
 public:
  Analysis(const Problem& p, AnalysisConfig cfg);

  /// Forward symbolic execution plus predicate weakening (in select order).
  void prepare();

  const PredicatedExpr& fwd(NodeId id) const { return fwd_.at(id); }

  struct Reverse {
    std::vector<PredicatedExpr> deriv;
    long edge_visits = 0;
  };
  /// Breadth-first reverse pass: each edge processed once per target.
  const Reverse& reverse_for(NodeId target);

  ErrorAccumulator assemble(NodeId target);

  struct BoundOutcome {
    double bound = 0.0;
    std::vector<GuardBound> per_guard;
  };
  BoundOutcome bound_total_error(const ErrorAccumulator& acc);

  /// Rigorous total-error bound of a node treated as an auxiliary output.
  double node_error_bound(NodeId id);

  /// Hull of the forward value enclosure over a box environment.
  Interval node_value_interval(NodeId id,
                               const std::unordered_map<sym::AtomId, Interval>& env) const;
  /// Rigorous value range over the whole domain via the optimizer.
  Interval node_value_range(NodeId id);

  std::optional<double> relative_estimate(NodeId output, double bound);

  gopt::Box full_box() const;
  const Problem& problem() const { return p_; }
  const AnalysisConfig& config() const { return cfg_; }
  const std::vector<NodeId>& selects() const { return selects_; }
  const Predicate& select_guard(NodeId s) const { return weakened_.at(s); }

  /// Weakened-literal certainty over a box (then literal: P^w, else: (~P)^w).
  gopt::Certainty lit_certainty(NodeId select, bool positive,
                                const std::unordered_map<sym::AtomId, Interval>& env) const;
  /// Weakened-literal truth at a point (quad values per variable).
  bool lit_truth(NodeId select, bool positive,
                 const std::unordered_map<sym::AtomId, __float128>& env) const;
  /// Exact (unweakened) predicate decision at a point.
  bool exact_guard_truth(NodeId select,
                         const std::unordered_map<sym::AtomId, __float128>& env) const;

  gopt::GuardFn scenario_guard_fn(const std::map<NodeId, bool>& choice) const;
  std::string scenario_guard_key(const std::map<NodeId, bool>& choice) const;

  long total_queries() const { return queries_; }
  long total_cache_hits() const { return cache_hits_; }

  // deferred-node evaluation (sym::NodeContext)
  Interval node_interval(uint64_t key,
                         const std::unordered_map<sym::AtomId, Interval>& env) const override;
  __float128 node_quad(uint64_t key,
                       const std::unordered_map<sym::AtomId, __float128>& env) const override;
  int node_op_count(uint64_t key) const override;

  gopt::OptResult run_query(const gopt::Objective& obj, const gopt::GuardFn* guard,
                            const std::string& guard_key);

 private:
  void forward_symbolic();
  void compute_weakening();
  PredicatedExpr forward_node(const Node& n);
  gopt::Certainty atom_certainty(const Predicate& atom, bool negated,
                                 const std::unordered_map<sym::AtomId, Interval>& env) const;
  gopt::Certainty pred_certainty(const Predicate& p, bool negated,
                                 const std::unordered_map<sym::AtomId, Interval>& env) const;
  bool pred_truth(const Predicate& p, bool negated, bool weakened,
                  const std::unordered_map<sym::AtomId, __float128>& env) const;
  __float128 node_quad_rec(NodeId id, const std::unordered_map<sym::AtomId, __float128>& env,
                           std::vector<std::optional<__float128>>& memo) const;

  const Problem& p_;
  AnalysisConfig cfg_;
  std::vector<PredicatedExpr> fwd_;
  std::vector<int> cone_ops_;  // factored op count per node
  std::map<NodeId, Reverse> reverse_;
  std::map<NodeId, double> node_error_;
  std::map<NodeId, Predicate> weakened_;  // select id -> guard with slacks
  std::vector<NodeId> selects_;
  long queries_ = 0;
  long cache_hits_ = 0;
  bool prepared_ = false;
};

/// Direct Solve: forward pass, reverse pass, assembly and bounding for every
/// output. Per-output failures are reported without aborting the others.
BoundReport analyze(const Problem& p, const AnalysisConfig& cfg);

}  // namespace fperr::taylor
