#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fperr/interval.hpp"
#include "fperr/symexpr.hpp"

namespace fperr::gopt {

/// Rectangular query domain: one interval per variable atom.
struct Box {
  std::vector<sym::AtomId> vars;
  std::vector<Interval> iv;
  int depth = 0;

  std::unordered_map<sym::AtomId, Interval> env() const;
  static Box of(std::initializer_list<std::pair<std::string, Interval>> doms);
};

enum class ConstraintMode : uint8_t { Ignore, Prune };

struct OptConfig {
  double tolerance = 1e-2;  // relative gap between upper bound and certified lower
  long max_subdivisions = 200000;
  double timeout_seconds = 10.0;
  ConstraintMode constraint_mode = ConstraintMode::Ignore;
  int workers = 1;
};

enum class OptStatus : uint8_t { Converged, BudgetExhausted, DomainViolation };

struct OptResult {
  double upper_bound = 0.0;
  double certified_lower = 0.0;
  long queries = 0;  // boxes evaluated
  long cache_hits = 0;
  OptStatus status = OptStatus::Converged;
};

/// Query objective: sums and maxima of (optionally absolute) scaled
/// symbolic expressions. Absolute values are first-class; interval |.| is
/// exact, so |coeff|*noise terms cost nothing extra.
struct Objective {
  enum class Kind : uint8_t { Leaf, Sum, Max };
  Kind kind = Kind::Leaf;
  sym::SymExpr expr;      // Leaf
  double weight = 1.0;    // Leaf scale
  bool absolute = false;  // Leaf: |expr|
  std::vector<Objective> kids;

  static Objective leaf(sym::SymExpr e, double w = 1.0, bool abs = false);
  static Objective sum(std::vector<Objective> kids);
  static Objective max_of(std::vector<Objective> kids);

  Interval eval(const std::unordered_map<sym::AtomId, Interval>& env,
                const sym::NodeContext* ctx) const;
  std::string serialize(sym::Renamer* r) const;
  bool cacheable() const;  // deferred (NodeRef) expressions are not memoized
  int64_t ops(const sym::NodeContext* ctx) const;
  void collect_vars(std::vector<sym::AtomId>& out) const;
};

enum class Certainty : uint8_t { True, False, Unknown };

/// Constraint evaluated per box; used for certain-falsity pruning only.
using GuardFn =
    std::function<Certainty(const std::unordered_map<sym::AtomId, Interval>& env)>;

/// Query-result memoization keyed by the renaming-normalized digest.
/// Optionally persisted: one record per line, digest<TAB>upper<TAB>lower.
class MemoCache {
 public:
  MemoCache() = default;
  explicit MemoCache(std::string path);
  std::optional<std::pair<double, double>> lookup(const std::string& digest);
  void store(const std::string& digest, double upper, double lower);
  long hits() const { return hits_; }

 private:
  std::mutex mu_;
  std::unordered_map<std::string, std::pair<double, double>> map_;
  std::string path_;
  long hits_ = 0;
};

/// Digest of the canonical serialization under variable-renaming
/// normalization: variables renamed by first occurrence, domains permuted to
/// match, the guard key appended.
std::string query_signature(const Objective& obj, const Box& domain,
                            const std::string& guard_key);

/// Sound upper bound on max of the objective over {x in domain : guard(x)}.
/// Subdivides the widest axis; discards boxes whose interval upper bound
/// cannot beat the certified lower bound, and (prune mode) boxes where the
/// guard is certainly false; midpoint samples certify lower bounds.
OptResult maximize_upper(const Objective& obj, const Box& domain, const OptConfig& cfg,
                         const GuardFn* guard = nullptr, const std::string& guard_key = "",
                         MemoCache* cache = nullptr, const sym::NodeContext* ctx = nullptr);

OptResult maximize_upper(const sym::SymExpr& e, const Box& domain, const OptConfig& cfg,
                         MemoCache* cache = nullptr, const sym::NodeContext* ctx = nullptr);

/// [-up(-e), up(e)]: a rigorous enclosure of the range of e over the domain.
Interval range(const sym::SymExpr& e, const Box& domain, const OptConfig& cfg,
               MemoCache* cache = nullptr, const sym::NodeContext* ctx = nullptr);

/// Sound lower bound on min |e| (0 when the range encloses 0).
double min_abs_lower(const sym::SymExpr& e, const Box& domain, const OptConfig& cfg,
                     MemoCache* cache = nullptr, const sym::NodeContext* ctx = nullptr);

}  // namespace fperr::gopt
