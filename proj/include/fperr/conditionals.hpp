#pragma once

#include <map>
#include <string>
#include <vector>

#include "fperr/taylor.hpp"

namespace fperr::cond {

struct WindowEntry {
  NodeId select = 0;
  size_t atom_index = 0;
  double width = 0.0;
};

struct JumpEntry {
  NodeId select = 0;
  std::string then_guard;
  std::string else_guard;
  double jump = 0.0;
};

struct InstabilityReport {
  std::vector<WindowEntry> windows;
  std::vector<JumpEntry> ranking;  // sorted by jump, descending
};

/// Slackens every atom E1 cmp E2 by the operands' total-error bounds so the
/// weakened solution set contains the exact one; the negation weakens
/// independently, making P^w and (not P)^w overlap exactly on the gray zone.
/// Throws when an atom operand has no bound in the map.
Predicate weaken_predicate(const Predicate& p, const std::map<NodeId, double>& operand_bounds);

/// Maximal rounding-error slack of the comparison E1 cmp E2: the fused bound
/// of both operands' error accumulators over the domain.
double instability_window_width(taylor::Analysis& a, const Predicate& atom);

/// max |then - else| over the domain; in prune mode restricted to boxes that
/// may satisfy the overlap guard P^w and (not P)^w (and the branch cases'
/// own guards).
double instability_jump(taylor::Analysis& a, NodeId select, const PredCase& then_case,
                        const PredCase& else_case);

/// Window widths for every guard atom and jumps for every select node
/// (internal and output-reaching), ranked by jump.
InstabilityReport rank_instability(taylor::Analysis& a);

}  // namespace fperr::cond
