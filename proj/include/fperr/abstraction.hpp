#pragma once

#include <optional>
#include <vector>

#include "fperr/taylor.hpp"

namespace fperr::abst {

struct AbstractionWindow {
  int lo = 10;
  int hi = 40;
};

struct FreeVar {
  std::string name;
  Interval value_range;
  double error_bound = 0.0;
  NodeId origin = 0;
};

/// Heights are max distance from the root set (0 at a pure root, growing
/// toward the leaves); fanout counts consumers.
struct HeightIndex {
  std::vector<int> height;
  std::vector<int> fanout;
  int dag_height = 0;
  int internal_height = 0;  // max height over operator nodes
};

HeightIndex height_index(const Dag& dag);

/// Information content of a node: -log(h/H) * fanout, natural log;
/// h == 0 (the root) carries none.
double node_information(int fanout, int h, int H);

/// Argmax over the window of sum_{n at height h} (-(h/H2) log(h/H2)) *
/// fanout(n), internal nodes only; ties break toward the smaller height.
/// nullopt when the dag's internal height is below the window.
std::optional<int> select_abstraction_height(const Dag& dag, const AbstractionWindow& w);

/// Replaces every internal node at height h by a free variable carrying the
/// rigorous value range and error bound of its subDAG (each obtained by a
/// Direct Solve), then rebuilds the problem. Inputs and constants at the
/// height are left alone.
std::pair<Problem, std::vector<FreeVar>> abstract_at_height(const Problem& p, int h,
                                                            taylor::Analysis& analysis);

struct AbstractionRound {
  int height = 0;
  int free_vars = 0;
  long queries = 0;
};

/// Abstract / rebuild until the residue fits under the window, then Direct
/// Solve it. Programs already below the window go straight to Direct Solve
/// (bit-identical to analyze()).
taylor::BoundReport abstraction_loop(const Problem& p, const AbstractionWindow& w,
                                     const taylor::AnalysisConfig& cfg,
                                     std::vector<AbstractionRound>* rounds = nullptr);

}  // namespace fperr::abst
