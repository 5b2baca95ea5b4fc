#pragma once

#include <string>

#include "fperr/dag.hpp"

namespace fperr {

/// Parses a problem-definition file:
///
///   INPUTS  { x : fl64 in [0.1, 5.0]; y : fl32 rounded in [1, 2]; }
///   EXPRS   { t : fl64 = x + y; r : fl32 = if (t <= 10.0) then t else x; }
///   OUTPUTS { r; }
///
/// Bindings may reference earlier bindings (shared nodes). Each occurrence of
/// an input variable is its own leaf. Post-order numbering and the cast map
/// are assigned on the validated result; unannotated precision is fl64.
Problem parse_problem(const std::string& text);

/// Prints a Problem in the input syntax; parse(print(p)) reproduces the dag.
std::string print_problem(const Problem& p);

}  // namespace fperr
