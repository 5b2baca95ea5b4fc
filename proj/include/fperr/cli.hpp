#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fperr::cli {

/// Entry point behind the fperr binary: parse flags, run the pipeline, write
/// the report. Returns 0 on success, 1 on analysis errors (partial results
/// still emitted), 2 on usage errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fperr::cli
