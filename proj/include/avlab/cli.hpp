#pragma once

#include <ostream>

namespace avlab {

// Entry point of the avlab tool. Returns the process exit status:
// 0 success, 1 command failure (or malformed records for `parse`), 2 usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace avlab
