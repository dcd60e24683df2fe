#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bytekaz::cli {

/// Runs the command line `args` (args[0] is the program name). Returns the
/// process exit code; diagnostics go to `err`, results to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bytekaz::cli
