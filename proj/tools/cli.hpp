#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rawnext::cli {

enum ExitCode : int { ok = 0, failure = 1, config_error = 2, io_error = 3, numeric_error = 4 };

/// Entry point shared by the `rawnext` binary and the tests. `args` excludes
/// the program name. Diagnostics go to `err`, progress and reports to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rawnext::cli
