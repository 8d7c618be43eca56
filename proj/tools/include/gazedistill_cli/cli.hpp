#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gazedistill::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kConfig = 3 };

/// Runs one command. `args` excludes the program name. Results go to `out`
/// as JSON; progress and single-line JSON errors go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gazedistill::cli
