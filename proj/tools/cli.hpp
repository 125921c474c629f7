#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace pbtts::cli {

enum ExitCode : int { kOk = 0, kUserError = 1, kInternalError = 2 };

/// Runs one command line (args[0] is the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pbtts::cli
