#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cvs {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

/// Runs one command line (without the program name). Returns 0 on success, 1 on a runtime
/// failure and 2 on a usage or validation error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run_cli(int argc, const char* const* argv);

}  // namespace cvs
