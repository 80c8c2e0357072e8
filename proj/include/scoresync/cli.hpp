#pragma once

#include <ostream>

namespace scoresync {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitIo = 3, kExitNumeric = 4 };

/// Entry point for `scoresync gen|train|align|eval`. Messages go to `out`,
/// errors to `err`; the return value is one of ExitCode.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace scoresync
