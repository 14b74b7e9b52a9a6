#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace edunet::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

/// Runs one command line (args exclude the program name) and returns the process exit code.
/// Normal output goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace edunet::cli
