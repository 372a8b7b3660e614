#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace altune::cli {

enum ExitCode : int { kSuccess = 0, kRuntimeFailure = 1, kConfigError = 2 };

/// Entry point behind the `altune` executable. `args` excludes the program
/// name. Never throws; failures are reported on `err` and in the exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Writes `content` to `path` through a temporary file and a rename.
void write_atomic(const std::string& path, const std::string& content);

}  // namespace altune::cli
