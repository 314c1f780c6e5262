#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pidi::cli {

/// Process exit codes.
enum ExitCode : int { ok = 0, internal_error = 1, user_error = 2, numeric_failure = 3 };

/// Runs one command; args excludes the program name. Normal output goes to
/// `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pidi::cli
