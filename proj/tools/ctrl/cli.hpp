#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ctrl::cli {

inline constexpr const char* kVersion = "ctrl 0.1.0";

/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command line (args exclude the program name). Results go to
/// `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Expands `--config FILE` into flags. Each non-comment line of FILE is
/// `key=value` (or a bare `key` for switches); keys use the flag spelling with
/// '-' or '_'. Expanded flags are placed before the remaining arguments so the
/// command line wins.
std::vector<std::string> expand_config(const std::vector<std::string>& args);

}  // namespace ctrl::cli
