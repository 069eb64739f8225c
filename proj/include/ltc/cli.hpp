#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ltc::cli {

/// Build identifier printed by `--version`.
std::string version_string();

/// Runs one subcommand. Exit codes: 0 success, 1 validation or usage error,
/// 2 I/O or corrupt input, 3 numeric failure. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

} // namespace ltc::cli
