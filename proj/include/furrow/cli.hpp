#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace furrow {

/// Exit codes of run_command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one invocation of the command-line tool; args exclude the program
/// name. Never throws.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace furrow
