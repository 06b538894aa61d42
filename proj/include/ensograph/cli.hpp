#pragma once

#include <exception>
#include <iosfwd>
#include <string>
#include <vector>

namespace ensograph::cli {

enum ExitCode : int {
  kSuccess = 0,
  kUsage = 1,
  kValidation = 2,
  kNumerical = 3,
  kIo = 4,
};

/// Runs one command line (without the program name). Never throws;
/// every failure is reported on `err` and mapped to an exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Exit code for an exception escaping a command.
[[nodiscard]] int exit_code(const std::exception& e);

}  // namespace ensograph::cli
