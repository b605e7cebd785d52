#pragma once

#include <ostream>

namespace pidnet {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitUsage = 2,
  kExitIo = 3,
  kExitNumeric = 4,
  kExitCheckpoint = 5,
};

/// Runs one command (gen-synth, train, eval, grad-check, inspect-gates,
/// sweep) and returns its exit code. Never throws.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pidnet
