#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace sipfuse::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
};

/// Runs the command line `args` (without the program name). Errors are
/// reported on `err` and mapped to an ExitCode.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sipfuse::cli
