#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace thz::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kMissingPrerequisite = 3,
  kDataInconsistency = 4,
};

/// True when THZ_TOMO_DETERMINISTIC=1: networks run in double precision.
bool deterministic_mode();

/// Entry point of `thz-tomo`; args[0] is the program name. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace thz::cli
