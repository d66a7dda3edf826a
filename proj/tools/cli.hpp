#pragma once

#include <string>
#include <vector>

namespace fpba::cli {

// Process exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kUsage = 2;
inline constexpr int kMissingInput = 3;
inline constexpr int kDivergence = 4;

/// Environment variable naming the default output root.
inline constexpr const char* kOutRootEnv = "FPBA_OUT_ROOT";

/// Runs one subcommand. `args` excludes the program name.
int dispatch(const std::vector<std::string>& args);

}  // namespace fpba::cli
