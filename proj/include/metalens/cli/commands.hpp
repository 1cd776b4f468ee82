#pragma once

#include <string>
#include <vector>

namespace metalens::cli {

/// Exit codes: 0 when every declared output was written, 1 on a runtime
/// failure, 2 on invalid flags or configs.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point for `metalens <command> [flags]`; args excludes argv[0].
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace metalens::cli
