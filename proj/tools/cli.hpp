#pragma once

#include <string>
#include <vector>

namespace kbqa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 1;
inline constexpr int kExitUsage = 2;

/// Entry point shared by the binary and the tests; args excludes argv[0].
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace kbqa::cli
