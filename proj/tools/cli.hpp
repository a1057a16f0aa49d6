#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace d2d::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConfig = 3;

// args excludes the program name. Diagnostics and timings go to `err`.
int run_command(const std::vector<std::string>& args, std::ostream& out,
                std::ostream& err);

}  // namespace d2d::cli
