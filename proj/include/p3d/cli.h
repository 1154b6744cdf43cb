#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace p3d {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one subcommand. `args` excludes the program name. On success a single
/// space-separated key=value summary line is written to `out`; diagnostics go
/// to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace p3d
