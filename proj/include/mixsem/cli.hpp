#pragma once

// Subcommand driver behind the mixsem executable: fit, select, simulate,
// classify, report.
//
// Exit codes: 0 success, 1 input or usage error, 2 estimation finished
// without convergence (outputs are still written).

#include <iosfwd>

namespace mixsem {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNotConverged = 2;

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mixsem
