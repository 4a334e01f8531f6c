#pragma once

#include <iosfwd>

namespace liwhiz::cli {

// Exit codes, also listed in `liwhiz --help`.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUnexpected = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitIo = 4;
inline constexpr int kExitFormat = 5;
inline constexpr int kExitData = 6;
inline constexpr int kExitNumeric = 7;

/// Parses and executes one invocation. Never throws; failures are reported
/// on `err` as a single `error: <category>: <message>` line.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace liwhiz::cli
