#pragma once

#include <ostream>

namespace c4 {

enum ExitCode { kExitOk = 0, kExitVerifyFailed = 1, kExitUsage = 2 };

/// Entry point behind the `c4` binary: gen-data, train, verify, report.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace c4
