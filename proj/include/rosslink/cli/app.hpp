#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rosslink::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2, kCheckFailed = 3 };

/// Parses `args` (without the program name) and runs the selected command.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rosslink::cli
