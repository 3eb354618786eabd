#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ltseg::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

// Runs one `ltseg` command line (args excludes the program name). CSV goes to
// out; the resolved configuration, warnings and errors go to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ltseg::cli
