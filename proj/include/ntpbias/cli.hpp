#pragma once

#include "ntpbias/io.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace ntpbias::cli {

/// Exit codes.
constexpr int kOk = 0;
constexpr int kFailure = 1;          // unexpected runtime failure
constexpr int kUsage = 2;            // bad flags, config or input files
constexpr int kInvariantFailed = 3;  // report found a failing invariant

/// Parameter values baked into a named preset ("appA" or "fig1-2d"); throws on unknown names.
Json preset(const std::string& name);

/// Runs one subcommand. args excludes the program name. Errors go to err as a JSON object.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ntpbias::cli
