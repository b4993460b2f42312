#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cue::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Convenience for tests: args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace cue::cli
