#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace curl {

inline constexpr const char* kToolVersion = "0.1.0";

/// Exit codes: 0 success, 1 verification failure, 2 usage or input error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv);

}  // namespace curl
