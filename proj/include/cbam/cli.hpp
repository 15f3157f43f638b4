#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cbam::cli {

// Exit codes: 0 success, 1 usage or validation error, 2 numerical failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumerical = 2;

// Entry point shared by the `cbam` binary and the tests. args[0] is the
// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cbam::cli
