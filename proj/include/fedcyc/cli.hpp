#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fedcyc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitVerify = 4;

/// The `fedcyc` command line; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fedcyc
