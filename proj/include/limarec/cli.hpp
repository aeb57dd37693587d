#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace limarec::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

// Runs one command line (without the program name), e.g.
//   {"train", "--data", "x.tsv", "--out", "m.lmrc"}
// Normal output goes to out, diagnostics to err. Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace limarec::cli
