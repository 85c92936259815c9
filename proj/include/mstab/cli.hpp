#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace mstab::cli {

/// Exit statuses; a pure function of the report verdict.
enum ExitCode : int {
  kStable = 0,    // stable / feasible
  kUnstable = 1,  // unstable / infeasible
  kUndecided = 2, // boundary / unknown
  kInputError = 3,
};

inline constexpr std::string_view kSchema = "moment-stab/1";

/// Runs one command. args excludes the program name. The report goes to out,
/// diagnostics for input errors to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Maps a verdict string to its exit status.
int exit_code_for(std::string_view verdict);

}  // namespace mstab::cli
