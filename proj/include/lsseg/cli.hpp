#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace lsseg {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitUsage = 2 };

/// Entry point of the `lsseg` tool: subcommands phantom, train, infer, eval.
/// Logs go to `out`, diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Name used for the files of case `index` (1-based): case_0001, ...
std::string case_name(int index);

/// Per-case seed derived from the run seed, so cases are independent draws.
std::uint64_t case_seed(std::uint64_t seed, int index);

}  // namespace lsseg
