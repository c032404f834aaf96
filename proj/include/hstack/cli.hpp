#ifndef HSTACK_CLI_HPP
#define HSTACK_CLI_HPP

#include <string>
#include <vector>

namespace hstack {

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitInput = 2,
  kExitDiagnostic = 3,
  kExitInternal = 4,
};

/// Entry point of the `hstack` executable. Subcommands: fit, loo, psis-loo,
/// theory, simulate. Every run with an output directory writes
/// `manifest.json` there, including failed runs.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args[0] is the program name

/// Default thread count: HSTACK_THREADS when it holds a positive integer, else 1.
int default_threads();

}  // namespace hstack

#endif  // HSTACK_CLI_HPP
