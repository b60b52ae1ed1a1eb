#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace icl {

/// Exit codes of run_command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumerical = 2;

/// Name of the environment variable holding the default output directory.
inline constexpr const char* kOutputDirEnv = "ICLDUAL_OUTPUT_DIR";

/// Dispatches `args` (without the program name): the first element names the
/// command, the rest are its flags. Writes <out> and <out>.meta.json.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace icl
