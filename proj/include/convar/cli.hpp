#pragma once

namespace convar {

/// Exit codes of the convar executable.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitValidation = 2, kExitManifest = 3 };

/// Entry point of the `convar` executable: tessellate, simulate, fit, predict, score.
int run_cli(int argc, const char* const* argv);

}  // namespace convar
