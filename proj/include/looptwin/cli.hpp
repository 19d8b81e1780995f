#pragma once

#include <string>

namespace looptwin {

inline constexpr const char* kToolVersion = "0.1.0";

// Name of the environment variable that forces single-worker deterministic
// runs. Seeded runs are reproducible regardless; this removes the one knob
// (worker count) that could reorder log output.
inline constexpr const char* kDeterministicEnv = "LOOPTWIN_DETERMINISTIC";

// Full command-line entry point. Returns 0 on success, 2 on configuration or
// input errors, 1 on runtime failures.
int cli_main(int argc, char** argv);

}  // namespace looptwin
