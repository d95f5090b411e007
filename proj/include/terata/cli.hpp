#pragma once

#include <string>
#include <vector>

namespace terata {

// Full command-line front end. argv excludes the program name. Returns the
// process exit code: 0 success, 1 invalid input or configuration, 2 fit did
// not converge (artifacts are still written, flagged), 64 bad usage.
int run_cli(const std::vector<std::string>& argv);

}  // namespace terata
