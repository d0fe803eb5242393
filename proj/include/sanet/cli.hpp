#pragma once

#include <string>
#include <vector>

namespace sanet {

// Entry point behind the `sanet` binary, callable in-process by tests.
// args excludes the program name. Exit codes: 0 success, 1 invalid
// input/config, 2 numerical failure during training.
int cli_run(const std::vector<std::string>& args);

}  // namespace sanet
